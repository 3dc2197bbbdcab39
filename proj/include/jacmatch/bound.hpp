#pragma once

#include <functional>
#include <json.hpp>
#include <vector>

#include "jacmatch/nn.hpp"

namespace jm::bound {

using ad::Tensor;

// Embedding into R^m with the euclidean metric over it. The embedding is
// either the identity (pixel space) or a network's pre-head features.
struct MetricSpace {
    std::function<std::vector<double>(const Tensor&)> embed;

    static MetricSpace identity();
    // embeds with the network's trunk output (the pre-head representation)
    static MetricSpace net_features(const nn::Network& net);
};

double euclidean(const std::vector<double>& a, const std::vector<double>& b);

struct HausdorffResult {
    double value = 0.0;
    int witness_a = -1;  // argmax point in A
    int witness_b = -1;  // its nearest point in B
};

// H_a(A, B) = max over a in A of the distance to its nearest b in B.
// Exact brute force; pair count is capped to keep runs bounded.
HausdorffResult asymmetric_hausdorff(const std::vector<std::vector<double>>& a,
                                     const std::vector<std::vector<double>>& b);

// K = max |rho1_i - rho2_i| / psi_i over pairs with psi_i > 0; identical
// points are skipped and counted. Rejects when every pair is degenerate.
double empirical_lipschitz(const std::vector<double>& rho_a, const std::vector<double>& rho_b,
                           const std::vector<double>& psi, int* skipped = nullptr);

struct BoundReport {
    double lhs = 0.0;        // mean loss over the source dataset
    double max_term = 0.0;   // max loss over the target dataset
    double hausdorff = 0.0;  // H_a(source, target)
    double lipschitz = 0.0;  // empirical K over the matched nearest pairs
    double rhs = 0.0;        // max_term + K * hausdorff
    bool holds = false;      // lhs <= rhs
    HausdorffResult hausdorff_witness;
    int max_term_index = -1;
    int degenerate_pairs = 0;
};

nlohmann::json to_json(const BoundReport& report);

// rho(x) = loss(f(x), g(x)); defaults to the squared activation match.
using PointLoss = std::function<double(const Tensor&)>;

PointLoss distillation_rho(const nn::Network& teacher, const nn::Network& student);

// Evaluates both sides of the source/target transfer inequality with the
// empirical Lipschitz constant over the proof's matched nearest pairs.
BoundReport check_prop3(const std::vector<Tensor>& source, const std::vector<Tensor>& target,
                        const PointLoss& rho, const MetricSpace& metric);

// H_a(source, target + extra) <= H_a(source, target); returns (before, after).
std::pair<double, double> superset_monotonicity(const std::vector<Tensor>& source,
                                                const std::vector<Tensor>& target,
                                                const std::vector<Tensor>& extra,
                                                const MetricSpace& metric);

}  // namespace jm::bound
