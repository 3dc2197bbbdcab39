#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "jacmatch/losses.hpp"
#include "jacmatch/nn.hpp"

namespace jm::noiselab {

using ad::Tensor;

enum class NoiseKind : std::uint8_t { gaussian_iid, truncated_gaussian };

struct NoiseModel {
    double sigma = 0.1;
    NoiseKind kind = NoiseKind::gaussian_iid;
    double radius = 0.0;  // truncated: per-coordinate cutoff radius/sqrt(D)

    static NoiseModel gaussian(double sigma);
    static NoiseModel truncated(double sigma, double radius);
    void validate() const;

    // Per-coordinate second moment of the truncated kind relative to
    // sigma^2, i.e. the factor rescaling the sigma^2 coefficient of the
    // analytic expansions; 1 for the plain Gaussian kind.
    double second_moment_scale(int dim) const;
};

enum class LossKind : std::uint8_t { distill_sq, distill_ce, reg_sq, reg_ce };

const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

// Everything needed to evaluate one loss at a point.
struct LossProbe {
    LossKind kind = LossKind::distill_sq;
    const nn::Network* teacher = nullptr;  // required by distill_* kinds
    const nn::Network* student = nullptr;
    Tensor x;
    Tensor y;  // targets, required by reg_* kinds
    double temperature = 1.0;

    void validate() const;
    int input_dim() const { return static_cast<int>(x.numel()); }
};

double loss_at(const LossProbe& probe, const Tensor& point);

enum class Method : std::uint8_t { monte_carlo, gauss_hermite };

struct EquivalenceReport {
    double expected = 0.0;
    double stderr_est = -1.0;  // monte-carlo only
    double analytic = 0.0;
    double residual = 0.0;
    double sigma = 0.0;
    std::string method;
    int mc_samples = 0;
    int gh_order = 0;
    double sigma_sq_scale = 1.0;  // truncation rescale applied to the expansion
};

nlohmann::json to_json(const EquivalenceReport& report);

// E over noise of the loss. Quadrature (tensor-product Gauss-Hermite) needs
// D <= 4 and the plain Gaussian kind; Monte Carlo needs n >= 2 and derives
// per-sample streams from hash(seed, index), so thread count cannot change
// the estimate. sigma = 0 returns the loss at x exactly.
EquivalenceReport expected_loss(const LossProbe& probe, const NoiseModel& noise, Method method,
                                int n_or_order, std::uint64_t seed = 0);

// The matching proposition's right-hand side, assembled from the loss
// primitives; sigma_sq_scale rescales the sigma^2 coefficient (truncation).
double analytic_expansion(const LossProbe& probe, double sigma, double sigma_sq_scale = 1.0);

struct SlopeStudy {
    std::vector<double> sigmas;
    std::vector<double> residuals;     // aligned with sigmas
    std::vector<int> excluded;         // indices under the precision floor
    double slope = 0.0;
    double intercept = 0.0;            // log-space
    bool exact_case = false;           // too few usable points: exact regime
    std::string note;
};

nlohmann::json to_json(const SlopeStudy& study);

// Least-squares slope of log(residual) vs log(sigma) using quadrature
// expectations. Requires >= 4 sigmas spanning at least one decade.
SlopeStudy residual_scaling_study(const LossProbe& probe, const std::vector<double>& sigmas,
                                  int gh_order = 40);

struct ExactnessCertificate {
    bool pass = false;
    bool piecewise = false;          // trunk was piecewise-linear
    bool pattern_checked = false;    // boundary sampling ran and held
    double expected = 0.0;
    double stderr_est = 0.0;
    double analytic = 0.0;
    double residual = 0.0;
    double sigma = 0.0;
    double radius = 0.0;
    double sigma_sq_scale = 1.0;
    int samples = 0;
};

nlohmann::json to_json(const ExactnessCertificate& certificate);

// Truncated-noise check that the expansion is exact inside one linear
// region: |expected - analytic| <= 3 * stderr. For piecewise-linear nets
// the activation pattern is first verified constant on the radius-r ball by
// sampling boundary points; a violation is rejected naming the sample.
// Smooth nets skip the pattern check and are expected to fail the bound
// (the negative control).
ExactnessCertificate piecewise_exactness_check(const LossProbe& probe, double radius,
                                               int mc_samples, std::uint64_t seed,
                                               int boundary_samples = 1000);

}  // namespace jm::noiselab
