#include "jacmatch/bound.hpp"

#include <cmath>
#include <limits>

#include "jacmatch/losses.hpp"

namespace jm::bound {

namespace {

constexpr std::int64_t kMaxPairs = 10'000'000;

std::vector<std::vector<double>> embed_all(const std::vector<Tensor>& points,
                                           const MetricSpace& metric) {
    std::vector<std::vector<double>> out;
    out.reserve(points.size());
    for (const Tensor& p : points) out.push_back(metric.embed(p));
    return out;
}

}  // namespace

MetricSpace MetricSpace::identity() {
    MetricSpace m;
    m.embed = [](const Tensor& x) {
        return std::vector<double>(x.data().begin(), x.data().end());
    };
    return m;
}

MetricSpace MetricSpace::net_features(const nn::Network& net) {
    MetricSpace m;
    // pre-head representation: tap the last trunk position (layers are
    // shared tensors, so the capture is cheap)
    m.embed = [net](const Tensor& x) {
        if (net.trunk.empty()) return std::vector<double>(x.data().begin(), x.data().end());
        nn::Network probe = net;
        probe.feature_taps = {static_cast<int>(probe.trunk.size()) - 1};
        auto fwd = nn::forward(probe, x.detached(),
                               probe.head_count() == 2 ? nn::Head::source : nn::Head::only);
        const Tensor& f = fwd.taps[0];
        return std::vector<double>(f.data().begin(), f.data().end());
    };
    return m;
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    JM_CHECK(a.size() == b.size(), "euclidean: dimension mismatch ", a.size(), " vs ", b.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

HausdorffResult asymmetric_hausdorff(const std::vector<std::vector<double>>& a,
                                     const std::vector<std::vector<double>>& b) {
    JM_CHECK(!a.empty() && !b.empty(), "asymmetric_hausdorff: point sets must be nonempty");
    JM_CHECK(static_cast<std::int64_t>(a.size()) * static_cast<std::int64_t>(b.size()) <=
                 kMaxPairs,
             "asymmetric_hausdorff: ", a.size(), " x ", b.size(),
             " pairs exceed the brute-force cap");
    HausdorffResult res;
    res.value = -1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_j = -1;
        for (std::size_t j = 0; j < b.size(); ++j) {
            const double d = euclidean(a[i], b[j]);
            if (d < best) {
                best = d;
                best_j = static_cast<int>(j);
            }
        }
        if (best > res.value) {
            res.value = best;
            res.witness_a = static_cast<int>(i);
            res.witness_b = best_j;
        }
    }
    return res;
}

double empirical_lipschitz(const std::vector<double>& rho_a, const std::vector<double>& rho_b,
                           const std::vector<double>& psi, int* skipped) {
    JM_CHECK(rho_a.size() == rho_b.size() && rho_a.size() == psi.size(),
             "empirical_lipschitz: array lengths differ");
    double k = -1.0;
    int degenerate = 0;
    for (std::size_t i = 0; i < psi.size(); ++i) {
        if (psi[i] <= 0.0) {
            ++degenerate;
            continue;
        }
        k = std::max(k, std::fabs(rho_a[i] - rho_b[i]) / psi[i]);
    }
    if (skipped != nullptr) *skipped = degenerate;
    JM_CHECK(k >= 0.0, "empirical_lipschitz: all pairs identical; K undefined");
    return k;
}

PointLoss distillation_rho(const nn::Network& teacher, const nn::Network& student) {
    return [&teacher, &student](const Tensor& x) {
        Tensor t = nn::forward(teacher, x.detached(),
                               teacher.head_count() == 2 ? nn::Head::source : nn::Head::only)
                       .logits;
        Tensor s = nn::forward(student, x.detached(),
                               student.head_count() == 2 ? nn::Head::source : nn::Head::only)
                       .logits;
        return losses::match_activations_sq(t, s).value();
    };
}

BoundReport check_prop3(const std::vector<Tensor>& source, const std::vector<Tensor>& target,
                        const PointLoss& rho, const MetricSpace& metric) {
    JM_CHECK(!source.empty() && !target.empty(), "check_prop3: datasets must be nonempty");

    const auto src_pts = embed_all(source, metric);
    const auto tgt_pts = embed_all(target, metric);

    std::vector<double> rho_src(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) rho_src[i] = rho(source[i]);
    std::vector<double> rho_tgt(target.size());
    for (std::size_t j = 0; j < target.size(); ++j) rho_tgt[j] = rho(target[j]);

    BoundReport report;

    // lhs: mean loss over the source set
    double acc = 0.0;
    for (double v : rho_src) acc += v;
    report.lhs = acc / static_cast<double>(source.size());

    // max loss over the target set
    report.max_term = rho_tgt[0];
    report.max_term_index = 0;
    for (std::size_t j = 1; j < target.size(); ++j) {
        if (rho_tgt[j] > report.max_term) {
            report.max_term = rho_tgt[j];
            report.max_term_index = static_cast<int>(j);
        }
    }

    // matched nearest pairs (the proof's construction) + Hausdorff in one scan
    std::vector<double> rho_matched(source.size());
    std::vector<double> psi_matched(source.size());
    report.hausdorff = -1.0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_j = -1;
        for (std::size_t j = 0; j < target.size(); ++j) {
            const double d = euclidean(src_pts[i], tgt_pts[j]);
            if (d < best) {
                best = d;
                best_j = static_cast<int>(j);
            }
        }
        rho_matched[i] = rho_tgt[static_cast<std::size_t>(best_j)];
        psi_matched[i] = best;
        if (best > report.hausdorff) {
            report.hausdorff = best;
            report.hausdorff_witness.value = best;
            report.hausdorff_witness.witness_a = static_cast<int>(i);
            report.hausdorff_witness.witness_b = best_j;
        }
    }

    bool any_positive = false;
    for (double p : psi_matched) any_positive |= p > 0.0;
    if (any_positive) {
        report.lipschitz =
            empirical_lipschitz(rho_src, rho_matched, psi_matched, &report.degenerate_pairs);
    } else {
        // every source point coincides with its nearest target point:
        // H_a = 0 and the K term drops out of the bound entirely
        report.lipschitz = 0.0;
        report.degenerate_pairs = static_cast<int>(source.size());
    }
    report.rhs = report.max_term + report.lipschitz * report.hausdorff;
    report.holds = report.lhs <= report.rhs + 1e-12;
    JM_CHECK(report.holds, "check_prop3: inequality violated (lhs ", report.lhs, " > rhs ",
             report.rhs, "); this indicates an implementation bug");
    return report;
}

std::pair<double, double> superset_monotonicity(const std::vector<Tensor>& source,
                                                const std::vector<Tensor>& target,
                                                const std::vector<Tensor>& extra,
                                                const MetricSpace& metric) {
    const auto src_pts = embed_all(source, metric);
    auto tgt_pts = embed_all(target, metric);
    const double before = asymmetric_hausdorff(src_pts, tgt_pts).value;
    for (const auto& p : embed_all(extra, metric)) tgt_pts.push_back(p);
    const double after = asymmetric_hausdorff(src_pts, tgt_pts).value;
    return {before, after};
}

nlohmann::json to_json(const BoundReport& report) {
    nlohmann::json j;
    j["lhs"] = report.lhs;
    j["max_term"] = report.max_term;
    j["hausdorff"] = report.hausdorff;
    j["lipschitz"] = report.lipschitz;
    j["rhs"] = report.rhs;
    j["slack"] = report.rhs - report.lhs;
    j["holds"] = report.holds;
    j["hausdorff_witness"] = {{"source_index", report.hausdorff_witness.witness_a},
                              {"target_index", report.hausdorff_witness.witness_b}};
    j["max_term_index"] = report.max_term_index;
    j["degenerate_pairs"] = report.degenerate_pairs;
    return j;
}

}  // namespace jm::bound
