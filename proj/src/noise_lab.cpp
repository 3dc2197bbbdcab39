#include "jacmatch/noise_lab.hpp"

#include <cmath>

#include "jacmatch/gauss_hermite.hpp"
#include "jacmatch/rng.hpp"

namespace jm::noiselab {

using namespace jm::ad;

namespace {

constexpr double kSoftmaxFloor = 1e-8;
constexpr double kQuadratureFloor = 1e-12;

double phi(double c) { return std::exp(-0.5 * c * c) / std::sqrt(2.0 * M_PI); }
double Phi(double c) { return 0.5 * (1.0 + std::erf(c / std::sqrt(2.0))); }

Tensor shifted(const Tensor& x, const std::vector<double>& xi) {
    Tensor p = x.clone();
    auto d = p.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += xi[i];
    return p;
}

std::vector<double> sample_noise(const NoiseModel& model, int dim, Rng& rng) {
    std::vector<double> xi(static_cast<std::size_t>(dim));
    if (model.kind == NoiseKind::gaussian_iid) {
        for (double& v : xi) v = model.sigma * rng.normal();
        return xi;
    }
    const double cutoff = model.radius / std::sqrt(static_cast<double>(dim));
    for (double& v : xi) {
        double draw = model.sigma * rng.normal();
        while (std::fabs(draw) > cutoff) draw = model.sigma * rng.normal();
        v = draw;
    }
    return xi;
}

nn::Head net_head(const nn::Network& net) {
    return net.head_count() == 2 ? nn::Head::source : nn::Head::only;
}

Tensor net_logits(const nn::Network& net, const Tensor& point) {
    return nn::forward(net, point.detached(), net_head(net)).logits;
}

}  // namespace

NoiseModel NoiseModel::gaussian(double sigma) { return {sigma, NoiseKind::gaussian_iid, 0.0}; }

NoiseModel NoiseModel::truncated(double sigma, double radius) {
    return {sigma, NoiseKind::truncated_gaussian, radius};
}

void NoiseModel::validate() const {
    JM_CHECK_CONFIG(sigma >= 0.0, "noise sigma must be >= 0, got ", sigma);
    if (kind == NoiseKind::truncated_gaussian) {
        JM_CHECK_CONFIG(radius > 0.0, "truncation radius must be > 0, got ", radius);
    }
}

double NoiseModel::second_moment_scale(int dim) const {
    if (kind == NoiseKind::gaussian_iid || sigma == 0.0) return 1.0;
    // standard normal truncated to [-c, c]: Var = 1 - 2 c phi(c) / (2 Phi(c) - 1)
    const double c = radius / (sigma * std::sqrt(static_cast<double>(dim)));
    return 1.0 - 2.0 * c * phi(c) / (2.0 * Phi(c) - 1.0);
}

const char* loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::distill_sq: return "distill-squared";
        case LossKind::distill_ce: return "distill-ce";
        case LossKind::reg_sq: return "regularizer-squared";
        case LossKind::reg_ce: return "regularizer-ce";
    }
    return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
    for (int k = 0; k <= static_cast<int>(LossKind::reg_ce); ++k) {
        if (name == loss_kind_name(static_cast<LossKind>(k))) return static_cast<LossKind>(k);
    }
    JM_CHECK_CONFIG(false, "unknown loss kind '", name, "'");
    return LossKind::distill_sq;
}

void LossProbe::validate() const {
    JM_CHECK(student != nullptr, "loss probe: student network required");
    JM_CHECK(x.defined(), "loss probe: input x required");
    const bool distill = kind == LossKind::distill_sq || kind == LossKind::distill_ce;
    if (distill) {
        JM_CHECK(teacher != nullptr, "loss probe: teacher network required for distillation kinds");
    } else {
        JM_CHECK(y.defined(), "loss probe: targets y required for regularizer kinds");
    }
    JM_CHECK(temperature > 0.0, "loss probe: temperature must be > 0");
}

double loss_at(const LossProbe& probe, const Tensor& point) {
    switch (probe.kind) {
        case LossKind::distill_sq: {
            Tensor t = net_logits(*probe.teacher, point);
            Tensor s = net_logits(*probe.student, point);
            return losses::match_activations_sq(t, s).value();
        }
        case LossKind::distill_ce: {
            Tensor ts = softmax_t(net_logits(*probe.teacher, point), probe.temperature);
            Tensor ss = softmax_t(net_logits(*probe.student, point), probe.temperature);
            double acc = 0.0;
            for (std::int64_t i = 0; i < ts.numel(); ++i) {
                acc -= ts.data()[i] * std::log(std::max(ss.data()[i], kSoftmaxFloor));
            }
            return acc;
        }
        case LossKind::reg_sq: {
            Tensor s = net_logits(*probe.student, point);
            JM_CHECK(probe.y.numel() == s.numel(), "loss probe: target length mismatch");
            double acc = 0.0;
            for (std::int64_t i = 0; i < s.numel(); ++i) {
                const double d = probe.y.data()[i] - s.data()[i];
                acc += d * d;
            }
            return acc;
        }
        case LossKind::reg_ce: {
            Tensor ss = softmax_t(net_logits(*probe.student, point), probe.temperature);
            JM_CHECK(probe.y.numel() == ss.numel(), "loss probe: target length mismatch");
            double acc = 0.0;
            for (std::int64_t i = 0; i < ss.numel(); ++i) {
                acc -= probe.y.data()[i] * std::log(std::max(ss.data()[i], kSoftmaxFloor));
            }
            return acc;
        }
    }
    return 0.0;
}

EquivalenceReport expected_loss(const LossProbe& probe, const NoiseModel& noise, Method method,
                                int n_or_order, std::uint64_t seed) {
    probe.validate();
    noise.validate();

    EquivalenceReport report;
    report.sigma = noise.sigma;
    report.sigma_sq_scale = noise.second_moment_scale(probe.input_dim());

    if (noise.sigma == 0.0) {
        report.expected = loss_at(probe, probe.x);
        report.method = "exact";
        report.analytic = analytic_expansion(probe, 0.0);
        report.residual = std::fabs(report.expected - report.analytic);
        return report;
    }

    if (method == Method::gauss_hermite) {
        const int dim = probe.input_dim();
        JM_CHECK(dim <= 4, "expected_loss: quadrature limited to D <= 4 inputs, got D = ", dim);
        JM_CHECK(noise.kind == NoiseKind::gaussian_iid,
                 "expected_loss: quadrature supports the plain Gaussian kind only");
        JM_CHECK(n_or_order >= 20, "expected_loss: quadrature order must be >= 20 per dimension");
        const GaussHermiteRule rule = gauss_hermite(n_or_order);
        const double scale = noise.sigma * std::sqrt(2.0);
        std::vector<int> idx(static_cast<std::size_t>(dim), 0);
        std::vector<double> xi(static_cast<std::size_t>(dim), 0.0);
        double total = 0.0;
        while (true) {
            double w = 1.0;
            for (int d = 0; d < dim; ++d) {
                const int i = idx[static_cast<std::size_t>(d)];
                w *= rule.weights[static_cast<std::size_t>(i)];
                xi[static_cast<std::size_t>(d)] = scale * rule.nodes[static_cast<std::size_t>(i)];
            }
            total += w * loss_at(probe, shifted(probe.x, xi));
            int d = 0;
            for (; d < dim; ++d) {
                if (++idx[static_cast<std::size_t>(d)] < n_or_order) break;
                idx[static_cast<std::size_t>(d)] = 0;
            }
            if (d == dim) break;
        }
        report.expected = total / std::pow(M_PI, dim / 2.0);
        report.method = "gauss-hermite";
        report.gh_order = n_or_order;
    } else {
        JM_CHECK(n_or_order >= 2, "expected_loss: monte-carlo needs n >= 2 samples");
        const int n = n_or_order;
        // per-sample streams: parallel evaluation cannot change the result
        std::vector<double> values(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            Rng rng(Rng::hash_combine(seed, static_cast<std::uint64_t>(i)));
            values[static_cast<std::size_t>(i)] =
                loss_at(probe, shifted(probe.x, sample_noise(noise, probe.input_dim(), rng)));
        }
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= (n - 1);
        report.expected = mean;
        report.stderr_est = std::sqrt(var / n);
        report.method = "monte-carlo";
        report.mc_samples = n;
    }

    report.analytic = analytic_expansion(probe, noise.sigma, report.sigma_sq_scale);
    report.residual = std::fabs(report.expected - report.analytic);
    return report;
}

double analytic_expansion(const LossProbe& probe, double sigma, double sigma_sq_scale) {
    probe.validate();
    const double sigma_eff = sigma * std::sqrt(sigma_sq_scale);
    switch (probe.kind) {
        case LossKind::distill_sq: {
            const double act = loss_at(probe, probe.x);
            Tape tape;
            const double jac = losses::match_jacobians_sq(*probe.teacher, *probe.student, probe.x,
                                                          {}, sigma_eff, tape)
                                   .value();
            return act + jac;
        }
        case LossKind::distill_ce: {
            Tape tape;
            return losses::distill_ce_with_jacobian(*probe.teacher, *probe.student, probe.x,
                                                    sigma_eff, probe.temperature, tape)
                .value();
        }
        case LossKind::reg_sq: {
            const double data = loss_at(probe, probe.x);
            Tape tape;
            const double pen =
                losses::jacobian_norm_penalty(*probe.student, probe.x, probe.y,
                                              losses::LossFamily::squared_error, sigma_eff,
                                              probe.temperature, tape)
                    .value();
            return data + pen;
        }
        case LossKind::reg_ce: {
            const double data = loss_at(probe, probe.x);
            Tape tape;
            const double pen =
                losses::jacobian_norm_penalty(*probe.student, probe.x, probe.y,
                                              losses::LossFamily::cross_entropy, sigma_eff,
                                              probe.temperature, tape)
                    .value();
            return data + pen;
        }
    }
    return 0.0;
}

SlopeStudy residual_scaling_study(const LossProbe& probe, const std::vector<double>& sigmas,
                                  int gh_order) {
    probe.validate();
    JM_CHECK(sigmas.size() >= 4, "residual_scaling_study: need at least 4 sigma values");
    double lo = sigmas[0], hi = sigmas[0];
    for (double s : sigmas) {
        JM_CHECK(s > 0.0, "residual_scaling_study: sigmas must be positive");
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    // the canonical grid {0.2, 0.1, 0.05, 0.025} spans a factor of 8
    JM_CHECK(hi / lo >= 8.0, "residual_scaling_study: sigma grid must span at least a factor of 8");

    SlopeStudy study;
    study.sigmas = sigmas;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        const auto report = expected_loss(probe, NoiseModel::gaussian(sigmas[i]),
                                          Method::gauss_hermite, gh_order);
        study.residuals.push_back(report.residual);
        if (report.residual < kQuadratureFloor) study.excluded.push_back(static_cast<int>(i));
    }

    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        bool skip = false;
        for (int e : study.excluded) skip |= e == static_cast<int>(i);
        if (skip) continue;
        lx.push_back(std::log(sigmas[i]));
        ly.push_back(std::log(study.residuals[i]));
    }
    if (lx.size() < 2) {
        study.exact_case = true;
        study.note = "exact case: residuals at or below the quadrature precision floor";
        return study;
    }
    if (!study.excluded.empty()) {
        study.note = strcat(study.excluded.size(), " point(s) below the 1e-12 floor excluded");
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(lx.size());
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sx += lx[i];
        sy += ly[i];
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    study.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    study.intercept = (sy - study.slope * sx) / n;
    return study;
}

ExactnessCertificate piecewise_exactness_check(const LossProbe& probe, double radius,
                                               int mc_samples, std::uint64_t seed,
                                               int boundary_samples) {
    probe.validate();
    JM_CHECK(radius > 0.0, "piecewise_exactness_check: radius must be > 0");

    ExactnessCertificate cert;
    cert.radius = radius;
    cert.sigma = radius / 2.0;
    cert.samples = mc_samples;

    std::vector<const nn::Network*> nets;
    nets.push_back(probe.student);
    if (probe.teacher != nullptr) nets.push_back(probe.teacher);
    cert.piecewise = true;
    for (const nn::Network* net : nets) {
        for (const auto& layer : net->trunk) cert.piecewise &= !layer.smooth();
    }

    if (cert.piecewise) {
        // the ball must sit inside one linear region of every net involved
        const int dim = probe.input_dim();
        std::vector<nn::ActivationPattern> base;
        for (const nn::Network* net : nets) base.push_back(nn::activation_pattern(*net, probe.x));
        Rng rng(Rng::hash_combine(seed, 0xb0a2d));
        for (int s = 0; s < boundary_samples; ++s) {
            std::vector<double> dir(static_cast<std::size_t>(dim));
            double norm = 0.0;
            for (double& v : dir) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (double& v : dir) v = v / norm * radius;
            Tensor point = shifted(probe.x, dir);
            for (std::size_t n = 0; n < nets.size(); ++n) {
                if (!(nn::activation_pattern(*nets[n], point) == base[n])) {
                    JM_CHECK(false,
                             "piecewise_exactness_check: activation pattern not constant on the "
                             "radius-", radius, " ball; violating sample at boundary draw ", s,
                             " (first coordinate offset ", dir[0], ")");
                }
            }
        }
        cert.pattern_checked = true;
    }

    const NoiseModel noise = NoiseModel::truncated(cert.sigma, radius);
    const auto report = expected_loss(probe, noise, Method::monte_carlo, mc_samples, seed);
    cert.expected = report.expected;
    cert.stderr_est = report.stderr_est;
    cert.sigma_sq_scale = report.sigma_sq_scale;
    cert.analytic = report.analytic;
    cert.residual = report.residual;
    cert.pass = cert.residual <= 3.0 * cert.stderr_est;
    return cert;
}

nlohmann::json to_json(const EquivalenceReport& report) {
    nlohmann::json j;
    j["expected"] = report.expected;
    if (report.stderr_est >= 0) j["stderr"] = report.stderr_est;
    j["analytic"] = report.analytic;
    j["residual"] = report.residual;
    j["sigma"] = report.sigma;
    j["method"] = report.method;
    if (report.mc_samples > 0) j["mc_samples"] = report.mc_samples;
    if (report.gh_order > 0) j["gh_order"] = report.gh_order;
    j["sigma_sq_scale"] = report.sigma_sq_scale;
    return j;
}

nlohmann::json to_json(const SlopeStudy& study) {
    nlohmann::json j;
    j["sigmas"] = study.sigmas;
    j["residuals"] = study.residuals;
    j["excluded"] = study.excluded;
    j["slope"] = study.slope;
    j["intercept"] = study.intercept;
    j["exact_case"] = study.exact_case;
    if (!study.note.empty()) j["note"] = study.note;
    return j;
}

nlohmann::json to_json(const ExactnessCertificate& cert) {
    nlohmann::json j;
    j["pass"] = cert.pass;
    j["piecewise"] = cert.piecewise;
    j["pattern_checked"] = cert.pattern_checked;
    j["expected"] = cert.expected;
    j["stderr"] = cert.stderr_est;
    j["analytic"] = cert.analytic;
    j["residual"] = cert.residual;
    j["sigma"] = cert.sigma;
    j["radius"] = cert.radius;
    j["sigma_sq_scale"] = cert.sigma_sq_scale;
    j["samples"] = cert.samples;
    return j;
}

}  // namespace jm::noiselab
