#include "jacmatch/optim.hpp"

#include <cmath>

namespace jm::train {

void LrSchedule::validate() const {
    JM_CHECK_CONFIG(initial > 0.0, "learning rate must be > 0, got ", initial);
    JM_CHECK_CONFIG(factor > 0.0, "schedule factor must be > 0");
    for (std::size_t i = 1; i < drop_epochs.size(); ++i) {
        JM_CHECK_CONFIG(drop_epochs[i] > drop_epochs[i - 1],
                        "schedule epochs must be strictly increasing");
    }
}

double LrSchedule::at(int epoch) const {
    double lr = initial;
    for (int drop : drop_epochs) {
        if (epoch >= drop) lr *= factor;
    }
    return lr;
}

void OptimizerConfig::validate() const {
    schedule.validate();
    JM_CHECK_CONFIG(eps > 0.0, "optimizer eps must be > 0");
    JM_CHECK_CONFIG(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                    "adam betas must lie in [0,1)");
    JM_CHECK_CONFIG(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0,1)");
}

void Optimizer::ensure_state(const std::vector<Tensor>& params) {
    if (!m_.empty()) return;
    for (const Tensor& p : params) {
        m_.push_back(Tensor::zeros(p.shape()));
        if (config_.kind == OptKind::adam) v_.push_back(Tensor::zeros(p.shape()));
    }
}

void Optimizer::step(std::vector<Tensor>& params, const std::vector<Gradient>& grads,
                     int epoch) {
    JM_CHECK(params.size() == grads.size(), "optimizer: ", params.size(), " params vs ",
             grads.size(), " gradients");
    ensure_state(params);
    const double lr = config_.schedule.at(epoch);
    ++steps_;

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        const auto g = grads[i].value.data();
        auto m = m_[i].mutable_data();
        if (config_.kind == OptKind::sgd_momentum) {
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = config_.momentum * m[j] + g[j];
                p[j] -= lr * m[j];
            }
        } else {
            auto v = v_[i].mutable_data();
            const double bc1 = 1.0 - std::pow(config_.beta1, steps_);
            const double bc2 = 1.0 - std::pow(config_.beta2, steps_);
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
                v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p[j] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
            }
        }
    }
}

std::vector<std::pair<std::string, Tensor>> Optimizer::state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("opt.steps", Tensor::from({1}, {static_cast<double>(steps_)}));
    for (std::size_t i = 0; i < m_.size(); ++i) out.emplace_back(strcat("opt.m.", i), m_[i]);
    for (std::size_t i = 0; i < v_.size(); ++i) out.emplace_back(strcat("opt.v.", i), v_[i]);
    return out;
}

void Optimizer::restore(const std::vector<std::pair<std::string, Tensor>>& state,
                        const std::vector<Tensor>& params) {
    m_.clear();
    v_.clear();
    ensure_state(params);
    std::size_t found = 0;
    for (const auto& [name, t] : state) {
        if (name == "opt.steps") {
            steps_ = static_cast<int>(t.data()[0]);
            ++found;
            continue;
        }
        for (std::size_t i = 0; i < m_.size(); ++i) {
            if (name == strcat("opt.m.", i)) {
                JM_CHECK(t.shape() == m_[i].shape(), "optimizer restore: shape mismatch for ", name);
                m_[i] = t.clone();
                ++found;
            }
        }
        for (std::size_t i = 0; i < v_.size(); ++i) {
            if (name == strcat("opt.v.", i)) {
                JM_CHECK(t.shape() == v_[i].shape(), "optimizer restore: shape mismatch for ", name);
                v_[i] = t.clone();
                ++found;
            }
        }
    }
    JM_CHECK(found >= 1 + m_.size() + v_.size(), "optimizer restore: incomplete state (",
             found, " tensors)");
}

}  // namespace jm::train
