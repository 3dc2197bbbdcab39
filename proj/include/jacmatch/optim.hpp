#pragma once

#include <string>
#include <utility>
#include <vector>

#include "jacmatch/autodiff.hpp"
#include "jacmatch/tensor.hpp"

namespace jm::train {

using ad::Gradient;
using ad::Tensor;

struct LrSchedule {
    double initial = 1e-3;
    std::vector<int> drop_epochs;  // strictly increasing
    double factor = 0.1;

    void validate() const;
    double at(int epoch) const;
};

enum class OptKind : std::uint8_t { sgd_momentum, adam };

struct OptimizerConfig {
    OptKind kind = OptKind::adam;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LrSchedule schedule;

    void validate() const;
};

// In-place parameter updates; state tensors align with the parameter list.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config) : config_(std::move(config)) {
        config_.validate();
    }

    const OptimizerConfig& config() const { return config_; }
    int step_count() const { return steps_; }

    void step(std::vector<Tensor>& params, const std::vector<Gradient>& grads, int epoch);

    // named state for bit-exact resume
    std::vector<std::pair<std::string, Tensor>> state() const;
    void restore(const std::vector<std::pair<std::string, Tensor>>& state,
                 const std::vector<Tensor>& params);

private:
    void ensure_state(const std::vector<Tensor>& params);

    OptimizerConfig config_;
    int steps_ = 0;
    std::vector<Tensor> m_;  // adam first moment / sgd velocity
    std::vector<Tensor> v_;  // adam second moment
};

}  // namespace jm::train
