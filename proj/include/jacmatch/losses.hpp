#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jacmatch/autodiff.hpp"
#include "jacmatch/nn.hpp"

namespace jm::losses {

using ad::Tape;
using ad::Tensor;

enum class LossFamily : std::uint8_t { squared_error, cross_entropy };

enum class JacobianMode : std::uint8_t { full, correct_class, max_output, max_attention_pixel };

struct JacobianStrategy {
    JacobianMode mode = JacobianMode::full;
    // attention pooling window in pixels, stride fixed at 1; only meaningful
    // in max_attention_pixel mode. 0 = derive as floor(side/5), min 1.
    int pool_window = 0;

    void validate(int attention_side = 0) const;
    static int default_pool_window(int side) { return std::max(1, side / 5); }
};

// Weighted composite alpha*CE + beta*activation match + gamma*Jacobian
// match, with the noise scale sigma, softmax temperature, and the Jacobian
// approximation strategy. Attention terms activate when tap pairs are set.
struct LossSpec {
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 0.0;
    double sigma = 1.0;
    LossFamily family = LossFamily::squared_error;
    double temperature = 1.0;
    JacobianStrategy jac_strategy;

    double attention_beta = 0.0;   // Eq. 8 term weight
    double attention_gamma = 0.0;  // Eq. 9 term weight
    double penalty_lambda = 0.0;   // noise-robustness Jacobian-norm penalty weight
    double mse_alpha = 0.0;        // squared-error data term vs one-hot targets
    std::vector<std::pair<int, int>> tap_pairs;  // (teacher tap, student tap)

    void validate() const;
};

struct AttentionMap {
    Tensor values;       // (H,W), nonnegative
    int source_tap = -1;
};

// Counters that make degenerate numerics observable instead of silent.
struct LossCounters {
    int zero_norm_normalizations = 0;
    int softmax_clamps = 0;
};

// sum_i (t_i - s_i)^2 over logits of equal length.
Tensor match_activations_sq(const Tensor& teacher_logits, const Tensor& student_logits);

// sigma^2 * sum_{i in strategy} ||dT_i/dx - dS_i/dx||^2. Teacher rows enter
// as constants; student rows stay differentiable w.r.t. parameters (the
// second-order path). `label` feeds the correct-class strategy.
Tensor match_jacobians_sq(const nn::Network& teacher, const nn::Network& student,
                          const Tensor& x, const JacobianStrategy& strategy, double sigma,
                          Tape& tape, const std::vector<Tensor>* student_bound = nullptr,
                          std::optional<int> label = std::nullopt,
                          bool* sigma_zero_warning = nullptr);

// Cross-entropy distillation with the Jacobian inner-product regularizer:
// -sum_i Ts_i log Ss_i - sigma^2 sum_i (dTs_i/dx . dSs_i/dx) / Ss_i,
// with Ss clamped below at 1e-8.
Tensor distill_ce_with_jacobian(const nn::Network& teacher, const nn::Network& student,
                                const Tensor& x, double sigma, double temperature, Tape& tape,
                                const std::vector<Tensor>* student_bound = nullptr,
                                LossCounters* counters = nullptr);

// Noise-robustness penalties (the regularizer term only):
//   squared family: sigma^2 sum_i ||dS_i/dx||^2 over pre-softmax logits,
//   CE family:      sigma^2 sum_i y_i ||dSs_i/dx||^2 / Ss_i^2.
Tensor jacobian_norm_penalty(const nn::Network& student, const Tensor& x, const Tensor& y,
                             LossFamily family, double sigma, double temperature, Tape& tape,
                             const std::vector<Tensor>* student_bound = nullptr,
                             LossCounters* counters = nullptr);

// A = sum over channels of |Z_c|^2; (C,H,W) -> (H,W).
AttentionMap attention_map(const Tensor& feature, int source_tap = -1);

// || At/||At|| - As/||As|| ||_2  (the norm itself, not squared).
Tensor match_attention(const AttentionMap& teacher_map, const AttentionMap& student_map,
                       LossCounters* counters = nullptr);

// Eq. 9 procedure: average-pool the teacher's attention map (stride 1), take
// its argmax pixel, differentiate both pooled maps at that pixel w.r.t. the
// input, and compare the normalized gradients with a squared norm.
Tensor match_attention_jacobians(const nn::Network& teacher, const nn::Network& student,
                                 const Tensor& x, int teacher_tap, int student_tap,
                                 int pool_window, Tape& tape,
                                 const std::vector<Tensor>* student_bound = nullptr,
                                 LossCounters* counters = nullptr);

// Cross entropy of the student's tempered softmax against a hard label.
Tensor cross_entropy_hard(const Tensor& student_logits, int label, double temperature,
                          LossCounters* counters = nullptr);

struct TermValue {
    std::string name;
    double weight = 0.0;
    double raw = 0.0;
    double weighted = 0.0;
};

struct LossBreakdown {
    Tensor total;
    std::vector<TermValue> terms;
    LossCounters counters;
};

struct Batch {
    std::vector<Tensor> inputs;
    std::vector<int> labels;
};

// Batch-mean composite loss. Terms with zero weight are never evaluated, so
// gamma = 0 costs no second-order passes. Term failures are rethrown with
// the term identity attached.
// Two-headed students (LwF) automatically take ground truth on the target
// head and teacher matching on the source head.
LossBreakdown composite_loss(const LossSpec& spec, const Batch& batch,
                             const nn::Network* teacher, const nn::Network& student, Tape& tape,
                             const std::vector<Tensor>* student_bound = nullptr);

}  // namespace jm::losses
