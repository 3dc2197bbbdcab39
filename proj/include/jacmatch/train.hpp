#pragma once

#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jacmatch/data.hpp"
#include "jacmatch/losses.hpp"
#include "jacmatch/nn.hpp"
#include "jacmatch/optim.hpp"

namespace jm::train {

// Architecture presets understood by the config: "vgg2t", "vgg1s",
// "vgg1s-2h" (two-headed), "mlp:<h1>,<h2>@relu|sigmoid".
nn::Network build_network(const std::string& arch, const ad::Shape& input_shape, int classes,
                          int source_classes, Rng& rng);

struct ExperimentConfig {
    data::SyntheticTask task;
    std::string teacher_checkpoint;      // required when matching terms are on
    std::string teacher_arch = "vgg2t";
    std::string student_arch = "vgg1s";
    losses::LossSpec loss;
    OptimizerConfig optimizer;
    int epochs = 30;
    int teacher_epochs = 0;  // 0 = same as epochs (teacher pretraining)
    int batch_size = 32;
    int n_per_class = 0;                 // 0 = full training set
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "runs";
    std::vector<double> test_noise_grid;  // robustness curve sigmas

    // transfer-specific: a second task supplying the target-label data; the
    // teacher stays on the source task
    bool transfer = false;
    data::SyntheticTask target_task;
    std::string student_init_checkpoint;  // oracle rows initialize from here

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // stable hash over the canonical config with seeds/out_dir excluded
    std::string config_hash() const;
    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    std::vector<losses::TermValue> terms;
    int zero_norm_count = 0;
    int clamp_count = 0;
};

struct RunResult {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<EpochLog> epochs;
    double test_accuracy = 0.0;  // percent
    std::vector<std::pair<double, double>> robustness;  // (test sigma, accuracy %)
    std::map<std::string, double> jacobian_loss_reduction;  // per tap, percent
    std::vector<std::pair<std::string, double>> second_order_grad_norms;  // per parameter
    double wall_seconds = 0.0;  // in-memory / log only, never serialized

    nlohmann::json to_json() const;            // omits wall_seconds
    std::string training_csv() const;          // per-epoch loss-term rows
};

// Trains one (config, seed) cell. Writes checkpoint + RunResult JSON + CSV
// into out_dir; resume_checkpoint continues bit-exactly from a saved state.
RunResult train_run(const ExperimentConfig& config, std::uint64_t seed,
                    const std::string& resume_checkpoint = "");

double evaluate_accuracy(const nn::Network& net, const data::Dataset& ds,
                         nn::Head head = nn::Head::only);

// Trains a teacher on the config's task and saves its checkpoint.
void pretrain_teacher(const ExperimentConfig& config, const std::string& path,
                      std::uint64_t seed);

struct GridResult {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    // mean and stdev over seeds, indexed [row][col]
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> stdev;
    std::string csv() const;
};

// Table-1-shaped distillation grid: rows are the six method variants, one
// column per per-class subset size.
GridResult distill_grid(const ExperimentConfig& base, const std::vector<int>& n_per_class,
                        int jobs = 1);

// Table-2-shaped robustness grid: rows are penalty weights, columns the
// test-noise sigmas.
GridResult robustness_grid(const ExperimentConfig& base, const std::vector<double>& lambdas,
                           const std::vector<double>& test_sigmas, int jobs = 1);

struct TransferResult {
    GridResult accuracy;  // rows = methods, single accuracy column
    std::map<std::string, std::map<std::string, double>> jacobian_reduction;  // method -> tap -> %
};

// Table-3-shaped transfer comparison over the six method rows.
TransferResult transfer_run(const ExperimentConfig& base, int jobs = 1);

// Tables 3-4 ablations: axis "tap-depth" or "pool-window".
GridResult ablate(const ExperimentConfig& base, const std::string& axis, int jobs = 1);

const std::vector<std::string>& distill_method_labels();
const std::vector<std::string>& transfer_method_labels();

}  // namespace jm::train
