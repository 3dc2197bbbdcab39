#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "jacmatch/tensor.hpp"

namespace jm::data {

using ad::Shape;
using ad::Tensor;

struct Dataset {
    std::vector<Tensor> inputs;  // all the same shape
    std::vector<int> labels;     // class ids in [0, classes)
    std::string name;
    int classes = 0;
    std::vector<double> mean;    // per channel
    std::vector<double> stdev;
    bool normalized = false;
    std::uint64_t seed = 0;

    std::size_t size() const { return inputs.size(); }
    void validate() const;
    std::vector<int> class_counts() const;
};

enum class TaskKind : std::uint8_t { two_moons_k, gaussian_blobs, checkerboard_2d };

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

// Desk-scale stand-ins for the image datasets. gaussian_blobs supports an
// optional image_shape so conv trunks can consume the samples as (C,H,W).
struct SyntheticTask {
    TaskKind kind = TaskKind::gaussian_blobs;
    int classes = 2;
    int dim = 2;              // gaussian_blobs only; others are 2-D
    Shape image_shape;        // empty = flat (dim,) vectors
    double noise = 0.1;
    int train_per_class = 100;
    int test_per_class = 20;

    void validate() const;
    std::string name() const;
    Shape sample_shape() const;
};

// Class-balanced, seeded, disjoint train/test splits.
std::pair<Dataset, Dataset> generate(const SyntheticTask& task, std::uint64_t seed);

// Exactly n examples per class, sampled without replacement, seeded.
Dataset subset_per_class(const Dataset& ds, int n_per_class, std::uint64_t seed);

// Raw binary image file: records of [1 label byte | C*H*W pixel bytes],
// row-major, channels-first. Pixels scale to [0,1] and are then normalized
// by the layout stats (or stats computed from the file when absent).
struct BinaryLayout {
    int classes = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> mean;   // optional; computed from the data if empty
    std::vector<double> stdev;
};

Dataset load_image_binary(const std::string& path, const BinaryLayout& layout);

// I.i.d. Gaussian pixel noise; labels unchanged; seeded per example.
Dataset add_input_noise(const Dataset& ds, double sigma, std::uint64_t seed);

// Applies per-channel normalization exactly once (guarded by the flag).
void normalize(Dataset& ds);
void compute_stats(Dataset& ds);  // fills mean/stdev from the current inputs

nlohmann::json manifest(const Dataset& ds);

}  // namespace jm::data
