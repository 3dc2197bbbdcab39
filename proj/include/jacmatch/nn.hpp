#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "jacmatch/autodiff.hpp"
#include "jacmatch/ops.hpp"
#include "jacmatch/rng.hpp"
#include "jacmatch/tensor.hpp"

namespace jm::nn {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

enum class LayerKind : std::uint8_t {
    dense,
    conv2d,           // 3x3 kernels, stride 1, zero pad 1
    relu,
    sigmoid,
    maxpool,          // window 2, stride 2
    global_avg_pool,
    softmax_t,
};

const char* layer_kind_name(LayerKind kind);

struct Layer {
    LayerKind kind;
    std::vector<Tensor> params;  // dense: {W(out,in), b(out)}; conv2d: {W(F,C,3,3), b(F)}
    double temperature = 1.0;

    static Layer dense(int in, int out, Rng& rng);
    static Layer conv(int cin, int cout, Rng& rng);
    static Layer relu() { return {LayerKind::relu, {}, 1.0}; }
    static Layer sigmoid() { return {LayerKind::sigmoid, {}, 1.0}; }
    static Layer maxpool() { return {LayerKind::maxpool, {}, 1.0}; }
    static Layer global_avg_pool() { return {LayerKind::global_avg_pool, {}, 1.0}; }
    static Layer softmax(double temperature) { return {LayerKind::softmax_t, {}, temperature}; }

    bool smooth() const { return kind == LayerKind::sigmoid || kind == LayerKind::softmax_t; }
};

enum class Head : std::uint8_t { only, source, target };

// Ordered layer stack with one or two dense output heads. Two-headed
// networks share the whole trunk; heads[0] is the source head, heads[1]
// the target head. feature_taps index trunk positions whose outputs are
// exposed for attention matching.
struct Network {
    Shape input_shape;
    std::vector<Layer> trunk;
    std::vector<Layer> heads;
    std::vector<int> feature_taps;

    int head_count() const { return static_cast<int>(heads.size()); }

    std::vector<std::pair<std::string, Tensor>> named_params() const;
    // aligned with named_params() order
    std::vector<Tensor> param_list() const;
    void set_params(const std::vector<Tensor>& values);  // same order, shapes must match
    Network clone() const;
};

// Per-ReLU sign bits and per-maxpool argmax indices for one input.
struct ActivationPattern {
    std::vector<std::uint8_t> relu_signs;
    std::vector<int> pool_argmax;
    bool operator==(const ActivationPattern&) const = default;
};

struct ForwardResult {
    Tensor logits;                // pre-softmax logits of the selected head
    std::vector<Tensor> taps;     // aligned with net.feature_taps
};

// Leaf variables for every parameter, sharing storage with the network's
// master tensors; aligned with param_list().
std::vector<Tensor> bind_params(const Network& net, Tape& tape);

// Runs the trunk and the selected head. When `bound` is given its tensors
// are used in place of the master parameters (training path); otherwise the
// pass is taped only through x (or fully detached when x is detached).
ForwardResult forward(const Network& net, const Tensor& x, Head head = Head::only,
                      const std::vector<Tensor>* bound = nullptr,
                      ActivationPattern* pattern_out = nullptr);

ActivationPattern activation_pattern(const Network& net, const Tensor& x);

// Returns a network with the output channels/units of trunk[trunk_index]
// permuted and the consuming layer fixed up; function values are unchanged.
// perm[i] = old index placed at new position i.
Network permute_hidden(const Network& net, int trunk_index, const std::vector<int>& perm);

Tensor init_uniform(Shape shape, int fan_in, int fan_out, Rng& rng);

// Reference architectures at desk scale. Teacher "VGG-2t":
// [8 conv - M - 16 conv - M - GAP - dense]; student "VGG-1s":
// [8 conv - M - GAP - dense]. Taps sit after each ReLU block (teacher) and
// after ReLU / after pool (student) so spatial sizes pair up.
Network make_vgg2t(Shape input_shape, int classes, Rng& rng);
Network make_vgg1s(Shape input_shape, int classes, Rng& rng);
Network make_vgg1s_two_headed(Shape input_shape, int source_classes, int target_classes,
                              Rng& rng);
Network make_mlp(int in_dim, const std::vector<int>& hidden, int classes, LayerKind activation,
                 Rng& rng);

}  // namespace jm::nn
