#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "jacmatch/tensor.hpp"

namespace jm::ad {

enum class OpKind : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    div,
    neg,
    exp,
    log,
    sqrt,
    square,
    relu,
    sigmoid,
    matmul,
    transpose,
    conv2d,
    conv2d_wgrad,
    kernel_flip_swap,
    maxpool2d,
    pool_scatter,
    pool_gather,
    avgpool2d,
    avgpool2d_adj,
    channel_sum,
    channel_broadcast,
    sum_all,
    reshape,
    concat,
    slice,
    index_select,
    scatter_at,
};

const char* op_name(OpKind kind);
// Throws on unknown names; the string gate for the generic record() entry.
OpKind op_kind_from_name(const std::string& name);

// Per-op integer/aux payload. Meaning by op:
//   maxpool2d/avgpool2d:  i0 = window, i1 = stride
//   pool_scatter/gather, avgpool2d_adj: i0 = window, i1 = stride,
//       shape = spatial input shape of the forward pool
//   slice:        i0 = offset, i1 = length
//   index_select: i0 = index (element of a vector / row of a matrix)
//   scatter_at:   i0 = index, shape = target shape
//   channel_broadcast: i0 = channel count
//   reshape:      shape = target shape
//   maxpool2d saves the argmax flat index per output cell in `indices`.
struct OpAttrs {
    int i0 = 0;
    int i1 = 0;
    Shape shape;
    std::shared_ptr<std::vector<int>> indices;
};

struct TapeNode {
    OpKind kind = OpKind::leaf;
    std::vector<Tensor> inputs;
    Tensor out;
    OpAttrs attrs;
};

// Append-only record of operations. Node ids are topologically ordered by
// construction: inputs of node n always have ids < n. A backward pass can
// itself be recorded onto the same tape, which is what makes gradients of
// gradients possible.
class Tape {
public:
    static constexpr std::uint32_t kMaxGenerations = 1u << 20;

    // Enters a leaf sharing the given tensor's storage.
    Tensor variable(const Tensor& init);

    int append(TapeNode node);
    const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    TapeNode& node_mut(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // Drops nodes with id >= new_size. Used to roll back the recording of a
    // backward pass when the caller did not ask for a differentiable graph.
    void truncate(std::size_t new_size);

    std::uint32_t generation() const { return generation_; }
    void bump_generation();

    // Text edge list, one node per line, for debugging.
    void dump(std::ostream& os) const;

private:
    std::vector<TapeNode> nodes_;
    std::uint32_t generation_ = 0;
};

}  // namespace jm::ad
