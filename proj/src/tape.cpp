#include "jacmatch/tape.hpp"

#include <ostream>
#include <unordered_map>

#include "jacmatch/common.hpp"

namespace jm::ad {

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::div: return "div";
        case OpKind::neg: return "neg";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sqrt: return "sqrt";
        case OpKind::square: return "square";
        case OpKind::relu: return "relu";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose: return "transpose";
        case OpKind::conv2d: return "conv2d";
        case OpKind::conv2d_wgrad: return "conv2d_wgrad";
        case OpKind::kernel_flip_swap: return "kernel_flip_swap";
        case OpKind::maxpool2d: return "maxpool2d";
        case OpKind::pool_scatter: return "pool_scatter";
        case OpKind::pool_gather: return "pool_gather";
        case OpKind::avgpool2d: return "avgpool2d";
        case OpKind::avgpool2d_adj: return "avgpool2d_adj";
        case OpKind::channel_sum: return "channel_sum";
        case OpKind::channel_broadcast: return "channel_broadcast";
        case OpKind::sum_all: return "sum_all";
        case OpKind::reshape: return "reshape";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::index_select: return "index_select";
        case OpKind::scatter_at: return "scatter_at";
    }
    return "?";
}

OpKind op_kind_from_name(const std::string& name) {
    static const std::unordered_map<std::string, OpKind> table = [] {
        std::unordered_map<std::string, OpKind> m;
        for (int k = 0; k <= static_cast<int>(OpKind::scatter_at); ++k) {
            m[op_name(static_cast<OpKind>(k))] = static_cast<OpKind>(k);
        }
        // aliases used by callers that speak the softmax layer's name
        m["maxpool"] = OpKind::maxpool2d;
        m["avgpool"] = OpKind::avgpool2d;
        return m;
    }();
    auto it = table.find(name);
    JM_CHECK(it != table.end(), "unknown op kind '", name, "'");
    return it->second;
}

Tensor Tape::variable(const Tensor& init) {
    JM_CHECK(init.defined(), "variable() requires a defined tensor");
    TapeNode node;
    node.kind = OpKind::leaf;
    const int id = append(std::move(node));
    // Shares the caller's storage: parameters stay in sync without copies,
    // and tapes never outlive an optimizer step.
    Tensor leaf = make_tracked(this, id, init.shape(), init.storage_handle());
    nodes_.back().out = leaf;
    return leaf;
}

int Tape::append(TapeNode node) {
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    return id;
}

void Tape::truncate(std::size_t new_size) {
    JM_CHECK(new_size <= nodes_.size(), "truncate beyond tape end");
    nodes_.resize(new_size);
}

void Tape::bump_generation() {
    JM_CHECK(generation_ < kMaxGenerations, "tape generation overflow");
    ++generation_;
}

void Tape::dump(std::ostream& os) const {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const TapeNode& n = nodes_[id];
        os << id << " " << op_name(n.kind) << " " << shape_str(n.out.shape()) << " <-";
        for (const Tensor& in : n.inputs) {
            if (in.on_tape()) {
                os << " " << in.node();
            } else {
                os << " const" << shape_str(in.shape());
            }
        }
        os << "\n";
    }
}

}  // namespace jm::ad
