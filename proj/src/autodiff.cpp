#include "jacmatch/autodiff.hpp"

#include <optional>

namespace jm::ad {

namespace detail {
// backward-only linear ops, implemented in ops.cpp
Tensor pool_scatter(const Tensor& g, const OpAttrs& fwd_attrs);
Tensor pool_gather(const Tensor& x, const OpAttrs& fwd_attrs, Shape out_shape);
Tensor avgpool2d_adj(const Tensor& g, const OpAttrs& fwd_attrs);
Tensor scatter_at(const Tensor& g, int index, const Shape& target);
}  // namespace detail

namespace {

// Contribution of `g` to the adjoint of elementwise input `x` whose shape may
// have been broadcast from a scalar.
Tensor reduce_for(const Tensor& g, const Tensor& input) {
    if (input.numel() == 1 && g.numel() != 1) return sum_all(g);
    return g;
}

Tensor relu_mask_const(const Tensor& x) {
    Tensor mask = Tensor::zeros(x.shape());
    const auto xs = x.data();
    auto ms = mask.mutable_data();
    for (std::size_t i = 0; i < ms.size(); ++i) ms[i] = xs[i] > 0.0 ? 1.0 : 0.0;
    return mask;
}

// Emits the vector-Jacobian product of one node as recorded ops and
// accumulates into `adjoints`. `g` is the adjoint of the node output.
void accumulate(std::vector<std::optional<Tensor>>& adjoints, const Tensor& input,
                const Tensor& contribution) {
    if (!input.on_tape()) return;  // constants take no gradient
    const std::size_t id = static_cast<std::size_t>(input.node());
    if (id >= adjoints.size()) return;  // beyond the differentiated frontier
    if (adjoints[id].has_value()) {
        adjoints[id] = add(*adjoints[id], contribution);
    } else {
        adjoints[id] = contribution;
    }
}

void apply_vjp(const TapeNode& node, const Tensor& g,
               std::vector<std::optional<Tensor>>& adjoints) {
    const auto& in = node.inputs;
    switch (node.kind) {
        case OpKind::leaf:
            break;
        case OpKind::add:
            accumulate(adjoints, in[0], reduce_for(g, in[0]));
            accumulate(adjoints, in[1], reduce_for(g, in[1]));
            break;
        case OpKind::sub:
            accumulate(adjoints, in[0], reduce_for(g, in[0]));
            accumulate(adjoints, in[1], neg(reduce_for(g, in[1])));
            break;
        case OpKind::mul:
            accumulate(adjoints, in[0], reduce_for(mul(g, in[1]), in[0]));
            accumulate(adjoints, in[1], reduce_for(mul(g, in[0]), in[1]));
            break;
        case OpKind::div:
            accumulate(adjoints, in[0], reduce_for(div(g, in[1]), in[0]));
            accumulate(adjoints, in[1],
                       reduce_for(neg(mul(g, div(in[0], square(in[1])))), in[1]));
            break;
        case OpKind::neg:
            accumulate(adjoints, in[0], neg(g));
            break;
        case OpKind::exp:
            accumulate(adjoints, in[0], mul(g, node.out));
            break;
        case OpKind::log:
            accumulate(adjoints, in[0], div(g, in[0]));
            break;
        case OpKind::sqrt:
            accumulate(adjoints, in[0], div(g, scale(node.out, 2.0)));
            break;
        case OpKind::square:
            accumulate(adjoints, in[0], mul(g, scale(in[0], 2.0)));
            break;
        case OpKind::relu:
            // derivative at 0 is 0 by convention; the mask is a constant, so
            // second derivatives through it vanish, as they should a.e.
            accumulate(adjoints, in[0], mul(g, relu_mask_const(in[0])));
            break;
        case OpKind::sigmoid:
            accumulate(adjoints, in[0],
                       mul(mul(g, node.out), sub(Tensor::scalar(1.0), node.out)));
            break;
        case OpKind::matmul: {
            const Tensor& a = in[0];
            const Tensor& b = in[1];
            if (b.ndim() == 2) {
                accumulate(adjoints, a, matmul(g, transpose(b)));
                accumulate(adjoints, b, matmul(transpose(a), g));
            } else {
                const int m = a.shape()[0];
                const int k = a.shape()[1];
                accumulate(adjoints, a, matmul(reshape(g, {m, 1}), reshape(b, {1, k})));
                accumulate(adjoints, b, matmul(transpose(a), g));
            }
            break;
        }
        case OpKind::transpose:
            accumulate(adjoints, in[0], transpose(g));
            break;
        case OpKind::conv2d:
            accumulate(adjoints, in[0], conv2d(g, kernel_flip_swap(in[1])));
            accumulate(adjoints, in[1], conv2d_wgrad(in[0], g));
            break;
        case OpKind::conv2d_wgrad:
            accumulate(adjoints, in[0], conv2d(in[1], kernel_flip_swap(g)));
            accumulate(adjoints, in[1], conv2d(in[0], g));
            break;
        case OpKind::kernel_flip_swap:
            accumulate(adjoints, in[0], kernel_flip_swap(g));
            break;
        case OpKind::maxpool2d:
            accumulate(adjoints, in[0], detail::pool_scatter(g, node.attrs));
            break;
        case OpKind::pool_scatter:
            accumulate(adjoints, in[0],
                       detail::pool_gather(g, node.attrs, in[0].shape()));
            break;
        case OpKind::pool_gather:
            accumulate(adjoints, in[0], detail::pool_scatter(g, node.attrs));
            break;
        case OpKind::avgpool2d:
            accumulate(adjoints, in[0], detail::avgpool2d_adj(g, node.attrs));
            break;
        case OpKind::avgpool2d_adj: {
            OpAttrs attrs = node.attrs;
            accumulate(adjoints, in[0], avgpool2d(g, attrs.i0, attrs.i1));
            break;
        }
        case OpKind::channel_sum:
            accumulate(adjoints, in[0], channel_broadcast(g, in[0].shape()[0]));
            break;
        case OpKind::channel_broadcast:
            accumulate(adjoints, in[0], channel_sum(g));
            break;
        case OpKind::sum_all:
            accumulate(adjoints, in[0], mul(Tensor::ones(in[0].shape()), g));
            break;
        case OpKind::reshape:
            accumulate(adjoints, in[0], reshape(g, in[0].shape()));
            break;
        case OpKind::concat: {
            int offset = 0;
            for (const Tensor& part : in) {
                const int len = static_cast<int>(part.numel());
                accumulate(adjoints, part, slice(g, offset, len));
                offset += len;
            }
            break;
        }
        case OpKind::slice: {
            const int n = in[0].shape()[0];
            const int off = node.attrs.i0;
            const int len = node.attrs.i1;
            std::vector<Tensor> parts;
            if (off > 0) parts.push_back(Tensor::zeros({off}));
            parts.push_back(g);
            if (off + len < n) parts.push_back(Tensor::zeros({n - off - len}));
            accumulate(adjoints, in[0], parts.size() == 1 ? g : concat(parts));
            break;
        }
        case OpKind::index_select:
            accumulate(adjoints, in[0], detail::scatter_at(g, node.attrs.i0, in[0].shape()));
            break;
        case OpKind::scatter_at:
            accumulate(adjoints, in[0], index_select(g, node.attrs.i0));
            break;
    }
}

}  // namespace

std::vector<Gradient> backward(const Tensor& output, const std::vector<Tensor>& wrt,
                               bool create_graph) {
    JM_CHECK(output.on_tape(), "backward: output is not recorded on a tape");
    JM_CHECK(output.numel() == 1,
             "backward: output must be scalar (reduce first), got ", shape_str(output.shape()));
    Tape& tape = *output.tape();
    tape.bump_generation();
    for (const Tensor& w : wrt) {
        JM_CHECK(w.on_tape() && w.tape() == &tape, "backward: wrt tensor not on the output's tape");
    }

    const std::size_t pre_size = tape.size();
    const int out_id = output.node();

    // ancestry of the output; nodes outside it are skipped
    std::vector<char> reachable(static_cast<std::size_t>(out_id) + 1, 0);
    reachable[static_cast<std::size_t>(out_id)] = 1;
    for (int id = out_id; id >= 0; --id) {
        if (!reachable[static_cast<std::size_t>(id)]) continue;
        for (const Tensor& in : tape.node(id).inputs) {
            if (in.on_tape() && in.node() <= out_id) reachable[static_cast<std::size_t>(in.node())] = 1;
        }
    }

    std::vector<std::optional<Tensor>> adjoints(static_cast<std::size_t>(out_id) + 1);
    adjoints[static_cast<std::size_t>(out_id)] = Tensor::ones({1});

    for (int id = out_id; id >= 0; --id) {
        if (!reachable[static_cast<std::size_t>(id)]) continue;
        if (!adjoints[static_cast<std::size_t>(id)].has_value()) continue;
        // copy: recording VJP ops can reallocate the tape's node vector
        TapeNode node = tape.node(id);
        if (node.kind == OpKind::leaf) continue;
        apply_vjp(node, *adjoints[static_cast<std::size_t>(id)], adjoints);
    }

    std::vector<Gradient> result;
    result.reserve(wrt.size());
    for (const Tensor& w : wrt) {
        Gradient gr;
        gr.wrt = w.node();
        const std::size_t id = static_cast<std::size_t>(w.node());
        if (id < adjoints.size() && adjoints[id].has_value()) {
            Tensor g = *adjoints[id];
            if (g.shape() != w.shape() && g.numel() == w.numel()) g = reshape(g, w.shape());
            gr.value = create_graph ? g : g.detached();
        } else {
            gr.value = Tensor::zeros(w.shape());
        }
        result.push_back(std::move(gr));
    }

    if (!create_graph) tape.truncate(pre_size);
    return result;
}

namespace {

bool is_ancestor(const Tensor& output, const Tensor& input) {
    if (!output.on_tape() || !input.on_tape() || output.tape() != input.tape()) return false;
    const Tape& tape = *output.tape();
    const int out_id = output.node();
    const int in_id = input.node();
    if (in_id > out_id) return false;
    std::vector<char> reachable(static_cast<std::size_t>(out_id) + 1, 0);
    reachable[static_cast<std::size_t>(out_id)] = 1;
    for (int id = out_id; id >= in_id; --id) {
        if (!reachable[static_cast<std::size_t>(id)]) continue;
        if (id == in_id) return true;
        for (const Tensor& in : tape.node(id).inputs) {
            if (in.on_tape() && in.node() <= out_id) reachable[static_cast<std::size_t>(in.node())] = 1;
        }
    }
    return false;
}

}  // namespace

JacobianResult jacobian(const Tensor& output, const Tensor& input, bool create_graph) {
    JM_CHECK(output.on_tape(), "jacobian: output is not recorded on a tape");
    JM_CHECK(output.ndim() == 1, "jacobian: output must be a vector, got ",
             shape_str(output.shape()));
    const int k = output.shape()[0];
    const int d = static_cast<int>(input.numel());

    JacobianResult res;
    res.disconnected = !is_ancestor(output, input);
    res.rows.reserve(static_cast<std::size_t>(k));
    Tape& tape = *output.tape();
    for (int i = 0; i < k; ++i) {
        const std::size_t mark = tape.size();
        Tensor out_i = index_select(output, i);
        auto grads = backward(out_i, {input}, create_graph);
        if (!create_graph) tape.truncate(mark);
        Tensor row = grads[0].value;
        res.rows.push_back(row.ndim() == 1 ? row : reshape(row, {d}));
    }
    if (create_graph) {
        res.matrix = reshape(concat(res.rows), {k, d});
    } else {
        Tensor m = Tensor::zeros({k, d});
        auto md = m.mutable_data();
        for (int i = 0; i < k; ++i) {
            const auto rd = res.rows[static_cast<std::size_t>(i)].data();
            std::copy(rd.begin(), rd.end(), md.begin() + static_cast<std::size_t>(i) * d);
        }
        res.matrix = m;
    }
    return res;
}

Tensor grad(const Tensor& output, const Tensor& wrt, bool create_graph) {
    return backward(output, {wrt}, create_graph)[0].value;
}

}  // namespace jm::ad
