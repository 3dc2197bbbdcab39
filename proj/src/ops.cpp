#include "jacmatch/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jacmatch/kernels.hpp"

namespace jm::ad {
namespace {

using kernels::active;

Tape* common_tape(const std::vector<Tensor>& inputs, OpKind kind) {
    Tape* tape = nullptr;
    for (const Tensor& t : inputs) {
        JM_CHECK(t.defined(), op_name(kind), ": undefined input tensor");
        if (!t.on_tape()) continue;
        if (tape == nullptr) {
            tape = t.tape();
        } else {
            JM_CHECK(tape == t.tape(), op_name(kind), ": inputs recorded on different tapes");
        }
    }
    return tape;
}

Tensor emit(Tape* tape, OpKind kind, std::vector<Tensor> inputs, Shape out_shape,
            std::shared_ptr<std::vector<double>> out_data, OpAttrs attrs = {}) {
    if (tape == nullptr) {
        Tensor out = make_tracked(nullptr, -1, std::move(out_shape), std::move(out_data));
        return out;
    }
    TapeNode node;
    node.kind = kind;
    node.inputs = std::move(inputs);
    node.attrs = std::move(attrs);
    const int id = tape->append(std::move(node));
    Tensor out = make_tracked(tape, id, std::move(out_shape), std::move(out_data));
    tape->node_mut(id).out = out;
    return out;
}

std::shared_ptr<std::vector<double>> alloc(std::int64_t n) {
    return std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

// Elementwise op with optional scalar broadcast on either side.
enum class EwKind { add, sub, mul, div };

Tensor elementwise(EwKind ew, OpKind kind, const Tensor& a, const Tensor& b) {
    Tape* tape = common_tape({a, b}, kind);
    const Tensor* big = nullptr;
    if (a.shape() == b.shape()) {
        big = &a;
    } else if (is_scalar(a)) {
        big = &b;
    } else if (is_scalar(b)) {
        big = &a;
    } else {
        JM_CHECK(false, op_name(kind), ": shape mismatch ", shape_str(a.shape()), " vs ",
                 shape_str(b.shape()));
    }
    const std::int64_t n = big->numel();
    auto out = alloc(n);
    double* y = out->data();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    const auto& k = active();
    if (a.shape() == b.shape()) {
        switch (ew) {
            case EwKind::add: k.add(pa, pb, y, n); break;
            case EwKind::sub: k.sub(pa, pb, y, n); break;
            case EwKind::mul: k.mul(pa, pb, y, n); break;
            case EwKind::div: k.div(pa, pb, y, n); break;
        }
    } else if (is_scalar(b)) {
        const double c = pb[0];
        switch (ew) {
            case EwKind::add: k.add_scalar(pa, c, y, n); break;
            case EwKind::sub: k.add_scalar(pa, -c, y, n); break;
            case EwKind::mul: k.mul_scalar(pa, c, y, n); break;
            case EwKind::div:
                for (std::int64_t i = 0; i < n; ++i) y[i] = pa[i] / c;
                break;
        }
    } else {  // a scalar
        const double c = pa[0];
        switch (ew) {
            case EwKind::add: k.add_scalar(pb, c, y, n); break;
            case EwKind::sub:
                for (std::int64_t i = 0; i < n; ++i) y[i] = c - pb[i];
                break;
            case EwKind::mul: k.mul_scalar(pb, c, y, n); break;
            case EwKind::div:
                for (std::int64_t i = 0; i < n; ++i) y[i] = c / pb[i];
                break;
        }
    }
    return emit(tape, kind, {a, b}, big->shape(), std::move(out));
}

Tensor unary(OpKind kind, const Tensor& a, void (*fn)(const double*, double*, std::int64_t)) {
    Tape* tape = common_tape({a}, kind);
    auto out = alloc(a.numel());
    fn(a.data().data(), out->data(), a.numel());
    return emit(tape, kind, {a}, a.shape(), std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwKind::add, OpKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwKind::sub, OpKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwKind::mul, OpKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(EwKind::div, OpKind::div, a, b); }

Tensor neg(const Tensor& a) {
    Tape* tape = common_tape({a}, OpKind::neg);
    auto out = alloc(a.numel());
    active().mul_scalar(a.data().data(), -1.0, out->data(), a.numel());
    return emit(tape, OpKind::neg, {a}, a.shape(), std::move(out));
}

Tensor exp(const Tensor& a) {
    return unary(OpKind::exp, a, [](const double* x, double* y, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
    });
}

Tensor log(const Tensor& a) {
    return unary(OpKind::log, a, [](const double* x, double* y, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
    });
}

Tensor sqrt(const Tensor& a) {
    Tape* tape = common_tape({a}, OpKind::sqrt);
    auto out = alloc(a.numel());
    active().sqrt(a.data().data(), out->data(), a.numel());
    return emit(tape, OpKind::sqrt, {a}, a.shape(), std::move(out));
}

Tensor square(const Tensor& a) {
    Tape* tape = common_tape({a}, OpKind::square);
    auto out = alloc(a.numel());
    active().mul(a.data().data(), a.data().data(), out->data(), a.numel());
    return emit(tape, OpKind::square, {a}, a.shape(), std::move(out));
}

Tensor relu(const Tensor& a) {
    Tape* tape = common_tape({a}, OpKind::relu);
    auto out = alloc(a.numel());
    active().relu(a.data().data(), out->data(), a.numel());
    return emit(tape, OpKind::relu, {a}, a.shape(), std::move(out));
}

Tensor sigmoid(const Tensor& a) {
    return unary(OpKind::sigmoid, a, [](const double* x, double* y, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape* tape = common_tape({a, b}, OpKind::matmul);
    JM_CHECK(a.ndim() == 2, "matmul: left operand must be 2-D, got ", shape_str(a.shape()));
    JM_CHECK(b.ndim() == 1 || b.ndim() == 2, "matmul: right operand must be 1-D or 2-D, got ",
             shape_str(b.shape()));
    const int m = a.shape()[0];
    const int k = a.shape()[1];
    const int bk = b.shape()[0];
    JM_CHECK(k == bk, "matmul: inner dimensions differ, ", shape_str(a.shape()), " vs ",
             shape_str(b.shape()));
    const int n = b.ndim() == 2 ? b.shape()[1] : 1;
    auto out = alloc(static_cast<std::int64_t>(m) * n);
    active().matmul(a.data().data(), b.data().data(), out->data(), m, k, n);
    Shape out_shape = b.ndim() == 2 ? Shape{m, n} : Shape{m};
    return emit(tape, OpKind::matmul, {a, b}, std::move(out_shape), std::move(out));
}

Tensor transpose(const Tensor& a) {
    Tape* tape = common_tape({a}, OpKind::transpose);
    JM_CHECK(a.ndim() == 2, "transpose: requires 2-D tensor, got ", shape_str(a.shape()));
    const int m = a.shape()[0];
    const int n = a.shape()[1];
    auto out = alloc(a.numel());
    const double* pa = a.data().data();
    double* y = out->data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) y[j * m + i] = pa[i * n + j];
    return emit(tape, OpKind::transpose, {a}, {n, m}, std::move(out));
}

Tensor conv2d(const Tensor& x, const Tensor& w) {
    Tape* tape = common_tape({x, w}, OpKind::conv2d);
    JM_CHECK(x.ndim() == 3, "conv2d: input must be (C,H,W), got ", shape_str(x.shape()));
    JM_CHECK(w.ndim() == 4 && w.shape()[2] == 3 && w.shape()[3] == 3,
             "conv2d: kernel must be (F,C,3,3), got ", shape_str(w.shape()));
    JM_CHECK(x.shape()[0] == w.shape()[1], "conv2d: channel mismatch, input ",
             shape_str(x.shape()), " vs kernel ", shape_str(w.shape()));
    const int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2], co = w.shape()[0];
    auto out = alloc(static_cast<std::int64_t>(co) * h * wd);
    active().conv3x3(x.data().data(), w.data().data(), out->data(), ci, h, wd, co);
    return emit(tape, OpKind::conv2d, {x, w}, {co, h, wd}, std::move(out));
}

Tensor conv2d_wgrad(const Tensor& x, const Tensor& g) {
    Tape* tape = common_tape({x, g}, OpKind::conv2d_wgrad);
    JM_CHECK(x.ndim() == 3 && g.ndim() == 3, "conv2d_wgrad: inputs must be (C,H,W)/(F,H,W)");
    JM_CHECK(x.shape()[1] == g.shape()[1] && x.shape()[2] == g.shape()[2],
             "conv2d_wgrad: spatial mismatch ", shape_str(x.shape()), " vs ", shape_str(g.shape()));
    const int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2], co = g.shape()[0];
    auto out = alloc(static_cast<std::int64_t>(co) * ci * 9);
    double* y = out->data();
    const double* px = x.data().data();
    const double* pg = g.data().data();
    for (int f = 0; f < co; ++f) {
        const double* gf = pg + static_cast<std::size_t>(f) * h * wd;
        for (int c = 0; c < ci; ++c) {
            const double* xc = px + static_cast<std::size_t>(c) * h * wd;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    double acc = 0.0;
                    for (int oh = 0; oh < h; ++oh) {
                        const int ih = oh + ky - 1;
                        if (ih < 0 || ih >= h) continue;
                        for (int ow = 0; ow < wd; ++ow) {
                            const int iw = ow + kx - 1;
                            if (iw < 0 || iw >= wd) continue;
                            acc += gf[oh * wd + ow] * xc[ih * wd + iw];
                        }
                    }
                    y[((f * ci + c) * 3 + ky) * 3 + kx] = acc;
                }
            }
        }
    }
    return emit(tape, OpKind::conv2d_wgrad, {x, g}, {co, ci, 3, 3}, std::move(out));
}

Tensor kernel_flip_swap(const Tensor& w) {
    Tape* tape = common_tape({w}, OpKind::kernel_flip_swap);
    JM_CHECK(w.ndim() == 4 && w.shape()[2] == 3 && w.shape()[3] == 3,
             "kernel_flip_swap: expects (F,C,3,3), got ", shape_str(w.shape()));
    const int f = w.shape()[0], c = w.shape()[1];
    auto out = alloc(w.numel());
    const double* p = w.data().data();
    double* y = out->data();
    for (int i = 0; i < f; ++i)
        for (int j = 0; j < c; ++j)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx)
                    y[((j * f + i) * 3 + (2 - ky)) * 3 + (2 - kx)] =
                        p[((i * c + j) * 3 + ky) * 3 + kx];
    return emit(tape, OpKind::kernel_flip_swap, {w}, {c, f, 3, 3}, std::move(out));
}

namespace {

void check_pool_input(const Tensor& x, int window, int stride, OpKind kind) {
    JM_CHECK(x.ndim() == 3, op_name(kind), ": input must be (C,H,W), got ", shape_str(x.shape()));
    JM_CHECK(window >= 1 && stride >= 1, op_name(kind), ": window/stride must be >= 1");
    JM_CHECK(x.shape()[1] >= window && x.shape()[2] >= window, op_name(kind), ": window ", window,
             " larger than input ", shape_str(x.shape()));
}

}  // namespace

Tensor maxpool2d(const Tensor& x, int window, int stride, std::vector<int>* indices_out) {
    Tape* tape = common_tape({x}, OpKind::maxpool2d);
    check_pool_input(x, window, stride, OpKind::maxpool2d);
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;
    auto out = alloc(static_cast<std::int64_t>(c) * oh * ow);
    auto indices = std::make_shared<std::vector<int>>(static_cast<std::size_t>(c) * oh * ow);
    const double* px = x.data().data();
    double* y = out->data();
    for (int ch = 0; ch < c; ++ch) {
        const double* xc = px + static_cast<std::size_t>(ch) * h * w;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double best = -std::numeric_limits<double>::infinity();
                int best_idx = -1;
                // ties resolve to the first maximal index in row-major order
                for (int wy = 0; wy < window; ++wy) {
                    for (int wx = 0; wx < window; ++wx) {
                        const int iy = i * stride + wy;
                        const int ix = j * stride + wx;
                        const double v = xc[iy * w + ix];
                        if (v > best) {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                y[(ch * oh + i) * ow + j] = best;
                (*indices)[static_cast<std::size_t>((ch * oh + i) * ow + j)] =
                    ch * h * w + best_idx;
            }
        }
    }
    if (indices_out != nullptr) *indices_out = *indices;
    OpAttrs attrs;
    attrs.i0 = window;
    attrs.i1 = stride;
    attrs.shape = x.shape();
    attrs.indices = std::move(indices);
    return emit(tape, OpKind::maxpool2d, {x}, {c, oh, ow}, std::move(out), std::move(attrs));
}

namespace {

Tensor pool_scatter_impl(Tape* tape, const Tensor& g, const OpAttrs& fwd_attrs) {
    auto out = alloc(numel_of(fwd_attrs.shape));
    std::fill(out->begin(), out->end(), 0.0);
    const double* pg = g.data().data();
    const auto& idx = *fwd_attrs.indices;
    for (std::size_t i = 0; i < idx.size(); ++i) (*out)[static_cast<std::size_t>(idx[i])] += pg[i];
    OpAttrs attrs = fwd_attrs;
    return emit(tape, OpKind::pool_scatter, {g}, fwd_attrs.shape, std::move(out), std::move(attrs));
}

Tensor pool_gather_impl(Tape* tape, const Tensor& x, const OpAttrs& fwd_attrs, Shape out_shape) {
    const auto& idx = *fwd_attrs.indices;
    auto out = alloc(static_cast<std::int64_t>(idx.size()));
    const double* px = x.data().data();
    for (std::size_t i = 0; i < idx.size(); ++i) (*out)[i] = px[static_cast<std::size_t>(idx[i])];
    OpAttrs attrs = fwd_attrs;
    return emit(tape, OpKind::pool_gather, {x}, std::move(out_shape), std::move(out),
                std::move(attrs));
}

}  // namespace

Tensor avgpool2d(const Tensor& x, int window, int stride) {
    Tape* tape = common_tape({x}, OpKind::avgpool2d);
    check_pool_input(x, window, stride, OpKind::avgpool2d);
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;
    const double inv_area = 1.0 / (static_cast<double>(window) * window);
    auto out = alloc(static_cast<std::int64_t>(c) * oh * ow);
    const double* px = x.data().data();
    double* y = out->data();
    for (int ch = 0; ch < c; ++ch) {
        const double* xc = px + static_cast<std::size_t>(ch) * h * w;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int wy = 0; wy < window; ++wy)
                    for (int wx = 0; wx < window; ++wx)
                        acc += xc[(i * stride + wy) * w + (j * stride + wx)];
                y[(ch * oh + i) * ow + j] = acc * inv_area;
            }
        }
    }
    OpAttrs attrs;
    attrs.i0 = window;
    attrs.i1 = stride;
    attrs.shape = x.shape();
    return emit(tape, OpKind::avgpool2d, {x}, {c, oh, ow}, std::move(out), std::move(attrs));
}

namespace {

Tensor avgpool2d_adj_impl(Tape* tape, const Tensor& g, const OpAttrs& fwd_attrs) {
    const Shape& in_shape = fwd_attrs.shape;
    const int window = fwd_attrs.i0, stride = fwd_attrs.i1;
    const int c = in_shape[0], h = in_shape[1], w = in_shape[2];
    const int oh = g.shape()[1], ow = g.shape()[2];
    const double inv_area = 1.0 / (static_cast<double>(window) * window);
    auto out = alloc(numel_of(in_shape));
    std::fill(out->begin(), out->end(), 0.0);
    const double* pg = g.data().data();
    for (int ch = 0; ch < c; ++ch) {
        double* xc = out->data() + static_cast<std::size_t>(ch) * h * w;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                const double v = pg[(ch * oh + i) * ow + j] * inv_area;
                for (int wy = 0; wy < window; ++wy)
                    for (int wx = 0; wx < window; ++wx)
                        xc[(i * stride + wy) * w + (j * stride + wx)] += v;
            }
        }
    }
    OpAttrs attrs = fwd_attrs;
    return emit(tape, OpKind::avgpool2d_adj, {g}, in_shape, std::move(out), std::move(attrs));
}

}  // namespace

Tensor channel_sum(const Tensor& x) {
    Tape* tape = common_tape({x}, OpKind::channel_sum);
    JM_CHECK(x.ndim() == 3 && x.shape()[0] >= 1, "channel_sum: input must be (C,H,W) with C >= 1, got ",
             shape_str(x.shape()));
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    auto out = alloc(static_cast<std::int64_t>(h) * w);
    const double* px = x.data().data();
    double* y = out->data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i) {
        double acc = 0.0;
        for (int ch = 0; ch < c; ++ch) acc += px[ch * plane + i];
        y[i] = acc;
    }
    return emit(tape, OpKind::channel_sum, {x}, {h, w}, std::move(out));
}

Tensor channel_broadcast(const Tensor& x, int channels) {
    Tape* tape = common_tape({x}, OpKind::channel_broadcast);
    JM_CHECK(x.ndim() == 2, "channel_broadcast: input must be (H,W), got ", shape_str(x.shape()));
    JM_CHECK(channels >= 1, "channel_broadcast: channels must be >= 1");
    const int h = x.shape()[0], w = x.shape()[1];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto out = alloc(static_cast<std::int64_t>(channels) * h * w);
    const double* px = x.data().data();
    for (int ch = 0; ch < channels; ++ch) {
        std::copy(px, px + plane, out->data() + ch * plane);
    }
    OpAttrs attrs;
    attrs.i0 = channels;
    return emit(tape, OpKind::channel_broadcast, {x}, {channels, h, w}, std::move(out),
                std::move(attrs));
}

Tensor sum_all(const Tensor& a) {
    Tape* tape = common_tape({a}, OpKind::sum_all);
    auto out = std::make_shared<std::vector<double>>(1, active().sum(a.data().data(), a.numel()));
    return emit(tape, OpKind::sum_all, {a}, {1}, std::move(out));
}

Tensor reshape(const Tensor& a, Shape shape) {
    Tape* tape = common_tape({a}, OpKind::reshape);
    JM_CHECK(numel_of(shape) == a.numel(), "reshape: ", shape_str(a.shape()), " -> ",
             shape_str(shape), " changes element count");
    OpAttrs attrs;
    attrs.shape = a.shape();
    // data is identical; the node output shares storage
    return emit(tape, OpKind::reshape, {a}, std::move(shape), a.storage_handle(), std::move(attrs));
}

Tensor concat(const std::vector<Tensor>& parts) {
    JM_CHECK(!parts.empty(), "concat: no inputs");
    Tape* tape = common_tape(parts, OpKind::concat);
    std::int64_t total = 0;
    for (const Tensor& p : parts) {
        JM_CHECK(p.ndim() == 1, "concat: inputs must be 1-D, got ", shape_str(p.shape()));
        total += p.numel();
    }
    auto out = alloc(total);
    double* y = out->data();
    for (const Tensor& p : parts) {
        std::copy(p.data().begin(), p.data().end(), y);
        y += p.numel();
    }
    return emit(tape, OpKind::concat, parts, {static_cast<int>(total)}, std::move(out));
}

Tensor slice(const Tensor& a, int offset, int length) {
    Tape* tape = common_tape({a}, OpKind::slice);
    JM_CHECK(a.ndim() == 1, "slice: input must be 1-D, got ", shape_str(a.shape()));
    JM_CHECK(offset >= 0 && length >= 1 && offset + length <= a.shape()[0],
             "slice: range [", offset, ",", offset + length, ") out of bounds for ",
             shape_str(a.shape()));
    auto out = alloc(length);
    std::copy(a.data().begin() + offset, a.data().begin() + offset + length, out->begin());
    OpAttrs attrs;
    attrs.i0 = offset;
    attrs.i1 = length;
    return emit(tape, OpKind::slice, {a}, {length}, std::move(out), std::move(attrs));
}

Tensor index_select(const Tensor& a, int index) {
    Tape* tape = common_tape({a}, OpKind::index_select);
    JM_CHECK(a.ndim() == 1 || a.ndim() == 2, "index_select: input must be 1-D or 2-D, got ",
             shape_str(a.shape()));
    JM_CHECK(index >= 0 && index < a.shape()[0], "index_select: index ", index,
             " out of range for ", shape_str(a.shape()));
    OpAttrs attrs;
    attrs.i0 = index;
    attrs.shape = a.shape();
    if (a.ndim() == 1) {
        auto out = std::make_shared<std::vector<double>>(1, a.data()[index]);
        return emit(tape, OpKind::index_select, {a}, {1}, std::move(out), std::move(attrs));
    }
    const int cols = a.shape()[1];
    auto out = alloc(cols);
    std::copy(a.data().begin() + static_cast<std::size_t>(index) * cols,
              a.data().begin() + static_cast<std::size_t>(index + 1) * cols, out->begin());
    return emit(tape, OpKind::index_select, {a}, {cols}, std::move(out), std::move(attrs));
}

namespace {

Tensor scatter_at_impl(Tape* tape, const Tensor& g, int index, const Shape& target) {
    auto out = alloc(numel_of(target));
    std::fill(out->begin(), out->end(), 0.0);
    if (target.size() == 1) {
        (*out)[static_cast<std::size_t>(index)] = g.data()[0];
    } else {
        const int cols = target[1];
        std::copy(g.data().begin(), g.data().end(),
                  out->begin() + static_cast<std::size_t>(index) * cols);
    }
    OpAttrs attrs;
    attrs.i0 = index;
    attrs.shape = target;
    return emit(tape, OpKind::scatter_at, {g}, target, std::move(out), std::move(attrs));
}

}  // namespace

// Internal entry points used by the backward engine; exposed through a
// header-free hook to keep the public surface small.
namespace detail {

Tensor pool_scatter(const Tensor& g, const OpAttrs& fwd_attrs) {
    Tape* tape = common_tape({g}, OpKind::pool_scatter);
    return pool_scatter_impl(tape, g, fwd_attrs);
}

Tensor pool_gather(const Tensor& x, const OpAttrs& fwd_attrs, Shape out_shape) {
    Tape* tape = common_tape({x}, OpKind::pool_gather);
    return pool_gather_impl(tape, x, fwd_attrs, std::move(out_shape));
}

Tensor avgpool2d_adj(const Tensor& g, const OpAttrs& fwd_attrs) {
    Tape* tape = common_tape({g}, OpKind::avgpool2d_adj);
    return avgpool2d_adj_impl(tape, g, fwd_attrs);
}

Tensor scatter_at(const Tensor& g, int index, const Shape& target) {
    Tape* tape = common_tape({g}, OpKind::scatter_at);
    return scatter_at_impl(tape, g, index, target);
}

}  // namespace detail

Tensor record(const std::string& op_kind, const std::vector<Tensor>& inputs,
              const OpAttrs& attrs) {
    const OpKind kind = op_kind_from_name(op_kind);
    auto need = [&](std::size_t n) {
        JM_CHECK(inputs.size() == n, op_name(kind), ": expected ", n, " inputs, got ",
                 inputs.size());
    };
    switch (kind) {
        case OpKind::add: need(2); return add(inputs[0], inputs[1]);
        case OpKind::sub: need(2); return sub(inputs[0], inputs[1]);
        case OpKind::mul: need(2); return mul(inputs[0], inputs[1]);
        case OpKind::div: need(2); return div(inputs[0], inputs[1]);
        case OpKind::neg: need(1); return neg(inputs[0]);
        case OpKind::exp: need(1); return exp(inputs[0]);
        case OpKind::log: need(1); return log(inputs[0]);
        case OpKind::sqrt: need(1); return sqrt(inputs[0]);
        case OpKind::square: need(1); return square(inputs[0]);
        case OpKind::relu: need(1); return relu(inputs[0]);
        case OpKind::sigmoid: need(1); return sigmoid(inputs[0]);
        case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
        case OpKind::transpose: need(1); return transpose(inputs[0]);
        case OpKind::conv2d: need(2); return conv2d(inputs[0], inputs[1]);
        case OpKind::conv2d_wgrad: need(2); return conv2d_wgrad(inputs[0], inputs[1]);
        case OpKind::kernel_flip_swap: need(1); return kernel_flip_swap(inputs[0]);
        case OpKind::maxpool2d:
            need(1);
            return maxpool2d(inputs[0], attrs.i0 ? attrs.i0 : 2, attrs.i1 ? attrs.i1 : 2);
        case OpKind::avgpool2d:
            need(1);
            JM_CHECK(attrs.i0 >= 1 && attrs.i1 >= 1, "avgpool2d: window/stride attrs required");
            return avgpool2d(inputs[0], attrs.i0, attrs.i1);
        case OpKind::channel_sum: need(1); return channel_sum(inputs[0]);
        case OpKind::channel_broadcast: need(1); return channel_broadcast(inputs[0], attrs.i0);
        case OpKind::sum_all: need(1); return sum_all(inputs[0]);
        case OpKind::reshape: need(1); return reshape(inputs[0], attrs.shape);
        case OpKind::concat: return concat(inputs);
        case OpKind::slice: need(1); return slice(inputs[0], attrs.i0, attrs.i1);
        case OpKind::index_select: need(1); return index_select(inputs[0], attrs.i0);
        default:
            JM_CHECK(false, "op kind '", op_kind, "' cannot be recorded directly");
    }
    return {};
}

Tensor softmax_t(const Tensor& logits, double temperature) {
    JM_CHECK(temperature > 0.0, "softmax_t: temperature must be > 0, got ", temperature);
    JM_CHECK(logits.ndim() == 1, "softmax_t: logits must be 1-D, got ", shape_str(logits.shape()));
    Tensor zt = div(logits, Tensor::scalar(temperature));
    // max-subtraction for stability; the max enters as a constant, which
    // leaves the derivative unchanged (softmax is shift invariant)
    double m = -std::numeric_limits<double>::infinity();
    for (double v : zt.data()) m = std::max(m, v);
    Tensor e = exp(sub(zt, Tensor::scalar(m)));
    return div(e, sum_all(e));
}

Tensor global_avg_pool(const Tensor& x) {
    JM_CHECK(x.ndim() == 3, "global_avg_pool: input must be (C,H,W), got ", shape_str(x.shape()));
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    JM_CHECK(h == w, "global_avg_pool: pooling window is square; got ", shape_str(x.shape()));
    Tensor pooled = avgpool2d(x, h, 1);
    return reshape(pooled, {c});
}

Tensor clamp_min(const Tensor& a, double floor) {
    Tensor f = Tensor::scalar(floor);
    return add(relu(sub(a, f)), f);
}

Tensor scale(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

Tensor l2_norm(const Tensor& a) { return sqrt(sum_all(square(a))); }

Tensor dot_all(const Tensor& a, const Tensor& b) { return sum_all(mul(a, b)); }

}  // namespace jm::ad
