#pragma once

#include <vector>

#include "jacmatch/tape.hpp"
#include "jacmatch/tensor.hpp"

namespace jm::ad {

// Recorded tensor operations. Shapes must match except that either side of
// an elementwise op may be a scalar (numel 1), which broadcasts. Inputs must
// live on the same tape or be detached constants; ops on fully detached
// inputs evaluate eagerly and stay detached.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// (m,k) @ (k,n) -> (m,n), or (m,k) @ (k,) -> (m,)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// x (C,H,W), w (F,C,3,3); stride 1, zero padding 1 -> (F,H,W)
Tensor conv2d(const Tensor& x, const Tensor& w);
// Weight gradient of conv2d: x (C,H,W), g (F,H,W) -> (F,C,3,3)
Tensor conv2d_wgrad(const Tensor& x, const Tensor& g);
// (F,C,3,3) -> (C,F,3,3) with both spatial axes flipped (an involution)
Tensor kernel_flip_swap(const Tensor& w);

// indices_out, when given, receives the argmax flat index per output cell
// (ties resolve to the first maximal index in row-major order).
Tensor maxpool2d(const Tensor& x, int window = 2, int stride = 2,
                 std::vector<int>* indices_out = nullptr);
Tensor avgpool2d(const Tensor& x, int window, int stride);

// (C,H,W) -> (H,W), sum over channels
Tensor channel_sum(const Tensor& x);
// (H,W) -> (C,H,W), replicate across channels
Tensor channel_broadcast(const Tensor& x, int channels);

Tensor sum_all(const Tensor& a);  // -> shape (1,)
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts);       // 1-D tensors
Tensor slice(const Tensor& a, int offset, int length);  // 1-D
// 1-D: element i -> (1,). 2-D: row i -> (D,)
Tensor index_select(const Tensor& a, int index);

// Generic gate used where the op kind arrives as data; validates the kind
// and dispatches to the functions above.
Tensor record(const std::string& op_kind, const std::vector<Tensor>& inputs,
              const OpAttrs& attrs = {});

// Composites.
Tensor softmax_t(const Tensor& logits, double temperature = 1.0);
Tensor global_avg_pool(const Tensor& x);            // (C,H,W) -> (C,)
Tensor clamp_min(const Tensor& a, double floor);    // max(a, floor), via relu
Tensor scale(const Tensor& a, double c);
Tensor l2_norm(const Tensor& a);                    // -> (1,)
Tensor dot_all(const Tensor& a, const Tensor& b);   // sum(a*b) -> (1,)

}  // namespace jm::ad
