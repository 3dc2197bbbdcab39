#pragma once

#include <vector>

#include "jacmatch/ops.hpp"
#include "jacmatch/tape.hpp"
#include "jacmatch/tensor.hpp"

namespace jm::ad {

struct Gradient {
    int wrt = -1;   // node id of the differentiated-against tensor
    Tensor value;   // same shape as the wrt tensor
};

// Reverse-mode gradients of a recorded scalar. With create_graph the
// gradient tensors are themselves recorded and can be differentiated again;
// without it the recording is rolled back and detached values are returned.
// Tensors in `wrt` that are not ancestors of `output` receive zero
// gradients. Results align with the order of `wrt`.
std::vector<Gradient> backward(const Tensor& output, const std::vector<Tensor>& wrt,
                               bool create_graph = false);

struct JacobianResult {
    Tensor matrix;              // (k, D)
    bool disconnected = false;  // input was not an ancestor of the output
    std::vector<Tensor> rows;   // row i = d output[i] / d input
};

// Row i equals backward(output[i], wrt=input): k separate reverse passes.
JacobianResult jacobian(const Tensor& output, const Tensor& input, bool create_graph = false);

// Single gradient of a scalar w.r.t. one tensor; convenience wrapper.
Tensor grad(const Tensor& output, const Tensor& wrt, bool create_graph = false);

}  // namespace jm::ad
