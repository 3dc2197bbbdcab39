#include "jacmatch/tensor.hpp"

#include <numeric>

namespace jm::ad {

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    s += ")";
    return s;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    for (int d : shape) JM_CHECK(d > 0, "tensor extents must be positive, got ", shape_str(shape));
    Tensor t;
    t.storage_ = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(numel_of(shape)), value);
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    for (int d : shape) JM_CHECK(d > 0, "tensor extents must be positive, got ", shape_str(shape));
    JM_CHECK(numel_of(shape) == static_cast<std::int64_t>(values.size()),
             "tensor data length ", values.size(), " does not match shape ", shape_str(shape));
    Tensor t;
    t.storage_ = std::make_shared<std::vector<double>>(std::move(values));
    t.shape_ = std::move(shape);
    return t;
}

double Tensor::value() const {
    JM_CHECK(defined() && numel() == 1, "value() requires a scalar tensor");
    return (*storage_)[0];
}

Tensor Tensor::detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.storage_ = storage_;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.storage_ = std::make_shared<std::vector<double>>(*storage_);
    return t;
}

Tensor Tensor::reshaped_view(Shape shape) const {
    JM_CHECK(numel_of(shape) == numel(), "reshape ", shape_str(shape_), " -> ", shape_str(shape),
             " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.storage_ = storage_;
    return t;
}

Tensor make_tracked(Tape* tape, int node, Shape shape,
                    std::shared_ptr<std::vector<double>> storage) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.storage_ = std::move(storage);
    t.tape_ = tape;
    t.node_ = node;
    return t;
}

}  // namespace jm::ad
