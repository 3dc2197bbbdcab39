#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "jacmatch/common.hpp"

namespace jm::ad {

class Tape;

using Shape = std::vector<int>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f64 tensor. Storage is shared; tensors behave as values
// and are treated as immutable once created (parameter updates between
// optimizer steps are the one sanctioned exception).
//
// A tensor is either detached (plain data) or carries a reference to the
// tape node that produced it. Arithmetic on detached tensors evaluates
// eagerly and yields detached tensors.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double value) { return full({1}, value); }
    static Tensor from(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return numel_of(shape_); }
    bool defined() const { return storage_ != nullptr; }

    std::span<const double> data() const { return {storage_->data(), storage_->size()}; }
    std::span<double> mutable_data() { return {storage_->data(), storage_->size()}; }
    double value() const;  // requires numel() == 1

    bool on_tape() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }
    std::shared_ptr<std::vector<double>> storage_handle() const { return storage_; }

    // Same storage, no tape reference.
    Tensor detached() const;
    // Fresh storage copy, detached.
    Tensor clone() const;
    Tensor reshaped_view(Shape shape) const;  // detached view, same storage

private:
    friend class Tape;
    friend Tensor make_tracked(Tape* tape, int node, Shape shape,
                               std::shared_ptr<std::vector<double>> storage);

    Shape shape_;
    std::shared_ptr<std::vector<double>> storage_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

Tensor make_tracked(Tape* tape, int node, Shape shape,
                    std::shared_ptr<std::vector<double>> storage);

}  // namespace jm::ad
