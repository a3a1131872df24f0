#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "rvd/shape.hpp"

namespace rvd {

// Dense row-major n-d tensor. The payload is shared between copies; by
// convention a tensor is never written to after it has been handed to the
// tape or stored in a state object.
template <typename S>
class Tensor {
 public:
  Tensor() : shape_{0}, data_(std::make_shared<std::vector<S>>()) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(static_cast<size_t>(rvd::numel(shape_)))) {}

  Tensor(Shape shape, std::vector<S> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(std::move(values))) {
    require(static_cast<int64_t>(data_->size()) == rvd::numel(shape_), "Tensor",
            "data length does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor scalar(S value) { return full({1}, value); }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_->size()); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }

  const S* data() const { return data_->data(); }
  S* mut_data() { return data_->data(); }
  const std::vector<S>& vec() const { return *data_; }

  S item() const {
    require(numel() == 1, "item", "tensor is not scalar, shape " + shape_str(shape_));
    return (*data_)[0];
  }

  // Deep copy (fresh buffer).
  Tensor clone() const {
    Tensor t(shape_);
    *t.data_ = *data_;
    return t;
  }

  Tensor reshaped(Shape new_shape) const {
    require(rvd::numel(new_shape) == numel(), "reshape",
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
  }

  bool all_finite() const {
    for (S v : *data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // True when no other Tensor shares this payload (safe to mutate/steal).
  bool sole_owner() const { return data_.use_count() == 1; }

  bool same_bytes(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::memcmp(data(), other.data(), data_->size() * sizeof(S)) == 0;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t(shape_);
    T* dst = t.mut_data();
    const S* src = data();
    for (int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<T>(src[i]);
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace rvd
