#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylolab/error.hpp"

namespace stylolab {

/// Dense row-major tensor of doubles, 1-D or 2-D. Values are immutable by
/// convention once an op has produced them; mutation is reserved for
/// construction and the optimizer.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  Tensor(std::vector<int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != static_cast<int64_t>(data_.size())) {
      throw Error(ErrorCode::ShapeMismatch,
                  "tensor: shape " + shape_string() + " does not match data length " +
                      std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(int64_t rows, int64_t cols) { return Tensor({rows, cols}); }

  bool is_scalar() const { return size() == 1 && ndim() == 1; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return count(shape_); }
  const std::vector<int64_t>& shape() const { return shape_; }

  int64_t rows() const { return ndim() == 2 ? shape_[0] : 1; }
  int64_t cols() const { return ndim() == 2 ? shape_[1] : (ndim() == 1 ? shape_[0] : 0); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  const double* row(int64_t r) const { return data() + r * cols(); }
  double* row(int64_t r) { return data() + r * cols(); }

  double item() const {
    if (size() != 1) {
      throw Error(ErrorCode::ShapeMismatch, "item: tensor of shape " + shape_string() + " is not scalar");
    }
    return data_[0];
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_string() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static int64_t count(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  std::vector<int64_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

}  // namespace stylolab
