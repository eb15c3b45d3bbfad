#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse {

// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
//
// The gradient buffer is scratch state written by Tape::backward and the
// optimizers; it is mutable so read-only forward evaluation can share a
// bundle across threads while training remains single-owner.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // Scalars are rank-0 (or single-element rank-1) tensors.
  bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }

  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  double item() const;  // scalar value; throws ShapeError otherwise

  bool has_grad() const { return !grad_.empty(); }
  // Allocates a zero gradient buffer on first use.
  std::vector<double>& grad() const;
  void zero_grad() const;
  void drop_grad() const { grad_.clear(); }

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  mutable std::vector<double> grad_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace mmfuse
