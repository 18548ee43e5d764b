#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace aeda {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense n-dimensional array of 64-bit reals in row-major order, with an
// optional gradient buffer of the same length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor full(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  const std::vector<double>& values() const { return data_; }
  std::vector<double>& values() { return data_; }

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad();
  void zero_grad();
  void drop_grad() { grad_.clear(); }
  double* grad() { return grad_.data(); }
  const double* grad() const { return grad_.data(); }
  std::vector<double>& grad_vec() { return grad_; }
  const std::vector<double>& grad_vec() const { return grad_; }

  bool all_finite() const;

  // Reinterprets the buffer under a new shape of equal size.
  Tensor reshaped(Shape new_shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

std::size_t shape_size(const Shape& s);

}  // namespace aeda
