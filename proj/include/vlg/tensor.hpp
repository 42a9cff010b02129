#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlg {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Raised when operand shapes do not conform. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& op, const Shape& a, const Shape& b);
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// Dense row-major array of doubles. A rank-0 tensor is a scalar.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t row, std::size_t col) const;
  double& at(std::size_t row, std::size_t col);

  /// Value of a one-element tensor.
  double item() const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// Decomposition of a shape around one axis: outer * extent * inner == size.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis);

}  // namespace vlg
