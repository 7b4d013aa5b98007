// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dwf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Invariant: product(shape) == data.size(). A rank-0 tensor (empty shape)
/// holds exactly one value.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// The single value of a size-1 tensor.
  double item() const;

  /// Same values under a new shape of identical element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  /// Samples [begin, end) along axis 0.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

bool all_finite(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Concatenate tensors along axis 0; trailing dimensions must match.
Tensor concat_rows(std::span<const Tensor> parts);

/// FNV-1a over the IEEE bit patterns of the values.
std::uint64_t checksum(const Tensor& t);

}  // namespace dwf
