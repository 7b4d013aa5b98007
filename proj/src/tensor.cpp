// SPDX-License-Identifier: Apache-2.0
#include "dwf/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dwf {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_dims(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + to_string(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + to_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), std::vector<double>(values)) {}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& { return Tensor(*this).reshaped(std::move(shape)); }

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), std::move(data_));
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() == 0 || begin >= end || end > shape_[0]) {
    throw std::invalid_argument("slice_rows out of range for shape " + to_string(shape_));
  }
  const std::size_t row = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                                  data_.begin() + static_cast<std::ptrdiff_t>(end * row)));
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("max_abs_diff: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw std::invalid_argument("concat_rows: rank-0 input");
  std::size_t rows = 0;
  std::vector<double> data;
  for (const Tensor& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw std::invalid_argument("concat_rows: shape mismatch " + to_string(shape) + " vs " + to_string(p.shape()));
    }
    rows += p.dim(0);
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  shape[0] = rows;
  return Tensor(std::move(shape), std::move(data));
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : t.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace dwf
