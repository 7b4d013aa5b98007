// SPDX-License-Identifier: Apache-2.0
// Reference kernels. Plain loops, no intrinsics; the SIMD variants are tested
// against these.
#include <algorithm>

#include "dwf/kernels.hpp"

namespace dwf::kernels {
namespace {

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(std::size_t n, double alpha, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

void relu(std::size_t n, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* g, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

void sign(std::size_t n, const double* x, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
}

void clamp(std::size_t n, const double* x, double lo, double hi, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] < lo ? lo : (x[i] > hi ? hi : x[i]);
}

void sgd_update(std::size_t n, double* w, const double* g, double* v, double lr, double momentum,
                double weight_decay) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + (g[i] + weight_decay * w[i]);
    w[i] -= lr * v[i];
  }
}

double sum(std::size_t n, const double* x) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, "scalar", gemm, gemm_nt, axpy, add, sub, mul, scale, relu,
                                 relu_backward, sign, clamp, sgd_update, sum};
  return table;
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
    const std::size_t i1 = std::min(rows, i0 + kBlock);
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t j1 = std::min(cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

}  // namespace dwf::kernels
