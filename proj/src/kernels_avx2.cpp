// SPDX-License-Identifier: Apache-2.0
// AVX2 + FMA kernels (4 doubles per lane). Compiled with per-function target
// attributes so the rest of the library stays baseline x86-64.
#include "dwf/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define DWF_HAVE_AVX2_KERNELS 1
#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>
#endif

namespace dwf::kernels {

#if DWF_HAVE_AVX2_KERNELS
namespace {

#define DWF_AVX2 __attribute__((target("avx2,fma")))

DWF_AVX2 inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// 4×8 register tile: C[4][8] (+)= A[4][k] · Bpanel[k][8], with Bpanel packed
// contiguously.
DWF_AVX2 void tile_4x8(std::size_t k, const double* a, std::size_t lda, const double* bp, double* c,
                       std::size_t ldc, bool accumulate) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp + 8 * p);
    const __m256d b1 = _mm256_loadu_pd(bp + 8 * p + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  __m256d* rows[4][2] = {{&c00, &c01}, {&c10, &c11}, {&c20, &c21}, {&c30, &c31}};
  for (int r = 0; r < 4; ++r) {
    double* cr = c + static_cast<std::size_t>(r) * ldc;
    if (accumulate) {
      _mm256_storeu_pd(cr, _mm256_add_pd(_mm256_loadu_pd(cr), *rows[r][0]));
      _mm256_storeu_pd(cr + 4, _mm256_add_pd(_mm256_loadu_pd(cr + 4), *rows[r][1]));
    } else {
      _mm256_storeu_pd(cr, *rows[r][0]);
      _mm256_storeu_pd(cr + 4, *rows[r][1]);
    }
  }
}

// Single-row version of tile_4x8 for the m % 4 remainder.
DWF_AVX2 void tile_1x8(std::size_t k, const double* a, const double* bp, double* c, bool accumulate) {
  __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 8 * p), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 8 * p + 4), c1);
  }
  if (accumulate) {
    c0 = _mm256_add_pd(_mm256_loadu_pd(c), c0);
    c1 = _mm256_add_pd(_mm256_loadu_pd(c + 4), c1);
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + 4, c1);
}

DWF_AVX2 void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                   bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    return;
  }
  thread_local std::vector<double> panel;
  panel.resize(k * 8);
  const std::size_t n8 = n - n % 8;
  for (std::size_t j = 0; j < n8; j += 8) {
    for (std::size_t p = 0; p < k; ++p) {
      _mm256_storeu_pd(panel.data() + 8 * p, _mm256_loadu_pd(b + p * n + j));
      _mm256_storeu_pd(panel.data() + 8 * p + 4, _mm256_loadu_pd(b + p * n + j + 4));
    }
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) tile_4x8(k, a + i * k, k, panel.data(), c + i * n + j, n, accumulate);
    for (; i < m; ++i) tile_1x8(k, a + i * k, panel.data(), c + i * n + j, accumulate);
  }
  // Column remainder: same k-order accumulation with scalar FMA.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = n8; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s = std::fma(a[i * k + p], b[p * n + j], s);
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

DWF_AVX2 double dot(std::size_t k, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t p = 0;
  for (; p + 8 <= k; p += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + p), _mm256_loadu_pd(y + p), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + p + 4), _mm256_loadu_pd(y + p + 4), s1);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; p < k; ++p) s = std::fma(x[p], y[p], s);
  return s;
}

DWF_AVX2 void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                      bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = dot(k, a + i * k, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

DWF_AVX2 void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

#define DWF_BINARY_KERNEL(NAME, VOP, SOP)                                                   \
  DWF_AVX2 void NAME(std::size_t n, const double* a, const double* b, double* out) {        \
    std::size_t i = 0;                                                                      \
    for (; i + 4 <= n; i += 4) {                                                            \
      _mm256_storeu_pd(out + i, VOP(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));       \
    }                                                                                       \
    for (; i < n; ++i) out[i] = a[i] SOP b[i];                                              \
  }

DWF_BINARY_KERNEL(add, _mm256_add_pd, +)
DWF_BINARY_KERNEL(sub, _mm256_sub_pd, -)
DWF_BINARY_KERNEL(mul, _mm256_mul_pd, *)

#undef DWF_BINARY_KERNEL

DWF_AVX2 void scale(std::size_t n, double alpha, const double* x, double* out) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

DWF_AVX2 void relu(std::size_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(out + i, _mm256_and_pd(v, _mm256_cmp_pd(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

DWF_AVX2 void relu_backward(std::size_t n, const double* x, const double* g, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(_mm256_loadu_pd(g + i), mask));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
}

DWF_AVX2 void sign(std::size_t n, const double* x, double* out) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d pos = _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_GT_OQ), one);
    const __m256d neg = _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_LT_OQ), one);
    _mm256_storeu_pd(out + i, _mm256_sub_pd(pos, neg));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
}

DWF_AVX2 void clamp(std::size_t n, const double* x, double lo, double hi, double* out) {
  const __m256d lv = _mm256_set1_pd(lo);
  const __m256d hv = _mm256_set1_pd(hi);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    // max(lo, min(x, hi)) with x as the second operand so NaN propagates like the scalar path.
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(out + i, _mm256_max_pd(lv, _mm256_min_pd(hv, v)));
  }
  for (; i < n; ++i) out[i] = x[i] < lo ? lo : (x[i] > hi ? hi : x[i]);
}

DWF_AVX2 void sgd_update(std::size_t n, double* w, const double* g, double* v, double lr, double momentum,
                         double weight_decay) {
  const __m256d mv = _mm256_set1_pd(momentum);
  const __m256d wdv = _mm256_set1_pd(weight_decay);
  const __m256d lrv = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d wi = _mm256_loadu_pd(w + i);
    const __m256d step = _mm256_add_pd(_mm256_loadu_pd(g + i), _mm256_mul_pd(wdv, wi));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(mv, _mm256_loadu_pd(v + i)), step);
    _mm256_storeu_pd(v + i, vi);
    _mm256_storeu_pd(w + i, _mm256_sub_pd(wi, _mm256_mul_pd(lrv, vi)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + (g[i] + weight_decay * w[i]);
    w[i] -= lr * v[i];
  }
}

DWF_AVX2 double sum(std::size_t n, const double* x) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_add_pd(s0, _mm256_loadu_pd(x + i));
    s1 = _mm256_add_pd(s1, _mm256_loadu_pd(x + i + 4));
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i];
  return s;
}

#undef DWF_AVX2

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::avx2, "avx2", gemm, gemm_nt, axpy, add, sub, mul, scale, relu,
                                 relu_backward, sign, clamp, sgd_update, sum};
  return &table;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace dwf::kernels
