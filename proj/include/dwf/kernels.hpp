// SPDX-License-Identifier: Apache-2.0
#pragma once

// Inner-loop arithmetic kernels.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant. The active table is chosen once at startup from CPUID and
// can be forced with DWF_SIMD=scalar|avx2. All pointers are dense row-major
// buffers; no alignment is required.

#include <cstddef>
#include <string_view>

namespace dwf::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  /// C[m×n] = A[m×k]·B[k×n], or C += A·B when accumulate is set.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
               bool accumulate);
  /// C[m×n] = A[m×k]·B[n×k]ᵀ (dot-product form), or C += A·Bᵀ.
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                  bool accumulate);
  /// y += alpha·x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  void (*add)(std::size_t n, const double* a, const double* b, double* out);
  void (*sub)(std::size_t n, const double* a, const double* b, double* out);
  void (*mul)(std::size_t n, const double* a, const double* b, double* out);
  void (*scale)(std::size_t n, double alpha, const double* x, double* out);
  void (*relu)(std::size_t n, const double* x, double* out);
  /// out = g where x > 0, else 0.
  void (*relu_backward)(std::size_t n, const double* x, const double* g, double* out);
  void (*sign)(std::size_t n, const double* x, double* out);
  void (*clamp)(std::size_t n, const double* x, double lo, double hi, double* out);
  /// v = momentum·v + (g + weight_decay·w); w -= lr·v
  void (*sgd_update)(std::size_t n, double* w, const double* g, double* v, double lr, double momentum,
                     double weight_decay);
  double (*sum)(std::size_t n, const double* x);
};

const KernelTable& scalar_table();

/// nullptr when the build has no AVX2 variant.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);

/// The table used by the tensor library.
const KernelTable& active();

/// Override the active table; throws if the CPU or build lacks the ISA.
void select(Isa isa);

std::string_view to_string(Isa isa);

/// dst[cols×rows] = transpose of src[rows×cols].
void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

}  // namespace dwf::kernels
