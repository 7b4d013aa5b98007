// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dwf {

/// Malformed or inconsistent input data (dataset files, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or a computation produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Keeps large tensor buffers on the heap instead of fresh mmap()s per
/// allocation (glibc only; a no-op elsewhere). Call once from main().
void tune_allocator();

/// Sub-seed for an independent randomness source, e.g. derive_seed(master, "shuffle").
std::uint64_t derive_seed(std::uint64_t master, std::string_view role);

/// 64-bit Mersenne Twister with portable derived distributions.
///
/// std::*_distribution are implementation defined, so uniform, normal and
/// integer draws are computed here to keep runs bit-reproducible across
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t events() const { return events_; }

 private:
  std::uint64_t state_[312];
  int index_;
  std::uint64_t events_ = 0;
  void twist();
};

}  // namespace dwf
