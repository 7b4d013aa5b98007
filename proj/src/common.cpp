// SPDX-License-Identifier: Apache-2.0
#include "dwf/common.hpp"

#include <cmath>
#include <numbers>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dwf {

void tune_allocator() {
#if defined(__GLIBC__)
  // Graph nodes allocate and free many multi-megabyte buffers per step.
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
#endif
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view role) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : role) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(master) ^ h);
}

// MT19937-64 (Matsumoto & Nishimura reference parameters).
namespace {
constexpr int kNN = 312;
constexpr int kMM = 156;
constexpr std::uint64_t kMatrixA = 0xB5026F5AA96619E9ULL;
constexpr std::uint64_t kUpper = 0xFFFFFFFF80000000ULL;
constexpr std::uint64_t kLower = 0x7FFFFFFFULL;
}  // namespace

Rng::Rng(std::uint64_t seed) {
  state_[0] = seed;
  for (int i = 1; i < kNN; ++i) {
    state_[i] = 6364136223846793005ULL * (state_[i - 1] ^ (state_[i - 1] >> 62)) +
                static_cast<std::uint64_t>(i);
  }
  index_ = kNN;
}

void Rng::twist() {
  for (int i = 0; i < kNN; ++i) {
    std::uint64_t x = (state_[i] & kUpper) | (state_[(i + 1) % kNN] & kLower);
    std::uint64_t xa = x >> 1;
    if (x & 1ULL) xa ^= kMatrixA;
    state_[i] = state_[(i + kMM) % kNN] ^ xa;
  }
  index_ = 0;
}

std::uint64_t Rng::next_u64() {
  if (index_ >= kNN) twist();
  std::uint64_t x = state_[index_++];
  x ^= (x >> 29) & 0x5555555555555555ULL;
  x ^= (x << 17) & 0x71D67FFFEDA60000ULL;
  x ^= (x << 37) & 0xFFF7EEE000000000ULL;
  x ^= (x >> 43);
  ++events_;
  return x;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller; the second variate is discarded so each call has a fixed cost.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

}  // namespace dwf
