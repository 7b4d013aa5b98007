// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dwf/kernels.hpp"

namespace dwf::kernels {

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      if (avx2_table() == nullptr) return false;
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

std::string_view to_string(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

namespace {

const KernelTable* table_for(Isa isa) { return isa == Isa::avx2 ? avx2_table() : &scalar_table(); }

const KernelTable* initial_table() {
  if (const char* env = std::getenv("DWF_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && cpu_supports(Isa::avx2)) return avx2_table();
  }
  return cpu_supports(Isa::avx2) ? avx2_table() : &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Isa isa) {
  if (!cpu_supports(isa)) {
    throw std::runtime_error("kernel ISA '" + std::string(to_string(isa)) + "' not available on this CPU/build");
  }
  current().store(table_for(isa), std::memory_order_release);
}

}  // namespace dwf::kernels
