#include <cstdlib>
#include <string_view>

#include "cdflow/simd/kernels.hpp"

namespace cdflow::simd {

const KernelTable* avx2_table_unchecked();

namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(__i386__)) && \
    (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  const char* forced = std::getenv("CDFLOW_SIMD");
  if (forced != nullptr && std::string_view(forced) == "scalar")
    return scalar_kernels();
  if (const KernelTable* t = avx2_kernels()) return *t;
  return scalar_kernels();
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable* table =
      cpu_has_avx2() ? avx2_table_unchecked() : nullptr;
  return table;
}

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace cdflow::simd
