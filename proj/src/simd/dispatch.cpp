#include <cstdlib>
#include <string_view>

#include "kmamba/error.hpp"
#include "kmamba/simd/kernels.hpp"

namespace kmamba::simd {

#if defined(KMAMBA_HAVE_AVX2)
const KernelTable& avx2_kernel_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(KMAMBA_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& select() {
  const char* env = std::getenv("KMAMBA_SIMD");
  const std::string_view want = env ? env : "";
  if (want == "scalar") return scalar_kernels();
  if (want == "avx2") {
    if (const KernelTable* t = avx2_kernels()) return *t;
    throw ConfigError("KMAMBA_SIMD=avx2 requested but AVX2/FMA is unavailable");
  }
  if (!want.empty() && want != "auto") {
    throw ConfigError("KMAMBA_SIMD must be one of scalar, avx2, auto");
  }
  if (const KernelTable* t = avx2_kernels()) return *t;
  return scalar_kernels();
}

}  // namespace

const KernelTable& kernels() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace kmamba::simd
