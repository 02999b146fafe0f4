#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop kernels used by the tensor engine and the selective scan.
// Each kernel has a scalar reference implementation and, when the build and
// the CPU allow it, an AVX2/FMA variant. The variant is picked once at
// startup; KMAMBA_SIMD=scalar|avx2 overrides the choice.

namespace kmamba::simd {

enum class Isa { scalar, avx2 };

// Arguments of the selective-scan recurrence for one sequence.
// Layouts: abar/bbar/h are [T][C][S], x/y are [T][C], cm is [T][S].
struct ScanForwardArgs {
  std::size_t steps = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  const double* abar = nullptr;
  const double* bbar = nullptr;
  const double* x = nullptr;
  const double* cm = nullptr;
  double* h = nullptr;
  double* y = nullptr;
};

// Reverse sweep. gx/gcm are accumulated into; g_abar/g_bbar are overwritten.
// carry is scratch of length C*S.
struct ScanBackwardArgs {
  std::size_t steps = 0;
  std::size_t channels = 0;
  std::size_t state = 0;
  const double* abar = nullptr;
  const double* bbar = nullptr;
  const double* x = nullptr;
  const double* cm = nullptr;
  const double* h = nullptr;
  const double* gy = nullptr;
  double* gx = nullptr;
  double* gcm = nullptr;
  double* g_abar = nullptr;
  double* g_bbar = nullptr;
  double* carry = nullptr;
};

struct KernelTable {
  Isa isa;
  std::string_view name;
  // c[m,n] = a[m,k] * b[k,n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // c[k,n] += a[m,k]^T * g[m,n]
  void (*gemm_tn_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                      const double* g, double* c);
  // c[m,k] += g[m,n] * b[k,n]^T
  void (*gemm_nt_acc)(std::size_t m, std::size_t n, std::size_t k, const double* g,
                      const double* b, double* c);
  void (*scan_forward)(const ScanForwardArgs& args);
  void (*scan_backward)(const ScanBackwardArgs& args);
  // x[i] = exp(x[i])
  void (*exp_inplace)(double* x, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();

// The table selected for this process.
const KernelTable& kernels();

}  // namespace kmamba::simd
