#include <cmath>
#include <algorithm>

#include "kmamba/simd/kernels.hpp"

namespace kmamba::simd {
namespace {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* g,
                 double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* g, const double* b,
                 double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

void scan_forward(const ScanForwardArgs& s) {
  const std::size_t cs = s.channels * s.state;
  for (std::size_t t = 0; t < s.steps; ++t) {
    for (std::size_t ch = 0; ch < s.channels; ++ch) {
      const std::size_t base = t * cs + ch * s.state;
      const double xv = s.x[t * s.channels + ch];
      const double* cm = s.cm + t * s.state;
      double acc = 0.0;
      for (std::size_t n = 0; n < s.state; ++n) {
        const double prev = t == 0 ? 0.0 : s.h[base - cs + n];
        const double hv = s.abar[base + n] * prev + s.bbar[base + n] * xv;
        s.h[base + n] = hv;
        acc += cm[n] * hv;
      }
      s.y[t * s.channels + ch] = acc;
    }
  }
}

void scan_backward(const ScanBackwardArgs& s) {
  const std::size_t cs = s.channels * s.state;
  std::fill(s.carry, s.carry + cs, 0.0);
  for (std::size_t tt = s.steps; tt-- > 0;) {
    for (std::size_t ch = 0; ch < s.channels; ++ch) {
      const std::size_t base = tt * cs + ch * s.state;
      const double gyv = s.gy[tt * s.channels + ch];
      const double xv = s.x[tt * s.channels + ch];
      const double* cm = s.cm + tt * s.state;
      double* gcm = s.gcm + tt * s.state;
      double* carry = s.carry + ch * s.state;
      double gx = 0.0;
      for (std::size_t n = 0; n < s.state; ++n) {
        const double gh = cm[n] * gyv + carry[n];
        const double prev = tt == 0 ? 0.0 : s.h[base - cs + n];
        s.g_abar[base + n] = gh * prev;
        s.g_bbar[base + n] = gh * xv;
        gx += gh * s.bbar[base + n];
        gcm[n] += gyv * s.h[base + n];
        carry[n] = s.abar[base + n] * gh;
      }
      s.gx[tt * s.channels + ch] += gx;
    }
  }
}

void exp_inplace(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i]);
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar, "scalar",      gemm_nn,       gemm_tn_acc, gemm_nt_acc,
                                 scan_forward, scan_backward, exp_inplace};
  return table;
}

}  // namespace kmamba::simd
