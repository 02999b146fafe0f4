// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <algorithm>

#include "kmamba/simd/kernels.hpp"

namespace kmamba::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  const std::size_t n8 = n - n % 8;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < n8; j += 8) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
      __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
        const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
        __m256d av = _mm256_broadcast_sd(a + (i + 0) * k + p);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a + (i + 1) * k + p);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a + (i + 2) * k + p);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a + (i + 3) * k + p);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      _mm256_storeu_pd(c + (i + 0) * n + j, c00);
      _mm256_storeu_pd(c + (i + 0) * n + j + 4, c01);
      _mm256_storeu_pd(c + (i + 1) * n + j, c10);
      _mm256_storeu_pd(c + (i + 1) * n + j + 4, c11);
      _mm256_storeu_pd(c + (i + 2) * n + j, c20);
      _mm256_storeu_pd(c + (i + 2) * n + j + 4, c21);
      _mm256_storeu_pd(c + (i + 3) * n + j, c30);
      _mm256_storeu_pd(c + (i + 3) * n + j + 4, c31);
    }
    for (std::size_t r = i; r < i + 4; ++r) {
      for (std::size_t j = n8; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a[r * k + p] * b[p * n + j];
        c[r * n + j] = acc;
      }
    }
  }
  for (; i < m; ++i) {
    double* crow = c + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_broadcast_sd(a + i * k + p);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        _mm256_storeu_pd(crow + j,
                         _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
      }
      for (; j < n; ++j) crow[j] += a[i * k + p] * brow[j];
    }
  }
}

void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* g,
                 double* c) {
  const std::size_t n8 = n - n % 8;
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    for (std::size_t j = 0; j < n8; j += 8) {
      __m256d c00 = _mm256_loadu_pd(c + (p + 0) * n + j), c01 = _mm256_loadu_pd(c + (p + 0) * n + j + 4);
      __m256d c10 = _mm256_loadu_pd(c + (p + 1) * n + j), c11 = _mm256_loadu_pd(c + (p + 1) * n + j + 4);
      __m256d c20 = _mm256_loadu_pd(c + (p + 2) * n + j), c21 = _mm256_loadu_pd(c + (p + 2) * n + j + 4);
      __m256d c30 = _mm256_loadu_pd(c + (p + 3) * n + j), c31 = _mm256_loadu_pd(c + (p + 3) * n + j + 4);
      for (std::size_t i = 0; i < m; ++i) {
        const __m256d g0 = _mm256_loadu_pd(g + i * n + j);
        const __m256d g1 = _mm256_loadu_pd(g + i * n + j + 4);
        const double* arow = a + i * k + p;
        __m256d av = _mm256_broadcast_sd(arow + 0);
        c00 = _mm256_fmadd_pd(av, g0, c00);
        c01 = _mm256_fmadd_pd(av, g1, c01);
        av = _mm256_broadcast_sd(arow + 1);
        c10 = _mm256_fmadd_pd(av, g0, c10);
        c11 = _mm256_fmadd_pd(av, g1, c11);
        av = _mm256_broadcast_sd(arow + 2);
        c20 = _mm256_fmadd_pd(av, g0, c20);
        c21 = _mm256_fmadd_pd(av, g1, c21);
        av = _mm256_broadcast_sd(arow + 3);
        c30 = _mm256_fmadd_pd(av, g0, c30);
        c31 = _mm256_fmadd_pd(av, g1, c31);
      }
      _mm256_storeu_pd(c + (p + 0) * n + j, c00);
      _mm256_storeu_pd(c + (p + 0) * n + j + 4, c01);
      _mm256_storeu_pd(c + (p + 1) * n + j, c10);
      _mm256_storeu_pd(c + (p + 1) * n + j + 4, c11);
      _mm256_storeu_pd(c + (p + 2) * n + j, c20);
      _mm256_storeu_pd(c + (p + 2) * n + j + 4, c21);
      _mm256_storeu_pd(c + (p + 3) * n + j, c30);
      _mm256_storeu_pd(c + (p + 3) * n + j + 4, c31);
    }
    for (std::size_t r = p; r < p + 4; ++r) {
      for (std::size_t j = n8; j < n; ++j) {
        double acc = c[r * n + j];
        for (std::size_t i = 0; i < m; ++i) acc += a[i * k + r] * g[i * n + j];
        c[r * n + j] = acc;
      }
    }
  }
  for (; p < k; ++p) {
    double* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const __m256d avv = _mm256_set1_pd(av);
      const double* grow = g + i * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        _mm256_storeu_pd(crow + j,
                         _mm256_fmadd_pd(avv, _mm256_loadu_pd(grow + j), _mm256_loadu_pd(crow + j)));
      }
      for (; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* g, const double* b,
                 double* c) {
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    std::size_t p = 0;
    for (; p + 2 <= k; p += 2) {
      const double* b0 = b + p * n;
      const double* b1 = b0 + n;
      __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
      for (std::size_t j = 0; j < n4; j += 4) {
        const __m256d gv = _mm256_loadu_pd(grow + j);
        acc0 = _mm256_fmadd_pd(gv, _mm256_loadu_pd(b0 + j), acc0);
        acc1 = _mm256_fmadd_pd(gv, _mm256_loadu_pd(b1 + j), acc1);
      }
      double s0 = hsum(acc0), s1 = hsum(acc1);
      for (std::size_t j = n4; j < n; ++j) {
        s0 += grow[j] * b0[j];
        s1 += grow[j] * b1[j];
      }
      c[i * k + p] += s0;
      c[i * k + p + 1] += s1;
    }
    for (; p < k; ++p) {
      const double* brow = b + p * n;
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t j = 0; j < n4; j += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(grow + j), _mm256_loadu_pd(brow + j), acc);
      }
      double s = hsum(acc);
      for (std::size_t j = n4; j < n; ++j) s += grow[j] * brow[j];
      c[i * k + p] += s;
    }
  }
}

void scan_forward(const ScanForwardArgs& s) {
  const std::size_t cs = s.channels * s.state;
  const std::size_t s4 = s.state - s.state % 4;
  for (std::size_t t = 0; t < s.steps; ++t) {
    const double* cm = s.cm + t * s.state;
    for (std::size_t ch = 0; ch < s.channels; ++ch) {
      const std::size_t base = t * cs + ch * s.state;
      const double xv = s.x[t * s.channels + ch];
      const __m256d xvv = _mm256_set1_pd(xv);
      __m256d acc = _mm256_setzero_pd();
      std::size_t n = 0;
      if (t == 0) {
        for (; n < s4; n += 4) {
          const __m256d hv = _mm256_mul_pd(_mm256_loadu_pd(s.bbar + base + n), xvv);
          _mm256_storeu_pd(s.h + base + n, hv);
          acc = _mm256_fmadd_pd(_mm256_loadu_pd(cm + n), hv, acc);
        }
      } else {
        const double* prev = s.h + base - cs;
        for (; n < s4; n += 4) {
          const __m256d hv = _mm256_fmadd_pd(_mm256_loadu_pd(s.abar + base + n),
                                             _mm256_loadu_pd(prev + n),
                                             _mm256_mul_pd(_mm256_loadu_pd(s.bbar + base + n), xvv));
          _mm256_storeu_pd(s.h + base + n, hv);
          acc = _mm256_fmadd_pd(_mm256_loadu_pd(cm + n), hv, acc);
        }
      }
      double y = hsum(acc);
      for (; n < s.state; ++n) {
        const double prev = t == 0 ? 0.0 : s.h[base - cs + n];
        const double hv = s.abar[base + n] * prev + s.bbar[base + n] * xv;
        s.h[base + n] = hv;
        y += cm[n] * hv;
      }
      s.y[t * s.channels + ch] = y;
    }
  }
}

void scan_backward(const ScanBackwardArgs& s) {
  const std::size_t cs = s.channels * s.state;
  const std::size_t s4 = s.state - s.state % 4;
  std::fill(s.carry, s.carry + cs, 0.0);
  const __m256d zero = _mm256_setzero_pd();
  for (std::size_t tt = s.steps; tt-- > 0;) {
    const double* cm = s.cm + tt * s.state;
    double* gcm = s.gcm + tt * s.state;
    for (std::size_t ch = 0; ch < s.channels; ++ch) {
      const std::size_t base = tt * cs + ch * s.state;
      const double gyv = s.gy[tt * s.channels + ch];
      const double xv = s.x[tt * s.channels + ch];
      const __m256d gyvv = _mm256_set1_pd(gyv);
      const __m256d xvv = _mm256_set1_pd(xv);
      double* carry = s.carry + ch * s.state;
      __m256d gxacc = _mm256_setzero_pd();
      std::size_t n = 0;
      for (; n < s4; n += 4) {
        const __m256d gh = _mm256_fmadd_pd(_mm256_loadu_pd(cm + n), gyvv, _mm256_loadu_pd(carry + n));
        const __m256d prev = tt == 0 ? zero : _mm256_loadu_pd(s.h + base - cs + n);
        _mm256_storeu_pd(s.g_abar + base + n, _mm256_mul_pd(gh, prev));
        _mm256_storeu_pd(s.g_bbar + base + n, _mm256_mul_pd(gh, xvv));
        gxacc = _mm256_fmadd_pd(gh, _mm256_loadu_pd(s.bbar + base + n), gxacc);
        _mm256_storeu_pd(gcm + n, _mm256_fmadd_pd(gyvv, _mm256_loadu_pd(s.h + base + n),
                                                  _mm256_loadu_pd(gcm + n)));
        _mm256_storeu_pd(carry + n, _mm256_mul_pd(_mm256_loadu_pd(s.abar + base + n), gh));
      }
      double gx = hsum(gxacc);
      for (; n < s.state; ++n) {
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

// exp(x) = 2^n exp(r), r = x - n ln2 in [-ln2/2, ln2/2]; degree-13 Taylor
// polynomial for exp(r). 2^n is applied in two factors so results down to
// the subnormal range stay correct.
__m256d exp4(__m256d x) {
  const __m256d hi = _mm256_set1_pd(709.78);
  const __m256d lo = _mm256_set1_pd(-745.2);
  const __m256d over = _mm256_cmp_pd(x, hi, _CMP_GT_OQ);
  const __m256d under = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  x = _mm256_max_pd(_mm256_min_pd(x, hi), lo);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93147180369123816490e-01), x);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.90821492927058770002e-10), r);

  static constexpr double inv_fact[] = {1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0,
                                        1.0 / 3628800.0,    1.0 / 362880.0,    1.0 / 40320.0,
                                        1.0 / 5040.0,       1.0 / 720.0,       1.0 / 120.0,
                                        1.0 / 24.0,         1.0 / 6.0,         0.5,
                                        1.0,                1.0};
  __m256d p = _mm256_set1_pd(inv_fact[0]);
  for (std::size_t i = 1; i < 14; ++i) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(inv_fact[i]));

  // n as int64 via the 1.5 * 2^52 trick, split as n1 = floor(n / 2), n2 = n - n1.
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);
  const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)),
                                      _mm256_castpd_si256(magic));
  const __m256i n1 = _mm256_sub_epi64(_mm256_srli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1LL << 32)), 1),
                                      _mm256_set1_epi64x(1LL << 31));
  const __m256i n2 = _mm256_sub_epi64(ni, n1);
  const __m256i bias = _mm256_set1_epi64x(1023);
  const __m256d s1 = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(n1, bias), 52));
  const __m256d s2 = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(n2, bias), 52));
  __m256d y = _mm256_mul_pd(_mm256_mul_pd(p, s1), s2);
  y = _mm256_blendv_pd(y, _mm256_set1_pd(__builtin_inf()), over);
  y = _mm256_blendv_pd(y, _mm256_setzero_pd(), under);
  return y;
}

void exp_inplace(double* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, exp4(_mm256_loadu_pd(x + i)));
  if (i < n) {
    alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
    std::copy(x + i, x + n, buf);
    _mm256_store_pd(buf, exp4(_mm256_load_pd(buf)));
    std::copy(buf, buf + (n - i), x + i);
  }
}

}  // namespace

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{Isa::avx2,   "avx2",        gemm_nn,       gemm_tn_acc, gemm_nt_acc,
                                 scan_forward, scan_backward, exp_inplace};
  return table;
}

}  // namespace kmamba::simd
