// AVX2 variants of the kernel table. This translation unit is compiled with
// -mavx2 -mfma; nothing here runs unless dispatch has confirmed CPU support.
//
// Elementwise kernels evaluate the same expressions in the same order as the
// scalar reference (no FMA contraction), so they are bit-identical to it.
// Reductions (dot, log sums) reassociate and agree to round-off only.

#include "cdflow/simd/kernels.hpp"

#if defined(CDFLOW_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace cdflow::simd {
namespace {

inline __m256d complex_mul(__m256d z, __m256d w) {
  const __m256d wr = _mm256_movedup_pd(w);
  const __m256d wi = _mm256_permute_pd(w, 0xF);
  const __m256d zs = _mm256_permute_pd(z, 0x5);
  return _mm256_addsub_pd(_mm256_mul_pd(z, wr), _mm256_mul_pd(zs, wi));
}

void cmul(double* z, const double* w, std::size_t n) {
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    const __m256d zv = _mm256_loadu_pd(z + 2 * k);
    const __m256d wv = _mm256_loadu_pd(w + 2 * k);
    _mm256_storeu_pd(z + 2 * k, complex_mul(zv, wv));
  }
  for (; k < n; ++k) {
    const double zr = z[2 * k], zi = z[2 * k + 1];
    const double wr = w[2 * k], wi = w[2 * k + 1];
    z[2 * k] = zr * wr - zi * wi;
    z[2 * k + 1] = zi * wr + zr * wi;
  }
}

void cscale(double* z, const double* d, std::size_t n) {
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    const __m128d dd = _mm_loadu_pd(d + k);
    const __m256d dv =
        _mm256_permute4x64_pd(_mm256_castpd128_pd256(dd), 0x50);
    _mm256_storeu_pd(z + 2 * k,
                     _mm256_mul_pd(_mm256_loadu_pd(z + 2 * k), dv));
  }
  for (; k < n; ++k) {
    z[2 * k] *= d[k];
    z[2 * k + 1] *= d[k];
  }
}

void butterfly(double* lo, double* hi, const double* tw, std::size_t h) {
  std::size_t j = 0;
  for (; j + 2 <= h; j += 2) {
    const __m256d t =
        complex_mul(_mm256_loadu_pd(hi + 2 * j), _mm256_loadu_pd(tw + 2 * j));
    const __m256d a = _mm256_loadu_pd(lo + 2 * j);
    _mm256_storeu_pd(hi + 2 * j, _mm256_sub_pd(a, t));
    _mm256_storeu_pd(lo + 2 * j, _mm256_add_pd(a, t));
  }
  for (; j < h; ++j) {
    const double br = hi[2 * j], bi = hi[2 * j + 1];
    const double wr = tw[2 * j], wi = tw[2 * j + 1];
    const double tr = br * wr - bi * wi;
    const double ti = bi * wr + br * wi;
    const double ar = lo[2 * j], ai = lo[2 * j + 1];
    hi[2 * j] = ar - tr;
    hi[2 * j + 1] = ai - ti;
    lo[2 * j] = ar + tr;
    lo[2 * j + 1] = ai + ti;
  }
}

void cmul_conj_acc(double* acc, const double* a, const double* b,
                   std::size_t n) {
  const __m256d odd_sign = _mm256_set_pd(-0.0, 0.0, -0.0, 0.0);
  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    const __m256d av = _mm256_loadu_pd(a + 2 * k);
    const __m256d bv = _mm256_loadu_pd(b + 2 * k);
    const __m256d t1 = _mm256_mul_pd(av, _mm256_movedup_pd(bv));
    const __m256d t2 = _mm256_mul_pd(_mm256_permute_pd(av, 0x5),
                                     _mm256_permute_pd(bv, 0xF));
    const __m256d prod = _mm256_add_pd(t1, _mm256_xor_pd(t2, odd_sign));
    _mm256_storeu_pd(acc + 2 * k,
                     _mm256_add_pd(_mm256_loadu_pd(acc + 2 * k), prod));
  }
  for (; k < n; ++k) {
    const double ar = a[2 * k], ai = a[2 * k + 1];
    const double br = b[2 * k], bi = b[2 * k + 1];
    acc[2 * k] += ar * br + ai * bi;
    acc[2 * k + 1] += ai * br - ar * bi;
  }
}

void mul(double* y, const double* d, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        y + i, _mm256_mul_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(d + i)));
  }
  for (; i < n; ++i) y[i] *= d[i];
}

void axpy(double* y, double a, const double* x, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d p0 = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    const __m256d p1 = _mm256_mul_pd(av, _mm256_loadu_pd(x + i + 4));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p0));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_add_pd(_mm256_loadu_pd(y + i + 4), p1));
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d p = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4),
                         s1);
    s2 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 8), _mm256_loadu_pd(y + i + 8),
                         s2);
    s3 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 12),
                         _mm256_loadu_pd(y + i + 12), s3);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  }
  double s = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

// Accumulates log of a product of positive normal doubles without calling
// log per element: each input is split into exponent (summed as integers) and
// mantissa in [1, 2) (multiplied into the running lane product).
class LogProductAccumulator {
 public:
  void add(__m256d v) {
    const __m256i bits = _mm256_castpd_si256(v);
    exponent_ = _mm256_add_epi64(
        exponent_, _mm256_sub_epi64(_mm256_srli_epi64(bits, 52), bias_));
    product_ = _mm256_mul_pd(product_, mantissa(bits));
    if (++pending_ == 8) renormalize();
  }

  double finish() {
    renormalize();
    alignas(32) double p[4];
    alignas(32) std::int64_t e[4];
    _mm256_store_pd(p, product_);
    _mm256_store_si256(reinterpret_cast<__m256i*>(e), exponent_);
    constexpr double ln2 = 0.69314718055994530942;
    double s = 0.0;
    for (int l = 0; l < 4; ++l)
      s += std::log(p[l]) + static_cast<double>(e[l]) * ln2;
    return s;
  }

 private:
  __m256d mantissa(__m256i bits) const {
    return _mm256_castsi256_pd(
        _mm256_or_si256(_mm256_and_si256(bits, mant_mask_), one_bits_));
  }

  void renormalize() {
    const __m256i bits = _mm256_castpd_si256(product_);
    exponent_ = _mm256_add_epi64(
        exponent_, _mm256_sub_epi64(_mm256_srli_epi64(bits, 52), bias_));
    product_ = mantissa(bits);
    pending_ = 0;
  }

  __m256d product_ = _mm256_set1_pd(1.0);
  __m256i exponent_ = _mm256_setzero_si256();
  const __m256i bias_ = _mm256_set1_epi64x(1023);
  const __m256i mant_mask_ = _mm256_set1_epi64x(0x000FFFFFFFFFFFFFLL);
  const __m256i one_bits_ = _mm256_set1_epi64x(0x3FF0000000000000LL);
  int pending_ = 0;
};

inline double hmin(__m256d v) {
  alignas(32) double t[4];
  _mm256_store_pd(t, v);
  return std::min(std::min(t[0], t[1]), std::min(t[2], t[3]));
}

LogAbsResult log_abs_sum(const double* x, std::size_t n) {
  const __m256d abs_mask =
      _mm256_castsi256_pd(_mm256_set1_epi64x(0x7FFFFFFFFFFFFFFFLL));
  LogProductAccumulator acc;
  __m256d vmin = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d a = _mm256_and_pd(_mm256_loadu_pd(x + i), abs_mask);
    vmin = _mm256_min_pd(vmin, a);
    acc.add(a);
  }
  LogAbsResult r{acc.finish(), hmin(vmin)};
  for (; i < n; ++i) {
    const double a = std::abs(x[i]);
    r.sum += std::log(a);
    r.min = std::min(r.min, a);
  }
  return r;
}

LogAbsResult log_norm2_sum(const double* p, std::size_t npairs) {
  LogProductAccumulator acc;
  __m256d vmin = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  std::size_t k = 0;
  for (; k + 4 <= npairs; k += 4) {
    const __m256d u = _mm256_loadu_pd(p + 2 * k);
    const __m256d v = _mm256_loadu_pd(p + 2 * k + 4);
    const __m256d q = _mm256_hadd_pd(_mm256_mul_pd(u, u), _mm256_mul_pd(v, v));
    vmin = _mm256_min_pd(vmin, q);
    acc.add(q);
  }
  LogAbsResult r{acc.finish(), hmin(vmin)};
  for (; k < npairs; ++k) {
    const double q = p[2 * k] * p[2 * k] + p[2 * k + 1] * p[2 * k + 1];
    r.sum += std::log(q);
    r.min = std::min(r.min, q);
  }
  return r;
}

}  // namespace

const KernelTable* avx2_table_unchecked() {
  static const KernelTable table{
      "avx2", cmul, cscale, butterfly, cmul_conj_acc,
      mul,    axpy, dot,    log_abs_sum, log_norm2_sum,
  };
  return &table;
}

}  // namespace cdflow::simd

#else

namespace cdflow::simd {
const KernelTable* avx2_table_unchecked() { return nullptr; }
}  // namespace cdflow::simd

#endif
