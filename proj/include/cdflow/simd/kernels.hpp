#pragma once

// Data-parallel inner loops shared by the FFT, the structured factors and the
// dense baselines. Every kernel has a scalar reference implementation and, on
// x86-64, an AVX2 variant. The active table is chosen once per process from
// CPU features; `CDFLOW_SIMD=scalar` forces the reference path.
//
// Complex data is interleaved (re, im) doubles, layout-compatible with
// std::complex<double>.

#include <cstddef>
#include <string_view>

namespace cdflow::simd {

struct LogAbsResult {
  double sum = 0.0;   // sum of log|x_i| (or log(a^2 + b^2) for pairs)
  double min = 0.0;   // min |x_i| (or min a^2 + b^2 for pairs)
};

struct KernelTable {
  std::string_view name;

  // z[k] *= w[k], complex, n elements.
  void (*cmul)(double* z, const double* w, std::size_t n);
  // z[k] *= d[k], complex z scaled by real d.
  void (*cscale)(double* z, const double* d, std::size_t n);
  // One radix-2 decimation-in-time stage over a contiguous run:
  //   t = tw[j] * hi[j]; hi[j] = lo[j] - t; lo[j] += t   for j < h.
  void (*butterfly)(double* lo, double* hi, const double* tw, std::size_t h);
  // acc[k] += a[k] * conj(b[k]).
  void (*cmul_conj_acc)(double* acc, const double* a, const double* b,
                        std::size_t n);
  // y[i] *= d[i], real.
  void (*mul)(double* y, const double* d, std::size_t n);
  // y[i] += a * x[i].
  void (*axpy)(double* y, double a, const double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // sum_i log|x_i| with the minimum magnitude, n >= 1.
  LogAbsResult (*log_abs_sum)(const double* x, std::size_t n);
  // sum_k log(a_k^2 + b_k^2) over interleaved pairs (a_k, b_k).
  LogAbsResult (*log_norm2_sum)(const double* pairs, std::size_t npairs);
};

const KernelTable& scalar_kernels();

// nullptr when the binary or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();

// Table selected at first use; stable for the process lifetime.
const KernelTable& active();

}  // namespace cdflow::simd
