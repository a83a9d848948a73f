#include "cdflow/simd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cdflow::simd {
namespace {

void cmul(double* z, const double* w, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    const double zr = z[2 * k], zi = z[2 * k + 1];
    const double wr = w[2 * k], wi = w[2 * k + 1];
    z[2 * k] = zr * wr - zi * wi;
    z[2 * k + 1] = zi * wr + zr * wi;
  }
}

void cscale(double* z, const double* d, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    z[2 * k] *= d[k];
    z[2 * k + 1] *= d[k];
  }
}

void butterfly(double* lo, double* hi, const double* tw, std::size_t h) {
  for (std::size_t j = 0; j < h; ++j) {
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
  for (std::size_t k = 0; k < n; ++k) {
    const double ar = a[2 * k], ai = a[2 * k + 1];
    const double br = b[2 * k], bi = b[2 * k + 1];
    acc[2 * k] += ar * br + ai * bi;
    acc[2 * k + 1] += ai * br - ar * bi;
  }
}

void mul(double* y, const double* d, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] *= d[i];
}

void axpy(double* y, double a, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

LogAbsResult log_abs_sum(const double* x, std::size_t n) {
  LogAbsResult r{0.0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::abs(x[i]);
    r.sum += std::log(a);
    r.min = std::min(r.min, a);
  }
  return r;
}

LogAbsResult log_norm2_sum(const double* p, std::size_t npairs) {
  LogAbsResult r{0.0, std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < npairs; ++k) {
    const double q = p[2 * k] * p[2 * k] + p[2 * k + 1] * p[2 * k + 1];
    r.sum += std::log(q);
    r.min = std::min(r.min, q);
  }
  return r;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      "scalar", cmul, cscale, butterfly, cmul_conj_acc,
      mul,      axpy, dot,    log_abs_sum, log_norm2_sum,
  };
  return table;
}

}  // namespace cdflow::simd
