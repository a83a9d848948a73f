#pragma once

// Independent reference computations for the tests. Nothing here calls the
// FFT or chain code it is used to check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "cdflow/linalg.hpp"
#include "cdflow/random.hpp"

namespace oracle {

using Complex = std::complex<double>;

// O(n^2) direct summation, X_k = sum_j x_j exp(-2 pi i jk/n).
inline std::vector<Complex> direct_dft(const std::vector<Complex>& x, double sign = -1.0) {
  const std::size_t n = x.size();
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex s(0.0, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double angle = sign * 2.0 * std::numbers::pi *
                           static_cast<double>((j * k) % n) / static_cast<double>(n);
      s += x[j] * Complex(std::cos(angle), std::sin(angle));
    }
    out[k] = s;
  }
  return out;
}

// circ(c): first column c, entry (i, j) = c[(i - j) mod n].
inline cdflow::linalg::Matrix dense_circulant(const std::vector<double>& c) {
  const std::size_t n = c.size();
  cdflow::linalg::Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = c[(i + n - j) % n];
  return m;
}

inline cdflow::linalg::Matrix dense_diagonal(const std::vector<double>& d) {
  cdflow::linalg::Matrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

inline cdflow::linalg::Matrix naive_matmul(const cdflow::linalg::Matrix& a,
                                           const cdflow::linalg::Matrix& b) {
  cdflow::linalg::Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

inline std::vector<double> naive_matvec(const cdflow::linalg::Matrix& a,
                                        const std::vector<double>& x) {
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) y[i] += a(i, j) * x[j];
  return y;
}

// Determinant by cofactor expansion along the first row (n <= 9 or so).
inline double cofactor_det(const cdflow::linalg::Matrix& a) {
  const std::size_t n = a.rows();
  if (n == 1) return a(0, 0);
  if (n == 2) return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  double det = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    cdflow::linalg::Matrix minor(n - 1, n - 1);
    for (std::size_t i = 1; i < n; ++i) {
      std::size_t jj = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != c) minor(i - 1, jj++) = a(i, j);
    }
    const double sign = (c % 2 == 0) ? 1.0 : -1.0;
    det += sign * a(0, c) * cofactor_det(minor);
  }
  return det;
}

// Gaussian elimination with partial pivoting written out independently of
// the library's LU.
inline double gauss_logabsdet(cdflow::linalg::Matrix a) {
  const std::size_t n = a.rows();
  double s = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    if (p != c)
      for (std::size_t j = 0; j < n; ++j) std::swap(a(c, j), a(p, j));
    const double piv = a(c, c);
    s += std::log(std::abs(piv));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double l = a(r, c) / piv;
      for (std::size_t j = c; j < n; ++j) a(r, j) -= l * a(c, j);
    }
  }
  return s;
}

// Largest singular value by power iteration on A^T A.
inline double sigma_max(const cdflow::linalg::Matrix& a, int iters = 2000) {
  const std::size_t n = a.cols();
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double sigma2 = 0.0;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> av = naive_matvec(a, v);
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) w[j] += a(i, j) * av[i];
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    sigma2 = norm;
    for (std::size_t j = 0; j < n; ++j) v[j] = w[j] / norm;
  }
  return std::sqrt(sigma2);
}

// Central differences of a scalar function over a parameter vector.
inline std::vector<double> central_differences(
    std::vector<double> params, const std::function<double(const std::vector<double>&)>& f,
    double h = 1e-6, const std::vector<std::size_t>& indices = {}) {
  std::vector<std::size_t> idx = indices;
  if (idx.empty()) {
    idx.resize(params.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  std::vector<double> grad;
  grad.reserve(idx.size());
  for (std::size_t i : idx) {
    const double saved = params[i];
    params[i] = saved + h;
    const double fp = f(params);
    params[i] = saved - h;
    const double fm = f(params);
    params[i] = saved;
    grad.push_back((fp - fm) / (2.0 * h));
  }
  return grad;
}

// ||a - b||_2 / max(||b||_2, tiny): the norm-wise relative error used for
// gradient checks.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

inline std::vector<double> random_vector(std::size_t n, cdflow::rng::Engine& g,
                                         double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * cdflow::rng::normal(g);
  return v;
}

}  // namespace oracle
