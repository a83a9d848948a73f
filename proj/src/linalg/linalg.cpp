#include "cdflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "cdflow/error.hpp"
#include "cdflow/simd/kernels.hpp"

namespace cdflow::linalg {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::random_normal(std::size_t rows, std::size_t cols,
                             rng::Engine& g, double scale) {
  Matrix m(rows, cols);
  for (double& v : m.data_) v = scale * rng::normal(g);
  return m;
}

Matrix Matrix::random_orthogonal(std::size_t n, rng::Engine& g) {
  // Modified Gram-Schmidt on the columns of a Gaussian matrix, with unit
  // positive R diagonal (equivalent to the sign fix of a Householder QR).
  Matrix a = random_normal(n, n, g);
  Matrix q(n, n);
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) v[i] = a(i, j);
    for (std::size_t k = 0; k < j; ++k) {
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += q(i, k) * v[i];
      for (std::size_t i = 0; i < n; ++i) v[i] -= proj * q(i, k);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) q(i, j) = v[i] / norm;
  }
  return q;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: shape mismatch");
  Matrix c(a.rows(), b.cols());
  const simd::KernelTable& k = simd::active();
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t p = 0; p < a.cols(); ++p)
      k.axpy(c.row(i).data(), a(i, p), b.row(p).data(), b.cols());
  return c;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

LuFactors lu_factor(Matrix a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("lu_factor: matrix must be square");
  LuFactors f{std::move(a), std::vector<std::size_t>(n), 1};
  Matrix& lu = f.lu;
  for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;
  const simd::KernelTable& k = simd::active();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    double best = std::abs(lu(c, c));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double v = std::abs(lu(r, c));
      if (v > best) {
        best = v;
        p = r;
      }
    }
    if (p != c) {
      auto rc = lu.row(c), rp = lu.row(p);
      for (std::size_t j = 0; j < n; ++j) std::swap(rc[j], rp[j]);
      std::swap(f.perm[c], f.perm[p]);
      f.sign = -f.sign;
    }
    const double pivot = lu(c, c);
    if (pivot == 0.0) continue;
    const double* urow = lu.row(c).data() + c + 1;
    for (std::size_t r = c + 1; r < n; ++r) {
      const double l = lu(r, c) / pivot;
      lu(r, c) = l;
      if (l != 0.0) k.axpy(lu.row(r).data() + c + 1, -l, urow, n - c - 1);
    }
  }
  return f;
}

double lu_logabsdet(const LuFactors& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.lu.rows(); ++i) {
    const double u = std::abs(f.lu(i, i));
    if (u == 0.0) return -std::numeric_limits<double>::infinity();
    s += std::log(u);
  }
  return s;
}

double logabsdet(const Matrix& a) { return lu_logabsdet(lu_factor(a)); }

void lu_solve(const LuFactors& f, std::span<double> b) {
  const std::size_t n = f.lu.rows();
  if (b.size() != n) throw DimensionError("lu_solve: length mismatch");
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = b[f.perm[i]];
  const simd::KernelTable& k = simd::active();
  for (std::size_t i = 1; i < n; ++i) y[i] -= k.dot(f.lu.row(i).data(), y.data(), i);
  for (std::size_t i = n; i-- > 0;) {
    const double* row = f.lu.row(i).data();
    const double s = k.dot(row + i + 1, y.data() + i + 1, n - i - 1);
    y[i] = (y[i] - s) / row[i];
  }
  for (std::size_t i = 0; i < n; ++i) b[i] = y[i];
}

void matvec(const Matrix& a, std::span<const double> x, std::span<double> y) {
  if (x.size() != a.cols() || y.size() != a.rows())
    throw DimensionError("matvec: shape mismatch");
  const simd::KernelTable& k = simd::active();
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = k.dot(a.row(i).data(), x.data(), a.cols());
}

}  // namespace cdflow::linalg
