#pragma once

// Small dense linear algebra: row-major matrices, partially pivoted LU,
// triangular solves. Serves the dense baselines, the dense-linear flow layers
// and materialization checks.

#include <cstddef>
#include <span>
#include <vector>

#include "cdflow/random.hpp"

namespace cdflow::linalg {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix random_normal(std::size_t rows, std::size_t cols,
                              rng::Engine& g, double scale = 1.0);
  // Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
  // sign of R's diagonal folded into Q).
  static Matrix random_orthogonal(std::size_t n, rng::Engine& g);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Matrix transposed() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// PA = LU with unit-lower L and upper U packed into one matrix.
struct LuFactors {
  Matrix lu;
  std::vector<std::size_t> perm;  // row i of PA is row perm[i] of A
  int sign = 1;                   // determinant sign of P
};

LuFactors lu_factor(Matrix a);

// sum_i log|U_ii|; -inf when a pivot is exactly zero.
double lu_logabsdet(const LuFactors& f);
double logabsdet(const Matrix& a);

// Solves A x = b in place.
void lu_solve(const LuFactors& f, std::span<double> b);

// y = A x
void matvec(const Matrix& a, std::span<const double> x, std::span<double> y);

}  // namespace cdflow::linalg
