#include <cmath>

#include <Eigen/Dense>

#include "cdflow/bench.hpp"
#include "cdflow/error.hpp"

namespace cdflow::bench {

namespace {

using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ColMap = Eigen::Map<const Eigen::MatrixXd>;
using ColMapMut = Eigen::Map<Eigen::MatrixXd>;

RowMap view(const linalg::Matrix& m) { return RowMap(m.data().data(), m.rows(), m.cols()); }
ColMap view(const ColumnBatch& x) { return ColMap(x.data().data(), x.rows(), x.cols()); }
ColMapMut view(ColumnBatch& x) { return ColMapMut(x.data().data(), x.rows(), x.cols()); }

void check_rows(std::size_t n, const ColumnBatch& x) {
  if (x.rows() != n) throw DimensionError("baseline: input rows do not match the layer");
}

}  // namespace

DenseLayer::DenseLayer(linalg::Matrix w) : w_(std::move(w)) {
  if (w_.rows() != w_.cols() || w_.rows() == 0) throw DimensionError("dense layer must be square");
}

ColumnBatch DenseLayer::forward(const ColumnBatch& x) const {
  check_rows(dim(), x);
  ColumnBatch y(dim(), x.cols());
  view(y).noalias() = view(w_) * view(x);
  return y;
}

double DenseLayer::logdet() const {
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(view(w_));
  return lu.matrixLU().diagonal().array().abs().log().sum();
}

ColumnBatch DenseLayer::inverse(const ColumnBatch& y) const {
  check_rows(dim(), y);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(view(w_));
  ColumnBatch x(dim(), y.cols());
  view(x) = lu.solve(view(y));
  return x;
}

LULayer LULayer::from_matrix(const linalg::Matrix& w) {
  linalg::LuFactors f = linalg::lu_factor(w);
  for (std::size_t i = 0; i < f.lu.rows(); ++i)
    if (std::abs(f.lu(i, i)) < structured::kEpsInvert)
      throw SingularFactorError(0, i, std::abs(f.lu(i, i)));
  LULayer l;
  l.lu_ = std::move(f.lu);
  l.perm_ = std::move(f.perm);
  return l;
}

linalg::Matrix LULayer::matrix() const {
  const std::size_t n = dim();
  const Eigen::MatrixXd l = view(lu_).triangularView<Eigen::UnitLower>().toDenseMatrix();
  const Eigen::MatrixXd u = view(lu_).triangularView<Eigen::Upper>().toDenseMatrix();
  const Eigen::MatrixXd p = l * u;
  linalg::Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(perm_[i], j) = p(i, j);
  return a;
}

ColumnBatch LULayer::forward(const ColumnBatch& x) const {
  check_rows(dim(), x);
  Eigen::MatrixXd u = view(lu_).triangularView<Eigen::Upper>() * view(x);
  const Eigen::MatrixXd t = view(lu_).triangularView<Eigen::UnitLower>() * u;
  ColumnBatch y(dim(), x.cols());
  auto out = view(y);
  for (std::size_t i = 0; i < dim(); ++i) out.row(perm_[i]) = t.row(i);
  return y;
}

double LULayer::logdet() const {
  double s = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) s += std::log(std::abs(lu_(i, i)));
  return s;
}

ColumnBatch LULayer::inverse(const ColumnBatch& y) const {
  check_rows(dim(), y);
  ColumnBatch x(dim(), y.cols());
  auto b = view(x);
  const auto in = view(y);
  for (std::size_t i = 0; i < dim(); ++i) b.row(i) = in.row(perm_[i]);
  view(lu_).triangularView<Eigen::UnitLower>().solveInPlace(b);
  view(lu_).triangularView<Eigen::Upper>().solveInPlace(b);
  return x;
}

BaselineSet make_baselines(std::size_t n, std::size_t m, std::uint64_t seed) {
  rng::Engine g = rng::stream(seed, "bench_layer", n * 16 + m);
  structured::CDChain chain = structured::CDChain::near_identity(n, m, 0.1, g);
  linalg::Matrix w = structured::chain_materialize(chain);
  LULayer lu = LULayer::from_matrix(w);
  return {std::move(chain), DenseLayer(std::move(w)), std::move(lu)};
}

std::size_t linear_parameter_count(const std::string& type, std::size_t n, std::size_t m) {
  if (type == "f" || type == "lu") return n * n;
  if (type == "l" || type == "u") return n * (n + 1) / 2;
  if (type == "dcd") return (2 * m - 1) * n;
  throw ConfigError("unknown linear layer type '" + type + "'");
}

}  // namespace cdflow::bench
