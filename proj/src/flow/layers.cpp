#include <cmath>
#include <numeric>

#include "cdflow/error.hpp"
#include "cdflow/layers.hpp"
#include "columns.hpp"

namespace cdflow::flow {

using detail::MatrixX;
using detail::RowMatrixX;

namespace {

struct InputCache final : LayerCache {
  explicit InputCache(Tensor4 t) : x(std::move(t)) {}
  Tensor4 x;
};

struct ColumnCache final : LayerCache {
  explicit ColumnCache(structured::ColumnBatch c) : x(std::move(c)) {}
  structured::ColumnBatch x;
};

double sum_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

void check_batch(std::span<const double> logdet, const Tensor4& x) {
  if (logdet.size() != x.batch()) throw DimensionError("logdet size must equal batch size");
}

}  // namespace

// ---------------------------------------------------------------- ActNorm

ActNorm::ActNorm(std::size_t channels) : params_(2 * channels, 0.0) {
  std::fill_n(params_.begin(), channels, 1.0);
}

void ActNorm::initialize(const Tensor4& x) {
  if (x.channels() != channels()) throw DimensionError("actnorm: channel mismatch");
  const std::size_t hw = x.shape().spatial();
  const double count = static_cast<double>(x.batch() * hw);
  for (std::size_t c = 0; c < channels(); ++c) {
    double mean = 0.0;
    for (std::size_t b = 0; b < x.batch(); ++b) mean += sum_of(x.plane(b, c));
    mean /= count;
    double var = 0.0;
    for (std::size_t b = 0; b < x.batch(); ++b)
      for (double v : x.plane(b, c)) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / count);
    if (!(sd > 0.0) || !std::isfinite(sd)) throw NumericalError("degenerate init batch");
    scale()[c] = 1.0 / sd;
    bias()[c] = -mean;
  }
  initialized_ = true;
}

Tensor4 ActNorm::forward_init(const Tensor4& x, std::span<double> logdet) {
  if (!initialized_) initialize(x);
  return forward(x, logdet, nullptr);
}

Tensor4 ActNorm::forward(const Tensor4& x, std::span<double> logdet,
                         std::unique_ptr<LayerCache>* cache) const {
  if (x.channels() != channels()) throw DimensionError("actnorm: channel mismatch");
  check_batch(logdet, x);
  Tensor4 y(x.shape());
  double ld = 0.0;
  for (std::size_t c = 0; c < channels(); ++c) ld += std::log(std::abs(scale()[c]));
  ld *= static_cast<double>(x.shape().spatial());
  for (std::size_t b = 0; b < x.batch(); ++b) {
    for (std::size_t c = 0; c < channels(); ++c) {
      const auto in = x.plane(b, c);
      auto out = y.plane(b, c);
      const double s = scale()[c], t = bias()[c];
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = s * (in[i] + t);
    }
    logdet[b] += ld;
  }
  if (cache) *cache = std::make_unique<InputCache>(x);
  return y;
}

Tensor4 ActNorm::inverse(const Tensor4& y) const {
  if (y.channels() != channels()) throw DimensionError("actnorm: channel mismatch");
  for (std::size_t c = 0; c < channels(); ++c)
    if (std::abs(scale()[c]) < structured::kEpsInvert)
      throw SingularFactorError(0, c, std::abs(scale()[c]));
  Tensor4 x(y.shape());
  for (std::size_t b = 0; b < y.batch(); ++b)
    for (std::size_t c = 0; c < channels(); ++c) {
      const auto in = y.plane(b, c);
      auto out = x.plane(b, c);
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] / scale()[c] - bias()[c];
    }
  return x;
}

Tensor4 ActNorm::backward(const LayerCache& cache, const Tensor4& dy,
                          std::span<const double> dlogdet, std::span<double> grad) const {
  const Tensor4& x = static_cast<const InputCache&>(cache).x;
  const std::size_t nc = channels();
  const double hw = static_cast<double>(x.shape().spatial());
  const double dld = sum_of(dlogdet);
  Tensor4 dx(x.shape());
  for (std::size_t c = 0; c < nc; ++c) {
    const double s = scale()[c], t = bias()[c];
    double gs = 0.0, gb = 0.0;
    for (std::size_t b = 0; b < x.batch(); ++b) {
      const auto in = x.plane(b, c);
      const auto g = dy.plane(b, c);
      auto out = dx.plane(b, c);
      for (std::size_t i = 0; i < in.size(); ++i) {
        gs += g[i] * (in[i] + t);
        gb += g[i];
        out[i] = s * g[i];
      }
    }
    grad[c] += gs + dld * hw / s;
    grad[nc + c] += s * gb;
  }
  return dx;
}

// ---------------------------------------------------------------- CDConv

CDConv::CDConv(std::size_t channels, std::size_t m) : chain_(channels, m) {}

Tensor4 CDConv::forward(const Tensor4& x, std::span<double> logdet,
                        std::unique_ptr<LayerCache>* cache) const {
  if (x.channels() != dim()) throw DimensionError("cdconv: channel mismatch");
  check_batch(logdet, x);
  auto cols = detail::to_columns(x);
  const double ld = static_cast<double>(x.shape().spatial()) * structured::chain_logdet(chain_);
  for (double& v : logdet) v += ld;
  Tensor4 y = detail::from_columns(structured::chain_matvec(chain_, cols), x.shape());
  if (cache) *cache = std::make_unique<ColumnCache>(std::move(cols));
  return y;
}

Tensor4 CDConv::inverse(const Tensor4& y) const {
  if (y.channels() != dim()) throw DimensionError("cdconv: channel mismatch");
  return detail::from_columns(structured::chain_inverse_apply(chain_, detail::to_columns(y)),
                              y.shape());
}

Tensor4 CDConv::backward(const LayerCache& cache, const Tensor4& dy,
                         std::span<const double> dlogdet, std::span<double> grad) const {
  const auto& x = static_cast<const ColumnCache&>(cache).x;
  const auto g = structured::chain_vjp(chain_, x, detail::to_columns(dy));
  const double w = static_cast<double>(dy.shape().spatial()) * sum_of(dlogdet);
  const auto lg = structured::logdet_grad(chain_);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g.parameters[i] + w * lg[i];
  return detail::from_columns(g.input, dy.shape());
}

// ---------------------------------------------------------------- MatrixConv

std::string to_string(LinearKind k) {
  switch (k) {
    case LinearKind::kCD: return "dcd";
    case LinearKind::kDense: return "f";
    case LinearKind::kLower: return "l";
    case LinearKind::kUpper: return "u";
    case LinearKind::kLU: return "lu";
  }
  return "?";
}

LinearKind linear_kind_from_string(const std::string& s) {
  for (LinearKind k : {LinearKind::kCD, LinearKind::kDense, LinearKind::kLower,
                       LinearKind::kUpper, LinearKind::kLU})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown linear layer kind '" + s + "' (expected dcd, f, l, u or lu)");
}

namespace {

std::size_t blocks_for(LinearKind k) { return k == LinearKind::kLU ? 2 : 1; }

Eigen::Map<const RowMatrixX> block_view(std::span<const double> p, std::size_t n,
                                        std::size_t block) {
  return {p.data() + block * n * n, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)};
}

}  // namespace

MatrixConv::MatrixConv(LinearKind kind, std::size_t channels, double noise, rng::Engine& g,
                       std::size_t shift)
    : kind_(kind), n_(channels), params_(blocks_for(kind) * channels * channels, 0.0) {
  if (kind == LinearKind::kCD) throw ConfigError("MatrixConv does not implement the CD kind");
  if (n_ == 0) throw DimensionError("MatrixConv: zero channels");
  shift_ = kind == LinearKind::kLU ? shift % n_ : 0;
  const std::size_t s = kind == LinearKind::kDense ? shift % n_ : 0;
  for (std::size_t blk = 0; blk < blocks_for(kind); ++blk)
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) {
        if (!is_free(blk, i, j)) continue;
        const double base = (i == (j + s) % n_) ? 1.0 : 0.0;
        params_[(blk * n_ + i) * n_ + j] = base + noise * rng::normal(g);
      }
}

MatrixConv::MatrixConv(LinearKind kind, std::size_t channels, std::vector<double> params,
                       std::size_t shift)
    : kind_(kind), n_(channels), params_(std::move(params)) {
  if (kind == LinearKind::kCD) throw ConfigError("MatrixConv does not implement the CD kind");
  if (n_ == 0 || params_.size() != blocks_for(kind) * n_ * n_)
    throw DimensionError("MatrixConv: parameter count mismatch");
  shift_ = kind == LinearKind::kLU ? shift % n_ : 0;
}

std::string MatrixConv::kind() const { return "linear_" + to_string(kind_); }

bool MatrixConv::is_free(std::size_t block, std::size_t i, std::size_t j) const {
  switch (kind_) {
    case LinearKind::kDense: return true;
    case LinearKind::kLower: return j <= i;
    case LinearKind::kUpper: return j >= i;
    case LinearKind::kLU: return block == 0 ? j < i : j >= i;
    case LinearKind::kCD: break;
  }
  return false;
}

std::size_t MatrixConv::free_parameter_count() const {
  std::size_t count = 0;
  for (std::size_t blk = 0; blk < blocks_for(kind_); ++blk)
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) count += is_free(blk, i, j) ? 1 : 0;
  return count;
}

namespace {

// Effective factors with structural zeros (and LU's unit diagonal) applied.
RowMatrixX masked_block(std::span<const double> p, std::size_t n,
                        std::size_t block, LinearKind kind) {
  RowMatrixX a = block_view(p, n, block);
  if (kind == LinearKind::kLower) a = RowMatrixX(a.triangularView<Eigen::Lower>());
  if (kind == LinearKind::kUpper) a = RowMatrixX(a.triangularView<Eigen::Upper>());
  if (kind == LinearKind::kLU && block == 0) a = RowMatrixX(a.triangularView<Eigen::UnitLower>());
  if (kind == LinearKind::kLU && block == 1) a = RowMatrixX(a.triangularView<Eigen::Upper>());
  return a;
}

// Row i of the result is row i - s (mod n) of a, i.e. P a; negate s for P^T a.
template <class M>
RowMatrixX shift_rows(const M& a, std::size_t s, bool transpose) {
  const std::size_t n = static_cast<std::size_t>(a.rows());
  if (s == 0) return a;
  RowMatrixX out(a.rows(), a.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = transpose ? (i + s) % n : (i + n - s) % n;
    out.row(static_cast<Eigen::Index>(i)) = a.row(static_cast<Eigen::Index>(src));
  }
  return out;
}

void check_diagonal(const RowMatrixX& a, std::size_t factor) {
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    if (std::abs(a(i, i)) < structured::kEpsInvert)
      throw SingularFactorError(factor, static_cast<std::size_t>(i), std::abs(a(i, i)));
}

}  // namespace

linalg::Matrix MatrixConv::matrix() const {
  RowMatrixX w = masked_block(params_, n_, 0, kind_);
  if (kind_ == LinearKind::kLU) w = shift_rows(w * masked_block(params_, n_, 1, kind_), shift_, false);
  linalg::Matrix out(n_, n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) out(i, j) = w(i, j);
  return out;
}

double MatrixConv::weight_logdet() const {
  switch (kind_) {
    case LinearKind::kDense: {
      const auto lu = linalg::lu_factor(matrix());
      return linalg::lu_logabsdet(lu);
    }
    case LinearKind::kLower:
    case LinearKind::kUpper:
    case LinearKind::kLU: {
      const RowMatrixX a = block_view(params_, n_, kind_ == LinearKind::kLU ? 1 : 0);
      double s = 0.0;
      for (std::size_t i = 0; i < n_; ++i) {
        if (std::abs(a(i, i)) < structured::kEpsInvert)
          throw SingularFactorError(kind_ == LinearKind::kLU ? 1 : 0, i, std::abs(a(i, i)));
        s += std::log(std::abs(a(i, i)));
      }
      return s;
    }
    case LinearKind::kCD: break;
  }
  return 0.0;
}

Tensor4 MatrixConv::forward(const Tensor4& x, std::span<double> logdet,
                            std::unique_ptr<LayerCache>* cache) const {
  if (x.channels() != n_) throw DimensionError("linear: channel mismatch");
  check_batch(logdet, x);
  auto cols = detail::to_columns(x);
  const linalg::Matrix w = matrix();
  const Eigen::Map<const RowMatrixX> wm(w.data().data(), n_, n_);
  structured::ColumnBatch out(n_, cols.cols());
  Eigen::Map<MatrixX>(out.data().data(), n_, cols.cols()).noalias() = wm * detail::view(cols);
  const double ld = static_cast<double>(x.shape().spatial()) * weight_logdet();
  for (double& v : logdet) v += ld;
  Tensor4 y = detail::from_columns(out, x.shape());
  if (cache) *cache = std::make_unique<ColumnCache>(std::move(cols));
  return y;
}

Tensor4 MatrixConv::inverse(const Tensor4& y) const {
  if (y.channels() != n_) throw DimensionError("linear: channel mismatch");
  const auto cols = detail::to_columns(y);
  MatrixX x;
  const auto rhs = detail::view(cols);
  switch (kind_) {
    case LinearKind::kDense: {
      const linalg::Matrix w = matrix();
      auto lu = linalg::lu_factor(w);
      for (std::size_t i = 0; i < n_; ++i)
        if (std::abs(lu.lu(i, i)) < structured::kEpsInvert)
          throw SingularFactorError(0, i, std::abs(lu.lu(i, i)));
      structured::ColumnBatch sol = cols;
      for (std::size_t j = 0; j < sol.cols(); ++j) linalg::lu_solve(lu, sol.col(j));
      return detail::from_columns(sol, y.shape());
    }
    case LinearKind::kLower: {
      const RowMatrixX a = masked_block(params_, n_, 0, kind_);
      check_diagonal(a, 0);
      x = a.triangularView<Eigen::Lower>().solve(rhs);
      break;
    }
    case LinearKind::kUpper: {
      const RowMatrixX a = masked_block(params_, n_, 0, kind_);
      check_diagonal(a, 0);
      x = a.triangularView<Eigen::Upper>().solve(rhs);
      break;
    }
    case LinearKind::kLU: {
      const RowMatrixX l = masked_block(params_, n_, 0, kind_);
      const RowMatrixX u = masked_block(params_, n_, 1, kind_);
      check_diagonal(u, 1);
      const MatrixX t =
          l.triangularView<Eigen::UnitLower>().solve(shift_rows(rhs, shift_, true));
      x = u.triangularView<Eigen::Upper>().solve(t);
      break;
    }
    case LinearKind::kCD: break;
  }
  structured::ColumnBatch out(n_, cols.cols());
  Eigen::Map<MatrixX>(out.data().data(), n_, cols.cols()) = x;
  return detail::from_columns(out, y.shape());
}

Tensor4 MatrixConv::backward(const LayerCache& cache, const Tensor4& dy,
                             std::span<const double> dlogdet, std::span<double> grad) const {
  const auto& xc = static_cast<const ColumnCache&>(cache).x;
  const auto dyc = detail::to_columns(dy);
  const auto xm = detail::view(xc);
  const auto gm = detail::view(dyc);
  const double wld = static_cast<double>(dy.shape().spatial()) * sum_of(dlogdet);

  const linalg::Matrix w = matrix();
  const Eigen::Map<const RowMatrixX> wm(w.data().data(), n_, n_);
  structured::ColumnBatch dx(n_, xc.cols());
  Eigen::Map<MatrixX>(dx.data().data(), n_, xc.cols()).noalias() = wm.transpose() * gm;

  const RowMatrixX dw = gm * xm.transpose();
  auto add_block = [&](std::size_t blk, const RowMatrixX& g) {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j)
        if (is_free(blk, i, j)) grad[(blk * n_ + i) * n_ + j] += g(i, j);
  };
  switch (kind_) {
    case LinearKind::kDense: {
      RowMatrixX g = dw;
      if (wld != 0.0) g += wld * RowMatrixX(wm.inverse().transpose());
      add_block(0, g);
      break;
    }
    case LinearKind::kLower:
    case LinearKind::kUpper: {
      RowMatrixX g = dw;
      for (std::size_t i = 0; i < n_; ++i) g(i, i) += wld / wm(i, i);
      add_block(0, g);
      break;
    }
    case LinearKind::kLU: {
      const RowMatrixX l = masked_block(params_, n_, 0, kind_);
      const RowMatrixX u = masked_block(params_, n_, 1, kind_);
      const RowMatrixX dm = shift_rows(dw, shift_, true);
      add_block(0, dm * u.transpose());
      RowMatrixX gu = l.transpose() * dm;
      for (std::size_t i = 0; i < n_; ++i) gu(i, i) += wld / u(i, i);
      add_block(1, gu);
      break;
    }
    case LinearKind::kCD: break;
  }
  return detail::from_columns(dx, dy.shape());
}

}  // namespace cdflow::flow
