#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

#include "cdflow/error.hpp"
#include "cdflow/simd/kernels.hpp"
#include "cdflow/structured.hpp"

namespace cdflow::structured {
namespace {

using fft::Complex;
using fft::ComplexVec;

double* as_doubles(Complex* z) { return reinterpret_cast<double*>(z); }
const double* as_doubles(const Complex* z) {
  return reinterpret_cast<const double*>(z);
}

// Locates the first offending entry of a factor once a fast check failed.
[[noreturn]] void throw_singular(const CDChain& w, std::size_t f) {
  const auto p = w.factor(f);
  const std::size_t n = p.size();
  if (CDChain::is_diagonal(f)) {
    for (std::size_t i = 0; i < n; ++i)
      if (!(std::abs(p[i]) >= kEpsInvert))
        throw SingularFactorError(f, i, std::abs(p[i]));
  } else {
    ComplexVec full(n);
    fft::spectrum_decode(p, full);
    for (std::size_t k = 0; k < n; ++k)
      if (!(std::abs(full[k]) >= kEpsInvert))
        throw SingularFactorError(f, k, std::abs(full[k]));
  }
  throw SingularFactorError(f, 0, 0.0);
}

// log|det| of one factor; throws when any entry is below kEpsInvert.
double factor_logdet(const CDChain& w, std::size_t f,
                     const simd::KernelTable& k) {
  const auto p = w.factor(f);
  const std::size_t n = p.size();
  if (CDChain::is_diagonal(f)) {
    const simd::LogAbsResult r = k.log_abs_sum(p.data(), n);
    if (!(r.min >= kEpsInvert)) throw_singular(w, f);
    return r.sum;
  }
  double sum = 0.0;
  const double a0 = std::abs(p[0]);
  if (!(a0 >= kEpsInvert)) throw_singular(w, f);
  sum += std::log(a0);
  const std::size_t pairs = fft::spectrum_pair_count(n);
  if (pairs > 0) {
    const simd::LogAbsResult r = k.log_norm2_sum(p.data() + 1, pairs);
    if (!(r.min >= kEpsInvert * kEpsInvert)) throw_singular(w, f);
    sum += r.sum;
  }
  if (n % 2 == 0 && n > 1) {
    const double an = std::abs(p[n - 1]);
    if (!(an >= kEpsInvert)) throw_singular(w, f);
    sum += std::log(an);
  }
  return sum;
}

// Running product of magnitudes with the binary exponent split off, so a
// whole chain's log|det| costs one log instead of one per entry.
class LogProduct {
 public:
  void mul(double a) {
    if (a > 1e100) {
      extra_ += std::log(a);
      return;
    }
    mant_ *= a;
    if (mant_ > 1e100 || mant_ < 1e-100) {
      int e = 0;
      mant_ = std::frexp(mant_, &e);
      exp_ += e;
    }
  }
  double log() const { return extra_ + std::log(mant_) + exp_ * std::numbers::ln2; }

 private:
  double mant_ = 1.0, extra_ = 0.0;
  long exp_ = 0;
};

// Per-call decoded factors: reciprocals for the inverse direction,
// conjugated spectra for the adjoint.
enum class Direction { kForward, kInverse, kAdjoint };

struct PreparedChain {
  std::size_t n = 0;
  std::vector<std::vector<double>> diagonals;  // indexed by factor
  std::vector<ComplexVec> spectra;             // indexed by factor
  std::shared_ptr<const fft::Plan> plan;
};

PreparedChain prepare(const CDChain& w, Direction dir) {
  PreparedChain p;
  p.n = w.dim();
  const std::size_t fc = w.factor_count();
  p.diagonals.resize(fc);
  p.spectra.resize(fc);
  for (std::size_t f = 0; f < fc; ++f) {
    const auto v = w.factor(f);
    if (CDChain::is_diagonal(f)) {
      p.diagonals[f].assign(v.begin(), v.end());
      if (dir == Direction::kInverse)
        for (double& d : p.diagonals[f]) d = 1.0 / d;
    } else {
      p.spectra[f].resize(p.n);
      fft::spectrum_decode(v, p.spectra[f]);
      if (dir == Direction::kInverse)
        for (Complex& l : p.spectra[f]) l = 1.0 / l;
      else if (dir == Direction::kAdjoint)
        for (Complex& l : p.spectra[f]) l = std::conj(l);
    }
  }
  if (fc > 1) p.plan = fft::plan_for(p.n);
  return p;
}

void apply_factor(const PreparedChain& p, std::size_t f, Complex* z,
                  const simd::KernelTable& k) {
  if (CDChain::is_diagonal(f)) {
    k.cscale(as_doubles(z), p.diagonals[f].data(), p.n);
  } else {
    p.plan->forward(z);
    k.cmul(as_doubles(z), as_doubles(p.spectra[f].data()), p.n);
    p.plan->inverse(z);
  }
}

// Applies the prepared factors to every column in the given factor order.
// Two real columns ride in one complex vector (x_a + i x_b): every factor is
// a real operator, so the real and imaginary parts never mix.
ColumnBatch apply_chain(const PreparedChain& p,
                        const std::vector<std::size_t>& order,
                        const ColumnBatch& x) {
  const std::size_t n = p.n;
  const std::size_t cols = x.cols();
  ColumnBatch y(n, cols);
  const simd::KernelTable& k = simd::active();

  if (order.size() == 1) {
    const std::vector<double>& d = p.diagonals[order[0]];
    for (std::size_t j = 0; j < cols; ++j) {
      auto out = y.col(j);
      std::copy(x.col(j).begin(), x.col(j).end(), out.begin());
      k.mul(out.data(), d.data(), n);
    }
    return y;
  }

  ComplexVec z(n);
  for (std::size_t j = 0; j < cols; j += 2) {
    const bool pair = j + 1 < cols;
    const auto a = x.col(j);
    for (std::size_t i = 0; i < n; ++i)
      z[i] = Complex(a[i], pair ? x(i, j + 1) : 0.0);
    for (std::size_t f : order) apply_factor(p, f, z.data(), k);
    auto ya = y.col(j);
    for (std::size_t i = 0; i < n; ++i) ya[i] = z[i].real();
    if (pair) {
      auto yb = y.col(j + 1);
      for (std::size_t i = 0; i < n; ++i) yb[i] = z[i].imag();
    }
  }
  return y;
}

std::vector<std::size_t> forward_order(const CDChain& w) {
  std::vector<std::size_t> order(w.factor_count());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
  return order;
}

std::vector<std::size_t> inverse_order(const CDChain& w) {
  std::vector<std::size_t> order(w.factor_count());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  return order;
}

void require_rows(const CDChain& w, const ColumnBatch& x, const char* op) {
  if (x.rows() != w.dim())
    throw DimensionError(std::string(op) + ": expected " +
                         std::to_string(w.dim()) + " rows, got " +
                         std::to_string(x.rows()));
}

}  // namespace

ColumnBatch ColumnBatch::from_matrix(const linalg::Matrix& m) {
  ColumnBatch b(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) b(i, j) = m(i, j);
  return b;
}

linalg::Matrix ColumnBatch::to_matrix() const {
  linalg::Matrix m(rows_, cols_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j);
  return m;
}

CDChain::CDChain(std::size_t n, std::size_t m)
    : n_(n), m_(m), params_((2 * m - 1) * n, 1.0) {
  if (n == 0 || m == 0) throw DimensionError("CDChain requires n >= 1, m >= 1");
  // The identity spectrum is all ones; the packed layout stores Re/Im pairs,
  // so zero the imaginary slots.
  for (std::size_t j = 0; j < circulant_count(); ++j) {
    auto s = spectrum(j);
    for (std::size_t k = 1; k <= fft::spectrum_pair_count(n); ++k) s[2 * k] = 0.0;
  }
}

CDChain CDChain::near_identity(std::size_t n, std::size_t m, double noise,
                               rng::Engine& g) {
  CDChain w(n, m);
  for (double& v : w.params_) v += noise * rng::normal(g);
  return w;
}

CDChain CDChain::from_time_domain(
    const std::vector<std::vector<double>>& diagonals,
    const std::vector<std::vector<double>>& circulant_columns) {
  if (diagonals.empty() || circulant_columns.size() + 1 != diagonals.size())
    throw DimensionError("from_time_domain: need m diagonals and m-1 circulants");
  const std::size_t n = diagonals.front().size();
  CDChain w(n, diagonals.size());
  for (std::size_t j = 0; j < diagonals.size(); ++j) {
    if (diagonals[j].size() != n) throw DimensionError("from_time_domain: ragged factors");
    std::copy(diagonals[j].begin(), diagonals[j].end(), w.diagonal(j).begin());
  }
  for (std::size_t j = 0; j < circulant_columns.size(); ++j) {
    if (circulant_columns[j].size() != n)
      throw DimensionError("from_time_domain: ragged factors");
    fft::spectrum_encode(circulant_columns[j], w.spectrum(j));
  }
  return w;
}

CDChain CDChain::from_parameters(std::size_t n, std::size_t m,
                                 std::vector<double> params) {
  CDChain w(n, m);
  if (params.size() != w.params_.size())
    throw DimensionError("from_parameters: expected " +
                         std::to_string(w.params_.size()) + " values");
  w.params_ = std::move(params);
  return w;
}

void CDChain::check_invertible() const {
  const simd::KernelTable& k = simd::active();
  for (std::size_t f = 0; f < factor_count(); ++f) (void)factor_logdet(*this, f, k);
}

std::vector<double> diag_matvec(std::span<const double> d,
                                std::span<const double> x) {
  if (d.size() != x.size()) throw DimensionError("diag_matvec: length mismatch");
  std::vector<double> y(x.begin(), x.end());
  simd::active().mul(y.data(), d.data(), y.size());
  return y;
}

std::vector<double> circ_matvec(std::span<const double> packed_spectrum,
                                std::span<const double> x) {
  const std::size_t n = x.size();
  if (packed_spectrum.size() != n) throw DimensionError("circ_matvec: length mismatch");
  ComplexVec lambda(n);
  fft::spectrum_decode(packed_spectrum, lambda);
  ComplexVec z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = Complex(x[i], 0.0);
  const auto plan = fft::plan_for(n);
  plan->forward(z.data());
  simd::active().cmul(as_doubles(z.data()), as_doubles(lambda.data()), n);
  plan->inverse(z.data());

  double xmax = 0.0, lmax = 1.0, residue = 0.0;
  for (double v : x) xmax = std::max(xmax, std::abs(v));
  for (const Complex& l : lambda) lmax = std::max(lmax, std::abs(l));
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = z[i].real();
    residue = std::max(residue, std::abs(z[i].imag()));
  }
  if (residue > 1e-9 * xmax * lmax) throw SymmetryError();
  return y;
}

ColumnBatch chain_matvec(const CDChain& w, const ColumnBatch& x) {
  require_rows(w, x, "chain_matvec");
  return apply_chain(prepare(w, Direction::kForward), forward_order(w), x);
}

ColumnBatch chain_inverse_apply(const CDChain& w, const ColumnBatch& y) {
  require_rows(w, y, "chain_inverse_apply");
  w.check_invertible();
  return apply_chain(prepare(w, Direction::kInverse), inverse_order(w), y);
}

double chain_logdet(const CDChain& w) {
  const std::size_t n = w.dim();
  const std::size_t pairs = fft::spectrum_pair_count(n);
  LogProduct prod;
  for (std::size_t f = 0; f < w.factor_count(); ++f) {
    const auto p = w.factor(f);
    if (CDChain::is_diagonal(f)) {
      for (double v : p) {
        const double a = std::abs(v);
        if (!(a >= kEpsInvert)) throw_singular(w, f);
        prod.mul(a);
      }
      continue;
    }
    // Hermitian pairs enter as |lambda_k|^2, covering both k and n - k.
    const auto edge = [&](double v) {
      const double a = std::abs(v);
      if (!(a >= kEpsInvert)) throw_singular(w, f);
      prod.mul(a);
    };
    edge(p[0]);
    for (std::size_t j = 0; j < pairs; ++j) {
      const double q = p[2 * j + 1] * p[2 * j + 1] + p[2 * j + 2] * p[2 * j + 2];
      if (!(q >= kEpsInvert * kEpsInvert)) throw_singular(w, f);
      prod.mul(q);
    }
    if (n % 2 == 0 && n > 1) edge(p[n - 1]);
  }
  return prod.log();
}

linalg::Matrix chain_materialize(const CDChain& w) {
  const std::size_t n = w.dim();
  if (n > 4096) throw DimensionError("chain_materialize: n > 4096");
  ColumnBatch eye(n, n);
  for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
  return chain_matvec(w, eye).to_matrix();
}

ChainGradients chain_vjp(const CDChain& w, const ColumnBatch& x,
                         const ColumnBatch& ybar) {
  require_rows(w, x, "chain_vjp");
  require_rows(w, ybar, "chain_vjp");
  if (x.cols() != ybar.cols()) throw DimensionError("chain_vjp: column mismatch");

  const std::size_t n = w.dim();
  const std::size_t fc = w.factor_count();
  const PreparedChain fwd = prepare(w, Direction::kForward);
  const PreparedChain adj = prepare(w, Direction::kAdjoint);
  const simd::KernelTable& k = simd::active();

  ChainGradients out{ColumnBatch(n, x.cols()), std::vector<double>(fc * n, 0.0)};
  std::vector<ComplexVec> spectral_acc(fc);
  for (std::size_t f = 1; f < fc; f += 2) spectral_acc[f].assign(n, Complex(0.0, 0.0));

  // inputs[f]: the vector entering factor f on the forward pass.
  std::vector<ComplexVec> inputs(fc, ComplexVec(n));
  ComplexVec z(n), g(n), spectrum_in(n);

  for (std::size_t j = 0; j < x.cols(); ++j) {
    const auto xc = x.col(j);
    for (std::size_t i = 0; i < n; ++i) z[i] = Complex(xc[i], 0.0);
    for (std::size_t f = fc; f-- > 0;) {
      inputs[f] = z;
      apply_factor(fwd, f, z.data(), k);
    }

    const auto gc = ybar.col(j);
    for (std::size_t i = 0; i < n; ++i) g[i] = Complex(gc[i], 0.0);
    for (std::size_t f = 0; f < fc; ++f) {
      if (CDChain::is_diagonal(f)) {
        const auto d = w.factor(f);
        double* grad = out.parameters.data() + f * n;
        for (std::size_t i = 0; i < n; ++i) {
          grad[i] += g[i].real() * inputs[f][i].real();
          g[i] = Complex(g[i].real() * d[i], 0.0);
        }
      } else {
        spectrum_in = inputs[f];
        fwd.plan->forward(spectrum_in.data());
        fwd.plan->forward(g.data());
        k.cmul_conj_acc(as_doubles(spectral_acc[f].data()),
                        as_doubles(spectrum_in.data()), as_doubles(g.data()), n);
        k.cmul(as_doubles(g.data()), as_doubles(adj.spectra[f].data()), n);
        fwd.plan->inverse(g.data());
        for (Complex& v : g) v = Complex(v.real(), 0.0);
      }
    }
    auto xbar = out.input.col(j);
    for (std::size_t i = 0; i < n; ++i) xbar[i] = g[i].real();
  }

  // d<ybar, y>/d lambda_k = G_k = X_k conj(Ybar_k) / n; conjugate pairs share
  // one stored (Re, Im) slot and contribute twice.
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t pairs = fft::spectrum_pair_count(n);
  for (std::size_t f = 1; f < fc; f += 2) {
    const ComplexVec& acc = spectral_acc[f];
    double* grad = out.parameters.data() + f * n;
    grad[0] = acc[0].real() * inv_n;
    for (std::size_t kk = 1; kk <= pairs; ++kk) {
      grad[2 * kk - 1] = 2.0 * acc[kk].real() * inv_n;
      grad[2 * kk] = -2.0 * acc[kk].imag() * inv_n;
    }
    if (n % 2 == 0 && n > 1) grad[n - 1] = acc[n / 2].real() * inv_n;
  }
  return out;
}

std::vector<double> logdet_grad(const CDChain& w) {
  w.check_invertible();
  const std::size_t n = w.dim();
  const std::size_t pairs = fft::spectrum_pair_count(n);
  std::vector<double> grad(w.parameter_count());
  for (std::size_t f = 0; f < w.factor_count(); ++f) {
    const auto p = w.factor(f);
    double* g = grad.data() + f * n;
    if (CDChain::is_diagonal(f)) {
      for (std::size_t i = 0; i < n; ++i) g[i] = 1.0 / p[i];
      continue;
    }
    g[0] = 1.0 / p[0];
    for (std::size_t k = 1; k <= pairs; ++k) {
      const double a = p[2 * k - 1], b = p[2 * k];
      const double q = a * a + b * b;
      g[2 * k - 1] = 2.0 * a / q;
      g[2 * k] = 2.0 * b / q;
    }
    if (n % 2 == 0 && n > 1) g[n - 1] = 1.0 / p[n - 1];
  }
  return grad;
}

std::vector<double> factor_sigma_max(const CDChain& w) {
  const std::size_t n = w.dim();
  const std::size_t pairs = fft::spectrum_pair_count(n);
  std::vector<double> sigma(w.factor_count(), 0.0);
  for (std::size_t f = 0; f < w.factor_count(); ++f) {
    const auto p = w.factor(f);
    double s = 0.0;
    if (CDChain::is_diagonal(f)) {
      for (double v : p) s = std::max(s, std::abs(v));
    } else {
      s = std::abs(p[0]);
      for (std::size_t k = 1; k <= pairs; ++k)
        s = std::max(s, std::hypot(p[2 * k - 1], p[2 * k]));
      if (n % 2 == 0 && n > 1) s = std::max(s, std::abs(p[n - 1]));
    }
    sigma[f] = s;
  }
  return sigma;
}

void spectral_rescale_in_place(CDChain& w, double target) {
  if (!(target > 0.0)) throw DimensionError("spectral rescale target must be > 0");
  const std::vector<double> sigma = factor_sigma_max(w);
  for (std::size_t f = 0; f < sigma.size(); ++f) {
    if (sigma[f] > target) {
      const double scale = target / sigma[f];
      for (double& v : w.factor(f)) v *= scale;
    }
  }
}

CDChain chain_spectral_rescale(CDChain w, double target) {
  spectral_rescale_in_place(w, target);
  return w;
}

}  // namespace cdflow::structured
