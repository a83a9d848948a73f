#include <algorithm>
#include <cmath>
#include <string>

#include "cdflow/binary_io.hpp"
#include "cdflow/error.hpp"
#include "cdflow/optim.hpp"
#include "cdflow/structured.hpp"
#include "json.hpp"

namespace cdflow::structured {
namespace {

constexpr std::string_view kMagic = "CDC1";
constexpr int kFormatVersion = 1;

struct FitEval {
  double loss;
  std::vector<double> grad;
};

FitEval fit_loss(const CDChain& w, const linalg::Matrix& target,
                 double target_norm, bool with_grad) {
  const std::size_t n = w.dim();
  ColumnBatch eye(n, n);
  for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
  const ColumnBatch a = chain_matvec(w, eye);
  ColumnBatch resid(n, n);
  double rnorm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double r = a(i, j) - target(i, j);
      resid(i, j) = r;
      rnorm2 += r * r;
    }
  const double rnorm = std::sqrt(rnorm2);
  FitEval out{rnorm / target_norm, {}};
  if (with_grad && rnorm > 0.0) {
    // Gradient of loss^2 / 2: same minimizer, but it vanishes at the optimum
    // so Adam steps shrink instead of chattering.
    for (double& v : resid.data()) v /= target_norm * target_norm;
    out.grad = chain_vjp(w, eye, resid).parameters;
  } else if (with_grad) {
    out.grad.assign(w.parameter_count(), 0.0);
  }
  return out;
}

// With every other factor fixed, the loss is quadratic in the outermost
// diagonal and separates by row: d_i = <M_i, R_i> / |R_i|^2 where R is the
// product of the remaining factors. Used as a warm start.
void solve_outer_diagonal(CDChain& w, const linalg::Matrix& target) {
  const std::size_t n = w.dim();
  auto d = w.diagonal(0);
  std::fill(d.begin(), d.end(), 1.0);
  ColumnBatch eye(n, n);
  for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
  const ColumnBatch r = chain_matvec(w, eye);
  for (std::size_t i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      num += target(i, j) * r(i, j);
      den += r(i, j) * r(i, j);
    }
    if (den > 0.0) d[i] = num / den;
  }
}

}  // namespace

double relative_frobenius_error(const CDChain& w, const linalg::Matrix& target) {
  const double norm = linalg::frobenius_norm(target);
  return fit_loss(w, target, norm > 0.0 ? norm : 1.0, false).loss;
}

FitResult fit_dense(const linalg::Matrix& target, std::size_t m,
                    const FitOptions& options, std::uint64_t seed) {
  const std::size_t n = target.rows();
  if (target.cols() != n) throw DimensionError("fit_dense: target must be square");
  if (n == 0 || n > 64) throw DimensionError("fit_dense: requires 1 <= n <= 64");
  if (m == 0) throw DimensionError("fit_dense: m must be >= 1");

  rng::Engine g = rng::stream(seed, "fit_init");
  CDChain w = CDChain::near_identity(n, m, options.init_noise, g);
  solve_outer_diagonal(w, target);
  const double tnorm_raw = linalg::frobenius_norm(target);
  const double tnorm = tnorm_raw > 0.0 ? tnorm_raw : 1.0;

  optim::AdamState state(w.parameter_count());
  FitEval current = fit_loss(w, target, tnorm, true);
  double lr = options.lr;
  std::size_t streak = 0;
  FitResult result{w, {}};
  result.loss_history.reserve(options.steps);

  for (std::size_t step = 0; step < options.steps; ++step) {
    const std::vector<double> saved_params(w.parameters().begin(), w.parameters().end());
    optim::adam_step(w.parameters(), current.grad, state, lr);
    FitEval trial = fit_loss(w, target, tnorm, true);
    if (std::isfinite(trial.loss) && trial.loss <= current.loss) {
      current = std::move(trial);
      if (++streak >= 50) {
        lr = std::min(options.lr, lr * 1.1);
        streak = 0;
      }
    } else {
      // Only the parameters roll back. The moments keep the gradient of the
      // accepted point, so repeated rejections steer momentum back downhill.
      std::copy(saved_params.begin(), saved_params.end(), w.parameters().begin());
      lr *= 0.5;
      streak = 0;
    }
    result.loss_history.push_back(current.loss);
  }
  result.chain = std::move(w);
  return result;
}

std::vector<char> encode_chain(const CDChain& w) {
  io::ByteWriter out;
  out.bytes(kMagic);
  out.u32(static_cast<std::uint32_t>(w.dim()));
  out.u32(static_cast<std::uint32_t>(w.diagonal_count()));
  out.f64s(w.parameters());
  return out.buffer();
}

CDChain decode_chain(std::span<const char> bytes) {
  io::ByteReader in(bytes);
  if (!in.has(12) || in.bytes(4) != kMagic) throw ConfigError("not a CDC1 chain");
  const std::uint32_t n = in.u32();
  const std::uint32_t m = in.u32();
  if (n == 0 || m == 0) throw ConfigError("CDC1: n and m must be >= 1");
  const std::size_t count = (2 * static_cast<std::size_t>(m) - 1) * n;
  if (in.remaining() != count * 8) throw ConfigError("CDC1: payload size mismatch");
  std::vector<double> params(count);
  for (double& v : params) v = in.f64();
  return CDChain::from_parameters(n, m, std::move(params));
}

void save_chain(const CDChain& w, const std::filesystem::path& path,
                std::uint64_t seed) {
  io::write_file(path, encode_chain(w));
  nlohmann::json meta = {{"format", std::string(kMagic)},
                         {"format_version", kFormatVersion},
                         {"n", w.dim()},
                         {"m", w.diagonal_count()},
                         {"seed", seed}};
  io::write_text(path.string() + ".json", meta.dump(2) + "\n");
}

CDChain load_chain(const std::filesystem::path& path) {
  return decode_chain(io::read_file(path));
}

}  // namespace cdflow::structured
