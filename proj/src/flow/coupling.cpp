#include <cmath>

#include "cdflow/error.hpp"
#include "cdflow/layers.hpp"
#include "columns.hpp"

namespace cdflow::flow {

using detail::MatrixX;
using detail::RowMatrixX;

namespace {

struct Geometry {
  std::size_t batch, height, width;
  std::size_t positions() const { return batch * height * width; }
};

// Rows (ci * k + dy) * k + dx, one column per output position, zero padding.
MatrixX im2col(const MatrixX& in, const Geometry& g, std::size_t k) {
  if (k == 1) return in;
  const std::size_t pad = k / 2, hw = g.height * g.width;
  const std::size_t cin = static_cast<std::size_t>(in.rows());
  MatrixX col = MatrixX::Zero(static_cast<Eigen::Index>(cin * k * k),
                              static_cast<Eigen::Index>(g.positions()));
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t y = 0; y < g.height; ++y)
      for (std::size_t x = 0; x < g.width; ++x) {
        const std::size_t p = b * hw + y * g.width + x;
        for (std::size_t dy = 0; dy < k; ++dy) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.width)) continue;
            const std::size_t q = b * hw + static_cast<std::size_t>(sy) * g.width + static_cast<std::size_t>(sx);
            for (std::size_t c = 0; c < cin; ++c) col((c * k + dy) * k + dx, p) = in(c, q);
          }
        }
      }
  return col;
}

MatrixX col2im(const MatrixX& col, const Geometry& g, std::size_t k, std::size_t cin) {
  if (k == 1) return col;
  const std::size_t pad = k / 2, hw = g.height * g.width;
  MatrixX in = MatrixX::Zero(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(g.positions()));
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t y = 0; y < g.height; ++y)
      for (std::size_t x = 0; x < g.width; ++x) {
        const std::size_t p = b * hw + y * g.width + x;
        for (std::size_t dy = 0; dy < k; ++dy) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.width)) continue;
            const std::size_t q = b * hw + static_cast<std::size_t>(sy) * g.width + static_cast<std::size_t>(sx);
            for (std::size_t c = 0; c < cin; ++c) in(c, q) += col((c * k + dy) * k + dx, p);
          }
        }
      }
  return in;
}

struct ConvView {
  Eigen::Map<const RowMatrixX> w;
  Eigen::Map<const Eigen::VectorXd> b;
};

ConvView conv_view(std::span<const double> p, const ConvShape& s) {
  const auto rows = static_cast<Eigen::Index>(s.out);
  const auto cols = static_cast<Eigen::Index>(s.in * s.kernel * s.kernel);
  return {Eigen::Map<const RowMatrixX>(p.data(), rows, cols),
          Eigen::Map<const Eigen::VectorXd>(p.data() + s.weight_count(), rows)};
}

struct ConditionerTape {
  MatrixX col[3];   // im2col of each conv's input
  MatrixX act[2];   // post-ReLU hidden activations
  MatrixX out;      // raw (shat, bhat)
};

// Softplus-free log sigmoid, stable for large |u|.
double log_sigmoid(double u) {
  return u >= 0.0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u));
}

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

struct CouplingCache final : LayerCache {
  Geometry geom;
  MatrixX xb;
  ConditionerTape tape;
};

}  // namespace

AffineCoupling::AffineCoupling(std::size_t channels, std::size_t hidden, std::size_t kernel)
    : channels_(channels), hidden_(hidden), kernel_(kernel) {
  if (channels < 2) throw DimensionError("coupling: needs at least 2 channels");
  if (hidden == 0) throw ConfigError("coupling: hidden width must be positive");
  if (kernel % 2 == 0) throw ConfigError("coupling: kernel size must be odd");
  convs_ = {ConvShape{pass_channels(), hidden, kernel}, ConvShape{hidden, hidden, kernel},
            ConvShape{hidden, 2 * transformed_channels(), kernel}};
  std::size_t total = 0;
  for (const auto& c : convs_) total += c.parameter_count();
  params_.assign(total, 0.0);
}

AffineCoupling::AffineCoupling(std::size_t channels, std::size_t hidden, std::size_t kernel,
                               rng::Engine& g)
    : AffineCoupling(channels, hidden, kernel) {
  // He-normal hidden layers; the output layer stays zero.
  std::size_t off = 0;
  for (std::size_t i = 0; i + 1 < convs_.size(); ++i) {
    const ConvShape& s = convs_[i];
    const double sd = std::sqrt(2.0 / static_cast<double>(s.in * s.kernel * s.kernel));
    for (std::size_t j = 0; j < s.weight_count(); ++j) params_[off + j] = sd * rng::normal(g);
    off += s.parameter_count();
  }
}

AffineCoupling::AffineCoupling(std::size_t channels, std::size_t hidden, std::size_t kernel,
                               std::vector<double> params)
    : AffineCoupling(channels, hidden, kernel) {
  if (params.size() != params_.size()) throw DimensionError("coupling: parameter count mismatch");
  params_ = std::move(params);
}

namespace {

MatrixX run_conditioner(const AffineCoupling& layer, const MatrixX& xa, const Geometry& g,
                        ConditionerTape* tape) {
  const auto p = layer.parameters();
  const auto& convs = layer.convs();
  std::size_t off = 0;
  MatrixX h = xa;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const ConvView v = conv_view(p.subspan(off), convs[i]);
    MatrixX col = im2col(h, g, convs[i].kernel);
    MatrixX z = v.w * col;
    z.colwise() += v.b;
    if (i + 1 < convs.size()) z = z.cwiseMax(0.0);
    if (tape) {
      tape->col[i] = std::move(col);
      if (i + 1 < convs.size()) tape->act[i] = z;
    }
    h = std::move(z);
    off += convs[i].parameter_count();
  }
  if (tape) tape->out = h;
  return h;
}

}  // namespace

Tensor4 AffineCoupling::forward(const Tensor4& x, std::span<double> logdet,
                                std::unique_ptr<LayerCache>* cache) const {
  if (x.channels() != channels_) throw DimensionError("coupling: channel mismatch");
  if (logdet.size() != x.batch()) throw DimensionError("logdet size must equal batch size");
  const Geometry g{x.batch(), x.height(), x.width()};
  const std::size_t ca = pass_channels(), cb = transformed_channels(), hw = x.shape().spatial();
  const MatrixX xa = detail::channel_matrix(x, 0, ca);
  MatrixX xb = detail::channel_matrix(x, ca, cb);
  auto c = cache ? std::make_unique<CouplingCache>() : nullptr;
  const MatrixX h = run_conditioner(*this, xa, g, c ? &c->tape : nullptr);

  MatrixX yb(cb, g.positions());
  for (std::size_t p = 0; p < g.positions(); ++p) {
    double ld = 0.0;
    for (std::size_t i = 0; i < cb; ++i) {
      const double u = h(i, p) + 2.0;
      yb(i, p) = sigmoid(u) * xb(i, p) + h(cb + i, p);
      ld += log_sigmoid(u);
    }
    logdet[p / hw] += ld;
  }
  Tensor4 y = x;
  detail::write_channels(yb, y, ca);
  if (c) {
    c->geom = g;
    c->xb = std::move(xb);
    *cache = std::move(c);
  }
  return y;
}

Tensor4 AffineCoupling::inverse(const Tensor4& y) const {
  if (y.channels() != channels_) throw DimensionError("coupling: channel mismatch");
  const Geometry g{y.batch(), y.height(), y.width()};
  const std::size_t ca = pass_channels(), cb = transformed_channels();
  const MatrixX ya = detail::channel_matrix(y, 0, ca);
  const MatrixX h = run_conditioner(*this, ya, g, nullptr);
  MatrixX xb = detail::channel_matrix(y, ca, cb);
  for (std::size_t p = 0; p < g.positions(); ++p)
    for (std::size_t i = 0; i < cb; ++i)
      xb(i, p) = (xb(i, p) - h(cb + i, p)) / sigmoid(h(i, p) + 2.0);
  Tensor4 x = y;
  detail::write_channels(xb, x, ca);
  return x;
}

Tensor4 AffineCoupling::backward(const LayerCache& cache, const Tensor4& dy,
                                 std::span<const double> dlogdet, std::span<double> grad) const {
  const auto& c = static_cast<const CouplingCache&>(cache);
  const Geometry& g = c.geom;
  const std::size_t ca = pass_channels(), cb = transformed_channels(), hw = dy.shape().spatial();
  const MatrixX dyb = detail::channel_matrix(dy, ca, cb);
  const MatrixX& h = c.tape.out;

  MatrixX dh(2 * cb, g.positions());
  MatrixX dxb(cb, g.positions());
  for (std::size_t p = 0; p < g.positions(); ++p) {
    const double dld = dlogdet[p / hw];
    for (std::size_t i = 0; i < cb; ++i) {
      const double s = sigmoid(h(i, p) + 2.0);
      dh(i, p) = dyb(i, p) * c.xb(i, p) * s * (1.0 - s) + dld * (1.0 - s);
      dh(cb + i, p) = dyb(i, p);
      dxb(i, p) = dyb(i, p) * s;
    }
  }

  // Back through the conditioner, last conv first.
  std::vector<std::size_t> offsets(convs_.size());
  for (std::size_t i = 1; i < convs_.size(); ++i)
    offsets[i] = offsets[i - 1] + convs_[i - 1].parameter_count();
  MatrixX dz = std::move(dh);
  for (std::size_t i = convs_.size(); i-- > 0;) {
    const ConvShape& s = convs_[i];
    const ConvView v = conv_view(parameters().subspan(offsets[i]), s);
    const MatrixX& col = c.tape.col[i];
    Eigen::Map<RowMatrixX> gw(grad.data() + offsets[i], static_cast<Eigen::Index>(s.out),
                              static_cast<Eigen::Index>(s.in * s.kernel * s.kernel));
    gw.noalias() += dz * col.transpose();
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets[i] + s.weight_count(),
                                   static_cast<Eigen::Index>(s.out));
    gb += dz.rowwise().sum();
    const MatrixX dcol = v.w.transpose() * dz;
    MatrixX din = col2im(dcol, g, s.kernel, s.in);
    if (i > 0) din = din.cwiseProduct((c.tape.act[i - 1].array() > 0.0).cast<double>().matrix());
    dz = std::move(din);
  }

  Tensor4 dx = dy;
  MatrixX dxa = detail::channel_matrix(dy, 0, ca) + dz;
  detail::write_channels(dxa, dx, 0);
  detail::write_channels(dxb, dx, ca);
  return dx;
}

}  // namespace cdflow::flow
