#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <numbers>
#include <thread>

#include "cdflow/error.hpp"
#include "cdflow/flow.hpp"

namespace cdflow::flow {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double max_singular_value(const linalg::Matrix& a) {
  // Power iteration on A^T A; the layers are at most a few dozen channels.
  const std::size_t n = a.cols();
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n))), av(n), w(n);
  double s = 0.0;
  for (int it = 0; it < 200; ++it) {
    linalg::matvec(a, v, av);
    linalg::matvec(a.transposed(), av, w);
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
    s = norm;
  }
  return std::sqrt(s);
}

// Multiplies the first circulant spectrum by that of the cyclic shift y_i = x_{i-s}.
void shift_first_circulant(structured::CDChain& chain, std::size_t s) {
  const std::size_t n = chain.dim();
  if (chain.circulant_count() == 0 || s % n == 0) return;
  auto p = chain.spectrum(0);
  for (std::size_t k = 1; 2 * k < n; ++k) {
    const double th = -2.0 * std::numbers::pi * double(k * s % n) / double(n);
    const std::complex<double> z = std::complex<double>(p[2 * k - 1], p[2 * k]) * std::polar(1.0, th);
    p[2 * k - 1] = z.real();
    p[2 * k] = z.imag();
  }
  if (n % 2 == 0 && s % 2 == 1) p[n - 1] = -p[n - 1];
}

}  // namespace

std::string to_string(MixingInit m) { return m == MixingInit::kShift ? "shift" : "identity"; }

MixingInit mixing_init_from_string(const std::string& s) {
  if (s == "shift") return MixingInit::kShift;
  if (s == "identity") return MixingInit::kIdentity;
  throw ConfigError("unknown mixing_init '" + s + "' (expected shift or identity)");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"channels", c.channels}, {"height", c.height},   {"width", c.width},
          {"blocks", c.blocks},     {"steps", c.steps},     {"m", c.m},
          {"hidden", c.hidden},     {"kernel", c.kernel},   {"squeeze", c.squeeze},
          {"linear", to_string(c.linear)}, {"init_noise", c.init_noise},
          {"mixing_init", to_string(c.mixing_init)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.channels = j.value("channels", c.channels);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.blocks = j.value("blocks", c.blocks);
    c.steps = j.value("steps", c.steps);
    c.m = j.value("m", c.m);
    c.hidden = j.value("hidden", c.hidden);
    c.kernel = j.value("kernel", c.kernel);
    c.squeeze = j.value("squeeze", c.squeeze);
    c.linear = linear_kind_from_string(j.value("linear", to_string(c.linear)));
    c.init_noise = j.value("init_noise", c.init_noise);
    c.mixing_init = mixing_init_from_string(j.value("mixing_init", to_string(c.mixing_init)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

FlowModel::FlowModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  const ModelConfig& c = config_;
  if (c.channels == 0 || c.height == 0 || c.width == 0 || c.blocks == 0 || c.steps == 0 ||
      c.m == 0 || c.hidden == 0)
    throw ConfigError("model config: all sizes must be positive");
  std::size_t ch = c.channels, h = c.height, w = c.width;
  for (std::size_t l = 0; l < c.blocks; ++l) {
    if (c.squeeze) {
      if (h % 2 != 0 || w % 2 != 0)
        throw ConfigError("model config: spatial size not divisible for block " +
                          std::to_string(l));
      ops_.push_back({OpKind::kSqueeze});
      ch *= 4, h /= 2, w /= 2;
    }
    if (ch < 2) throw ConfigError("model config: coupling needs at least 2 channels");
    for (std::size_t k = 0; k < c.steps; ++k) {
      const std::uint64_t index = layers_.size();
      layers_.push_back(std::make_unique<ActNorm>(ch));
      ops_.push_back({OpKind::kLayer, layers_.size() - 1});

      rng::Engine g = rng::stream(seed, "init", index + 1);
      const std::size_t shift = c.mixing_init == MixingInit::kShift ? ch / 2 : 0;
      if (c.linear == LinearKind::kCD) {
        auto chain = structured::CDChain::near_identity(ch, c.m, c.init_noise, g);
        shift_first_circulant(chain, shift);
        layers_.push_back(std::make_unique<CDConv>(std::move(chain)));
      } else {
        layers_.push_back(std::make_unique<MatrixConv>(c.linear, ch, c.init_noise, g, shift));
      }
      ops_.push_back({OpKind::kLayer, layers_.size() - 1});

      rng::Engine gc = rng::stream(seed, "init", index + 2);
      layers_.push_back(std::make_unique<AffineCoupling>(ch, c.hidden, c.kernel, gc));
      ops_.push_back({OpKind::kLayer, layers_.size() - 1});
    }
    if (l + 1 < c.blocks) {
      ops_.push_back({OpKind::kSplit});
      ch /= 2;
    }
  }
}

FlowModel::FlowModel(const FlowModel& other) : config_(other.config_), ops_(other.ops_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

FlowModel& FlowModel::operator=(const FlowModel& other) {
  if (this != &other) {
    FlowModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void FlowModel::initialize(const Tensor4& x) {
  Tensor4 cur = x;
  std::vector<double> ld(x.batch(), 0.0);
  for (const Op& op : ops_) {
    switch (op.kind) {
      case OpKind::kSqueeze: cur = squeeze(cur); break;
      case OpKind::kSplit: cur = split_channels(cur, cur.channels() / 2).first; break;
      case OpKind::kLayer: {
        if (auto* a = dynamic_cast<ActNorm*>(layers_[op.layer].get()); a && !a->initialized())
          a->initialize(cur);
        cur = layers_[op.layer]->forward(cur, ld, nullptr);
        break;
      }
    }
  }
}

bool FlowModel::initialized() const {
  for (const auto& l : layers_)
    if (auto* a = dynamic_cast<const ActNorm*>(l.get()); a && !a->initialized()) return false;
  return true;
}

ForwardResult FlowModel::forward(const Tensor4& x) const {
  if (x.channels() != config_.channels || x.height() != config_.height ||
      x.width() != config_.width)
    throw DimensionError("model: input shape does not match the model (expected C=" +
                         std::to_string(config_.channels) + ", H=" +
                         std::to_string(config_.height) + ", W=" +
                         std::to_string(config_.width) + ")");
  ForwardResult r;
  r.logdet.assign(x.batch(), 0.0);
  Tensor4 cur = x;
  for (const Op& op : ops_) {
    switch (op.kind) {
      case OpKind::kSqueeze: cur = squeeze(cur); break;
      case OpKind::kSplit: {
        auto [keep, out] = split_channels(cur, cur.channels() / 2);
        r.z.push_back(std::move(out));
        cur = std::move(keep);
        break;
      }
      case OpKind::kLayer: cur = layers_[op.layer]->forward(cur, r.logdet, nullptr); break;
    }
  }
  r.z.push_back(std::move(cur));
  return r;
}

Tensor4 FlowModel::inverse(const std::vector<Tensor4>& z) const {
  const auto shapes = latent_shapes(z.empty() ? 0 : z.front().batch());
  if (z.size() != shapes.size()) throw DimensionError("model inverse: wrong number of parts");
  for (std::size_t i = 0; i < z.size(); ++i)
    if (z[i].shape() != shapes[i]) throw DimensionError("model inverse: part shape mismatch");
  Tensor4 cur = z.back();
  std::size_t next = z.size() - 1;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    switch (it->kind) {
      case OpKind::kSqueeze: cur = unsqueeze(cur); break;
      case OpKind::kSplit: cur = concat_channels(cur, z[--next]); break;
      case OpKind::kLayer: cur = layers_[it->layer]->inverse(cur); break;
    }
  }
  return cur;
}

std::vector<Shape> FlowModel::latent_shapes(std::size_t batch) const {
  std::vector<Shape> out;
  Shape s{batch, config_.channels, config_.height, config_.width};
  for (const Op& op : ops_) {
    if (op.kind == OpKind::kSqueeze) s = {batch, s.channels * 4, s.height / 2, s.width / 2};
    if (op.kind == OpKind::kSplit) {
      Shape o = s;
      o.channels = s.channels - s.channels / 2;
      out.push_back(o);
      s.channels /= 2;
    }
  }
  out.push_back(s);
  return out;
}

std::vector<double> FlowModel::nll_per_sample(const Tensor4& x) const {
  const ForwardResult r = forward(x);
  std::vector<double> out(x.batch());
  for (std::size_t b = 0; b < x.batch(); ++b) {
    double q = 0.0;
    for (const auto& part : r.z)
      for (double v : part.sample(b)) q += v * v;
    out[b] = 0.5 * q + static_cast<double>(config_.dims()) * kHalfLog2Pi - r.logdet[b];
  }
  return out;
}

double FlowModel::nll(const Tensor4& x) const {
  const auto v = nll_per_sample(x);
  double s = 0.0;
  for (double e : v) s += e;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double FlowModel::bpd(const Tensor4& x, double bits_per_value) const {
  return nll(x) / (static_cast<double>(config_.dims()) * std::numbers::ln2) + bits_per_value;
}

LossGrad FlowModel::loss_and_grad(const Tensor4& x, std::size_t threads) const {
  const std::size_t batch = x.batch();
  if (batch == 0) throw DimensionError("loss_and_grad: empty batch");
  const std::size_t shards = (batch + kShardSize - 1) / kShardSize;
  const double inv_b = 1.0 / static_cast<double>(batch);
  const std::size_t nparam = parameter_count();

  std::vector<std::size_t> offsets(layers_.size() + 1, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    offsets[i + 1] = offsets[i] + layers_[i]->parameters().size();

  std::vector<double> shard_loss(shards, 0.0);
  std::vector<std::vector<double>> shard_grad(shards);
  std::vector<std::exception_ptr> errors(shards);

  auto run_shard = [&](std::size_t s) {
    try {
      const std::size_t begin = s * kShardSize;
      const std::size_t count = std::min(kShardSize, batch - begin);
      Tensor4 cur = slice_batch(x, begin, count);
      std::vector<double> ld(count, 0.0);
      std::vector<std::unique_ptr<LayerCache>> caches(ops_.size());
      std::vector<Tensor4> parts;
      for (std::size_t i = 0; i < ops_.size(); ++i) {
        const Op& op = ops_[i];
        if (op.kind == OpKind::kSqueeze) {
          cur = squeeze(cur);
        } else if (op.kind == OpKind::kSplit) {
          auto [keep, out] = split_channels(cur, cur.channels() / 2);
          parts.push_back(std::move(out));
          cur = std::move(keep);
        } else {
          cur = layers_[op.layer]->forward(cur, ld, &caches[i]);
        }
      }
      parts.push_back(std::move(cur));

      double loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        double q = 0.0;
        for (const auto& part : parts)
          for (double v : part.sample(b)) q += v * v;
        loss += 0.5 * q + static_cast<double>(config_.dims()) * kHalfLog2Pi - ld[b];
      }
      shard_loss[s] = loss * inv_b;

      for (auto& part : parts)
        for (double& v : part.data()) v *= inv_b;
      const std::vector<double> dld(count, -inv_b);
      std::vector<double> grad(nparam, 0.0);
      Tensor4 d = std::move(parts.back());
      std::size_t next = parts.size() - 1;
      for (std::size_t i = ops_.size(); i-- > 0;) {
        const Op& op = ops_[i];
        if (op.kind == OpKind::kSqueeze) {
          d = unsqueeze(d);
        } else if (op.kind == OpKind::kSplit) {
          d = concat_channels(d, parts[--next]);
        } else {
          const std::size_t l = op.layer;
          d = layers_[l]->backward(*caches[i], d, dld,
                                   std::span(grad).subspan(offsets[l], offsets[l + 1] - offsets[l]));
          caches[i].reset();
        }
      }
      shard_grad[s] = std::move(grad);
    } catch (...) {
      errors[s] = std::current_exception();
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, shards));
  if (workers == 1) {
    for (std::size_t s = 0; s < shards; ++s) run_shard(s);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < shards; s += workers) run_shard(s);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  LossGrad out;
  out.grad.assign(nparam, 0.0);
  for (std::size_t s = 0; s < shards; ++s) {
    out.loss += shard_loss[s];
    for (std::size_t i = 0; i < nparam; ++i) out.grad[i] += shard_grad[s][i];
  }
  return out;
}

Tensor4 FlowModel::sample(std::size_t count, double temperature, std::uint64_t seed) const {
  const auto shapes = latent_shapes(count);
  if (count == 0) return Tensor4(count, config_.channels, config_.height, config_.width);
  rng::Engine g = rng::stream(seed, "sampling");
  std::vector<Tensor4> z;
  for (const auto& s : shapes) {
    Tensor4 t(s);
    if (temperature != 0.0)
      for (double& v : t.data()) v = temperature * rng::normal(g);
    z.push_back(std::move(t));
  }
  return inverse(z);
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->parameters().size();
  return n;
}

std::size_t FlowModel::free_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->free_parameter_count();
  return n;
}

std::vector<double> FlowModel::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    const auto p = std::as_const(*l).parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void FlowModel::set_parameters(std::span<const double> p) {
  if (p.size() != parameter_count()) throw DimensionError("set_parameters: size mismatch");
  std::size_t off = 0;
  for (auto& l : layers_) {
    auto dst = l->parameters();
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
}

std::vector<double> FlowModel::lr_scales(bool channel_aware) const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    double scale = 1.0;
    if (const auto* cd = dynamic_cast<const CDConv*>(l.get()); cd && channel_aware)
      scale = std::min(1.0, 16.0 / static_cast<double>(cd->dim()));
    out.insert(out.end(), l->parameters().size(), scale);
  }
  return out;
}

void FlowModel::spectral_rescale(double target) {
  for (auto& l : layers_)
    if (auto* cd = dynamic_cast<CDConv*>(l.get()))
      structured::spectral_rescale_in_place(cd->chain(), target);
}

double FlowModel::max_sigma() const {
  double best = 0.0;
  for (const auto& l : layers_) {
    if (const auto* cd = dynamic_cast<const CDConv*>(l.get())) {
      for (double s : structured::factor_sigma_max(cd->chain())) best = std::max(best, s);
    } else if (const auto* mc = dynamic_cast<const MatrixConv*>(l.get())) {
      best = std::max(best, max_singular_value(mc->matrix()));
    }
  }
  return best;
}

std::vector<std::pair<std::string, double>> FlowModel::layer_logdets(const Tensor4& x) const {
  std::vector<std::pair<std::string, double>> out;
  Tensor4 cur = x;
  for (const Op& op : ops_) {
    if (op.kind == OpKind::kSqueeze) {
      cur = squeeze(cur);
    } else if (op.kind == OpKind::kSplit) {
      cur = split_channels(cur, cur.channels() / 2).first;
    } else {
      std::vector<double> ld(cur.batch(), 0.0);
      cur = layers_[op.layer]->forward(cur, ld, nullptr);
      double mean = 0.0;
      for (double v : ld) mean += v;
      out.emplace_back(std::to_string(op.layer) + ":" + layers_[op.layer]->kind(),
                       ld.empty() ? 0.0 : mean / static_cast<double>(ld.size()));
    }
  }
  return out;
}

std::size_t thread_count() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CDFLOW_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) hw = std::min(hw, static_cast<std::size_t>(v));
  }
  return hw;
}

}  // namespace cdflow::flow
