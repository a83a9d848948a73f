#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cdflow/binary_io.hpp"
#include "cdflow/train.hpp"

namespace cdflow::train {

namespace {

constexpr double kNoise = 0.05;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::vector<double> checkerboard(std::size_t n, rng::Engine& g) {
  // The eight cells (i, j) of the 4x4 grid on [-2, 2]^2 with i + j even.
  std::vector<double> v(2 * n);
  std::uniform_int_distribution<int> cell(0, 7);
  for (std::size_t s = 0; s < n; ++s) {
    const int c = cell(g);
    const int j = c / 2;
    const int i = 2 * (c % 2) + (j % 2);
    v[2 * s] = -2.0 + i + rng::uniform(g);
    v[2 * s + 1] = -2.0 + j + rng::uniform(g);
  }
  return v;
}

std::vector<double> moons(std::size_t n, rng::Engine& g) {
  std::vector<double> v(2 * n);
  for (std::size_t s = 0; s < n; ++s) {
    const double t = std::numbers::pi * rng::uniform(g);
    double x = std::cos(t), y = std::sin(t);
    if (s % 2 == 1) x = 1.0 - x, y = 0.5 - y;
    v[2 * s] = x - 0.5 + kNoise * rng::normal(g);
    v[2 * s + 1] = y - 0.25 + kNoise * rng::normal(g);
  }
  return v;
}

std::vector<double> circles(std::size_t n, rng::Engine& g) {
  std::vector<double> v(2 * n);
  for (std::size_t s = 0; s < n; ++s) {
    const double t = kTwoPi * rng::uniform(g);
    const double r = s % 2 == 0 ? 1.0 : 0.5;
    v[2 * s] = r * std::cos(t) + kNoise * rng::normal(g);
    v[2 * s + 1] = r * std::sin(t) + kNoise * rng::normal(g);
  }
  return v;
}

std::vector<double> textures(std::size_t n, const flow::Shape& shape, rng::Engine& g) {
  std::vector<double> v;
  v.reserve(n * shape.per_sample());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const TextureRecipe r = TextureRecipe::random(g);
      for (std::size_t y = 0; y < shape.height; ++y)
        for (std::size_t x = 0; x < shape.width; ++x) {
          const double f = r.field(double(y), double(x), shape.height, shape.width);
          v.push_back(std::clamp(std::round(127.5 + 127.5 * f), 0.0, 255.0));
        }
    }
  return v;
}

Dataset load_file(const DatasetSpec& spec, std::uint64_t split) {
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(io::read_text(spec.path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset sidecar: " + std::string(e.what()));
  }
  const auto count = side.at("count").get<std::size_t>();
  const flow::Shape shape{1, side.at("channels").get<std::size_t>(),
                          side.at("height").get<std::size_t>(), side.at("width").get<std::size_t>()};
  const auto bytes = io::read_file(spec.path);
  const std::size_t d = shape.per_sample();
  if (count == 0 || d == 0 || bytes.size() != count * d)
    throw ConfigError("dataset file " + spec.path + ": size does not match its sidecar");
  // The last tenth (at least one sample) is held out.
  const std::size_t held = std::max<std::size_t>(1, count / 10);
  const std::size_t first = split == 0 ? 0 : (count > 1 ? count - held : 0);
  const std::size_t n = split == 0 ? (count > 1 ? count - held : 1) : std::min(held, count);
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < n * d; ++i)
    v[i] = static_cast<unsigned char>(bytes[first * d + i]);
  return Dataset("file", shape, std::move(v), true);
}

}  // namespace

nlohmann::json to_json(const DatasetSpec& s) {
  nlohmann::json j = {{"kind", s.kind}, {"size", s.size}};
  if (s.kind == "periodic_texture" || s.kind == "gaussian") {
    j["channels"] = s.channels;
    j["height"] = s.height;
    j["width"] = s.width;
  }
  if (s.kind == "file") j["path"] = s.path;
  return j;
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    DatasetSpec s;
    s.kind = j.get<std::string>();
    return s;
  }
  static const std::vector<std::string> keys = {"kind", "size", "channels", "height", "width",
                                                "path"};
  DatasetSpec s;
  try {
    for (const auto& [k, _] : j.items())
      if (std::find(keys.begin(), keys.end(), k) == keys.end())
        throw ConfigError("dataset spec: unknown key '" + k + "'");
    s.kind = j.value("kind", s.kind);
    s.size = j.value("size", s.size);
    s.channels = j.value("channels", s.channels);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.path = j.value("path", s.path);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset spec: " + std::string(e.what()));
  }
  return s;
}

Dataset::Dataset(std::string kind, flow::Shape sample_shape, std::vector<double> values,
                 bool quantized)
    : kind_(std::move(kind)), shape_(sample_shape), values_(std::move(values)),
      quantized_(quantized) {
  shape_.batch = 1;
  const std::size_t d = shape_.per_sample();
  if (d == 0 || values_.size() % d != 0) throw DimensionError("dataset: ragged sample storage");
  size_ = values_.size() / d;
  for (double v : values_)
    if (!std::isfinite(v)) throw NonFiniteError();
}

std::span<const double> Dataset::sample(std::size_t i) const {
  if (i >= size_) throw DimensionError("dataset: sample index out of range");
  return std::span(values_).subspan(i * dims(), dims());
}

flow::Tensor4 Dataset::batch(std::span<const std::size_t> indices,
                             std::span<const double> noise) const {
  const std::size_t d = dims();
  if (!noise.empty() && noise.size() != indices.size() * d)
    throw DimensionError("dataset batch: noise size mismatch");
  flow::Tensor4 t(indices.size(), shape_.channels, shape_.height, shape_.width);
  auto out = t.data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto s = sample(indices[b]);
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t o = b * d + k;
      out[o] = quantized_ ? (s[k] + (noise.empty() ? 0.5 : noise[o])) / 256.0 : s[k];
    }
  }
  return t;
}

Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed, std::uint64_t split) {
  if (spec.kind == "file") return load_file(spec, split);
  if (spec.size == 0) throw ConfigError("dataset size must be positive");
  rng::Engine g = rng::stream(seed, "data", split);
  const std::size_t n = spec.size;
  const flow::Shape toy{1, 2, 1, 1};
  const flow::Shape image{1, spec.channels, spec.height, spec.width};
  if (spec.kind == "checkerboard2d") return Dataset(spec.kind, toy, checkerboard(n, g), false);
  if (spec.kind == "moons2d") return Dataset(spec.kind, toy, moons(n, g), false);
  if (spec.kind == "circles2d") return Dataset(spec.kind, toy, circles(n, g), false);
  if (image.per_sample() == 0) throw ConfigError("dataset shape must be positive");
  if (spec.kind == "periodic_texture")
    return Dataset(spec.kind, image, textures(n, image, g), true);
  if (spec.kind == "gaussian") {
    std::vector<double> v(n * image.per_sample());
    for (double& x : v) x = rng::normal(g);
    return Dataset(spec.kind, image, std::move(v), false);
  }
  throw ConfigError("unknown dataset kind '" + spec.kind + "'");
}

void write_u8_dataset(const std::filesystem::path& path, std::size_t channels, std::size_t height,
                      std::size_t width, std::span<const std::uint8_t> pixels) {
  const std::size_t d = channels * height * width;
  if (d == 0 || pixels.size() % d != 0) throw DimensionError("u8 dataset: ragged pixel buffer");
  io::write_file(path, std::span(reinterpret_cast<const char*>(pixels.data()), pixels.size()));
  const nlohmann::json side = {{"count", pixels.size() / d},
                               {"channels", channels},
                               {"height", height},
                               {"width", width}};
  io::write_text(path.string() + ".json", side.dump(2) + "\n");
}

double TextureRecipe::field(double y, double x, std::size_t height, std::size_t width) const {
  double s = 0.0, total = 0.0;
  for (const Wave& w : waves) {
    s += w.amplitude * std::sin(kTwoPi * (w.ky * y / double(height) + w.kx * x / double(width)) +
                                w.phase);
    total += w.amplitude;
  }
  return total > 0.0 ? s / total : 0.0;
}

TextureRecipe TextureRecipe::random(rng::Engine& g) {
  std::uniform_int_distribution<int> count(2, 5), freq(-3, 3);
  TextureRecipe r;
  const int k = count(g);
  while (int(r.waves.size()) < k) {
    const int ky = freq(g), kx = freq(g);
    if (ky == 0 && kx == 0) continue;
    r.waves.push_back({ky, kx, rng::uniform(g, 0.2, 1.0), rng::uniform(g, 0.0, kTwoPi)});
  }
  return r;
}

double gaussian_baseline_nll(const Dataset& fit, const Dataset& eval) {
  if (fit.quantized() || eval.quantized() || fit.dims() != eval.dims())
    throw ConfigError("gaussian baseline needs matching continuous datasets");
  const std::size_t d = fit.dims();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 0; i < fit.size(); ++i)
    mu += Eigen::Map<const Eigen::VectorXd>(fit.sample(i).data(), d);
  mu /= double(fit.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < fit.size(); ++i) {
    const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(fit.sample(i).data(), d) - mu;
    cov += r * r.transpose();
  }
  cov /= double(fit.size());
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("gaussian baseline: singular covariance");
  const Eigen::MatrixXd l = llt.matrixL();
  const double half_logdet = l.diagonal().array().log().sum();
  double total = 0.0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(eval.sample(i).data(), d) - mu;
    total += 0.5 * llt.matrixL().solve(r).squaredNorm();
  }
  return total / double(eval.size()) + half_logdet + 0.5 * double(d) * std::log(kTwoPi);
}

}  // namespace cdflow::train
