#pragma once

// Multi-scale flow: L blocks of K steps (ActNorm -> invertible 1x1 linear ->
// affine coupling), a squeeze before each block and a split after every block
// but the last. Split-off channels are scored against the standard normal
// directly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cdflow/layers.hpp"
#include "cdflow/tensor.hpp"
#include "json.hpp"

namespace cdflow::flow {

// Starting point of the 1x1 layers. kShift begins each one at the cyclic
// channel shift by floor(n/2), so the next coupling updates the channels the
// previous one passed through; kIdentity begins at I. Both add init_noise.
enum class MixingInit { kIdentity, kShift };
std::string to_string(MixingInit m);
MixingInit mixing_init_from_string(const std::string& s);

struct ModelConfig {
  std::size_t channels = 1, height = 16, width = 16;
  std::size_t blocks = 2;   // L
  std::size_t steps = 8;    // K
  std::size_t m = 2;        // diagonal factors per CD chain
  std::size_t hidden = 64;  // conditioner width
  std::size_t kernel = 3;   // conditioner kernel size
  bool squeeze = true;
  LinearKind linear = LinearKind::kCD;
  double init_noise = 0.01;
  MixingInit mixing_init = MixingInit::kShift;

  std::size_t dims() const { return channels * height * width; }
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ForwardResult {
  std::vector<Tensor4> z;       // split-off parts in order, final output last
  std::vector<double> logdet;   // per sample
};

struct LossGrad {
  double loss = 0.0;            // mean nll in nats per sample
  std::vector<double> grad;     // flat, FlowModel::parameters() order
};

class FlowModel {
 public:
  FlowModel(const ModelConfig& config, std::uint64_t seed);
  FlowModel(const FlowModel& other);
  FlowModel& operator=(const FlowModel& other);
  FlowModel(FlowModel&&) = default;
  FlowModel& operator=(FlowModel&&) = default;

  const ModelConfig& config() const { return config_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  // Data-dependent ActNorm init, layer by layer on this batch.
  void initialize(const Tensor4& x);
  bool initialized() const;

  ForwardResult forward(const Tensor4& x) const;
  Tensor4 inverse(const std::vector<Tensor4>& z) const;
  std::vector<Shape> latent_shapes(std::size_t batch) const;

  // Per-sample -log p(x) in nats.
  std::vector<double> nll_per_sample(const Tensor4& x) const;
  double nll(const Tensor4& x) const;
  double bpd(const Tensor4& x, double bits_per_value) const;

  // Mean nll and its gradient. The batch is cut into fixed shards whose
  // results are summed in order, so the value does not depend on threads.
  LossGrad loss_and_grad(const Tensor4& x, std::size_t threads = 1) const;

  // z ~ N(0, temperature^2 I) from the "sampling" stream, then inverted.
  Tensor4 sample(std::size_t count, double temperature, std::uint64_t seed) const;

  std::size_t parameter_count() const;
  std::size_t free_parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> p);
  // Per-parameter lr multiplier: min(1, 16/n) on CD chain parameters when
  // channel_aware, 1 elsewhere.
  std::vector<double> lr_scales(bool channel_aware) const;

  void spectral_rescale(double target);
  double max_sigma() const;

  // Mean log-det of each layer on x, for diagnostics.
  std::vector<std::pair<std::string, double>> layer_logdets(const Tensor4& x) const;

 private:
  enum class OpKind { kLayer, kSqueeze, kSplit };
  struct Op {
    OpKind kind;
    std::size_t layer = 0;
  };

  ModelConfig config_;
  std::vector<Op> ops_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

inline constexpr std::size_t kShardSize = 16;

std::size_t thread_count();  // CDFLOW_THREADS, else hardware concurrency

// Checkpoint directory: manifest.json plus one blob per layer (CDC1 for
// chains, raw little-endian f64 otherwise). `extra` is stored verbatim in the
// manifest under "state".
void save_model(const FlowModel& model, const std::filesystem::path& dir, std::uint64_t seed,
                const nlohmann::json& extra = nlohmann::json::object());
struct LoadedModel {
  FlowModel model;
  std::uint64_t seed;
  nlohmann::json state;
};
LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace cdflow::flow
