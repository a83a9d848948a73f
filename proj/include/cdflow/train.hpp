#pragma once

// Datasets and the maximum-likelihood training loop.
//
// Randomness is drawn from named streams of the run seed: "data" (dataset
// generation, index 0 train / 1 held-out), "init" (model), "batch" and
// "dequant" (indexed by step) and "dequant_eval" (indexed by sample). A run
// resumed from a checkpoint therefore replays the same batches.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cdflow/error.hpp"
#include "cdflow/flow.hpp"
#include "cdflow/optim.hpp"
#include "json.hpp"

namespace cdflow::train {

struct DatasetSpec {
  std::string kind = "checkerboard2d";  // checkerboard2d moons2d circles2d periodic_texture gaussian file
  std::size_t size = 20000;
  std::size_t channels = 1, height = 16, width = 16;  // textures and gaussian
  std::string path;                                   // file datasets
};

nlohmann::json to_json(const DatasetSpec& s);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

// Samples are stored flat in (C, H, W) order. Quantized datasets hold integer
// levels 0..255 and are dequantized to (level + u) / 256 when batched.
class Dataset {
 public:
  Dataset(std::string kind, flow::Shape sample_shape, std::vector<double> values, bool quantized);

  const std::string& kind() const { return kind_; }
  std::size_t size() const { return size_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t dims() const { return shape_.per_sample(); }
  bool quantized() const { return quantized_; }
  double bits_per_value() const { return quantized_ ? 8.0 : 0.0; }
  bool is_toy() const { return dims() == 2 && shape_.spatial() == 1; }

  std::span<const double> sample(std::size_t i) const;

  // Gathers the indexed samples. `noise` holds one dequantization offset in
  // [0, 1) per batch value and is ignored for continuous data; when empty,
  // quantized values sit at the bin centre.
  flow::Tensor4 batch(std::span<const std::size_t> indices,
                      std::span<const double> noise = {}) const;

 private:
  std::string kind_;
  flow::Shape shape_;
  std::size_t size_;
  std::vector<double> values_;
  bool quantized_;
};

// split 0 is the training set, 1 the held-out set.
Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed, std::uint64_t split = 0);

// Writes a file dataset (raw u8 plus a .json sidecar with count, C, H, W).
void write_u8_dataset(const std::filesystem::path& path, std::size_t channels, std::size_t height,
                      std::size_t width, std::span<const std::uint8_t> pixels);

// A tileable texture: sum of integer-frequency sinusoids, so the continuous
// field satisfies f(y + H, x) = f(y, x + W) = f(y, x).
struct TextureRecipe {
  struct Wave {
    int ky, kx;
    double amplitude, phase;
  };
  std::vector<Wave> waves;

  double field(double y, double x, std::size_t height, std::size_t width) const;  // in [-1, 1]
  static TextureRecipe random(rng::Engine& g);
};

// Mean nll of a full-covariance Gaussian fitted by maximum likelihood on
// `fit`, evaluated on `eval` (continuous data only).
double gaussian_baseline_nll(const Dataset& fit, const Dataset& eval);

// kCosine decays the learning rate as lr * (1 + cos(pi t / steps)) / 2.
enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  flow::ModelConfig model;
  double lr = 1e-3;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  std::size_t batch = 256;
  std::size_t steps = 5000;
  std::uint64_t seed = 0;
  bool spectral_norm = true;
  bool channel_aware_lr = true;
  double spectral_target = 1.05;
  DatasetSpec dataset;
  std::size_t eval_size = 5000;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t log_every = 1;
  std::size_t threads = 0;           // 0: thread_count()
};

// Defaults for the dataset kind; the model shape always follows the data.
TrainConfig default_train_config(const std::string& dataset_kind);
nlohmann::json to_json(const TrainConfig& c);
// Unknown keys are rejected; missing keys take default_train_config values.
TrainConfig train_config_from_json(const nlohmann::json& j);
void fit_model_to_dataset(flow::ModelConfig& model, const Dataset& data);
// Learning rate used for the optimizer step that follows `completed` steps.
double learning_rate(const TrainConfig& c, std::size_t completed);

struct MetricsRow {
  std::size_t step = 0;  // optimizer steps completed
  double nll = 0.0, bpd = 0.0, grad_norm = 0.0, max_sigma = 0.0, wall_ms = 0.0;
};

std::string metrics_header();
std::string to_csv(const MetricsRow& r);

struct TrainState {
  flow::FlowModel model;
  optim::AdamState adam;
  std::size_t step = 0;
};

TrainState initial_state(const TrainConfig& config, const Dataset& data);

// Raised when a step yields a non-finite loss or gradient; carries the
// per-layer log-dets of the batch.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, nlohmann::json diagnostics)
      : NumericalError(what), diagnostics_(std::move(diagnostics)) {}
  const nlohmann::json& diagnostics() const { return diagnostics_; }

 private:
  nlohmann::json diagnostics_;
};

// Data-dependent ActNorm init on the batch of the current step (no-op once
// initialized).
void ensure_initialized(TrainState& state, const Dataset& data, const TrainConfig& config);

struct TrainHooks {
  std::filesystem::path out_dir;  // empty: no files
  std::function<void(const MetricsRow&)> on_row;
};

// Runs steps [state.step, config.steps). Metrics rows are appended to
// out_dir/metrics.csv and checkpoints written to out_dir/checkpoint.
// A non-finite loss or gradient aborts with NumericalError after dumping the
// per-layer log-dets of the offending batch to out_dir/diagnostics.json.
std::vector<MetricsRow> train(TrainState& state, const Dataset& data, const TrainConfig& config,
                              const TrainHooks& hooks = {});

// One step, exposed for tests: returns the row and updates the state.
MetricsRow train_step(TrainState& state, const Dataset& data, const TrainConfig& config);

void save_state(const TrainState& state, const TrainConfig& config,
                const std::filesystem::path& dir);
struct LoadedState {
  TrainState state;
  TrainConfig config;
};
LoadedState load_state(const std::filesystem::path& dir);

enum class Metric { kNll, kBpd };
Metric metric_from_string(const std::string& s);

// Mean metric over the whole dataset. Dequantization offsets come from
// stream(eval_seed, "dequant_eval", sample), so the result does not depend on
// batch partitioning or call count.
double evaluate(const flow::FlowModel& model, const Dataset& data, Metric metric,
                std::uint64_t eval_seed = 0, std::size_t batch = 500, std::size_t threads = 1);

}  // namespace cdflow::train
