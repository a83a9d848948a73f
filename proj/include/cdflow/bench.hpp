#pragma once

// Dense and LU baselines, a median-of-repeats timer and the benchmark sweeps.
//
// Operations act on a fixed block of batch * spatial^2 column vectors. A
// "forward" is what a flow layer's forward pass computes: the product and the
// log-determinant. "inverse" includes whatever factorization the layer needs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "cdflow/linalg.hpp"
#include "cdflow/structured.hpp"
#include "cdflow/train.hpp"

namespace cdflow::bench {

using structured::ColumnBatch;

class DenseLayer {
 public:
  explicit DenseLayer(linalg::Matrix w);

  std::size_t dim() const { return w_.rows(); }
  const linalg::Matrix& matrix() const { return w_; }
  ColumnBatch forward(const ColumnBatch& x) const;
  double logdet() const;  // fresh LU factorization every call
  ColumnBatch inverse(const ColumnBatch& y) const;

 private:
  linalg::Matrix w_;
};

// W = P L U with unit-lower L and upper U.
class LULayer {
 public:
  static LULayer from_matrix(const linalg::Matrix& w);

  std::size_t dim() const { return lu_.rows(); }
  linalg::Matrix matrix() const;
  ColumnBatch forward(const ColumnBatch& x) const;
  double logdet() const;  // sum log|U_ii|
  ColumnBatch inverse(const ColumnBatch& y) const;

 private:
  linalg::Matrix lu_;              // L strictly below the diagonal, U on and above
  std::vector<std::size_t> perm_;  // row i of L U is row perm_[i] of W
};

struct Timing {
  double median_ms = 0.0;
  double mad_ms = 0.0;
  std::size_t repeats = 0;
  double checksum = 0.0;       // of the first timed run
  bool checksum_stable = true; // every run returned the same checksum
};

// Times `thunk` `repeats` times after `warmup` untimed calls. The thunk
// returns a checksum of its output so the work cannot be optimized away.
// A floor of one nanosecond keeps sub-resolution medians positive.
Timing time_op(const std::function<double()>& thunk, std::size_t repeats, std::size_t warmup = 3);

struct BenchRecord {
  std::string kind;  // dense, dense_lu, cdchain
  std::string op;    // forward, inverse, logdet
  std::size_t n = 0, spatial = 0, batch = 0;
  bool include_reshape = false;
  double median_ms = 0.0, mad_ms = 0.0;
  std::size_t repeats = 0;
  double checksum = 0.0;
};

struct BenchConfig {
  std::vector<std::size_t> n_grid{16, 32, 64, 96, 128, 256, 512, 1024};
  std::vector<std::string> kinds{"dense", "dense_lu", "cdchain"};
  std::vector<std::string> ops{"forward", "inverse", "logdet"};
  std::size_t m = 2;
  std::size_t batch = 16;
  std::size_t spatial = 8;
  std::size_t repeats = 30;
  std::size_t warmup = 3;
  bool include_reshape = false;
  // Optional sweep over spatial sizes at n = spatial_sweep_n.
  std::vector<std::size_t> spatial_sweep;
  std::size_t spatial_sweep_n = 96;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const BenchConfig& c);
BenchConfig bench_config_from_json(const nlohmann::json& j);

// One record per (n, kind, op), then per (spatial, kind, op) of the sweep.
std::vector<BenchRecord> bench_suite(const BenchConfig& config,
                                     const std::function<void(const BenchRecord&)>& progress = {});

// The three layer kinds built from one random chain, for equivalence checks.
struct BaselineSet {
  structured::CDChain chain;
  DenseLayer dense;
  LULayer lu;
};
BaselineSet make_baselines(std::size_t n, std::size_t m, std::uint64_t seed);

std::string csv_header();
void write_csv(std::ostream& out, const std::vector<BenchRecord>& records);
std::vector<BenchRecord> read_csv(std::istream& in);

// Least-squares slope of log(median_ms) against log(n) over the upper half
// of the distinct n values present for (kind, op).
double slope_fit(const std::vector<BenchRecord>& records, const std::string& kind,
                 const std::string& op);

// Linear-layer comparison: identical flows differing only in the 1x1 layer.
struct LayerStudyConfig {
  train::TrainConfig base;
  std::vector<std::string> types{"f", "l", "u", "lu", "dcd"};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t eval_size = 2000;
};
LayerStudyConfig default_layer_study();

struct LayerStudyRow {
  std::string type;
  std::uint64_t seed = 0;
  std::size_t channels = 0;           // n of the 1x1 layers
  std::size_t linear_parameters = 0;  // free parameters of one linear layer
  double heldout_nll = 0.0;
  bool diverged = false;
};
std::vector<LayerStudyRow> layer_type_study(
    const LayerStudyConfig& config, const std::function<void(const LayerStudyRow&)>& progress = {});
std::string layer_study_csv(const std::vector<LayerStudyRow>& rows);

// Free parameters of one n x n linear layer of the given type.
std::size_t linear_parameter_count(const std::string& type, std::size_t n, std::size_t m);

// The m sweep: one training run per m at a fixed step budget, plus layer
// timings at the model's own layer shape.
struct MAblationConfig {
  train::TrainConfig base;
  std::vector<std::size_t> ms{2, 3, 4, 5};
  std::size_t repeats = 50;
  std::size_t eval_size = 2000;
  std::size_t timing_n = 0;        // 0: the model's channel count
  std::size_t timing_columns = 0;  // 0: the training batch size
};
MAblationConfig default_m_ablation();

struct MAblationRow {
  std::size_t m = 0;
  std::size_t chain_parameters = 0;  // summed over all CD layers
  double heldout_nll = 0.0;
  double forward_ms = 0.0, inverse_ms = 0.0, logdet_ms = 0.0;
};
std::vector<MAblationRow> m_ablation(const MAblationConfig& config,
                                     const std::function<void(const MAblationRow&)>& progress = {});
std::string m_ablation_csv(const std::vector<MAblationRow>& rows);

}  // namespace cdflow::bench
