#include <cmath>
#include <cstdio>
#include <limits>

#include "cdflow/bench.hpp"
#include "cdflow/error.hpp"

namespace cdflow::bench {

namespace {

flow::LinearKind kind_of(const std::string& type) {
  return flow::linear_kind_from_string(type);
}

double heldout_nll(const flow::FlowModel& model, const train::TrainConfig& c, std::size_t size) {
  train::DatasetSpec spec = c.dataset;
  spec.size = size;
  return train::evaluate(model, train::make_dataset(spec, c.seed, 1), train::Metric::kNll, c.seed);
}

}  // namespace

LayerStudyConfig default_layer_study() {
  // 8x8 single-channel textures: one squeeze gives 4-channel 1x1 layers, so
  // every type has more than 2m - 1 channels.
  LayerStudyConfig s;
  s.base = train::default_train_config("periodic_texture");
  s.base.dataset.height = s.base.dataset.width = 8;
  s.base.dataset.size = 2000;
  s.base.model.blocks = 1;
  s.base.model.steps = 4;
  s.base.model.hidden = 16;
  s.base.batch = 64;
  s.base.steps = 1500;
  s.eval_size = 1000;
  return s;
}

std::vector<LayerStudyRow> layer_type_study(
    const LayerStudyConfig& config, const std::function<void(const LayerStudyRow&)>& progress) {
  std::vector<LayerStudyRow> rows;
  for (std::uint64_t seed : config.seeds) {
    train::TrainConfig c = config.base;
    c.seed = seed;
    const train::Dataset data = train::make_dataset(c.dataset, seed);
    for (const auto& type : config.types) {
      c.model.linear = kind_of(type);
      LayerStudyRow row;
      row.type = type;
      row.seed = seed;
      train::TrainState st = train::initial_state(c, data);
      for (std::size_t i = 0; i < st.model.layer_count(); ++i)
        if (const auto* l = dynamic_cast<const flow::LinearLayer*>(&st.model.layer(i))) {
          row.channels = l->dim();
          row.linear_parameters = l->free_parameter_count();
          break;
        }
      try {
        train::train(st, data, c);
        row.heldout_nll = heldout_nll(st.model, c, config.eval_size);
      } catch (const NumericalError&) {
        row.diverged = true;
        row.heldout_nll = std::numeric_limits<double>::quiet_NaN();
      }
      rows.push_back(row);
      if (progress) progress(row);
    }
  }
  return rows;
}

std::string layer_study_csv(const std::vector<LayerStudyRow>& rows) {
  std::string out = "type,seed,channels,linear_parameters,heldout_nll,diverged\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%zu,%zu,%.17g,%d\n", r.type.c_str(),
                  static_cast<unsigned long long>(r.seed), r.channels, r.linear_parameters,
                  r.heldout_nll, r.diverged ? 1 : 0);
    out += buf;
  }
  return out;
}

MAblationConfig default_m_ablation() {
  MAblationConfig a;
  a.base = train::default_train_config("checkerboard2d");
  a.base.steps = 2000;
  return a;
}

std::vector<MAblationRow> m_ablation(const MAblationConfig& config,
                                     const std::function<void(const MAblationRow&)>& progress) {
  std::vector<MAblationRow> rows;
  for (std::size_t m : config.ms) {
    train::TrainConfig c = config.base;
    c.model.m = m;
    c.model.linear = flow::LinearKind::kCD;
    const train::Dataset data = train::make_dataset(c.dataset, c.seed);
    train::TrainState st = train::initial_state(c, data);
    MAblationRow row;
    row.m = m;
    for (std::size_t i = 0; i < st.model.layer_count(); ++i)
      if (const auto* cd = dynamic_cast<const flow::CDConv*>(&st.model.layer(i)))
        row.chain_parameters += cd->chain().parameter_count();
    train::train(st, data, c);
    row.heldout_nll = heldout_nll(st.model, c, config.eval_size);

    const std::size_t n = config.timing_n ? config.timing_n : st.model.config().channels;
    const std::size_t cols = config.timing_columns ? config.timing_columns : c.batch;
    rng::Engine g = rng::stream(c.seed, "m_ablation", m);
    const structured::CDChain chain = structured::CDChain::near_identity(n, m, 0.1, g);
    ColumnBatch x(n, cols);
    for (double& v : x.data()) v = rng::normal(g);
    const auto sum = [](const ColumnBatch& y) {
      double s = 0.0;
      for (double v : y.data()) s += v;
      return s;
    };
    row.forward_ms = time_op([&] { return sum(structured::chain_matvec(chain, x)) +
                                          structured::chain_logdet(chain); },
                             config.repeats).median_ms;
    row.inverse_ms =
        time_op([&] { return sum(structured::chain_inverse_apply(chain, x)); }, config.repeats).median_ms;
    row.logdet_ms = time_op([&] { return structured::chain_logdet(chain); }, config.repeats).median_ms;
    rows.push_back(row);
    if (progress) progress(row);
  }
  return rows;
}

std::string m_ablation_csv(const std::vector<MAblationRow>& rows) {
  std::string out = "m,chain_parameters,heldout_nll,forward_ms,inverse_ms,logdet_ms\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g\n", r.m, r.chain_parameters,
                  r.heldout_nll, r.forward_ms, r.inverse_ms, r.logdet_ms);
    out += buf;
  }
  return out;
}

}  // namespace cdflow::bench
