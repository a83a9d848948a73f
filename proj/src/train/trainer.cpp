#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "cdflow/binary_io.hpp"
#include "cdflow/train.hpp"

namespace cdflow::train {

namespace {

bool is_toy_kind(const std::string& k) {
  return k == "checkerboard2d" || k == "moons2d" || k == "circles2d";
}

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& keys,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError(where + ": unknown key '" + k + "'");
}

std::vector<std::size_t> batch_indices(const TrainConfig& c, std::size_t step, std::size_t size) {
  rng::Engine g = rng::stream(c.seed, "batch", step);
  std::uniform_int_distribution<std::size_t> pick(0, size - 1);
  std::vector<std::size_t> idx(c.batch);
  for (auto& i : idx) i = pick(g);
  return idx;
}

flow::Tensor4 step_batch(const Dataset& data, const TrainConfig& c, std::size_t step) {
  const auto idx = batch_indices(c, step, data.size());
  std::vector<double> noise;
  if (data.quantized()) {
    rng::Engine g = rng::stream(c.seed, "dequant", step);
    noise.resize(idx.size() * data.dims());
    for (double& u : noise) u = rng::uniform(g);
  }
  return data.batch(idx, noise);
}

std::size_t threads_for(const TrainConfig& c) {
  return c.threads == 0 ? flow::thread_count() : c.threads;
}

nlohmann::json layer_diagnostics(const flow::FlowModel& model, const flow::Tensor4& x) {
  nlohmann::json layers = nlohmann::json::array();
  try {
    for (const auto& [kind, ld] : model.layer_logdets(x))
      layers.push_back({{"layer", kind}, {"mean_logdet", std::isfinite(ld) ? nlohmann::json(ld)
                                                                           : nlohmann::json(std::to_string(ld))}});
  } catch (const std::exception& e) {
    layers.push_back({{"error", e.what()}});
  }
  return layers;
}

}  // namespace

TrainConfig default_train_config(const std::string& kind) {
  TrainConfig c;
  c.dataset.kind = kind;
  if (is_toy_kind(kind)) {
    c.model.channels = 2, c.model.height = c.model.width = 1;
    c.model.blocks = 1, c.model.steps = 8;
    c.model.kernel = 1, c.model.squeeze = false, c.model.hidden = 64;
    c.batch = 256, c.steps = 5000;
  } else {
    c.model.blocks = 2, c.model.steps = 8;
    c.model.kernel = 3, c.model.squeeze = true, c.model.hidden = 64;
    c.batch = 64, c.steps = 20000;
    c.dataset.size = 2000;
    c.eval_size = 500;
  }
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"model", flow::to_json(c.model)},
          {"lr", c.lr},
          {"lr_schedule", c.lr_schedule == LrSchedule::kCosine ? "cosine" : "constant"},
          {"batch", c.batch},
          {"steps", c.steps},
          {"seed", c.seed},
          {"spectral_norm", c.spectral_norm},
          {"channel_aware_lr", c.channel_aware_lr},
          {"spectral_target", c.spectral_target},
          {"dataset", to_json(c.dataset)},
          {"eval_size", c.eval_size},
          {"checkpoint_every", c.checkpoint_every},
          {"log_every", c.log_every},
          {"threads", c.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"model", "lr", "lr_schedule", "batch", "steps", "seed", "spectral_norm", "channel_aware_lr",
                  "spectral_target", "dataset", "eval_size", "checkpoint_every", "log_every",
                  "threads"},
                 "train config");
  const DatasetSpec spec = j.contains("dataset") ? dataset_spec_from_json(j["dataset"]) : DatasetSpec{};
  TrainConfig c = default_train_config(spec.kind);
  if (j.contains("dataset")) {
    // Size defaults depend on the kind, so only explicit keys override them.
    const auto& d = j["dataset"];
    const DatasetSpec base = c.dataset;
    c.dataset = spec;
    if (d.is_string() || !d.contains("size")) c.dataset.size = base.size;
  }
  try {
    if (j.contains("model")) {
      reject_unknown(j["model"],
                     {"channels", "height", "width", "blocks", "steps", "m", "hidden", "kernel",
                      "squeeze", "linear", "init_noise", "mixing_init"},
                     "model config");
      nlohmann::json merged = flow::to_json(c.model);
      merged.update(j["model"]);
      c.model = flow::model_config_from_json(merged);
    }
    c.lr = j.value("lr", c.lr);
    if (j.contains("lr_schedule")) {
      const std::string sched = j["lr_schedule"].get<std::string>();
      if (sched == "cosine") c.lr_schedule = LrSchedule::kCosine;
      else if (sched == "constant") c.lr_schedule = LrSchedule::kConstant;
      else throw ConfigError("train config: lr_schedule must be constant or cosine");
    }
    c.batch = j.value("batch", c.batch);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.spectral_norm = j.value("spectral_norm", c.spectral_norm);
    c.channel_aware_lr = j.value("channel_aware_lr", c.channel_aware_lr);
    c.spectral_target = j.value("spectral_target", c.spectral_target);
    c.eval_size = j.value("eval_size", c.eval_size);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("train config: " + std::string(e.what()));
  }
  if (!(c.lr >= 0.0) || c.batch == 0 || c.log_every == 0 || c.model.m == 0 ||
      !(c.spectral_target > 0.0))
    throw ConfigError("train config: lr must be >= 0 and batch, log_every, m, target positive");
  return c;
}

double learning_rate(const TrainConfig& c, std::size_t completed) {
  if (c.lr_schedule == LrSchedule::kConstant || c.steps == 0) return c.lr;
  const double t = std::min(1.0, double(completed) / double(c.steps));
  return 0.5 * c.lr * (1.0 + std::cos(std::numbers::pi * t));
}

void fit_model_to_dataset(flow::ModelConfig& model, const Dataset& data) {
  model.channels = data.channels();
  model.height = data.height();
  model.width = data.width();
}

std::string metrics_header() { return "step,nll,bpd,grad_norm,max_sigma,wall_ms"; }

std::string to_csv(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.3f", r.step, r.nll, r.bpd,
                r.grad_norm, r.max_sigma, r.wall_ms);
  return buf;
}

TrainState initial_state(const TrainConfig& config, const Dataset& data) {
  flow::ModelConfig mc = config.model;
  fit_model_to_dataset(mc, data);
  flow::FlowModel model(mc, config.seed);
  optim::AdamState adam(model.parameter_count());
  return {std::move(model), std::move(adam), 0};
}

void ensure_initialized(TrainState& state, const Dataset& data, const TrainConfig& config) {
  if (!state.model.initialized()) state.model.initialize(step_batch(data, config, state.step));
}

MetricsRow train_step(TrainState& state, const Dataset& data, const TrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_initialized(state, data, config);
  const flow::Tensor4 x = step_batch(data, config, state.step);
  const flow::LossGrad lg = state.model.loss_and_grad(x, threads_for(config));

  double sq = 0.0;
  for (double g : lg.grad) sq += g * g;
  const double grad_norm = std::sqrt(sq);
  if (!std::isfinite(lg.loss) || !std::isfinite(grad_norm)) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "non-finite %s at step %zu",
                  std::isfinite(lg.loss) ? "gradient" : "loss", state.step + 1);
    throw TrainingDiverged(msg, {{"step", state.step + 1},
                                 {"loss", std::to_string(lg.loss)},
                                 {"layers", layer_diagnostics(state.model, x)}});
  }

  std::vector<double> p = state.model.parameters();
  const std::vector<double> scales = state.model.lr_scales(config.channel_aware_lr);
  optim::adam_step(p, lg.grad, state.adam, learning_rate(config, state.step), {}, scales);
  state.model.set_parameters(p);
  if (config.spectral_norm) state.model.spectral_rescale(config.spectral_target);
  ++state.step;

  MetricsRow row;
  row.step = state.step;
  row.nll = lg.loss;
  row.bpd = lg.loss / (double(data.dims()) * std::numbers::ln2) + data.bits_per_value();
  row.grad_norm = grad_norm;
  row.max_sigma = state.model.max_sigma();
  row.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

void save_state(const TrainState& state, const TrainConfig& config,
                const std::filesystem::path& dir) {
  flow::save_model(state.model, dir, config.seed,
                   {{"step", state.step},
                    {"adam_t", state.adam.t},
                    {"adam_files", {"adam_m.f64", "adam_v.f64"}},
                    {"train_config", to_json(config)}});
  io::write_f64_array(dir / "adam_m.f64", state.adam.m);
  io::write_f64_array(dir / "adam_v.f64", state.adam.v);
}

LoadedState load_state(const std::filesystem::path& dir) {
  flow::LoadedModel lm = flow::load_model(dir);
  const auto& st = lm.state;
  if (!st.contains("train_config") || !st.contains("step"))
    throw ConfigError("checkpoint has no training state: " + dir.string());
  TrainConfig config = train_config_from_json(st["train_config"]);
  optim::AdamState adam;
  adam.t = st.value("adam_t", std::uint64_t{0});
  adam.m = io::read_f64_array(dir / "adam_m.f64");
  adam.v = io::read_f64_array(dir / "adam_v.f64");
  if (adam.m.size() != lm.model.parameter_count() || adam.v.size() != adam.m.size())
    throw ConfigError("checkpoint optimizer state does not match the model");
  TrainState s{std::move(lm.model), std::move(adam), st["step"].get<std::size_t>()};
  return {std::move(s), std::move(config)};
}

std::vector<MetricsRow> train(TrainState& state, const Dataset& data, const TrainConfig& config,
                              const TrainHooks& hooks) {
  std::ofstream csv;
  const bool files = !hooks.out_dir.empty();
  if (files) {
    std::filesystem::create_directories(hooks.out_dir);
    const auto path = hooks.out_dir / "metrics.csv";
    // On resume keep only rows the checkpoint has already accounted for.
    std::vector<std::string> keep;
    if (std::ifstream in(path); in) {
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty() && std::stoull(line.substr(0, line.find(','))) <= state.step)
          keep.push_back(line);
    }
    csv.open(path, std::ios::trunc);
    csv << metrics_header() << "\n";
    for (const auto& l : keep) csv << l << "\n";
  }

  std::vector<MetricsRow> rows;
  const auto checkpoint = [&] {
    if (files) save_state(state, config, hooks.out_dir / "checkpoint");
  };
  while (state.step < config.steps) {
    MetricsRow row;
    try {
      row = train_step(state, data, config);
    } catch (const TrainingDiverged& e) {
      if (files) io::write_text(hooks.out_dir / "diagnostics.json", e.diagnostics().dump(2) + "\n");
      throw;
    }
    rows.push_back(row);
    if (files && (row.step % config.log_every == 0 || row.step == config.steps))
      csv << to_csv(row) << "\n" << std::flush;
    if (hooks.on_row) hooks.on_row(row);
    if (config.checkpoint_every > 0 && row.step % config.checkpoint_every == 0 &&
        row.step != config.steps)
      checkpoint();
  }
  checkpoint();
  return rows;
}

Metric metric_from_string(const std::string& s) {
  if (s == "nll") return Metric::kNll;
  if (s == "bpd") return Metric::kBpd;
  throw ConfigError("unknown metric '" + s + "' (expected nll or bpd)");
}

double evaluate(const flow::FlowModel& model, const Dataset& data, Metric metric,
                std::uint64_t eval_seed, std::size_t batch, std::size_t threads) {
  const auto& mc = model.config();
  if (mc.channels != data.channels() || mc.height != data.height() || mc.width != data.width()) {
    std::ostringstream msg;
    msg << "model expects C=" << mc.channels << " H=" << mc.height << " W=" << mc.width
        << " but dataset '" << data.kind() << "' has C=" << data.channels()
        << " H=" << data.height() << " W=" << data.width();
    throw DimensionError(msg.str());
  }
  if (batch == 0) throw ConfigError("evaluate: batch must be positive");
  const std::size_t n = data.size(), d = data.dims();
  std::vector<double> per_sample(n);
  const std::size_t chunks = (n + batch - 1) / batch;
  const auto run = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t c = worker; c < chunks; c += stride) {
      const std::size_t lo = c * batch, hi = std::min(n, lo + batch);
      std::vector<std::size_t> idx(hi - lo);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = lo + i;
      std::vector<double> noise;
      if (data.quantized()) {
        noise.resize(idx.size() * d);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          rng::Engine g = rng::stream(eval_seed, "dequant_eval", idx[i]);
          for (std::size_t k = 0; k < d; ++k) noise[i * d + k] = rng::uniform(g);
        }
      }
      const auto v = model.nll_per_sample(data.batch(idx, noise));
      std::copy(v.begin(), v.end(), per_sample.begin() + static_cast<std::ptrdiff_t>(lo));
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, chunks));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          run(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  double total = 0.0;
  for (double v : per_sample) total += v;
  const double nll = total / double(n);
  if (!std::isfinite(nll)) throw NumericalError("evaluation produced a non-finite nll");
  return metric == Metric::kNll ? nll : nll / (double(d) * std::numbers::ln2) + data.bits_per_value();
}

}  // namespace cdflow::train
