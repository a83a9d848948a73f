#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "cdflow/bench.hpp"
#include "cdflow/binary_io.hpp"
#include "cdflow/error.hpp"
#include "cdflow/flow.hpp"
#include "cdflow/structured.hpp"
#include "cdflow/train.hpp"
#include "json.hpp"
#include "render.hpp"

namespace cdflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ------------------------------------------------------------------ helpers

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config not found: " + path.string());
  try {
    json j = json::parse(io::read_text(path));
    // A resolved_config.json from an earlier run can be fed straight back.
    if (j.is_object() && j.contains("command") && j.contains("config")) return j["config"];
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_resolved(const fs::path& dir, const std::string& command, json config, json flags) {
  fs::create_directories(dir);
  const json j = {{"command", command}, {"flags", std::move(flags)}, {"config", std::move(config)}};
  io::write_text(dir / "resolved_config.json", j.dump(2) + "\n");
}

// Accepts a run directory or the checkpoint directory inside it.
fs::path checkpoint_dir(const fs::path& p) {
  if (fs::exists(p / "checkpoint" / "manifest.json")) return p / "checkpoint";
  if (fs::exists(p / "manifest.json")) return p;
  throw ConfigError("no checkpoint at " + p.string());
}

bool quantized_kind(const std::string& kind) { return kind == "periodic_texture" || kind == "file"; }

train::Dataset heldout(const train::TrainConfig& c) {
  train::DatasetSpec spec = c.dataset;
  spec.size = c.eval_size;
  return train::make_dataset(spec, c.seed, 1);
}

struct Eval {
  double nll, bpd;
};

Eval final_eval(const flow::FlowModel& model, const train::TrainConfig& c) {
  const train::Dataset held = heldout(c);
  const double nll = train::evaluate(model, held, train::Metric::kNll, c.seed, 500,
                                     c.threads ? c.threads : flow::thread_count());
  return {nll, nll / (double(held.dims()) * std::log(2.0)) + held.bits_per_value()};
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  std::string config, out, dataset;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  json j = read_json(a.config);
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  if (a.seed) j["seed"] = *a.seed;
  if (!a.dataset.empty()) {
    if (j.contains("dataset") && j["dataset"].is_object())
      j["dataset"]["kind"] = a.dataset;
    else
      j["dataset"] = a.dataset;
  }
  const train::TrainConfig c = train::train_config_from_json(j);
  const fs::path dir = a.out;
  const train::Dataset data = train::make_dataset(c.dataset, c.seed, 0);

  train::TrainState state = train::initial_state(c, data);
  const fs::path ckpt = dir / "checkpoint";
  if (fs::exists(ckpt / "manifest.json")) {
    train::LoadedState loaded = train::load_state(ckpt);
    json a_cfg = train::to_json(loaded.config), b_cfg = train::to_json(c);
    a_cfg.erase("steps"), b_cfg.erase("steps");
    if (a_cfg != b_cfg)
      throw ConfigError("checkpoint in " + dir.string() + " was written by a different config");
    state = std::move(loaded.state);
    err << "resuming from step " << state.step << "\n";
  }
  write_resolved(dir, "train", train::to_json(c), {{"config", a.config}, {"out", a.out}});

  const std::size_t every = std::max<std::size_t>(1, c.steps / 20);
  train::TrainHooks hooks{dir, [&](const train::MetricsRow& r) {
                            if (r.step % every == 0 || r.step == c.steps)
                              err << "step " << r.step << " nll " << fmt(r.nll) << "\n";
                          }};
  train::train(state, data, c, hooks);

  const Eval e = final_eval(state.model, c);
  io::write_text(dir / "final_eval.json",
                 json{{"step", state.step}, {"nll", e.nll}, {"bpd", e.bpd}}.dump(2) + "\n");
  out << "held-out nll " << fmt(e.nll) << " bpd " << fmt(e.bpd) << "\n";
  return kExitOk;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, dataset, metric = "nll", out;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const train::Metric metric = train::metric_from_string(a.metric);
  train::LoadedState loaded = train::load_state(checkpoint_dir(a.checkpoint));
  train::TrainConfig c = loaded.config;
  // A named dataset comes with its default shape; a mismatch is reported.
  if (!a.dataset.empty()) c.dataset = train::default_train_config(a.dataset).dataset;
  if (a.seed) c.seed = *a.seed;
  const Eval e = final_eval(loaded.state.model, c);
  const double value = metric == train::Metric::kNll ? e.nll : e.bpd;
  if (!a.out.empty()) {
    write_resolved(a.out, "eval", train::to_json(c),
                   {{"checkpoint", a.checkpoint}, {"metric", a.metric}});
    io::write_text(fs::path(a.out) / "eval.json", json{{a.metric, value}}.dump(2) + "\n");
  }
  out << fmt(value) << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- sample

struct SampleArgs {
  std::string checkpoint, out;
  std::size_t count = 16;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

std::uint8_t to_pixel(double v, bool quantized) {
  const double level = quantized ? std::floor(256.0 * v) : std::round(127.5 + 42.5 * v);
  return static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
}

int cmd_sample(const SampleArgs& a, std::ostream& out) {
  if (!(a.temperature >= 0.0)) throw ConfigError("--temperature must be non-negative");
  train::LoadedState loaded = train::load_state(checkpoint_dir(a.checkpoint));
  const flow::FlowModel& model = loaded.state.model;
  const flow::ModelConfig& mc = model.config();
  const flow::Tensor4 x = model.sample(a.count, a.temperature, a.seed);
  for (double v : x.data())
    if (!std::isfinite(v)) throw NumericalError("sample: non-finite value");

  const fs::path dir = a.out;
  write_resolved(dir, "sample", train::to_json(loaded.config),
                 {{"checkpoint", a.checkpoint}, {"count", a.count},
                  {"temperature", a.temperature}, {"seed", a.seed}});

  if (mc.height == 1 && mc.width == 1) {
    std::ostringstream csv;
    for (std::size_t c = 0; c < mc.channels; ++c) csv << (c ? "," : "") << "x" << c;
    csv << "\n";
    char buf[32];
    for (std::size_t i = 0; i < a.count; ++i) {
      for (std::size_t c = 0; c < mc.channels; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", x(i, c, 0, 0));
        csv << (c ? "," : "") << buf;
      }
      csv << "\n";
    }
    io::write_text(dir / "samples.csv", csv.str());
    out << "wrote " << a.count << " samples to " << (dir / "samples.csv").string() << "\n";
    return kExitOk;
  }

  // Square-ish grid, one pixel gutter between tiles.
  const std::size_t cols = a.count ? static_cast<std::size_t>(std::ceil(std::sqrt(double(a.count)))) : 0;
  const std::size_t rows = cols ? (a.count + cols - 1) / cols : 0;
  const std::size_t w = cols ? cols * (mc.width + 1) - 1 : 0, h = rows ? rows * (mc.height + 1) - 1 : 0;
  Image img(w, h);
  const bool q = quantized_kind(loaded.config.dataset.kind);
  for (std::size_t i = 0; i < a.count; ++i) {
    const std::size_t ox = (i % cols) * (mc.width + 1), oy = (i / cols) * (mc.height + 1);
    for (std::size_t yy = 0; yy < mc.height; ++yy)
      for (std::size_t xx = 0; xx < mc.width; ++xx) {
        const auto ch = [&](std::size_t c) { return to_pixel(x(i, std::min(c, mc.channels - 1), yy, xx), q); };
        if (mc.channels >= 3)
          img.set(ox + xx, oy + yy, ch(0), ch(1), ch(2));
        else
          img.set_gray(ox + xx, oy + yy, ch(0));
      }
  }
  write_ppm(dir / "samples.ppm", img);
  out << "wrote " << a.count << " samples to " << (dir / "samples.ppm").string() << "\n";
  return kExitOk;
}

// -------------------------------------------------------------------- bench

struct BenchArgs {
  std::string config, out, suite = "timing";
  std::optional<std::size_t> n, m;
  std::optional<int> include_reshape;
  std::optional<std::uint64_t> seed;
};

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = a.out;
  const json flags = {{"suite", a.suite}, {"config", a.config}};
  if (a.suite == "timing") {
    bench::BenchConfig c = a.config.empty() ? bench::BenchConfig{}
                                            : bench::bench_config_from_json(read_json(a.config));
    if (a.n) c.n_grid = {*a.n}, c.spatial_sweep.clear();
    if (a.m) c.m = *a.m;
    if (a.include_reshape) c.include_reshape = *a.include_reshape != 0;
    if (a.seed) c.seed = *a.seed;
    write_resolved(dir, "bench", bench::to_json(c), flags);
    const auto recs = bench::bench_suite(c, [&](const bench::BenchRecord& r) {
      err << r.kind << " " << r.op << " n=" << r.n << " s=" << r.spatial << " " << fmt(r.median_ms)
          << " ms\n";
    });
    std::ofstream f(dir / "bench.csv");
    bench::write_csv(f, recs);
    if (c.n_grid.size() >= 2)
      for (const auto& kind : c.kinds)
        for (const auto& op : c.ops)
          out << "slope " << kind << " " << op << " " << fmt(bench::slope_fit(recs, kind, op)) << "\n";
    out << "wrote " << recs.size() << " records to " << (dir / "bench.csv").string() << "\n";
    return kExitOk;
  }
  if (a.n || a.include_reshape) throw ConfigError("--n and --include-reshape apply to the timing suite");
  const auto base_from = [&](train::TrainConfig base) {
    return a.config.empty() ? base : train::train_config_from_json(read_json(a.config));
  };
  if (a.suite == "layers") {
    bench::LayerStudyConfig s = bench::default_layer_study();
    s.base = base_from(s.base);
    if (a.seed) s.seeds = {*a.seed};
    if (a.m) s.base.model.m = *a.m;
    write_resolved(dir, "bench", {{"base", train::to_json(s.base)}, {"types", s.types},
                                  {"seeds", s.seeds}, {"eval_size", s.eval_size}}, flags);
    const auto rows = bench::layer_type_study(s, [&](const bench::LayerStudyRow& r) {
      err << r.type << " seed " << r.seed << " nll " << fmt(r.heldout_nll) << "\n";
    });
    io::write_text(dir / "layer_study.csv", bench::layer_study_csv(rows));
    out << "wrote " << rows.size() << " rows to " << (dir / "layer_study.csv").string() << "\n";
    return kExitOk;
  }
  if (a.suite == "m-ablation") {
    bench::MAblationConfig s = bench::default_m_ablation();
    s.base = base_from(s.base);
    if (a.seed) s.base.seed = *a.seed;
    if (a.m) s.ms = {*a.m};
    write_resolved(dir, "bench", {{"base", train::to_json(s.base)}, {"ms", s.ms},
                                  {"repeats", s.repeats}, {"eval_size", s.eval_size}}, flags);
    const auto rows = bench::m_ablation(s, [&](const bench::MAblationRow& r) {
      err << "m " << r.m << " nll " << fmt(r.heldout_nll) << "\n";
    });
    io::write_text(dir / "m_ablation.csv", bench::m_ablation_csv(rows));
    out << "wrote " << rows.size() << " rows to " << (dir / "m_ablation.csv").string() << "\n";
    return kExitOk;
  }
  throw ConfigError("unknown bench suite '" + a.suite + "' (expected timing, layers or m-ablation)");
}

// ---------------------------------------------------------------- fit-dense

struct FitArgs {
  std::string config, out;
  std::size_t n = 8, m = 2;
  std::uint64_t seed = 0;
};

linalg::Matrix fit_target(const std::string& kind, std::size_t n, std::uint64_t seed) {
  rng::Engine g = rng::stream(seed, "fit_target");
  if (kind == "orthogonal") return linalg::Matrix::random_orthogonal(n, g);
  if (kind == "normal") return linalg::Matrix::random_normal(n, n, g, 1.0 / std::sqrt(double(n)));
  if (kind == "circulant") {
    std::vector<double> c(n);
    for (double& v : c) v = rng::normal(g);
    linalg::Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) w(i, j) = c[(i + n - j) % n];
    return w;
  }
  throw ConfigError("unknown fit target '" + kind + "' (expected orthogonal, normal or circulant)");
}

int cmd_fit_dense(const FitArgs& a, std::ostream& out) {
  if (a.n == 0 || a.m == 0) throw ConfigError("--n and --m must be positive");
  structured::FitOptions opt;
  std::string target = "orthogonal";
  if (!a.config.empty()) {
    const json j = read_json(a.config);
    for (const auto& [k, v] : j.items())
      if (k != "target" && k != "steps" && k != "lr" && k != "init_noise")
        throw ConfigError("fit config: unknown key '" + k + "'");
    try {
      target = j.value("target", target);
      opt.steps = j.value("steps", opt.steps);
      opt.lr = j.value("lr", opt.lr);
      opt.init_noise = j.value("init_noise", opt.init_noise);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("fit config: ") + e.what());
    }
  }
  const linalg::Matrix w = fit_target(target, a.n, a.seed);
  const fs::path dir = a.out;
  write_resolved(dir, "fit-dense",
                 {{"target", target}, {"steps", opt.steps}, {"lr", opt.lr}, {"init_noise", opt.init_noise}},
                 {{"n", a.n}, {"m", a.m}, {"seed", a.seed}});
  const structured::FitResult r = structured::fit_dense(w, a.m, opt, a.seed);
  structured::save_chain(r.chain, dir / "chain.cdc", a.seed);
  std::ostringstream csv;
  csv << "step,loss\n";
  char buf[48];
  for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, r.loss_history[i]);
    csv << buf;
  }
  io::write_text(dir / "loss_history.csv", csv.str());
  const double final_loss = r.loss_history.empty() ? structured::relative_frobenius_error(r.chain, w)
                                                   : r.loss_history.back();
  out << "final loss " << fmt(final_loss) << "\n";
  return kExitOk;
}

// --------------------------------------------------------------------- plot

struct PlotArgs {
  std::string csv, checkpoint, out;
  double extent = 3.0;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  return f;
}

std::optional<double> number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') return std::nullopt;
  return v;
}

// Bench CSVs give runtime against n on log-log axes, one series per
// (kind, op); any other CSV plots each numeric column against the first.
std::string plot_csv(const fs::path& path) {
  const std::string text = io::read_text(path);
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw ConfigError("empty CSV: " + path.string());

  if (header + "\n" == bench::csv_header() || header == bench::csv_header()) {
    std::istringstream again(text);
    const auto recs = bench::read_csv(again);
    std::vector<Series> series;
    std::map<std::string, std::size_t> index;
    if (!recs.empty()) {
      const auto& ref = recs.front();
      for (const auto& r : recs) {
        if (r.spatial != ref.spatial || r.batch != ref.batch || r.include_reshape != ref.include_reshape)
          continue;
        const std::string key = r.kind + " " + r.op;
        auto [it, fresh] = index.emplace(key, series.size());
        if (fresh) series.push_back({key, {}, {}});
        Series& s = series[it->second];
        if (std::find(s.x.begin(), s.x.end(), double(r.n)) != s.x.end()) continue;
        s.x.push_back(double(r.n));
        s.y.push_back(r.median_ms);
      }
    }
    return line_chart_svg(series, {"median runtime", "n", "ms", true, true});
  }

  const auto names = split_csv(header);
  if (names.size() < 2) throw ConfigError("CSV needs at least two columns: " + path.string());
  std::vector<Series> cols(names.size() - 1);
  for (std::size_t c = 1; c < names.size(); ++c) cols[c - 1].label = names[c];
  std::vector<bool> numeric(names.size(), true);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != names.size()) throw ConfigError("ragged CSV row: " + line);
    const auto x = number(f[0]);
    if (!x) throw ConfigError("non-numeric x value: " + f[0]);
    for (std::size_t c = 1; c < f.size(); ++c) {
      const auto v = number(f[c]);
      if (!v) {
        numeric[c] = false;
        continue;
      }
      cols[c - 1].x.push_back(*x);
      cols[c - 1].y.push_back(*v);
    }
  }
  std::vector<Series> series;
  for (std::size_t c = 1; c < names.size(); ++c)
    if (numeric[c]) series.push_back(std::move(cols[c - 1]));
  return line_chart_svg(series, {path.filename().string(), names[0], "", false, false});
}

// Gray levels proportional to model density on a 256 x 256 grid centred on
// the origin; pixel (c, r) sits at (-e + (c + 1/2) h, e - (r + 1/2) h).
Image density_heatmap(const flow::FlowModel& model, double extent) {
  const auto& mc = model.config();
  if (mc.dims() != 2 || mc.height != 1 || mc.width != 1)
    throw ConfigError("heatmaps need a 2-D toy model");
  constexpr std::size_t kSide = 256;
  const double h = 2.0 * extent / kSide;
  flow::Tensor4 grid(flow::Shape{kSide * kSide, 2, 1, 1});
  for (std::size_t r = 0; r < kSide; ++r)
    for (std::size_t c = 0; c < kSide; ++c) {
      grid(r * kSide + c, 0, 0, 0) = -extent + (double(c) + 0.5) * h;
      grid(r * kSide + c, 1, 0, 0) = extent - (double(r) + 0.5) * h;
    }
  const std::vector<double> nll = model.nll_per_sample(grid);
  const double best = *std::min_element(nll.begin(), nll.end());
  if (!std::isfinite(best)) throw NumericalError("heatmap: non-finite density");
  Image img(kSide, kSide);
  for (std::size_t r = 0; r < kSide; ++r)
    for (std::size_t c = 0; c < kSide; ++c) {
      const double p = std::exp(best - nll[r * kSide + c]);
      img.set_gray(c, r, static_cast<std::uint8_t>(std::lround(255.0 * p)));
    }
  return img;
}

int cmd_plot(const PlotArgs& a, std::ostream& out) {
  if (a.csv.empty() == a.checkpoint.empty())
    throw ConfigError("plot needs exactly one of a CSV file or --checkpoint");
  if (!(a.extent > 0.0)) throw ConfigError("--extent must be positive");
  const fs::path dir = a.out;
  if (!a.csv.empty()) {
    const std::string svg = plot_csv(a.csv);
    write_resolved(dir, "plot", json::object(), {{"csv", a.csv}});
    io::write_text(dir / "plot.svg", svg);
    out << "wrote " << (dir / "plot.svg").string() << "\n";
    return kExitOk;
  }
  const train::LoadedState loaded = train::load_state(checkpoint_dir(a.checkpoint));
  const Image img = density_heatmap(loaded.state.model, a.extent);
  write_resolved(dir, "plot", train::to_json(loaded.config),
                 {{"checkpoint", a.checkpoint}, {"extent", a.extent}});
  write_ppm(dir / "density.ppm", img);
  out << "wrote " << (dir / "density.ppm").string() << "\n";
  return kExitOk;
}

bool numerical_failure(const std::exception& e) {
  return dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const SingularFactorError*>(&e) ||
         dynamic_cast<const NonFiniteError*>(&e) || dynamic_cast<const SymmetryError*>(&e);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cdflow: flows with diagonal-circulant 1x1 layers", "cdflow"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a flow from a JSON config");
  train_cmd->add_option("--config", ta.config, "train config JSON")->required();
  train_cmd->add_option("--out", ta.out, "output directory")->required();
  train_cmd->add_option("--seed", ta.seed, "overrides the config seed");
  train_cmd->add_option("--dataset", ta.dataset, "overrides the dataset kind");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "held-out nll or bpd of a checkpoint");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "run or checkpoint directory")->required();
  eval_cmd->add_option("--dataset", ea.dataset, "dataset kind, default the training one");
  eval_cmd->add_option("--metric", ea.metric)->check(CLI::IsMember({"nll", "bpd"}));
  eval_cmd->add_option("--seed", ea.seed, "data and dequantization seed");
  eval_cmd->add_option("--out", ea.out, "optional output directory");

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "draw samples from a checkpoint");
  sample_cmd->add_option("--checkpoint", sa.checkpoint)->required();
  sample_cmd->add_option("--count", sa.count);
  sample_cmd->add_option("--temperature", sa.temperature);
  sample_cmd->add_option("--seed", sa.seed);
  sample_cmd->add_option("--out", sa.out)->required();

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "timing suite and layer studies");
  bench_cmd->add_option("--config", ba.config, "bench config JSON (train config for studies)");
  bench_cmd->add_option("--out", ba.out)->required();
  bench_cmd->add_option("--suite", ba.suite)->check(CLI::IsMember({"timing", "layers", "m-ablation"}));
  bench_cmd->add_option("--n", ba.n, "single layer size");
  bench_cmd->add_option("--m", ba.m, "diagonal factors per chain");
  bench_cmd->add_option("--include-reshape", ba.include_reshape)->check(CLI::IsMember({0, 1}));
  bench_cmd->add_option("--seed", ba.seed);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit-dense", "fit a CD chain to a dense matrix");
  fit_cmd->add_option("--n", fa.n)->check(CLI::PositiveNumber);
  fit_cmd->add_option("--m", fa.m)->check(CLI::PositiveNumber);
  fit_cmd->add_option("--seed", fa.seed);
  fit_cmd->add_option("--config", fa.config, "{target, steps, lr, init_noise}");
  fit_cmd->add_option("--out", fa.out)->required();

  PlotArgs pa;
  auto* plot_cmd = app.add_subcommand("plot", "SVG chart of a CSV or density heatmap of a toy model");
  plot_cmd->add_option("csv", pa.csv, "CSV to chart");
  plot_cmd->add_option("--checkpoint", pa.checkpoint, "toy checkpoint to render");
  plot_cmd->add_option("--extent", pa.extent, "heatmap half-width");
  plot_cmd->add_option("--out", pa.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out, err);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*sample_cmd) return cmd_sample(sa, out);
    if (*bench_cmd) return cmd_bench(ba, out, err);
    if (*fit_cmd) return cmd_fit_dense(fa, out);
    if (*plot_cmd) return cmd_plot(pa, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return numerical_failure(e) ? kExitNumerical : kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cdflow::cli
