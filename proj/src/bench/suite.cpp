#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "cdflow/bench.hpp"
#include "cdflow/error.hpp"

namespace cdflow::bench {

namespace {

double median(std::vector<double> v) {
  const std::size_t k = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  const double hi = v[k];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k)));
}

double checksum(const ColumnBatch& y) {
  double s = 0.0;
  for (double v : y.data()) s += v;
  return s;
}

// NCHW activations of `batch` samples with n channels and spatial^2 positions.
struct Workload {
  std::size_t n, batch, hw;
  std::vector<double> nchw;
  ColumnBatch columns;
};

Workload make_workload(std::size_t n, std::size_t batch, std::size_t spatial, std::uint64_t seed) {
  Workload w{n, batch, spatial * spatial, {}, {}};
  rng::Engine g = rng::stream(seed, "bench_input", n * 4096 + spatial);
  w.nchw.resize(n * batch * w.hw);
  for (double& v : w.nchw) v = rng::normal(g);
  w.columns = ColumnBatch(n, batch * w.hw);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t p = 0; p < w.hw; ++p) w.columns(c, b * w.hw + p) = w.nchw[(b * n + c) * w.hw + p];
  return w;
}

ColumnBatch to_columns(const Workload& w, const std::vector<double>& nchw) {
  ColumnBatch x(w.n, w.batch * w.hw);
  for (std::size_t b = 0; b < w.batch; ++b)
    for (std::size_t c = 0; c < w.n; ++c) {
      const double* src = nchw.data() + (b * w.n + c) * w.hw;
      for (std::size_t p = 0; p < w.hw; ++p) x(c, b * w.hw + p) = src[p];
    }
  return x;
}

void from_columns(const Workload& w, const ColumnBatch& y, std::vector<double>& nchw) {
  for (std::size_t b = 0; b < w.batch; ++b)
    for (std::size_t c = 0; c < w.n; ++c) {
      double* dst = nchw.data() + (b * w.n + c) * w.hw;
      for (std::size_t p = 0; p < w.hw; ++p) dst[p] = y(c, b * w.hw + p);
    }
}

struct LayerOps {
  std::function<ColumnBatch(const ColumnBatch&)> apply, invert;
  std::function<double()> logdet;
};

LayerOps ops_for(const std::string& kind, const BaselineSet& set) {
  if (kind == "dense")
    return {[&](const ColumnBatch& x) { return set.dense.forward(x); },
            [&](const ColumnBatch& y) { return set.dense.inverse(y); },
            [&] { return set.dense.logdet(); }};
  if (kind == "dense_lu")
    return {[&](const ColumnBatch& x) { return set.lu.forward(x); },
            [&](const ColumnBatch& y) { return set.lu.inverse(y); },
            [&] { return set.lu.logdet(); }};
  if (kind == "cdchain")
    return {[&](const ColumnBatch& x) { return structured::chain_matvec(set.chain, x); },
            [&](const ColumnBatch& y) { return structured::chain_inverse_apply(set.chain, y); },
            [&] { return structured::chain_logdet(set.chain); }};
  throw ConfigError("unknown bench layer kind '" + kind + "'");
}

BenchRecord run_one(const std::string& kind, const std::string& op, const BaselineSet& set,
                    const Workload& w, std::size_t spatial, const BenchConfig& c) {
  const LayerOps ops = ops_for(kind, set);
  std::function<double()> thunk;
  std::vector<double> out(w.nchw.size());
  const bool reshape = c.include_reshape && op != "logdet";
  const auto through = [&](const std::function<ColumnBatch(const ColumnBatch&)>& f) {
    if (!reshape) return checksum(f(w.columns));
    from_columns(w, f(to_columns(w, w.nchw)), out);
    double s = 0.0;
    for (double v : out) s += v;
    return s;
  };
  if (op == "forward") {
    thunk = [&] { return through(ops.apply) + ops.logdet(); };
  } else if (op == "inverse") {
    thunk = [&] { return through(ops.invert); };
  } else if (op == "logdet") {
    thunk = ops.logdet;
  } else {
    throw ConfigError("unknown bench op '" + op + "'");
  }
  const Timing t = time_op(thunk, c.repeats, c.warmup);
  if (!t.checksum_stable)
    throw NumericalError("bench " + kind + "/" + op + ": checksum changed between repeats");
  return {kind, op, w.n, spatial, c.batch, c.include_reshape, t.median_ms, t.mad_ms, t.repeats,
          t.checksum};
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

Timing time_op(const std::function<double()>& thunk, std::size_t repeats, std::size_t warmup) {
  if (repeats < 2) throw ConfigError("time_op: repeats must be at least 2");
  for (std::size_t i = 0; i < warmup; ++i) (void)thunk();
  std::vector<double> ms(repeats);
  Timing t;
  t.repeats = repeats;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const double c = thunk();
    const auto t1 = std::chrono::steady_clock::now();
    ms[r] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (r == 0) t.checksum = c;
    else if (!(c == t.checksum) && !(std::isnan(c) && std::isnan(t.checksum))) t.checksum_stable = false;
  }
  constexpr double kFloorMs = 1e-6;
  t.median_ms = std::max(kFloorMs, median(ms));
  for (double& v : ms) v = std::abs(v - t.median_ms);
  t.mad_ms = median(ms);
  return t;
}

nlohmann::json to_json(const BenchConfig& c) {
  return {{"n_grid", c.n_grid},   {"kinds", c.kinds},     {"ops", c.ops},
          {"m", c.m},             {"batch", c.batch},     {"spatial", c.spatial},
          {"repeats", c.repeats}, {"warmup", c.warmup},   {"include_reshape", c.include_reshape},
          {"spatial_sweep", c.spatial_sweep},             {"spatial_sweep_n", c.spatial_sweep_n},
          {"seed", c.seed}};
}

BenchConfig bench_config_from_json(const nlohmann::json& j) {
  BenchConfig c;
  static const std::vector<std::string> keys = {
      "n_grid",  "kinds",  "ops",           "m",             "batch",           "spatial",
      "repeats", "warmup", "include_reshape", "spatial_sweep", "spatial_sweep_n", "seed"};
  for (const auto& [k, _] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("bench config: unknown key '" + k + "'");
  try {
    c.n_grid = j.value("n_grid", c.n_grid);
    c.kinds = j.value("kinds", c.kinds);
    c.ops = j.value("ops", c.ops);
    c.m = j.value("m", c.m);
    c.batch = j.value("batch", c.batch);
    c.spatial = j.value("spatial", c.spatial);
    c.repeats = j.value("repeats", c.repeats);
    c.warmup = j.value("warmup", c.warmup);
    c.include_reshape = j.value("include_reshape", c.include_reshape);
    c.spatial_sweep = j.value("spatial_sweep", c.spatial_sweep);
    c.spatial_sweep_n = j.value("spatial_sweep_n", c.spatial_sweep_n);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bench config: " + std::string(e.what()));
  }
  return c;
}

std::vector<BenchRecord> bench_suite(const BenchConfig& c,
                                     const std::function<void(const BenchRecord&)>& progress) {
  if (c.repeats < 30) throw ConfigError("bench: repeats must be at least 30");
  if (c.m == 0 || c.batch == 0 || c.spatial == 0) throw ConfigError("bench: m, batch, spatial must be positive");
  std::vector<BenchRecord> out;
  const auto sweep = [&](std::size_t n, std::size_t spatial) {
    const BaselineSet set = make_baselines(n, c.m, c.seed);
    const Workload w = make_workload(n, c.batch, spatial, c.seed);
    for (const auto& kind : c.kinds)
      for (const auto& op : c.ops) {
        out.push_back(run_one(kind, op, set, w, spatial, c));
        if (progress) progress(out.back());
      }
  };
  for (std::size_t n : c.n_grid) sweep(n, c.spatial);
  for (std::size_t s : c.spatial_sweep) sweep(c.spatial_sweep_n, s);
  return out;
}

std::string csv_header() {
  return "kind,op,n,spatial,batch,include_reshape,median_ms,mad_ms,repeats,checksum";
}

void write_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << csv_header() << "\n";
  char buf[320];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%zu,%d,%.17g,%.17g,%zu,%.17g", r.kind.c_str(),
                  r.op.c_str(), r.n, r.spatial, r.batch, r.include_reshape ? 1 : 0, r.median_ms,
                  r.mad_ms, r.repeats, r.checksum);
    out << buf << "\n";
  }
}

std::vector<BenchRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != csv_header())
    throw ConfigError("bench CSV: unexpected header");
  std::vector<BenchRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 10) throw ConfigError("bench CSV: expected 10 fields in '" + line + "'");
    try {
      out.push_back({f[0], f[1], std::stoul(f[2]), std::stoul(f[3]), std::stoul(f[4]),
                     f[5] == "1", std::stod(f[6]), std::stod(f[7]), std::stoul(f[8]),
                     std::stod(f[9])});
    } catch (const std::logic_error&) {
      throw ConfigError("bench CSV: malformed row '" + line + "'");
    }
  }
  return out;
}

double slope_fit(const std::vector<BenchRecord>& records, const std::string& kind,
                 const std::string& op) {
  // Only records sharing the first match's workload, so a spatial sweep at
  // one n does not leak into the channel sweep.
  const BenchRecord* ref = nullptr;
  std::map<std::size_t, double> by_n;
  for (const auto& r : records) {
    if (r.kind != kind || r.op != op) continue;
    if (!ref) ref = &r;
    if (r.spatial != ref->spatial || r.batch != ref->batch ||
        r.include_reshape != ref->include_reshape)
      continue;
    by_n[r.n] = r.median_ms;
  }
  if (by_n.size() < 2) throw ConfigError("slope_fit: need at least two n values for " + kind + "/" + op);
  std::vector<std::pair<double, double>> pts;
  for (const auto& [n, ms] : by_n) pts.emplace_back(std::log(double(n)), std::log(ms));
  const std::size_t keep = std::max<std::size_t>(2, (pts.size() + 1) / 2);
  pts.erase(pts.begin(), pts.end() - static_cast<std::ptrdiff_t>(keep));
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pts) mx += x, my += y;
  mx /= double(pts.size()), my /= double(pts.size());
  double sxy = 0.0, sxx = 0.0;
  for (const auto& [x, y] : pts) sxy += (x - mx) * (y - my), sxx += (x - mx) * (x - mx);
  return sxy / sxx;
}

}  // namespace cdflow::bench
