#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>
#include <vector>

#include "cdflow/bench.hpp"
#include "cdflow/error.hpp"
#include "cdflow/layers.hpp"
#include "doctest.h"
#include "oracles.hpp"

namespace bn = cdflow::bench;
namespace st = cdflow::structured;
using cdflow::linalg::Matrix;

namespace {

st::ColumnBatch random_columns(std::size_t n, std::size_t cols, std::uint64_t seed) {
  cdflow::rng::Engine g = cdflow::rng::stream(seed, "test_cols", n);
  st::ColumnBatch x(n, cols);
  for (double& v : x.data()) v = cdflow::rng::normal(g);
  return x;
}

double max_abs_diff(const st::ColumnBatch& a, const st::ColumnBatch& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double max_abs(const st::ColumnBatch& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

bn::BenchRecord record(const std::string& kind, std::size_t n, double ms) {
  bn::BenchRecord r;
  r.kind = kind;
  r.op = "forward";
  r.n = n;
  r.spatial = 8;
  r.batch = 16;
  r.median_ms = ms;
  r.repeats = 30;
  return r;
}

}  // namespace

TEST_CASE("dense baseline on small known matrices") {
  const bn::DenseLayer eye(Matrix::identity(3));
  CHECK(eye.logdet() == doctest::Approx(0.0).epsilon(1e-15));
  const auto x = random_columns(3, 5, 1);
  CHECK(max_abs_diff(eye.forward(x), x) == 0.0);
  CHECK(max_abs_diff(eye.inverse(x), x) == 0.0);

  Matrix d(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 3.0;
  const bn::DenseLayer diag(d);
  CHECK(diag.logdet() == doctest::Approx(std::log(6.0)).epsilon(1e-14));

  cdflow::rng::Engine g = cdflow::rng::stream(3, "test_dense", 0);
  const Matrix a = Matrix::random_normal(8, 8, g);
  const double oracle_ld = std::log(std::abs(oracle::cofactor_det(a)));
  CHECK(bn::DenseLayer(a).logdet() == doctest::Approx(oracle_ld).epsilon(1e-10));
  CHECK(bn::LULayer::from_matrix(a).logdet() == doctest::Approx(oracle_ld).epsilon(1e-10));
}

TEST_CASE("LU baseline reproduces the dense matrix and its inverse") {
  cdflow::rng::Engine g = cdflow::rng::stream(4, "test_lu", 0);
  for (std::size_t n : {1u, 2u, 5u, 17u, 40u}) {
    const Matrix a = Matrix::random_normal(n, n, g);
    const bn::LULayer lu = bn::LULayer::from_matrix(a);
    const Matrix back = lu.matrix();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) CHECK(back(i, j) == doctest::Approx(a(i, j)).epsilon(1e-10));

    const bn::DenseLayer dense(a);
    const auto x = random_columns(n, 7, n);
    CHECK(max_abs_diff(lu.forward(x), dense.forward(x)) < 1e-10 * (1.0 + max_abs(dense.forward(x))));
    CHECK(max_abs_diff(lu.inverse(lu.forward(x)), x) < 1e-8);
  }
  Matrix singular(3, 3, 1.0);
  CHECK_THROWS_AS(bn::LULayer::from_matrix(singular), cdflow::SingularFactorError);
}

TEST_CASE("the three kinds agree on one chain") {
  for (std::size_t n : {4u, 16u, 33u, 64u}) {
    for (std::size_t m : {1u, 2u, 3u}) {
      const bn::BaselineSet set = bn::make_baselines(n, m, 9);
      const auto x = random_columns(n, 12, n + m);
      const auto yc = st::chain_matvec(set.chain, x);
      const double scale = 1.0 + max_abs(yc);
      CHECK(max_abs_diff(set.dense.forward(x), yc) < 1e-10 * scale);
      CHECK(max_abs_diff(set.lu.forward(x), yc) < 1e-10 * scale);

      const auto xc = st::chain_inverse_apply(set.chain, yc);
      CHECK(max_abs_diff(set.dense.inverse(yc), xc) < 1e-10 * (1.0 + max_abs(xc)));
      CHECK(max_abs_diff(set.lu.inverse(yc), xc) < 1e-10 * (1.0 + max_abs(xc)));

      const double ld = st::chain_logdet(set.chain);
      CHECK(set.dense.logdet() == doctest::Approx(ld).epsilon(1e-10));
      CHECK(set.lu.logdet() == doctest::Approx(ld).epsilon(1e-10));
    }
  }
}

TEST_CASE("time_op measures a known sleep and rejects too few repeats") {
  const auto t = bn::time_op(
      [] {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return 1.0;
      },
      9, 1);
  CHECK(t.repeats == 9);
  CHECK(t.median_ms > 5.0 * 0.8);
  CHECK(t.median_ms < 5.0 * 1.2 + 2.0);  // scheduler slack on a loaded host
  CHECK(t.checksum == 1.0);
  CHECK(t.checksum_stable);

  const auto zero = bn::time_op([] { return 0.0; }, 5, 0);
  CHECK(zero.median_ms > 0.0);
  CHECK(zero.mad_ms >= 0.0);

  CHECK_THROWS_AS(bn::time_op([] { return 0.0; }, 1), cdflow::ConfigError);

  int calls = 0;
  const auto drift = bn::time_op([&] { return static_cast<double>(++calls); }, 4, 0);
  CHECK_FALSE(drift.checksum_stable);
}

TEST_CASE("suite covers every (n, kind, op) and the csv round-trips") {
  bn::BenchConfig c;
  c.n_grid = {4, 8};
  c.batch = 2;
  c.spatial = 2;
  c.repeats = 30;
  c.warmup = 1;
  c.spatial_sweep = {1, 3};
  c.spatial_sweep_n = 4;
  const auto recs = bn::bench_suite(c);
  CHECK(recs.size() == (c.n_grid.size() + c.spatial_sweep.size()) * 3 * 3);
  for (const auto& r : recs) {
    CHECK(r.median_ms > 0.0);
    CHECK(r.repeats == 30);
    CHECK(std::isfinite(r.checksum));
  }

  std::stringstream ss;
  bn::write_csv(ss, recs);
  CHECK(ss.str().rfind(bn::csv_header(), 0) == 0);
  const auto back = bn::read_csv(ss);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].kind == recs[i].kind);
    CHECK(back[i].op == recs[i].op);
    CHECK(back[i].n == recs[i].n);
    CHECK(back[i].spatial == recs[i].spatial);
    CHECK(back[i].median_ms == recs[i].median_ms);
    CHECK(back[i].checksum == recs[i].checksum);
  }

  c.repeats = 10;
  CHECK_THROWS_AS(bn::bench_suite(c), cdflow::ConfigError);
}

TEST_CASE("reshape path computes the same outputs") {
  bn::BenchConfig c;
  c.n_grid = {6};
  c.batch = 3;
  c.spatial = 2;
  c.warmup = 0;
  const auto plain = bn::bench_suite(c);
  c.include_reshape = true;
  const auto reshaped = bn::bench_suite(c);
  REQUIRE(plain.size() == reshaped.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(reshaped[i].include_reshape);
    CHECK(reshaped[i].checksum == doctest::Approx(plain[i].checksum).epsilon(1e-12));
  }
}

TEST_CASE("slope fit recovers synthetic power laws") {
  std::vector<bn::BenchRecord> recs;
  for (std::size_t n : {16u, 32u, 64u, 96u, 128u, 256u, 512u, 1024u}) {
    const double x = static_cast<double>(n);
    recs.push_back(record("dense", n, 1e-4 * x * x));
    recs.push_back(record("cdchain", n, 0.25));
  }
  CHECK(bn::slope_fit(recs, "dense", "forward") == doctest::Approx(2.0).epsilon(0.005));
  CHECK(std::abs(bn::slope_fit(recs, "cdchain", "forward")) < 1e-12);
  CHECK_THROWS(bn::slope_fit(recs, "dense_lu", "forward"));
}

TEST_CASE("parameter counts match the layers") {
  cdflow::rng::Engine g = cdflow::rng::stream(0, "test_counts", 0);
  for (std::size_t n : {3u, 4u, 8u}) {
    for (const char* t : {"f", "l", "u", "lu"}) {
      const cdflow::flow::MatrixConv layer(cdflow::flow::linear_kind_from_string(t), n, 0.01, g);
      CHECK(layer.free_parameter_count() == bn::linear_parameter_count(t, n, 2));
    }
    const cdflow::flow::CDConv cd(st::CDChain::near_identity(n, 2, 0.01, g));
    CHECK(cd.free_parameter_count() == bn::linear_parameter_count("dcd", n, 2));
  }
  CHECK(bn::linear_parameter_count("dcd", 64, 2) == 192);
  CHECK(bn::linear_parameter_count("l", 4, 2) == 10);
  CHECK_THROWS_AS(bn::linear_parameter_count("conv", 4, 2), cdflow::ConfigError);
}

TEST_CASE("studies run end to end on a tiny budget") {
  bn::LayerStudyConfig s = bn::default_layer_study();
  s.base.steps = 3;
  s.base.dataset.size = 40;
  s.base.batch = 8;
  s.base.model.hidden = 4;
  s.seeds = {0};
  s.types = {"lu", "dcd"};
  s.eval_size = 20;
  const auto rows = bn::layer_type_study(s);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK_FALSE(r.diverged);
    CHECK(std::isfinite(r.heldout_nll));
    CHECK(r.channels == 4);
  }
  CHECK(rows[0].linear_parameters == 16);
  CHECK(rows[1].linear_parameters == 12);
  CHECK(bn::layer_study_csv(rows).rfind("type,seed,channels", 0) == 0);

  bn::MAblationConfig a = bn::default_m_ablation();
  a.base.steps = 3;
  a.base.dataset.size = 64;
  a.base.batch = 16;
  a.base.model.hidden = 4;
  a.ms = {2, 3};
  a.repeats = 5;
  a.eval_size = 32;
  const auto ar = bn::m_ablation(a);
  REQUIRE(ar.size() == 2);
  CHECK(ar[1].chain_parameters > ar[0].chain_parameters);
  for (const auto& r : ar) {
    CHECK(std::isfinite(r.heldout_nll));
    CHECK(r.forward_ms > 0.0);
  }
}
