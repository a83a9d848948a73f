#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "cdflow/error.hpp"
#include "cdflow/flow.hpp"
#include "chain_gen.hpp"
#include "doctest.h"
#include "flow_oracles.hpp"

namespace fl = cdflow::flow;
using oracle::make_identity;
using oracle::set_constant_coupling;
using fl::Shape;
using fl::Tensor4;

namespace {

double total(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// <R, y> + sum_b w_b logdet_b for a single layer, with its analytic gradient
// checked against central differences in both input and parameters.
void check_layer_gradients(fl::Layer& layer, const Tensor4& x, cdflow::rng::Engine& g,
                           double tol = 1e-5) {
  const Tensor4 r = oracle::random_tensor(x.shape(), g);
  std::vector<double> w(x.batch());
  for (double& v : w) v = cdflow::rng::normal(g);
  auto objective = [&](const fl::Layer& l, const Tensor4& in) {
    std::vector<double> ld(in.batch(), 0.0);
    const Tensor4 y = l.forward(in, ld, nullptr);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r.data()[i] * y.data()[i];
    for (std::size_t b = 0; b < in.batch(); ++b) s += w[b] * ld[b];
    return s;
  };
  std::vector<double> ld(x.batch(), 0.0);
  std::unique_ptr<fl::LayerCache> cache;
  (void)layer.forward(x, ld, &cache);
  std::vector<double> grad(layer.parameters().size(), 0.0);
  const Tensor4 dx = layer.backward(*cache, r, w, grad);

  const std::vector<double> p0(layer.parameters().begin(), layer.parameters().end());
  const auto fd_p = oracle::central_differences(p0, [&](const std::vector<double>& p) {
    std::copy(p.begin(), p.end(), layer.parameters().begin());
    const double v = objective(layer, x);
    std::copy(p0.begin(), p0.end(), layer.parameters().begin());
    return v;
  });
  CHECK(oracle::relative_error(grad, fd_p) < tol);

  const std::vector<double> x0(x.data().begin(), x.data().end());
  const auto fd_x = oracle::central_differences(x0, [&](const std::vector<double>& v) {
    Tensor4 t(x.shape());
    std::copy(v.begin(), v.end(), t.data().begin());
    return objective(layer, t);
  });
  CHECK(oracle::relative_error(std::vector<double>(dx.data().begin(), dx.data().end()), fd_x) <
        tol);
}

fl::ModelConfig image_config(std::size_t c, std::size_t hw, std::size_t blocks, std::size_t steps) {
  fl::ModelConfig cfg;
  cfg.channels = c;
  cfg.height = cfg.width = hw;
  cfg.blocks = blocks;
  cfg.steps = steps;
  cfg.hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("squeeze and unsqueeze") {
  Tensor4 x(1, 1, 2, 2);
  x(0, 0, 0, 0) = 1, x(0, 0, 0, 1) = 2, x(0, 0, 1, 0) = 3, x(0, 0, 1, 1) = 4;
  const Tensor4 s = fl::squeeze(x);
  CHECK(s.shape() == Shape{1, 4, 1, 1});
  CHECK(std::vector<double>(s.data().begin(), s.data().end()) == std::vector<double>{1, 2, 3, 4});

  cdflow::rng::Engine g = cdflow::rng::stream(20, "flow");
  const Tensor4 r = oracle::random_tensor({3, 2, 4, 6}, g);
  const Tensor4 q = fl::squeeze(r);
  CHECK(q.shape() == Shape{3, 8, 2, 3});
  CHECK(fl::unsqueeze(q) == r);
  std::vector<double> a(r.data().begin(), r.data().end()), b(q.data().begin(), q.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  CHECK_THROWS_AS(fl::squeeze(Tensor4(1, 1, 3, 2)), cdflow::DimensionError);
}

TEST_CASE("split and concat") {
  cdflow::rng::Engine g = cdflow::rng::stream(21, "flow");
  const Tensor4 x = oracle::random_tensor({2, 6, 3, 3}, g);
  auto [a, b] = fl::split_channels(x, 3);
  CHECK(a.channels() == 3);
  CHECK(b.channels() == 3);
  CHECK(a(1, 2, 1, 0) == x(1, 2, 1, 0));
  CHECK(b(1, 0, 2, 2) == x(1, 3, 2, 2));
  CHECK(fl::concat_channels(a, b) == x);
  CHECK(fl::concat_batch({fl::slice_batch(x, 0, 1), fl::slice_batch(x, 1, 1)}) == x);
}

TEST_CASE("ActNorm") {
  SUBCASE("identity parameters") {
    fl::ActNorm a(3);
    cdflow::rng::Engine g = cdflow::rng::stream(22, "flow");
    const Tensor4 x = oracle::random_tensor({2, 3, 2, 2}, g);
    std::vector<double> ld(2, 0.0);
    CHECK(a.forward(x, ld, nullptr) == x);
    CHECK(ld == std::vector<double>{0.0, 0.0});
    CHECK(a.inverse(x) == x);
  }
  SUBCASE("log-det of a single scaled channel") {
    fl::ActNorm a(1);
    a.scale()[0] = 2.0;
    std::vector<double> ld(1, 0.0);
    a.forward(Tensor4(1, 1, 1, 1, 5.0), ld, nullptr);
    CHECK(ld[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("inverse by hand") {
    fl::ActNorm a(1);
    a.scale()[0] = 2.0;
    a.bias()[0] = 1.0;
    CHECK(a.inverse(Tensor4(1, 1, 1, 1, 4.0))(0, 0, 0, 0) == 1.0);
  }
  SUBCASE("data-dependent init normalizes the first batch") {
    cdflow::rng::Engine g = cdflow::rng::stream(23, "flow");
    Tensor4 x = oracle::random_tensor({16, 2, 3, 3}, g);
    for (std::size_t b = 0; b < 16; ++b)
      for (double& v : x.plane(b, 0)) v = 3.0 + 2.0 * v;
    fl::ActNorm a(2);
    std::vector<double> ld(16, 0.0);
    const Tensor4 y = a.forward_init(x, ld);
    CHECK(a.initialized());
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t b = 0; b < 16; ++b)
        for (double v : y.plane(b, c)) mean += v, sq += v * v;
      mean /= 16 * 9;
      const double sd = std::sqrt(sq / (16 * 9) - mean * mean);
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(sd - 1.0) < 1e-6);
    }
    CHECK(oracle::max_abs_diff(a.inverse(y), x) < 1e-10);
  }
  SUBCASE("degenerate init batch") {
    fl::ActNorm a(1);
    CHECK_THROWS_WITH_AS(a.initialize(Tensor4(4, 1, 2, 2, 7.0)), "degenerate init batch",
                         cdflow::NumericalError);
  }
  SUBCASE("gradients") {
    cdflow::rng::Engine g = cdflow::rng::stream(24, "flow");
    fl::ActNorm a(3);
    for (double& v : a.scale()) v = 1.0 + 0.3 * cdflow::rng::normal(g);
    for (double& v : a.bias()) v = 0.3 * cdflow::rng::normal(g);
    check_layer_gradients(a, oracle::random_tensor({2, 3, 2, 2}, g), g);
  }
}

TEST_CASE("CD convolution") {
  cdflow::rng::Engine g = cdflow::rng::stream(25, "flow");
  SUBCASE("identity chain") {
    fl::CDConv conv(4, 2);
    const Tensor4 x = oracle::random_tensor({2, 4, 3, 3}, g);
    std::vector<double> ld(2, 0.0);
    CHECK(oracle::max_abs_diff(conv.forward(x, ld, nullptr), x) < 1e-15);
    CHECK(ld[0] == 0.0);
  }
  SUBCASE("diagonal chain log-det counts every position") {
    fl::CDConv conv(cdflow::structured::CDChain::from_parameters(2, 1, {2.0, 3.0}));
    std::vector<double> ld(1, 0.0);
    const Tensor4 x = oracle::random_tensor({1, 2, 2, 2}, g);
    const Tensor4 y = conv.forward(x, ld, nullptr);
    CHECK(ld[0] == doctest::Approx(4.0 * std::log(6.0)).epsilon(1e-14));
    CHECK(y(0, 1, 1, 0) == 3.0 * x(0, 1, 1, 0));
    CHECK(oracle::max_abs_diff(conv.inverse(y), x) < 1e-15);
  }
  SUBCASE("matches a dense 1x1 convolution") {
    fl::CDConv conv(gen::random_chain(6, 3, g));
    const auto w = gen::dense_from_parameters(conv.chain());
    const Tensor4 x = oracle::random_tensor({2, 6, 2, 3}, g);
    std::vector<double> ld(2, 0.0);
    const Tensor4 y = conv.forward(x, ld, nullptr);
    double err = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t yy = 0; yy < 2; ++yy)
        for (std::size_t xx = 0; xx < 3; ++xx) {
          std::vector<double> v(6);
          for (std::size_t c = 0; c < 6; ++c) v[c] = x(b, c, yy, xx);
          const auto ref = oracle::naive_matvec(w, v);
          for (std::size_t c = 0; c < 6; ++c) err = std::max(err, std::abs(ref[c] - y(b, c, yy, xx)));
        }
    CHECK(err < 1e-10);
    CHECK(ld[1] == doctest::Approx(6.0 * oracle::gauss_logabsdet(w)).epsilon(1e-10));
  }
  SUBCASE("roundtrip with C = 12") {
    fl::CDConv conv(gen::random_chain(12, 2, g));
    const Tensor4 x = oracle::random_tensor({3, 12, 4, 4}, g);
    std::vector<double> ld(3, 0.0);
    CHECK(oracle::max_abs_diff(conv.inverse(conv.forward(x, ld, nullptr)), x) < 1e-8);
  }
  SUBCASE("gradients") {
    fl::CDConv conv(gen::random_chain(5, 2, g, 0.5, 2.0));
    check_layer_gradients(conv, oracle::random_tensor({2, 5, 2, 1}, g), g);
  }
}

TEST_CASE("matrix 1x1 convolutions") {
  cdflow::rng::Engine g = cdflow::rng::stream(26, "flow");
  const std::size_t n = 5;
  for (fl::LinearKind kind : {fl::LinearKind::kDense, fl::LinearKind::kLower,
                              fl::LinearKind::kUpper, fl::LinearKind::kLU}) {
    CAPTURE(fl::to_string(kind));
    fl::MatrixConv conv(kind, n, 0.3, g);
    const auto w = conv.matrix();
    const Tensor4 x = oracle::random_tensor({2, n, 2, 2}, g);
    std::vector<double> ld(2, 0.0);
    const Tensor4 y = conv.forward(x, ld, nullptr);
    std::vector<double> v(n);
    for (std::size_t c = 0; c < n; ++c) v[c] = x(1, c, 1, 0);
    const auto ref = oracle::naive_matvec(w, v);
    for (std::size_t c = 0; c < n; ++c) CHECK(std::abs(ref[c] - y(1, c, 1, 0)) < 1e-12);
    CHECK(ld[0] == doctest::Approx(4.0 * oracle::gauss_logabsdet(w)).epsilon(1e-10));
    CHECK(oracle::max_abs_diff(conv.inverse(y), x) < 1e-10);
    check_layer_gradients(conv, x, g);
    if (kind == fl::LinearKind::kLower)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) CHECK(w(i, j) == 0.0);
  }
  auto count = [&](fl::LinearKind k) { return fl::MatrixConv(k, n, 0.0, g).free_parameter_count(); };
  CHECK(count(fl::LinearKind::kDense) == n * n);
  CHECK(count(fl::LinearKind::kLower) == n * (n + 1) / 2);
  CHECK(count(fl::LinearKind::kUpper) == n * (n + 1) / 2);
  CHECK(count(fl::LinearKind::kLU) == n * n);
  CHECK(fl::linear_kind_from_string("lu") == fl::LinearKind::kLU);
  CHECK_THROWS_AS(fl::linear_kind_from_string("qr"), cdflow::ConfigError);
}

TEST_CASE("shift initialization") {
  cdflow::rng::Engine g = cdflow::rng::stream(31, "flow");
  for (std::size_t n : {2u, 3u, 4u, 5u, 8u}) {
    const std::size_t s = n / 2;
    auto expect_shift = [&](const cdflow::linalg::Matrix& w, std::size_t k, double tol) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          CHECK(std::abs(w(i, j) - (i == (j + k) % n ? 1.0 : 0.0)) <= tol);
    };
    fl::ModelConfig mc;
    mc.channels = n, mc.height = mc.width = 1, mc.blocks = 1, mc.steps = 1;
    mc.kernel = 1, mc.squeeze = false, mc.hidden = 4, mc.init_noise = 0.0;
    for (auto kind : {fl::LinearKind::kCD, fl::LinearKind::kDense, fl::LinearKind::kLU}) {
      mc.linear = kind;
      const fl::FlowModel model(mc, 0);
      for (std::size_t i = 0; i < model.layer_count(); ++i)
        if (const auto* l = dynamic_cast<const fl::LinearLayer*>(&model.layer(i)))
          expect_shift(l->matrix(), s, 1e-12);
    }
    mc.mixing_init = fl::MixingInit::kIdentity;
    mc.linear = fl::LinearKind::kLU;
    const fl::FlowModel plain(mc, 0);
    for (std::size_t i = 0; i < plain.layer_count(); ++i)
      if (const auto* l = dynamic_cast<const fl::LinearLayer*>(&plain.layer(i)))
        expect_shift(l->matrix(), 0, 0.0);
  }
  SUBCASE("permuted LU inverts and differentiates") {
    fl::MatrixConv lu(fl::LinearKind::kLU, 5, 0.3, g, 2);
    CHECK(lu.shift() == 2);
    const Tensor4 x = oracle::random_tensor({2, 5, 2, 1}, g);
    std::vector<double> ld(2, 0.0);
    const Tensor4 y = lu.forward(x, ld, nullptr);
    CHECK(oracle::max_abs_diff(lu.inverse(y), x) < 1e-10);
    CHECK(ld[0] == doctest::Approx(2.0 * oracle::gauss_logabsdet(lu.matrix())).epsilon(1e-10));
    check_layer_gradients(lu, x, g);
  }
  CHECK(fl::mixing_init_from_string("identity") == fl::MixingInit::kIdentity);
  CHECK_THROWS_AS(fl::mixing_init_from_string("random"), cdflow::ConfigError);
}

TEST_CASE("affine coupling") {
  cdflow::rng::Engine g = cdflow::rng::stream(27, "flow");
  SUBCASE("unit scale and zero shift is the identity") {
    fl::AffineCoupling c(4, 6, 3, g);
    set_constant_coupling(c, 60.0, 0.0);
    const Tensor4 x = oracle::random_tensor({2, 4, 3, 3}, g);
    std::vector<double> ld(2, 0.0);
    CHECK(c.forward(x, ld, nullptr) == x);
    CHECK(std::abs(ld[0]) < 1e-20);
  }
  SUBCASE("fixed half scale") {
    fl::AffineCoupling c(2, 4, 1, g);
    set_constant_coupling(c, -2.0, 0.7);
    Tensor4 x(1, 2, 1, 1);
    x(0, 0, 0, 0) = 1.5;
    x(0, 1, 0, 0) = 4.0;
    std::vector<double> ld(1, 0.0);
    const Tensor4 y = c.forward(x, ld, nullptr);
    CHECK(y(0, 0, 0, 0) == 1.5);
    CHECK(y(0, 1, 0, 0) == doctest::Approx(2.7).epsilon(1e-15));
    CHECK(ld[0] == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(c.inverse(y)(0, 1, 0, 0) == doctest::Approx(4.0).epsilon(1e-15));
  }
  SUBCASE("log-det matches the finite-difference Jacobian") {
    fl::AffineCoupling c(4, 6, 3, g);
    auto p = c.parameters();
    for (double& v : p) v += 0.3 * cdflow::rng::normal(g);
    const Tensor4 x = oracle::random_tensor({1, 4, 2, 2}, g);
    std::vector<double> ld(1, 0.0);
    const Tensor4 y = c.forward(x, ld, nullptr);
    const auto f = [&](const std::vector<double>& v) {
      Tensor4 t(x.shape());
      std::copy(v.begin(), v.end(), t.data().begin());
      std::vector<double> l(1, 0.0);
      const Tensor4 o = c.forward(t, l, nullptr);
      return std::vector<double>(o.data().begin(), o.data().end());
    };
    const double ref = oracle::gauss_logabsdet(
        oracle::fd_jacobian(std::vector<double>(x.data().begin(), x.data().end()), f));
    CHECK(std::abs(ld[0] - ref) < 1e-6 * std::max(1.0, std::abs(ref)));
    CHECK(oracle::max_abs_diff(c.inverse(y), x) < 1e-10);
  }
  SUBCASE("odd channel count passes the larger half through") {
    fl::AffineCoupling c(3, 4, 3, g);
    CHECK(c.pass_channels() == 2);
    CHECK(c.transformed_channels() == 1);
    auto p = c.parameters();
    for (double& v : p) v += 0.2 * cdflow::rng::normal(g);
    const Tensor4 x = oracle::random_tensor({2, 3, 4, 4}, g);
    std::vector<double> ld(2, 0.0);
    const Tensor4 y = c.forward(x, ld, nullptr);
    CHECK(y(1, 1, 2, 3) == x(1, 1, 2, 3));
    CHECK(oracle::max_abs_diff(c.inverse(y), x) < 1e-10);
  }
  SUBCASE("gradients with 3x3 and 1x1 kernels") {
    for (std::size_t k : {3u, 1u}) {
      fl::AffineCoupling c(4, 5, k, g);
      auto p = c.parameters();
      for (double& v : p) v += 0.3 * cdflow::rng::normal(g);
      check_layer_gradients(c, oracle::random_tensor({2, 4, 3, 2}, g), g);
    }
  }
}

TEST_CASE("model roundtrip over the configuration grid") {
  cdflow::rng::Engine g = cdflow::rng::stream(28, "flow");
  for (std::size_t blocks : {1u, 2u})
    for (std::size_t steps : {1u, 4u})
      for (std::size_t c : {2u, 4u})
        for (std::size_t hw : {4u, 8u}) {
          CAPTURE(blocks);
          CAPTURE(steps);
          CAPTURE(c);
          CAPTURE(hw);
          fl::FlowModel model(image_config(c, hw, blocks, steps), 5);
          const Tensor4 x = oracle::random_tensor({3, c, hw, hw}, g);
          model.initialize(x);
          oracle::perturb(model, g, 0.05);
          const auto r = model.forward(x);
          CHECK(oracle::max_abs_diff(model.inverse(r.z), x) < 1e-6);
        }
}

TEST_CASE("model log-det matches the finite-difference Jacobian") {
  cdflow::rng::Engine g = cdflow::rng::stream(29, "flow");
  struct Case { std::size_t c, hw, blocks, steps; };
  for (const Case& k : {Case{2, 4, 2, 2}, Case{3, 4, 1, 2}, Case{1, 4, 2, 4}}) {
    fl::FlowModel model(image_config(k.c, k.hw, k.blocks, k.steps), 7);
    const Tensor4 x = oracle::random_tensor({4, k.c, k.hw, k.hw}, g);
    model.initialize(x);
    oracle::perturb(model, g, 0.1);
    const Tensor4 x1 = fl::slice_batch(x, 2, 1);
    const double ld = model.forward(x1).logdet[0];
    const double ref = oracle::fd_model_logdet(model, x1);
    CAPTURE(k.c);
    CHECK(std::abs(ld - ref) < 1e-4 * std::abs(ref));

    // Total equals the sum of per-layer terms.
    double sum = 0.0;
    for (const auto& [name, v] : model.layer_logdets(x1)) sum += v;
    CHECK(std::abs(sum - ld) < 1e-10 * std::max(1.0, std::abs(ld)));
  }
}

TEST_CASE("full nll gradient matches finite differences") {
  cdflow::rng::Engine g = cdflow::rng::stream(30, "flow");
  for (fl::LinearKind kind : {fl::LinearKind::kCD, fl::LinearKind::kLU}) {
    auto cfg = image_config(2, 4, 2, 2);  // D = 32
    cfg.hidden = 4;
    cfg.linear = kind;
    fl::FlowModel model(cfg, 3);
    const Tensor4 x = oracle::random_tensor({3, 2, 4, 4}, g);
    model.initialize(x);
    oracle::perturb(model, g, 0.1);
    const auto lg = model.loss_and_grad(x);
    CHECK(lg.loss == doctest::Approx(model.nll(x)).epsilon(1e-12));
    const auto fd = oracle::central_differences(model.parameters(), [&](const std::vector<double>& p) {
      fl::FlowModel m2 = model;
      m2.set_parameters(p);
      return m2.nll(x);
    });
    CAPTURE(fl::to_string(kind));
    CHECK(oracle::relative_error(lg.grad, fd) < 1e-4);
  }
}

TEST_CASE("loss and gradient do not depend on the thread count") {
  cdflow::rng::Engine g = cdflow::rng::stream(31, "flow");
  fl::FlowModel model(image_config(1, 8, 2, 2), 4);
  const Tensor4 x = oracle::random_tensor({40, 1, 8, 8}, g);
  model.initialize(x);
  oracle::perturb(model, g, 0.05);
  const auto a = model.loss_and_grad(x, 1);
  const auto b = model.loss_and_grad(x, 3);
  CHECK(a.loss == b.loss);
  CHECK(a.grad == b.grad);
}

TEST_CASE("identity model") {
  cdflow::rng::Engine g = cdflow::rng::stream(32, "flow");
  SUBCASE("z is the squeezed input and the log-det vanishes") {
    fl::FlowModel model(image_config(1, 4, 1, 2), 1);
    make_identity(model);
    const Tensor4 x = oracle::random_tensor({2, 1, 4, 4}, g);
    const auto r = model.forward(x);
    REQUIRE(r.z.size() == 1);
    CHECK(oracle::max_abs_diff(r.z[0], fl::squeeze(x)) < 1e-14);
    CHECK(std::abs(r.logdet[0]) < 1e-12);
  }
  SUBCASE("nll on standard normal data is the Gaussian entropy") {
    fl::ModelConfig cfg;
    cfg.channels = 2, cfg.height = cfg.width = 1, cfg.blocks = 1, cfg.steps = 2;
    cfg.squeeze = false, cfg.kernel = 1, cfg.hidden = 4;
    fl::FlowModel model(cfg, 1);
    make_identity(model);
    const std::size_t n = 20000;
    const Tensor4 x = oracle::random_tensor({n, 2, 1, 1}, g);
    const double expect = 1.0 * (1.0 + std::log(2.0 * std::numbers::pi));  // D/2 (1 + ln 2 pi)
    // The per-sample nll has variance D/2; allow five standard errors.
    CHECK(std::abs(model.nll(x) - expect) < 5.0 * std::sqrt(1.0 / n));
  }
  SUBCASE("bpd on dequantized uniform 8-bit data") {
    fl::FlowModel model(image_config(1, 4, 1, 1), 1);
    make_identity(model);
    const std::size_t n = 4000;
    Tensor4 x(Shape{n, 1, 4, 4});
    for (double& v : x.data())
      v = (std::floor(cdflow::rng::uniform(g) * 256.0) + cdflow::rng::uniform(g)) / 256.0;
    // E over U(0,1) of -log N(u; 0, 1) = 1/6 + ln(2 pi)/2 nats per value.
    const double expect = (1.0 / 6.0 + 0.5 * std::log(2.0 * std::numbers::pi)) / std::numbers::ln2 + 8.0;
    CHECK(std::abs(model.bpd(x, 8.0) - expect) < 2e-3);
  }
}

TEST_CASE("split-off parts score like an unsplit model with an identity continuation") {
  cdflow::rng::Engine g = cdflow::rng::stream(33, "flow");
  fl::FlowModel one(image_config(1, 8, 1, 2), 9);
  fl::FlowModel two(image_config(1, 8, 2, 2), 9);
  make_identity(two);
  const Tensor4 x = oracle::random_tensor({5, 1, 8, 8}, g);
  one.initialize(x);
  oracle::perturb(one, g, 0.1);
  // Copy the first block's parameters into the two-block model.
  for (std::size_t i = 0; i < one.layer_count(); ++i) {
    const auto src = std::as_const(one.layer(i)).parameters();
    std::copy(src.begin(), src.end(), two.layer(i).parameters().begin());
  }
  const auto a = one.nll_per_sample(x);
  const auto b = two.nll_per_sample(x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
}

TEST_CASE("one gradient step lowers the nll on a fixed batch") {
  cdflow::rng::Engine g = cdflow::rng::stream(34, "flow");
  fl::FlowModel model(image_config(1, 8, 2, 2), 2);
  Tensor4 x = oracle::random_tensor({32, 1, 8, 8}, g);
  for (double& v : x.data()) v = std::tanh(v);
  model.initialize(x);
  const auto lg = model.loss_and_grad(x);
  auto p = model.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 1e-4 * lg.grad[i];
  fl::FlowModel stepped = model;
  stepped.set_parameters(p);
  CHECK(stepped.nll(x) < lg.loss);
}

TEST_CASE("sampling") {
  cdflow::rng::Engine g = cdflow::rng::stream(35, "flow");
  fl::FlowModel model(image_config(1, 8, 2, 2), 6);
  const Tensor4 x = oracle::random_tensor({8, 1, 8, 8}, g);
  model.initialize(x);
  oracle::perturb(model, g, 0.05);
  CHECK(model.sample(4, 0.8, 11) == model.sample(4, 0.8, 11));
  CHECK(!(model.sample(4, 0.8, 11) == model.sample(4, 0.8, 12)));
  const Tensor4 mode = model.sample(2, 0.0, 1);
  CHECK(mode == model.sample(2, 0.0, 99));
  CHECK(fl::slice_batch(mode, 0, 1) == fl::slice_batch(mode, 1, 1));
  CHECK(model.sample(0, 1.0, 1).batch() == 0);
  for (double v : model.nll_per_sample(model.sample(3, 1.0, 5))) CHECK(std::isfinite(v));
}

TEST_CASE("checkpoint roundtrip") {
  cdflow::rng::Engine g = cdflow::rng::stream(36, "flow");
  for (fl::LinearKind kind : {fl::LinearKind::kCD, fl::LinearKind::kDense}) {
    auto cfg = image_config(1, 8, 2, 2);
    cfg.linear = kind;
    fl::FlowModel model(cfg, 8);
    const Tensor4 x = oracle::random_tensor({4, 1, 8, 8}, g);
    model.initialize(x);
    oracle::perturb(model, g, 0.05);
    const auto dir = std::filesystem::temp_directory_path() / "cdflow_test_ckpt";
    std::filesystem::remove_all(dir);
    fl::save_model(model, dir, 8, {{"step", 17}});
    const auto loaded = fl::load_model(dir);
    CHECK(loaded.seed == 8);
    CHECK(loaded.state["step"] == 17);
    CHECK(loaded.model.initialized());
    CHECK(loaded.model.parameters() == model.parameters());
    CHECK(loaded.model.nll_per_sample(x) == model.nll_per_sample(x));
    std::filesystem::remove(dir / "manifest.json");
    CHECK_THROWS_AS(fl::load_model(dir), cdflow::Error);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("model rejects mismatched inputs and configs") {
  fl::FlowModel model(image_config(1, 8, 2, 1), 0);
  CHECK_THROWS_AS(model.forward(Tensor4(1, 3, 8, 8)), cdflow::DimensionError);
  CHECK_THROWS_AS(fl::FlowModel(image_config(1, 6, 2, 1), 0), cdflow::ConfigError);
  fl::ModelConfig toy;
  toy.channels = 1, toy.height = toy.width = 1, toy.squeeze = false;
  CHECK_THROWS_AS(fl::FlowModel(toy, 0), cdflow::ConfigError);
  CHECK(total(std::vector<double>{1, 2}) == 3.0);
}
