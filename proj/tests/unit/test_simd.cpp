// Scalar reference kernels against the runtime-selected SIMD variants.

#include <cmath>
#include <vector>

#include "cdflow/simd/kernels.hpp"
#include "doctest.h"
#include "oracles.hpp"

using cdflow::simd::KernelTable;

namespace {

std::vector<const KernelTable*> variants() {
  std::vector<const KernelTable*> v{&cdflow::simd::scalar_kernels()};
  if (const KernelTable* t = cdflow::simd::avx2_kernels()) v.push_back(t);
  return v;
}

const std::vector<std::size_t> kLengths{1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 64, 96, 130};

}  // namespace

TEST_CASE("active table is one of the known variants") {
  const KernelTable& a = cdflow::simd::active();
  CHECK((a.name == "scalar" || a.name == "avx2"));
  if (cdflow::simd::avx2_kernels() == nullptr) CHECK(a.name == "scalar");
}

TEST_CASE("elementwise kernels are bit-identical across variants") {
  const KernelTable& ref = cdflow::simd::scalar_kernels();
  cdflow::rng::Engine g = cdflow::rng::stream(7, "simd");
  for (const KernelTable* k : variants()) {
    for (std::size_t n : kLengths) {
      const auto z0 = oracle::random_vector(2 * n, g);
      const auto w = oracle::random_vector(2 * n, g);
      const auto d = oracle::random_vector(n, g);
      const auto x = oracle::random_vector(n, g);

      auto za = z0, zb = z0;
      ref.cmul(za.data(), w.data(), n);
      k->cmul(zb.data(), w.data(), n);
      CHECK(za == zb);

      za = z0, zb = z0;
      ref.cscale(za.data(), d.data(), n);
      k->cscale(zb.data(), d.data(), n);
      CHECK(za == zb);

      auto lo_a = z0, hi_a = w, lo_b = z0, hi_b = w;
      const auto tw = oracle::random_vector(2 * n, g);
      ref.butterfly(lo_a.data(), hi_a.data(), tw.data(), n);
      k->butterfly(lo_b.data(), hi_b.data(), tw.data(), n);
      CHECK(lo_a == lo_b);
      CHECK(hi_a == hi_b);

      za = z0, zb = z0;
      ref.cmul_conj_acc(za.data(), w.data(), tw.data(), n);
      k->cmul_conj_acc(zb.data(), w.data(), tw.data(), n);
      CHECK(za == zb);

      auto ya = x, yb = x;
      ref.mul(ya.data(), d.data(), n);
      k->mul(yb.data(), d.data(), n);
      CHECK(ya == yb);

      ya = x, yb = x;
      ref.axpy(ya.data(), 0.37, d.data(), n);
      k->axpy(yb.data(), 0.37, d.data(), n);
      CHECK(ya == yb);
    }
  }
}

TEST_CASE("reductions agree to round-off across variants") {
  const KernelTable& ref = cdflow::simd::scalar_kernels();
  cdflow::rng::Engine g = cdflow::rng::stream(8, "simd");
  for (const KernelTable* k : variants()) {
    for (std::size_t n : kLengths) {
      const auto x = oracle::random_vector(n, g);
      const auto y = oracle::random_vector(n, g);
      double naive = 0.0, mag = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        naive += x[i] * y[i];
        mag += std::abs(x[i] * y[i]);
      }
      CHECK(std::abs(k->dot(x.data(), y.data(), n) - naive) <= 1e-14 * mag + 1e-300);

      const auto a = k->log_abs_sum(x.data(), n);
      const auto b = ref.log_abs_sum(x.data(), n);
      CHECK(a.min == b.min);
      CHECK(std::abs(a.sum - b.sum) <= 1e-12 * std::max(1.0, std::abs(b.sum)));

      const auto pairs = oracle::random_vector(2 * n, g);
      const auto c = k->log_norm2_sum(pairs.data(), n);
      const auto e = ref.log_norm2_sum(pairs.data(), n);
      CHECK(c.min == e.min);
      CHECK(std::abs(c.sum - e.sum) <= 1e-12 * std::max(1.0, std::abs(e.sum)));
    }
  }
}

TEST_CASE("log sums survive extreme magnitudes") {
  // Products of these would overflow or underflow a double.
  std::vector<double> x;
  for (int i = 0; i < 200; ++i) x.push_back(i % 2 ? 1e250 : 3e-200);
  double expected = 0.0;
  for (double v : x) expected += std::log(v);
  for (const KernelTable* k : variants()) {
    const auto r = k->log_abs_sum(x.data(), x.size());
    CHECK(std::abs(r.sum - expected) <= 1e-12 * std::abs(expected));
    CHECK(r.min == doctest::Approx(3e-200));
  }
}

TEST_CASE("log sums report the minimum magnitude including sign-stripped values") {
  const std::vector<double> x{2.0, -0.25, 8.0, 4.0, -16.0};
  for (const KernelTable* k : variants()) {
    const auto r = k->log_abs_sum(x.data(), x.size());
    CHECK(r.min == 0.25);
    CHECK(r.sum == doctest::Approx(std::log(2.0 * 0.25 * 8 * 4 * 16)).epsilon(1e-14));
  }
}
