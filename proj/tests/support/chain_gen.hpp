#pragma once

// Random CD chains with controlled per-factor conditioning, built from
// time-domain factors so a dense product of explicit matrices can serve as an
// FFT-free oracle.

#include <cmath>
#include <numbers>
#include <vector>

#include "cdflow/structured.hpp"
#include "oracles.hpp"

namespace gen {

struct TimeDomainChain {
  std::vector<std::vector<double>> diagonals;
  std::vector<std::vector<double>> circulants;  // first columns
  cdflow::structured::CDChain chain{1, 1};
};

// Magnitudes drawn log-uniformly in [lo, hi]; per-factor condition <= hi/lo.
inline double log_uniform(cdflow::rng::Engine& g, double lo, double hi) {
  return std::exp(cdflow::rng::uniform(g, std::log(lo), std::log(hi)));
}

// Packed spectrum with |lambda_k| in [lo, hi] and random phases.
inline std::vector<double> random_spectrum(std::size_t n, cdflow::rng::Engine& g, double lo,
                                           double hi) {
  std::vector<double> p(n);
  auto sign = [&] { return cdflow::rng::uniform(g) < 0.5 ? -1.0 : 1.0; };
  p[0] = sign() * log_uniform(g, lo, hi);
  const std::size_t pairs = (n + 1) / 2 - 1;
  for (std::size_t k = 1; k <= pairs; ++k) {
    const double r = log_uniform(g, lo, hi);
    const double phi = cdflow::rng::uniform(g, 0.0, 2.0 * std::numbers::pi);
    p[2 * k - 1] = r * std::cos(phi);
    p[2 * k] = r * std::sin(phi);
  }
  if (n % 2 == 0 && n > 1) p[n - 1] = sign() * log_uniform(g, lo, hi);
  return p;
}

inline cdflow::structured::CDChain random_chain(std::size_t n, std::size_t m,
                                                cdflow::rng::Engine& g, double lo = 1.0,
                                                double hi = 10.0) {
  cdflow::structured::CDChain w(n, m);
  for (std::size_t j = 0; j < m; ++j)
    for (double& d : w.diagonal(j))
      d = (cdflow::rng::uniform(g) < 0.5 ? -1.0 : 1.0) * log_uniform(g, lo, hi);
  for (std::size_t j = 0; j + 1 < m; ++j) {
    const auto s = random_spectrum(n, g, lo, hi);
    std::copy(s.begin(), s.end(), w.spectrum(j).begin());
  }
  return w;
}

inline TimeDomainChain random_time_domain(std::size_t n, std::size_t m,
                                          cdflow::rng::Engine& g) {
  TimeDomainChain t;
  for (std::size_t j = 0; j < m; ++j) t.diagonals.push_back(oracle::random_vector(n, g));
  for (std::size_t j = 0; j + 1 < m; ++j) t.circulants.push_back(oracle::random_vector(n, g));
  t.chain = cdflow::structured::CDChain::from_time_domain(t.diagonals, t.circulants);
  return t;
}

// Dense product D_1 C_2 ... D_{2m-1} from explicit factor matrices.
inline cdflow::linalg::Matrix dense_product(const TimeDomainChain& t) {
  cdflow::linalg::Matrix w = oracle::dense_diagonal(t.diagonals[0]);
  for (std::size_t j = 0; j < t.circulants.size(); ++j) {
    w = oracle::naive_matmul(w, oracle::dense_circulant(t.circulants[j]));
    w = oracle::naive_matmul(w, oracle::dense_diagonal(t.diagonals[j + 1]));
  }
  return w;
}

inline cdflow::structured::ColumnBatch random_batch(std::size_t n, std::size_t cols,
                                                    cdflow::rng::Engine& g) {
  cdflow::structured::ColumnBatch b(n, cols);
  for (double& v : b.data()) v = cdflow::rng::normal(g);
  return b;
}

}  // namespace gen

namespace gen {

// Dense W from a chain's stored parameters without touching the FFT code:
// each spectrum is decoded by hand and inverted by direct summation.
inline cdflow::linalg::Matrix dense_from_parameters(const cdflow::structured::CDChain& w) {
  const std::size_t n = w.dim();
  auto circulant_column = [&](std::span<const double> p) {
    std::vector<oracle::Complex> full(n);
    full[0] = p[0];
    const std::size_t pairs = (n + 1) / 2 - 1;
    for (std::size_t k = 1; k <= pairs; ++k) {
      full[k] = oracle::Complex(p[2 * k - 1], p[2 * k]);
      full[n - k] = std::conj(full[k]);
    }
    if (n % 2 == 0 && n > 1) full[n / 2] = p[n - 1];
    const auto c = oracle::direct_dft(full, +1.0);
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = c[i].real() / static_cast<double>(n);
    return col;
  };
  auto diag = [&](std::size_t j) {
    const auto d = w.diagonal(j);
    return oracle::dense_diagonal(std::vector<double>(d.begin(), d.end()));
  };
  cdflow::linalg::Matrix out = diag(0);
  for (std::size_t j = 0; j < w.circulant_count(); ++j) {
    out = oracle::naive_matmul(out, oracle::dense_circulant(circulant_column(w.spectrum(j))));
    out = oracle::naive_matmul(out, diag(j + 1));
  }
  return out;
}

}  // namespace gen
