#pragma once

// Finite-difference Jacobians and parameter perturbation for flow tests.

#include <algorithm>
#include <functional>
#include <vector>

#include "cdflow/flow.hpp"
#include "oracles.hpp"

namespace oracle {

// Output-layer biases of a coupling: shat rows get `shat`, bhat rows `bhat`;
// output weights are zeroed so the conditioner is constant.
inline void set_constant_coupling(cdflow::flow::AffineCoupling& c, double shat, double bhat) {
  const auto& convs = c.convs();
  auto p = c.parameters();
  const std::size_t off = convs[0].parameter_count() + convs[1].parameter_count();
  std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(off), convs[2].weight_count(), 0.0);
  const std::size_t b0 = off + convs[2].weight_count();
  const std::size_t cb = c.transformed_channels();
  for (std::size_t i = 0; i < cb; ++i) {
    p[b0 + i] = shat;
    p[b0 + cb + i] = bhat;
  }
}

// Every layer exactly (to double rounding) the identity.
inline void make_identity(cdflow::flow::FlowModel& model) {
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    cdflow::flow::Layer& l = model.layer(i);
    if (auto* c = dynamic_cast<cdflow::flow::AffineCoupling*>(&l)) set_constant_coupling(*c, 60.0, 0.0);
    if (auto* a = dynamic_cast<cdflow::flow::ActNorm*>(&l)) {
      std::fill(a->scale().begin(), a->scale().end(), 1.0);
      std::fill(a->bias().begin(), a->bias().end(), 0.0);
      a->set_initialized(true);
    }
    if (auto* cd = dynamic_cast<cdflow::flow::CDConv*>(&l))
      cd->chain() = cdflow::structured::CDChain(cd->dim(), cd->chain().diagonal_count());
  }
}

inline std::vector<double> flatten(const std::vector<cdflow::flow::Tensor4>& parts,
                                   std::size_t b) {
  std::vector<double> out;
  for (const auto& p : parts) {
    const auto s = p.sample(b);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

// Dense Jacobian of f: R^d -> R^d by central differences.
inline cdflow::linalg::Matrix fd_jacobian(
    const std::vector<double>& x, const std::function<std::vector<double>(const std::vector<double>&)>& f,
    double h = 1e-6) {
  const std::size_t d = x.size();
  cdflow::linalg::Matrix j(d, d);
  std::vector<double> xp = x;
  for (std::size_t c = 0; c < d; ++c) {
    xp[c] = x[c] + h;
    const auto fp = f(xp);
    xp[c] = x[c] - h;
    const auto fm = f(xp);
    xp[c] = x[c];
    for (std::size_t r = 0; r < d; ++r) j(r, c) = (fp[r] - fm[r]) / (2.0 * h);
  }
  return j;
}

// log|det J| of the whole model at one input sample.
inline double fd_model_logdet(const cdflow::flow::FlowModel& model,
                              const cdflow::flow::Tensor4& x1) {
  std::vector<double> flat(x1.data().begin(), x1.data().end());
  const auto f = [&](const std::vector<double>& v) {
    cdflow::flow::Tensor4 t(x1.shape());
    std::copy(v.begin(), v.end(), t.data().begin());
    return flatten(model.forward(t).z, 0);
  };
  return gauss_logabsdet(fd_jacobian(flat, f));
}

// Puts every parameter a random distance from its init so no gradient is
// trivially zero, and marks ActNorm layers initialized.
inline void perturb(cdflow::flow::FlowModel& model, cdflow::rng::Engine& g, double scale = 0.1) {
  auto p = model.parameters();
  for (double& v : p) v += scale * cdflow::rng::normal(g);
  model.set_parameters(p);
  for (std::size_t i = 0; i < model.layer_count(); ++i)
    if (auto* a = dynamic_cast<cdflow::flow::ActNorm*>(&model.layer(i))) a->set_initialized(true);
}

inline cdflow::flow::Tensor4 random_tensor(cdflow::flow::Shape s, cdflow::rng::Engine& g,
                                           double scale = 1.0) {
  cdflow::flow::Tensor4 t(s);
  for (double& v : t.data()) v = scale * cdflow::rng::normal(g);
  return t;
}

inline double max_abs_diff(const cdflow::flow::Tensor4& a, const cdflow::flow::Tensor4& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace oracle
