#include "cdflow/optim.hpp"

#include <cmath>

#include "cdflow/error.hpp"

namespace cdflow::optim {

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, double lr, const AdamConfig& config,
               std::span<const double> lr_scale) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n ||
      (!lr_scale.empty() && lr_scale.size() != n))
    throw DimensionError("adam_step: size mismatch");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    const double rate = lr_scale.empty() ? lr : lr * lr_scale[i];
    params[i] -= rate * mhat / (std::sqrt(vhat) + config.eps);
  }
}

}  // namespace cdflow::optim
