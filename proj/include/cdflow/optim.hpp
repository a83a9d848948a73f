#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cdflow::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

// One bias-corrected Adam update. `lr_scale`, when non-empty, multiplies the
// learning rate per parameter (parameter-group scaling).
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, double lr, const AdamConfig& config = {},
               std::span<const double> lr_scale = {});

}  // namespace cdflow::optim
