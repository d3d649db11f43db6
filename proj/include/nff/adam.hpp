#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nff/autodiff.hpp"

namespace nff::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers, one per parameter, plus the step counter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update. An empty state is initialised with zero
/// moments shaped like `params`.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace nff::ad
