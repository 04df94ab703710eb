#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sst/tensor.hpp"

namespace sst {

// Global L2 norm over all gradients; scales them by max_norm/norm when the
// norm exceeds max_norm. Returns the pre-clip norm. Missing grads count as 0.
double clip_global_norm(std::span<Tensor> params, double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  std::pair<double, double> betas{0.9, 0.999};
  double weight_decay = 1e-4;
  double eps = 1e-8;
};

struct OptState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

// Adam with bias correction. Weight decay is coupled: wd * param is added to
// the gradient before the moment updates. State is keyed by position in
// `params`, so callers must pass the same ordering every step.
void adam_step(std::span<Tensor> params, OptState& state, const AdamConfig& cfg);

}  // namespace sst
