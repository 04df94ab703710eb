#include "sst/optim.hpp"

#include <cmath>

namespace sst {

double clip_global_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void adam_step(std::span<Tensor> params, OptState& state, const AdamConfig& cfg) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.assign(params.size(), {});
    state.second_moment.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i].numel(), 0.0);
      state.second_moment[i].assign(params[i].numel(), 0.0);
    }
  }
  ++state.step;
  const auto [b1, b2] = cfg.betas;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto w = p.data();
    auto g = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double grad = (g.empty() ? 0.0 : g[j]) + cfg.weight_decay * w[j];
      m[j] = b1 * m[j] + (1.0 - b1) * grad;
      v[j] = b2 * v[j] + (1.0 - b2) * grad * grad;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace sst
