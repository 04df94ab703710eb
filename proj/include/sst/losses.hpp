#pragma once

#include <cstddef>
#include <vector>

#include "sst/model.hpp"
#include "sst/tensor.hpp"

namespace sst {

// Row-major [B, S] stage labels in {0..4}.
struct LabelGrid {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> labels;

  int at(std::size_t b, std::size_t s) const { return labels[b * seq + s]; }
};

struct LossConfig {
  double tau = 5.0;     // temperature
  double lambda = 1.0;  // distillation weight
  double alpha = 0.1;   // smoothing level
  bool use_cos = true;  // ablation switch for the feature-alignment term
  std::size_t n_classes = 5;

  void validate() const;
};

struct LossBreakdown {
  Tensor ls;
  Tensor cos;
  Tensor kl;
  Tensor total;
};

// log softmax(Z / tau) over the class axis.
Tensor scaled_log_probs(const Tensor& logits, double tau);

/// Label-smoothed cross-entropy on temperature-scaled logits, averaged over
/// all B*S positions. Targets are (1 - alpha) * onehot + alpha / n_classes.
/// Throws DataError naming (b, s) for an out-of-range label.
Tensor label_smoothing_loss(const Tensor& logits, const LabelGrid& labels, double alpha,
                            double tau);

// 1 - mean over the leading axis of the cosine similarity between the
// flattened remaining axes. All-zero rows count as similarity 0.
Tensor cosine_alignment_loss(const Tensor& features_x, const Tensor& features_xp);

// Mean over positions of KL(softmax(Z_fwd/tau) || softmax(Z_rev/tau)).
// Gradients flow into both arguments.
Tensor distillation_kl_loss(const Tensor& logits_fwd, const Tensor& logits_rev, double tau);

// total = ls + cos + lambda * tau^2 * kl. `forward` is the (X, X') trace and
// `reverse` the (X', X) trace under the same weights.
LossBreakdown total_loss(const ForwardTrace& forward, const ForwardTrace& reverse,
                         const LabelGrid& labels, const LossConfig& cfg);

}  // namespace sst
