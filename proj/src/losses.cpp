#include "sst/losses.hpp"

#include <cmath>

#include "sst/errors.hpp"
#include "sst/ops.hpp"

namespace sst {

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("loss tau must be > 0");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("loss alpha must be in [0, 1)");
  if (!(lambda >= 0.0)) throw ConfigError("loss lambda must be >= 0");
  if (n_classes != 5) throw ConfigError("loss n_classes must be 5");
}

Tensor scaled_log_probs(const Tensor& logits, double tau) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  return log_softmax(scale(logits, 1.0 / tau), -1);
}

Tensor label_smoothing_loss(const Tensor& logits, const LabelGrid& labels, double alpha,
                            double tau) {
  if (logits.rank() != 3 || logits.dim(0) != labels.batch || logits.dim(1) != labels.seq ||
      labels.labels.size() != labels.batch * labels.seq) {
    throw DimensionError("logits " + shape_str(logits.shape()) + " do not match labels [" +
                         std::to_string(labels.batch) + "," + std::to_string(labels.seq) + "]");
  }
  const std::size_t K = logits.dim(2);
  const std::size_t positions = labels.batch * labels.seq;
  std::vector<double> target(positions * K, alpha / static_cast<double>(K));
  for (std::size_t b = 0; b < labels.batch; ++b) {
    for (std::size_t s = 0; s < labels.seq; ++s) {
      const int y = labels.at(b, s);
      if (y < 0 || static_cast<std::size_t>(y) >= K) {
        throw DataError("label " + std::to_string(y) + " at position (" + std::to_string(b) +
                        ", " + std::to_string(s) + ") is outside 0.." + std::to_string(K - 1));
      }
      target[(b * labels.seq + s) * K + static_cast<std::size_t>(y)] += 1.0 - alpha;
    }
  }
  const Tensor q(logits.shape(), std::move(target));
  const Tensor nll = sum(mul(q, scaled_log_probs(logits, tau)));
  return scale(nll, -1.0 / static_cast<double>(positions));
}

Tensor cosine_alignment_loss(const Tensor& features_x, const Tensor& features_xp) {
  if (features_x.shape() != features_xp.shape()) {
    throw DimensionError("cosine loss operands differ: " + shape_str(features_x.shape()) +
                         " vs " + shape_str(features_xp.shape()));
  }
  const std::size_t rows = features_x.dim(0);
  const std::size_t width = features_x.numel() / rows;
  const auto& a = features_x.values();
  const auto& b = features_xp.values();

  std::vector<double> dots(rows), na2(rows), nb2(rows);
  double sim_sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double x = a[r * width + j];
      const double y = b[r * width + j];
      ab += x * y;
      aa += x * x;
      bb += y * y;
    }
    dots[r] = ab;
    na2[r] = aa;
    nb2[r] = bb;
    // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): identical rows give exactly 1.
    if (aa > 0.0 && bb > 0.0) sim_sum += ab / std::sqrt(aa * bb);
  }
  const double loss = 1.0 - sim_sum / static_cast<double>(rows);

  auto pa = features_x.impl();
  auto pb = features_xp.impl();
  return make_result(
      Shape{1}, {loss}, {features_x, features_xp},
      [pa, pb, rows, width, dots = std::move(dots), na2 = std::move(na2),
       nb2 = std::move(nb2)](const TensorImpl& o) {
        const double g = -o.grad[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          if (!(na2[r] > 0.0 && nb2[r] > 0.0)) continue;
          const double inv = 1.0 / std::sqrt(na2[r] * nb2[r]);
          const double cosv = dots[r] * inv;
          const double* x = pa->data.data() + r * width;
          const double* y = pb->data.data() + r * width;
          if (pa->requires_grad) {
            double* gx = pa->grad_buffer().data() + r * width;
            for (std::size_t j = 0; j < width; ++j) {
              gx[j] += g * (y[j] * inv - cosv * x[j] / na2[r]);
            }
          }
          if (pb->requires_grad) {
            double* gy = pb->grad_buffer().data() + r * width;
            for (std::size_t j = 0; j < width; ++j) {
              gy[j] += g * (x[j] * inv - cosv * y[j] / nb2[r]);
            }
          }
        }
      });
}

Tensor distillation_kl_loss(const Tensor& logits_fwd, const Tensor& logits_rev, double tau) {
  if (logits_fwd.shape() != logits_rev.shape()) {
    throw DimensionError("KL operands differ: " + shape_str(logits_fwd.shape()) + " vs " +
                         shape_str(logits_rev.shape()));
  }
  const Tensor log_p = scaled_log_probs(logits_fwd, tau);
  const Tensor log_r = scaled_log_probs(logits_rev, tau);
  const std::size_t positions = logits_fwd.numel() / logits_fwd.dim(-1);
  const Tensor kl = sum(mul(exp(log_p), sub(log_p, log_r)));
  return scale(kl, 1.0 / static_cast<double>(positions));
}

LossBreakdown total_loss(const ForwardTrace& forward, const ForwardTrace& reverse,
                         const LabelGrid& labels, const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  out.ls = label_smoothing_loss(forward.logits, labels, cfg.alpha, cfg.tau);
  out.cos = cfg.use_cos ? cosine_alignment_loss(forward.cnn_x, forward.cnn_xp) : Tensor::scalar(0.0);
  out.kl = distillation_kl_loss(forward.logits, reverse.logits, cfg.tau);
  const double kl_weight = cfg.lambda * cfg.tau * cfg.tau;
  out.total = add(add(out.ls, out.cos), scale(out.kl, kl_weight));
  return out;
}

}  // namespace sst
