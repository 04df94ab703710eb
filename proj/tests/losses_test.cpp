#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "sst/errors.hpp"
#include "sst/losses.hpp"
#include "sst/model.hpp"
#include "sst/ops.hpp"

using namespace sst;
using sst::testing::check_gradients;
using sst::testing::random_tensor;

namespace {

// Direct evaluation of softmax(z / tau) for one row, test-side only.
std::vector<double> row_softmax(const std::vector<double>& z, double tau) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += p[i] = std::exp((z[i] - mx) / tau);
  for (auto& v : p) v /= total;
  return p;
}

LabelGrid labels_of(std::size_t b, std::size_t s, std::vector<int> v) {
  return LabelGrid{b, s, std::move(v)};
}

}  // namespace

TEST(ScaledLogProbs, UniformAndNormalised) {
  for (double tau : {0.5, 1.0, 5.0}) {
    const Tensor lp = scaled_log_probs(Tensor({1, 2, 5}, 0.0), tau);
    for (double v : lp.values()) EXPECT_NEAR(v, -1.609438, 1e-6);
  }
  std::mt19937_64 rng(1);
  const Tensor lp = scaled_log_probs(random_tensor({3, 4, 5}, rng, false, 4.0), 5.0);
  for (std::size_t r = 0; r < 12; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += std::exp(lp.values()[r * 5 + k]);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(ScaledLogProbs, HighTemperatureLimit) {
  std::mt19937_64 rng(2);
  const Tensor lp = scaled_log_probs(random_tensor({2, 3, 5}, rng, false, 3.0), 1e6);
  for (double v : lp.values()) EXPECT_LT(std::abs(v - std::log(0.2)), 1e-5);
}

TEST(LabelSmoothing, Examples) {
  const Tensor uniform({1, 3, 5}, 0.0);
  EXPECT_NEAR(label_smoothing_loss(uniform, labels_of(1, 3, {0, 2, 4}), 0.0, 5.0).item(),
              1.609438, 1e-6);

  std::vector<double> z(15, 0.0);
  const std::vector<int> y{1, 3, 0};
  for (std::size_t s = 0; s < 3; ++s) z[s * 5 + static_cast<std::size_t>(y[s])] = 1e4;
  EXPECT_LT(label_smoothing_loss(Tensor({1, 3, 5}, z), labels_of(1, 3, y), 0.0, 1.0).item(),
            1e-12);

  std::mt19937_64 rng(3);
  const Tensor logits = random_tensor({2, 2, 5}, rng, false);
  const double a = label_smoothing_loss(logits, labels_of(2, 2, {0, 1, 2, 3}), 1.0, 5.0).item();
  const double b = label_smoothing_loss(logits, labels_of(2, 2, {4, 4, 0, 1}), 1.0, 5.0).item();
  EXPECT_NEAR(a, b, 1e-14);
}

TEST(LabelSmoothing, RejectsOutOfRangeLabelWithPosition) {
  try {
    label_smoothing_loss(Tensor({2, 2, 5}, 0.0), labels_of(2, 2, {0, 1, 5, 2}), 0.1, 5.0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(1, 0)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(label_smoothing_loss(Tensor({2, 2, 5}, 0.0), labels_of(2, 2, {0, -1, 1, 2}), 0.1,
                                    5.0),
               DataError);
}

TEST(LabelSmoothing, MinimisedAtSmoothedTarget) {
  const double alpha = 0.1, tau = 5.0;
  const std::vector<int> y{0, 3, 4, 2};
  std::vector<double> z;
  for (int label : y) {
    for (int k = 0; k < 5; ++k) {
      const double q = (k == label ? 1.0 - alpha : 0.0) + alpha / 5.0;
      z.push_back(tau * std::log(q));
    }
  }
  Tensor logits({2, 2, 5}, z, true);
  backward(label_smoothing_loss(logits, labels_of(2, 2, y), alpha, tau));
  double norm = 0.0;
  for (double g : logits.grad()) norm += g * g;
  EXPECT_LT(std::sqrt(norm), 1e-9);
}

TEST(LabelSmoothing, GradientCheck) {
  std::mt19937_64 rng(4);
  Tensor logits = random_tensor({2, 3, 5}, rng);
  const auto y = labels_of(2, 3, {0, 1, 2, 3, 4, 1});
  EXPECT_LT(check_gradients({logits}, [&] { return label_smoothing_loss(logits, y, 0.1, 5.0); }),
            1e-6);
}

TEST(CosineLoss, Examples) {
  std::mt19937_64 rng(5);
  const Tensor a = random_tensor({4, 3, 6}, rng, false);
  EXPECT_EQ(cosine_alignment_loss(a, a.detach()).item(), 0.0);
  EXPECT_NEAR(cosine_alignment_loss(a, scale(a, -1.0)).item(), 2.0, 1e-12);

  const Tensor e1({2, 2}, std::vector<double>{1, 0, 0, 3});
  const Tensor e2({2, 2}, std::vector<double>{0, 2, -5, 0});
  EXPECT_NEAR(cosine_alignment_loss(e1, e2).item(), 1.0, 1e-15);

  // Zero row: similarity 0 for that row, so loss = 1 - (1 + 0)/2.
  const Tensor z1({2, 2}, std::vector<double>{1, 1, 0, 0});
  const Tensor z2({2, 2}, std::vector<double>{2, 2, 1, 1});
  EXPECT_NEAR(cosine_alignment_loss(z1, z2).item(), 0.5, 1e-15);
  EXPECT_THROW(cosine_alignment_loss(Tensor({2, 3}), Tensor({3, 2})), DimensionError);
}

TEST(CosineLoss, GradientCheck) {
  std::mt19937_64 rng(6);
  Tensor a = random_tensor({3, 2, 4}, rng);
  Tensor b = random_tensor({3, 2, 4}, rng);
  EXPECT_LT(check_gradients({a, b}, [&] { return cosine_alignment_loss(a, b); }), 1e-6);
}

TEST(KlLoss, ZeroForIdenticalAndNonNegative) {
  std::mt19937_64 rng(7);
  const Tensor z = random_tensor({2, 3, 5}, rng, false);
  EXPECT_EQ(distillation_kl_loss(z, z.detach(), 5.0).item(), 0.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const Tensor a = random_tensor({1, 1, 5}, rng, false, 3.0);
    const Tensor b = random_tensor({1, 1, 5}, rng, false, 3.0);
    ASSERT_GE(distillation_kl_loss(a, b, 5.0).item(), 0.0);
  }
}

TEST(KlLoss, MatchesDirectSummation) {
  // Rows near [0.5, 0.5, 0, 0, 0] against rows near [0.25, 0.75, 0, 0, 0].
  const std::vector<double> zf{0.0, 0.0, -40.0, -40.0, -40.0, 1.0, 0.0, -3.0, 2.0, 0.5};
  const std::vector<double> zr{std::log(0.25), std::log(0.75), -40.0, -40.0, -40.0,
                               0.3,            -1.0,           2.0,   0.0,   0.0};
  const double tau = 1.0;
  double expected = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    const auto p = row_softmax({zf.begin() + r * 5, zf.begin() + r * 5 + 5}, tau);
    const auto q = row_softmax({zr.begin() + r * 5, zr.begin() + r * 5 + 5}, tau);
    for (std::size_t i = 0; i < 5; ++i) expected += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  expected /= 2.0;
  const double got = distillation_kl_loss(Tensor({1, 2, 5}, zf), Tensor({1, 2, 5}, zr), tau).item();
  EXPECT_NEAR(got, expected, 1e-12);
  // First row alone: 0.5 log(0.5/0.25) + 0.5 log(0.5/0.75)
  const double first = distillation_kl_loss(Tensor({1, 1, 5}, {zf.begin(), zf.begin() + 5}),
                                            Tensor({1, 1, 5}, {zr.begin(), zr.begin() + 5}), tau)
                           .item();
  EXPECT_NEAR(first, 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-12);
}

TEST(KlLoss, GradientFlowsIntoBothSides) {
  std::mt19937_64 rng(8);
  Tensor a = random_tensor({2, 2, 5}, rng);
  Tensor b = random_tensor({2, 2, 5}, rng);
  EXPECT_LT(check_gradients({a, b}, [&] { return distillation_kl_loss(a, b, 5.0); }), 1e-6);
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
}

class TotalLossTest : public ::testing::Test {
 protected:
  ModelConfig cfg = ModelConfig::toy();
  ModelParams params = init_params(cfg, 11);
  std::mt19937_64 rng{11};
  LabelGrid y{2, 4, {0, 1, 2, 3, 4, 4, 2, 1}};

  Tensor input() {
    return random_tensor({2, cfg.seq_len, cfg.channels, cfg.epoch_samples}, rng, false);
  }
};

TEST_F(TotalLossTest, DegenerateSiamesePair) {
  const Tensor x = input();
  const Tensor x2 = x.detach();
  const LossBreakdown l =
      total_loss(sst_forward(x, x2, params, cfg), sst_forward(x2, x, params, cfg), y, LossConfig{});
  EXPECT_EQ(l.kl.item(), 0.0);
  EXPECT_EQ(l.cos.item(), 0.0);
  EXPECT_EQ(l.total.item(), l.ls.item());
}

TEST_F(TotalLossTest, RecompositionAndLambdaZero) {
  const Tensor x = input();
  const Tensor xp = input();
  const ForwardTrace f = sst_forward(x, xp, params, cfg);
  const ForwardTrace r = sst_forward(xp, x, params, cfg);
  LossConfig lc;
  const LossBreakdown l = total_loss(f, r, y, lc);
  EXPECT_GT(l.kl.item(), 0.0);
  EXPECT_GT(l.cos.item(), 0.0);
  EXPECT_LE(l.cos.item(), 2.0);
  EXPECT_GE(l.ls.item(), 0.0);
  EXPECT_NEAR(l.total.item(), l.ls.item() + l.cos.item() + lc.lambda * 25.0 * l.kl.item(), 1e-12);

  lc.lambda = 0.0;
  const LossBreakdown l0 = total_loss(f, r, y, lc);
  EXPECT_EQ(l0.total.item(), l0.ls.item() + l0.cos.item());

  lc.use_cos = false;
  EXPECT_EQ(total_loss(f, r, y, lc).total.item(), l0.ls.item());
}

TEST_F(TotalLossTest, KlIsDirectionalCosIsSymmetric) {
  const Tensor x = input();
  const Tensor xp = input();
  const ForwardTrace f = sst_forward(x, xp, params, cfg);
  const ForwardTrace r = sst_forward(xp, x, params, cfg);
  const LossBreakdown forward = total_loss(f, r, y, LossConfig{});
  const LossBreakdown swapped = total_loss(r, f, y, LossConfig{});
  EXPECT_NEAR(forward.cos.item(), swapped.cos.item(), 1e-15);
  EXPECT_NE(forward.kl.item(), swapped.kl.item());
}

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.alpha = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
