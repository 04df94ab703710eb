#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "sst/errors.hpp"
#include "sst/ops.hpp"
#include "sst/optim.hpp"
#include "sst/tensor.hpp"

using namespace sst;
using sst::testing::check_gradients;
using sst::testing::random_tensor;

namespace {

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(t.values()[i], expected[i], tol) << "at " << i;
  }
}

}  // namespace

TEST(Tensor, ShapeAndDataInvariant) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at({1, 2}), 6.0);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>{1, 2}), DimensionError);
  EXPECT_THROW(Tensor(Shape{0, 3}), DimensionError);
}

TEST(Matmul, IdentityAndHandCase) {
  Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor m({2, 2}, std::vector<double>{1, 2, 3, 4});
  expect_values(matmul(eye, m), {1, 2, 3, 4});

  Tensor row({1, 2}, std::vector<double>{1, 2});
  Tensor col({2, 1}, std::vector<double>{3, 4});
  expect_values(matmul(row, col), {11});
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a({2, 3});
  Tensor b({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
}

TEST(Matmul, GradOfSumIsOnesTimesBTransposed) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double expected = b.at({k, 0}) + b.at({k, 1});
      EXPECT_NEAR(a.grad()[i * 4 + k], expected, 1e-12);
    }
  }
  a.zero_grad();
  b.zero_grad();
  EXPECT_LT(check_gradients({a, b}, [&] { return sum(matmul(a, b)); }), 1e-6);
}

TEST(Matmul, BroadcastBatchGradients) {
  std::mt19937_64 rng(2);
  Tensor a = random_tensor({2, 3, 4, 5}, rng);
  Tensor b = random_tensor({5, 2}, rng);
  Tensor c = random_tensor({3, 2, 3}, rng);
  auto loss = [&] { return sum(mul(matmul(matmul(a, b), c), matmul(matmul(a, b), c))); };
  EXPECT_EQ(matmul(matmul(a, b), c).shape(), (Shape{2, 3, 4, 3}));
  EXPECT_LT(check_gradients({a, b, c}, loss), 1e-6);
}

TEST(Conv1d, IdentityKernelAndHandCase) {
  Tensor x({1, 1, 3}, std::vector<double>{1, 2, 3});
  Tensor k1({1, 1, 1}, std::vector<double>{1});
  expect_values(conv1d(x, k1), {1, 2, 3});

  Tensor x4({1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  Tensor k2({1, 1, 2}, std::vector<double>{1, 1});
  expect_values(conv1d(x4, k2, 1, 0), {3, 5, 7});
}

TEST(Conv1d, OutputLengthAndErrors) {
  Tensor x({2, 3, 20});
  Tensor k({4, 3, 5});
  EXPECT_EQ(conv1d(x, k, 3, 1).shape(), (Shape{2, 4, 6}));  // floor((20+2-5)/3)+1
  EXPECT_THROW(conv1d(Tensor({1, 1, 3}), Tensor({1, 1, 6}), 1, 1), DimensionError);
  EXPECT_THROW(conv1d(Tensor({1, 2, 3}), Tensor({1, 1, 2})), DimensionError);
}

TEST(Conv1d, GradientCheck) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({1, 1, 16}, rng);
  Tensor k = random_tensor({1, 1, 3}, rng);
  EXPECT_LT(check_gradients({x, k}, [&] { auto y = conv1d(x, k); return sum(mul(y, y)); }),
            1e-6);

  Tensor xs = random_tensor({2, 3, 17}, rng);
  Tensor ks = random_tensor({4, 3, 5}, rng);
  EXPECT_LT(check_gradients({xs, ks},
                            [&] { auto y = conv1d(xs, ks, 2, 2); return sum(mul(y, y)); }),
            1e-6);
}

TEST(Softmax, Examples) {
  expect_values(softmax(Tensor({5}, 0.0), 0), {0.2, 0.2, 0.2, 0.2, 0.2});
  const double e = std::exp(1.0);
  expect_values(softmax(Tensor({2}, std::vector<double>{1, 0}), 0), {e / (e + 1), 1 / (e + 1)});
  EXPECT_NEAR(softmax(Tensor({2}, std::vector<double>{1, 0}), 0).values()[0], 0.731059, 1e-6);
  const Tensor big = softmax(Tensor({2}, std::vector<double>{1000, 0}), 0);
  EXPECT_EQ(big.values()[0], 1.0);
  EXPECT_GE(big.values()[1], 0.0);
  EXPECT_LT(big.values()[1], 1e-300);
}

TEST(Softmax, RowsSumToOneOnAnyAxis) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x = random_tensor({3, 4, 5}, rng, false, 10.0);
    for (std::ptrdiff_t axis : {0, 1, 2, -1}) {
      Tensor y = softmax(x, axis);
      const Tensor s = sum(y, axis);
      for (double v : s.values()) EXPECT_NEAR(v, 1.0, 1e-12);
      for (double v : y.values()) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Softmax, GradientChecks) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({3, 4}, rng, false);
  EXPECT_LT(check_gradients({x}, [&] { return sum(mul(softmax(x, 1), w)); }), 1e-6);
  EXPECT_LT(check_gradients({x}, [&] { return sum(mul(softmax(x, 0), w)); }), 1e-6);
  EXPECT_LT(check_gradients({x}, [&] { return sum(mul(log_softmax(x, -1), w)); }), 1e-6);
}

TEST(LayerNorm, Examples) {
  Tensor gain({4}, 1.0), bias({4}, 0.0);
  expect_values(layernorm(Tensor({1, 4}, 5.0), gain, bias), {0, 0, 0, 0});
  Tensor g2({2}, 1.0), b2({2}, 0.0);
  expect_values(layernorm(Tensor({1, 2}, std::vector<double>{1, 3}), g2, b2, 1e-14), {-1, 1},
                1e-12);
  EXPECT_THROW(layernorm(Tensor({2, 3}), gain, bias), DimensionError);
}

TEST(LayerNorm, RowStatistics) {
  std::mt19937_64 rng(6);
  Tensor gain({8}, 1.0), bias({8}, 0.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor y = layernorm(random_tensor({5, 8}, rng, false, 3.0), gain, bias);
    for (std::size_t r = 0; r < 5; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 8; ++j) mu += y.at({r, j});
      mu /= 8.0;
      for (std::size_t j = 0; j < 8; ++j) var += (y.at({r, j}) - mu) * (y.at({r, j}) - mu);
      var /= 8.0;
      EXPECT_LT(std::abs(mu), 1e-9);
      EXPECT_NEAR(var, 1.0, 1e-4);  // eps = 1e-5 inside the root shrinks var slightly
    }
  }
}

TEST(LayerNorm, GradientCheck) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 8}, rng);
  Tensor gain = random_tensor({8}, rng);
  Tensor bias = random_tensor({8}, rng);
  Tensor w = random_tensor({2, 8}, rng, false);
  EXPECT_LT(check_gradients({x, gain, bias},
                            [&] { return sum(mul(layernorm(x, gain, bias), w)); }),
            1e-5);
}

TEST(Gelu, Examples) {
  expect_values(gelu(Tensor({1}, 0.0)), {0.0});
  EXPECT_NEAR(gelu(Tensor({1}, 1.0)).item(), 0.841345, 1e-6);
  const double tail = gelu(Tensor({1}, -10.0)).item();
  EXPECT_FALSE(std::isnan(tail));
  EXPECT_NEAR(tail, -7.619853e-23, 1e-28);
}

TEST(Gelu, GradientCheck) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({10}, rng, true, 2.0);
  EXPECT_LT(check_gradients({x}, [&] { auto y = gelu(x); return sum(mul(y, y)); }), 1e-6);
}

TEST(Relu, ExamplesAndSubgradient) {
  expect_values(relu(Tensor({3}, std::vector<double>{-1, 0, 2})), {0, 0, 2});
  expect_values(relu(Tensor({3}, -4.0)), {0, 0, 0});
  Tensor x({3}, std::vector<double>{-1.5, 0.0, 2.5}, true);
  backward(sum(relu(x)));
  expect_values(Tensor({3}, std::vector<double>(x.grad().begin(), x.grad().end())), {0, 0, 1});
  Tensor y({2}, std::vector<double>{-0.7, 0.9}, true);
  EXPECT_LT(check_gradients({y}, [&] { return sum(relu(y)); }), 1e-8);
}

TEST(AdaptivePool, Examples) {
  Tensor x({1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  expect_values(adaptive_avg_pool1d(x, 4), {1, 2, 3, 4});
  expect_values(adaptive_avg_pool1d(x, 2), {1.5, 3.5});
  expect_values(adaptive_avg_pool1d(Tensor({1, 2, 7}, 3.25), 3), {3.25, 3.25, 3.25, 3.25, 3.25, 3.25});
  EXPECT_THROW(adaptive_avg_pool1d(x, 5), DimensionError);
}

TEST(AdaptivePool, MeanPreservedWhenDivisible) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({2, 3, 12}, rng, false);
  const double in_mean = mean(x).item();
  EXPECT_NEAR(mean(adaptive_avg_pool1d(x, 4)).item(), in_mean, 1e-12);
  Tensor g = random_tensor({1, 2, 11}, rng);
  Tensor w = random_tensor({1, 2, 3}, rng, false);
  EXPECT_LT(check_gradients({g}, [&] { return sum(mul(adaptive_avg_pool1d(g, 3), w)); }), 1e-6);
}

TEST(Backward, SimpleCases) {
  Tensor x({3}, std::vector<double>{1, 2, 3}, true);
  backward(sum(x));
  expect_values(Tensor({3}, std::vector<double>(x.grad().begin(), x.grad().end())), {1, 1, 1});

  Tensor y({2}, std::vector<double>{1, 2}, true);
  backward(sum(mul(y, y)));
  EXPECT_DOUBLE_EQ(y.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(y.grad()[1], 4.0);
}

TEST(Backward, SharedInputVisitedOnce) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(add(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x({2}, std::vector<double>{1, 2}, true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
}

TEST(Backward, RejectsNonScalar) {
  Tensor x({2}, 1.0, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, NoGradGuardSkipsRecording) {
  Tensor x({2}, 1.0, true);
  NoGradGuard guard;
  Tensor y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(ShapeOps, GradientChecks) {
  std::mt19937_64 rng(10);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({2, 1, 4}, rng);
  Tensor t = random_tensor({4}, rng);
  Tensor w = random_tensor({2, 4, 3}, rng, false);
  auto loss = [&] {
    Tensor c = concat({a, b}, 1);                    // [2,4,4]
    Tensor p = permute(add(c, t), {0, 2, 1});        // [2,4,4]
    Tensor s = slice(p, 2, 1, 3);                    // [2,4,3]
    Tensor r = reshape(s, {2, 4, 3});
    Tensor e = mul(broadcast_to(slice(b, 0, 0, 1), {2, 1, 4}), slice(a, 1, 0, 1));
    return add(sum(mul(r, w)), sum(mul(exp(scale(e, 0.1)), e)));
  };
  EXPECT_LT(check_gradients({a, b, t}, loss), 1e-6);
  Tensor pos = random_tensor({3, 2}, rng);
  EXPECT_LT(check_gradients({pos}, [&] { return sum(log(add(mul(pos, pos), Tensor({1}, 1.0)))); }),
            1e-6);
}

TEST(ShapeOps, SumAxis) {
  Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  expect_values(sum(x, 0), {5, 7, 9});
  expect_values(sum(x, 1), {6, 15});
  EXPECT_THROW(sum(x, 2), DimensionError);
  EXPECT_THROW(add(Tensor({2, 3}), Tensor({4})), DimensionError);
}

TEST(ClipGlobalNorm, Examples) {
  Tensor a({2}, 0.0, true);
  a.mutable_grad()[0] = 6.0;
  a.mutable_grad()[1] = 8.0;
  std::vector<Tensor> params{a};
  EXPECT_DOUBLE_EQ(clip_global_norm(params, 5.0), 10.0);
  EXPECT_DOUBLE_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], 4.0);

  Tensor b({2}, 0.0, true);
  b.mutable_grad()[0] = 3.0;
  std::vector<Tensor> pb{b};
  EXPECT_DOUBLE_EQ(clip_global_norm(pb, 5.0), 3.0);
  EXPECT_DOUBLE_EQ(b.grad()[0], 3.0);

  Tensor c({3}, 0.0, true);
  c.mutable_grad();
  std::vector<Tensor> pc{c};
  EXPECT_DOUBLE_EQ(clip_global_norm(pc, 5.0), 0.0);
  for (double g : c.grad()) EXPECT_EQ(g, 0.0);
}

TEST(ClipGlobalNorm, Idempotent) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> params{random_tensor({3}, rng), random_tensor({2, 2}, rng)};
    std::normal_distribution<double> dist(0.0, 5.0);
    for (auto& p : params) {
      for (auto& g : p.mutable_grad()) g = dist(rng);
    }
    clip_global_norm(params, 5.0);
    std::vector<double> once;
    for (auto& p : params) once.insert(once.end(), p.grad().begin(), p.grad().end());
    clip_global_norm(params, 5.0);
    std::size_t i = 0;
    for (auto& p : params) {
      for (double g : p.grad()) EXPECT_NEAR(g, once[i++], 1e-14);
    }
  }
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  Tensor p({3}, std::vector<double>{1.0, -2.0, 0.5}, true);
  p.mutable_grad()[0] = 0.3;
  p.mutable_grad()[1] = -4.0;
  p.mutable_grad()[2] = 1e-3;
  std::vector<Tensor> params{p};
  OptState state;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  adam_step(params, state, cfg);
  const std::vector<double> g{0.3, -4.0, 1e-3};
  const std::vector<double> before{1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = before[i] - cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    EXPECT_NEAR(p.data()[i], expected, 1e-15);
    EXPECT_NEAR(p.data()[i], before[i] - cfg.lr * (g[i] > 0 ? 1 : -1), 1e-7);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p({2}, std::vector<double>{1.0, 2.0}, true);
  p.mutable_grad();
  std::vector<Tensor> params{p};
  OptState state;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  adam_step(params, state, cfg);
  EXPECT_EQ(p.data()[0], 1.0);
  EXPECT_EQ(p.data()[1], 2.0);
}

TEST(Adam, DescendsConvexQuadratic) {
  Tensor x({1}, std::vector<double>{2.0}, true);
  std::vector<Tensor> params{x};
  OptState state;
  AdamConfig cfg;
  cfg.lr = 0.1;
  const double f0 = x.data()[0] * x.data()[0];
  for (int step = 0; step < 2; ++step) {
    x.zero_grad();
    backward(sum(mul(x, x)));
    adam_step(params, state, cfg);
  }
  EXPECT_LT(x.data()[0] * x.data()[0], f0);
  EXPECT_EQ(state.step, 2u);
}

TEST(Adam, WeightDecayIsCoupled) {
  // Coupled decay with a zero gradient still moves by a full Adam step.
  Tensor p({1}, std::vector<double>{1.0}, true);
  p.mutable_grad();
  std::vector<Tensor> params{p};
  OptState state;
  AdamConfig cfg;
  cfg.weight_decay = 0.5;
  adam_step(params, state, cfg);
  EXPECT_NEAR(p.data()[0], 1.0 - cfg.lr * 0.5 / (0.5 + cfg.eps), 1e-15);
}
