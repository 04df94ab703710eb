#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "sst/checkpoint.hpp"
#include "sst/errors.hpp"
#include "sst/ingest.hpp"
#include "sst/training.hpp"

using namespace sst;

namespace {

// Counting oracle: every quantity straight from pairwise counts.
struct OracleMetrics {
  double accuracy, kappa, macro_f1;
  std::array<double, 5> f1;
};

OracleMetrics brute_force(const std::vector<int>& t, const std::vector<int>& p) {
  const double n = static_cast<double>(t.size());
  OracleMetrics m{};
  double agree = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) agree += t[i] == p[i];
  m.accuracy = agree / n;
  std::uint64_t chance = 0;
  for (int c = 0; c < 5; ++c) {
    double tp = 0, fp = 0, fn = 0;
    std::uint64_t nt = 0, np = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp += t[i] == c && p[i] == c;
      fp += t[i] != c && p[i] == c;
      fn += t[i] == c && p[i] != c;
      nt += t[i] == c;
      np += p[i] == c;
    }
    m.f1[c] = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
    chance += nt * np;
  }
  const double pe = static_cast<double>(chance) / (n * n);
  m.macro_f1 = (m.f1[0] + m.f1[1] + m.f1[2] + m.f1[3] + m.f1[4]) / 5.0;
  m.kappa = pe == 1.0 ? 0.0 : (m.accuracy - pe) / (1.0 - pe);
  return m;
}

EpochStore toy_store(std::uint64_t seed, std::size_t subjects = 3, std::size_t epochs = 60) {
  std::mt19937_64 rng(seed);
  return synth_dataset(subjects, epochs, 10, SynthSpec{}, 0.2, rng);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.max_steps = 6;
  c.validate_every = 3;
  c.batch = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Metrics, HandCases) {
  const MetricsReport perfect = evaluate_metrics({0, 1, 2, 3, 4, 2}, {0, 1, 2, 3, 4, 2});
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.kappa, 1.0);
  for (double f : perfect.per_class_f1) EXPECT_EQ(f, 1.0);

  const MetricsReport half = evaluate_metrics({0, 0, 1, 1}, {0, 1, 0, 1});
  EXPECT_NEAR(half.accuracy, 0.5, 1e-9);
  EXPECT_NEAR(half.kappa, 0.0, 1e-9);
  EXPECT_NEAR(half.per_class_f1[0], 0.5, 1e-9);
  EXPECT_NEAR(half.per_class_f1[1], 0.5, 1e-9);
  EXPECT_EQ(half.confusion[0][0], 1u);
  EXPECT_EQ(half.confusion[0][1], 1u);
  EXPECT_EQ(half.confusion[1][0], 1u);

  const MetricsReport skew = evaluate_metrics({0, 0, 0, 1}, {0, 0, 0, 0});
  EXPECT_NEAR(skew.accuracy, 0.75, 1e-9);
  EXPECT_NEAR(skew.per_class_f1[0], 0.857143, 1e-6);
  EXPECT_EQ(skew.per_class_f1[1], 0.0);
  EXPECT_NEAR(skew.macro_f1, 0.857142857 / 5.0, 1e-9);
}

TEST(Metrics, ConstantPredictionOnBalancedTruth) {
  std::vector<int> truth;
  for (int c = 0; c < 5; ++c) truth.insert(truth.end(), 7, c);
  const MetricsReport r = evaluate_metrics(truth, std::vector<int>(truth.size(), 2));
  EXPECT_NEAR(r.accuracy, 0.2, 1e-12);
  EXPECT_NEAR(r.kappa, 0.0, 1e-12);
}

TEST(Metrics, DegenerateChanceAgreementGivesZeroKappa) {
  const MetricsReport r = evaluate_metrics({3, 3, 3}, {3, 3, 3});
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.kappa, 0.0);
  EXPECT_EQ(r.per_class_f1[3], 1.0);
  EXPECT_EQ(r.macro_f1, 0.2);
}

TEST(Metrics, MatchesBruteForceOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> len(1, 200), cls(0, 4);
  std::bernoulli_distribution copy(0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> t(static_cast<std::size_t>(len(rng))), p(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = cls(rng);
      p[i] = copy(rng) ? t[i] : cls(rng);
    }
    const MetricsReport r = evaluate_metrics(t, p);
    const OracleMetrics o = brute_force(t, p);
    ASSERT_EQ(r.accuracy, o.accuracy);
    for (int c = 0; c < 5; ++c) ASSERT_EQ(r.per_class_f1[c], o.f1[c]);
    ASSERT_EQ(r.macro_f1, o.macro_f1);
    ASSERT_EQ(r.kappa, o.kappa);
    double trace = 0, total = 0;
    for (int a = 0; a < 5; ++a) {
      for (int b = 0; b < 5; ++b) total += static_cast<double>(r.confusion[a][b]);
      trace += static_cast<double>(r.confusion[a][a]);
    }
    ASSERT_EQ(r.accuracy, trace / total);
  }
}

TEST(Metrics, Errors) {
  EXPECT_THROW(evaluate_metrics({0, 1}, {0}), ContractError);
  EXPECT_THROW(evaluate_metrics({}, {}), ContractError);
  EXPECT_THROW(evaluate_metrics({0, 7}, {0, 1}), DataError);
}

TEST(Split, SubjectLevelAndDeterministic) {
  const SubjectSplit s = split_subjects(20, 0.1, 3);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.train.size(), 18u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.val.begin(), s.val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(split_subjects(20, 0.1, 3).val, s.val);
  EXPECT_EQ(split_subjects(3, 0.1, 0).val.size(), 1u);
  EXPECT_THROW(split_subjects(1, 0.1, 0), DataError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.max_steps, 10000u);
  EXPECT_EQ(c.validate_every, 100u);
  EXPECT_EQ(c.patience, 10u);
  EXPECT_EQ(c.batch, 64u);
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.p0 = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Predict, SequentialWindowsCoverEveryEpochOnce) {
  const ModelConfig cfg = ModelConfig::toy();
  EpochStore store(10, 1, 300);
  const EpochStore base = toy_store(2, 3, 11);
  for (std::size_t n : {11u, 8u, 3u}) {  // 2 windows + tail, 2 windows, too short
    Subject s = base.subjects()[store.subjects().size()];
    s.labels.resize(n);
    s.signal.resize(n * 300);
    store.add_subject(s);
  }
  const ModelParams params = init_params(cfg, 1);
  const Predictions p = predict_store(params, cfg, store, LossConfig{}, 3);
  ASSERT_EQ(p.truth.size(), 19u);
  std::vector<int> expected(store.subjects()[0].labels);
  expected.insert(expected.end(), store.subjects()[1].labels.begin(),
                  store.subjects()[1].labels.end());
  EXPECT_EQ(p.truth, expected);

  // Batch size does not change predictions or metrics.
  const Predictions q = predict_store(params, cfg, store, LossConfig{}, 1);
  EXPECT_EQ(p.pred, q.pred);
  EXPECT_NEAR(p.loss, q.loss, 1e-12);
  EXPECT_GT(p.loss, 0.0);
}

TEST(Validate, RepeatedCallsAreIdentical) {
  const ModelConfig cfg = ModelConfig::toy();
  const EpochStore store = toy_store(3);
  const ModelParams params = init_params(cfg, 2);
  const ValidationResult a = validate(params, cfg, store, TrainConfig{});
  const ValidationResult b = validate(params, cfg, store, TrainConfig{});
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.report.confusion, b.report.confusion);
}

TEST(Train, EarlyStoppingWithStubValidator) {
  const ModelConfig cfg = ModelConfig::toy();
  const EpochStore store = toy_store(4);
  TrainConfig tc = quick_config();
  tc.max_steps = 1000;
  tc.validate_every = 2;
  const std::size_t k = 3;
  std::vector<std::vector<double>> snapshots;
  std::size_t calls = 0;
  auto stub = [&](const ModelParams& p, std::size_t) {
    ++calls;
    std::vector<double> flat;
    for (const auto& t : p.tensors()) flat.insert(flat.end(), t.values().begin(), t.values().end());
    snapshots.push_back(flat);
    ValidationResult r;
    r.loss = 1.0 / static_cast<double>(calls);
    r.report.macro_f1 = calls <= k ? 0.1 * static_cast<double>(calls) : 0.05;
    return r;
  };
  const TrainResult res = train_with_validator(store, cfg, tc, stub);
  EXPECT_EQ(calls, k + 10);
  EXPECT_EQ(res.summary.history.size(), k + 10);
  EXPECT_EQ(res.summary.steps_run, (k + 10) * 2);
  EXPECT_TRUE(res.summary.stopped_early);
  EXPECT_EQ(res.summary.best_step, k * 2);
  EXPECT_NEAR(res.summary.best_val_metric, 0.3, 1e-12);

  std::vector<double> returned;
  for (const auto& t : res.params.tensors()) {
    returned.insert(returned.end(), t.values().begin(), t.values().end());
  }
  EXPECT_EQ(returned, snapshots[k - 1]);
  EXPECT_NE(returned, snapshots.back());
}

TEST(Train, ImprovementKeepsTrainingToMaxSteps) {
  const ModelConfig cfg = ModelConfig::toy();
  const EpochStore store = toy_store(5);
  TrainConfig tc = quick_config();
  tc.max_steps = 7;
  tc.validate_every = 2;
  tc.patience = 1;
  std::size_t calls = 0;
  const TrainResult res = train_with_validator(store, cfg, tc, [&](const ModelParams&, std::size_t) {
    ValidationResult r;
    r.report.macro_f1 = static_cast<double>(++calls);
    return r;
  });
  // Validations at 2, 4, 6 and the final step 7.
  ASSERT_EQ(res.summary.history.size(), 4u);
  EXPECT_EQ(res.summary.history.back().step, 7u);
  EXPECT_EQ(res.summary.best_step, 7u);
  EXPECT_FALSE(res.summary.stopped_early);
}

TEST(Train, DeterministicUnderSeed) {
  const ModelConfig cfg = ModelConfig::toy();
  const EpochStore store = toy_store(6, 4);
  const TrainConfig tc = quick_config();
  const TrainResult a = train(store, cfg, tc);
  const TrainResult b = train(store, cfg, tc);
  EXPECT_EQ(a.summary.history, b.summary.history);
  EXPECT_EQ(serialize_checkpoint(cfg, a.params), serialize_checkpoint(cfg, b.params));

  TrainConfig other = tc;
  other.seed = 6;
  EXPECT_NE(serialize_checkpoint(cfg, train(store, cfg, other).params),
            serialize_checkpoint(cfg, a.params));
}

TEST(Train, NonFiniteLossAborts) {
  const ModelConfig cfg = ModelConfig::toy();
  EpochStore store(10, 1, 300);
  const EpochStore clean = toy_store(7);
  for (const auto& s : clean.subjects()) {
    Subject bad = s;
    for (double& v : bad.signal) v = std::numeric_limits<double>::quiet_NaN();
    store.add_subject(bad);
  }
  try {
    train_with_validator(store, cfg, quick_config(),
                         [](const ModelParams&, std::size_t) { return ValidationResult{}; });
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Transfer, RateMismatchAndSamePath) {
  const ModelConfig cfg = ModelConfig::toy();
  const EpochStore store = toy_store(8);
  const ModelParams params = init_params(cfg, 3);
  const TrainConfig tc;
  const MetricsReport t = transfer_evaluate(params, cfg, store, tc);
  EXPECT_EQ(t.confusion, validate(params, cfg, store, tc).report.confusion);

  std::mt19937_64 rng(9);
  const EpochStore other_rate = synth_dataset(2, 10, 20, SynthSpec{}, 0.1, rng);
  try {
    transfer_evaluate(params, cfg, other_rate, tc);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("resample"), std::string::npos);
  }
}

TEST(Variance, IdenticalSeedsGiveZeroSd) {
  const ModelConfig cfg = ModelConfig::toy();
  const EpochStore store = toy_store(10, 3);
  const EpochStore test = toy_store(11, 2);
  TrainConfig tc = quick_config();
  tc.max_steps = 3;
  const auto rows = variance_experiment(store, test, cfg, tc, 2, true);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].mode, SamplingMode::none);
  EXPECT_EQ(rows[2].mode, SamplingMode::easy_difficult);
  for (const auto& r : rows) {
    EXPECT_EQ(r.runs.size(), 2u);
    EXPECT_EQ(r.macro_f1.sd, 0.0);
    EXPECT_EQ(r.accuracy.sd, 0.0);
    EXPECT_EQ(r.kappa.sd, 0.0);
  }
  EXPECT_THROW(variance_experiment(store, test, cfg, tc, 1), ConfigError);
  const std::string table = format_variance_table(rows);
  EXPECT_NE(table.find("easy+difficult"), std::string::npos);
}

TEST(MeanSd, SampleStatistics) {
  const MeanSd m = mean_sd({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.sd, std::sqrt(5.0 / 3.0), 1e-15);
}

TEST(Report, JsonKeysAndTable) {
  const MetricsReport r = evaluate_metrics({0, 1, 2, 3, 4}, {0, 1, 2, 3, 3});
  const auto j = metrics_json(r, {{10, 0.5, 0.4, 0.3, 0.2}});
  for (const char* key : {"confusion", "per_class_f1", "macro_f1", "accuracy", "kappa", "history"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.size(), 6u);
  EXPECT_EQ(j["confusion"][4][3], 1);
  EXPECT_EQ(j["history"][0]["step"], 10);
  const std::string table = format_f1_table({{"run", r}});
  EXPECT_NE(table.find("Mean"), std::string::npos);
  EXPECT_NE(table.find("N3"), std::string::npos);
}

TEST(Checkpoint, BitExactRoundTrip) {
  const ModelConfig cfg = ModelConfig::toy();
  const ModelParams params = init_params(cfg, 12);
  const std::string bytes = serialize_checkpoint(cfg, params);
  EXPECT_EQ(bytes.substr(0, 8), "SSTCKPT1");
  const Checkpoint ck = deserialize_checkpoint(bytes);
  EXPECT_EQ(ck.config, cfg);
  const auto a = params.named(), b = ck.params.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second.shape(), b[i].second.shape());
    EXPECT_EQ(0, std::memcmp(a[i].second.values().data(), b[i].second.values().data(),
                             a[i].second.numel() * sizeof(double)));
  }
  EXPECT_EQ(serialize_checkpoint(ck.config, ck.params), bytes);
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  const ModelConfig cfg = ModelConfig::toy();
  const std::string bytes = serialize_checkpoint(cfg, init_params(cfg, 13));
  std::string bad = bytes;
  bad[3] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), ParseError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), ParseError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "z"), ParseError);
  EXPECT_THROW(deserialize_checkpoint("SST"), ParseError);
}
