#include "sst/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "sst/errors.hpp"
#include "sst/ops.hpp"
#include "sst/optim.hpp"

namespace sst {

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  require(max_steps > 0, "max_steps must be positive");
  require(validate_every > 0, "validate_every must be positive");
  require(patience > 0, "patience must be positive");
  require(batch > 0, "batch must be positive");
  require(eval_batch > 0, "eval_batch must be positive");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(clip_norm > 0.0, "clip_norm must be positive");
  require(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction must lie in (0, 1)");
  require(p0 >= 0.0 && p0 < 0.5, "p0 must lie in [0, 0.5)");
  loss.validate();
}

MetricsReport evaluate_metrics(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.size() != pred.size()) {
    throw ContractError("evaluate_metrics: " + std::to_string(truth.size()) + " labels vs " +
                        std::to_string(pred.size()) + " predictions");
  }
  if (truth.empty()) throw ContractError("evaluate_metrics: no labels");
  MetricsReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (t < 0 || t >= static_cast<int>(kNumStages) || p < 0 || p >= static_cast<int>(kNumStages)) {
      throw DataError("evaluate_metrics: label outside {0..4} at index " + std::to_string(i));
    }
    ++r.confusion[t][p];
  }
  const auto n = static_cast<double>(truth.size());
  double diag = 0.0, chance = 0.0;
  for (std::size_t c = 0; c < kNumStages; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < kNumStages; ++k) {
      row += static_cast<double>(r.confusion[c][k]);
      col += static_cast<double>(r.confusion[k][c]);
    }
    const auto tp = static_cast<double>(r.confusion[c][c]);
    const double fn = row - tp, fp = col - tp;
    r.per_class_f1[c] = tp > 0.0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
    diag += tp;
    chance += row * col;
  }
  r.macro_f1 = std::accumulate(r.per_class_f1.begin(), r.per_class_f1.end(), 0.0) /
               static_cast<double>(kNumStages);
  r.accuracy = diag / n;
  const double pe = chance / (n * n);
  r.kappa = pe == 1.0 ? 0.0 : (r.accuracy - pe) / (1.0 - pe);
  return r;
}

SubjectSplit split_subjects(std::size_t n_subjects, double val_fraction, std::uint64_t seed) {
  if (n_subjects < 2) {
    throw DataError("a subject-level validation split needs at least 2 subjects, got " +
                    std::to_string(n_subjects));
  }
  std::vector<std::size_t> order(n_subjects);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::round(val_fraction * static_cast<double>(n_subjects)));
  n_val = std::clamp<std::size_t>(n_val, 1, n_subjects - 1);
  SubjectSplit s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

namespace {

void check_store_matches(const EpochStore& store, const ModelConfig& model) {
  if (store.fs() != model.fs) {
    throw ConfigError("data sampled at " + std::to_string(store.fs()) + " Hz but the model expects " +
                      std::to_string(model.fs) + " Hz; resample the data first");
  }
  if (store.channels() != model.channels || store.samples() != model.epoch_samples) {
    throw ConfigError("data epochs are [" + std::to_string(store.channels()) + "," +
                      std::to_string(store.samples()) + "] but the model expects [" +
                      std::to_string(model.channels) + "," +
                      std::to_string(model.epoch_samples) + "]");
  }
}

struct EvalWindow {
  Window window;
  std::size_t first_used = 0;  // offset of the first epoch not yet predicted
};

std::vector<EvalWindow> sequential_windows(const EpochStore& store, std::size_t S) {
  std::vector<EvalWindow> out;
  for (std::size_t s = 0; s < store.subjects().size(); ++s) {
    const std::size_t n = store.subjects()[s].labels.size();
    if (n < S) continue;
    std::size_t start = 0;
    for (; start + S <= n; start += S) out.push_back({{s, start}, 0});
    if (start < n) out.push_back({{s, n - S}, S - (n - start)});
  }
  return out;
}

}  // namespace

Predictions predict_store(const ModelParams& params, const ModelConfig& model,
                          const EpochStore& store, const LossConfig& loss,
                          std::size_t eval_batch) {
  check_store_matches(store, model);
  const std::size_t S = model.seq_len;
  const auto windows = sequential_windows(store, S);
  if (windows.empty()) {
    throw DataError("no subject has the " + std::to_string(S) + " epochs needed for inference");
  }
  NoGradGuard no_grad;
  Predictions out;
  double loss_sum = 0.0;
  for (std::size_t first = 0; first < windows.size(); first += eval_batch) {
    const std::size_t b = std::min(eval_batch, windows.size() - first);
    std::vector<Window> chunk;
    for (std::size_t i = 0; i < b; ++i) chunk.push_back(windows[first + i].window);
    const auto refs = expand_windows(chunk, S);
    const Tensor x = gather_epochs(store, refs, b, S);
    const LabelGrid y = gather_labels(store, refs, b, S);
    const ForwardTrace trace = sst_forward(x, x, params, model);
    loss_sum += total_loss(trace, trace, y, loss).total.item() * static_cast<double>(b);
    const auto& z = trace.logits.values();
    const std::size_t K = model.n_classes;
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t s = windows[first + i].first_used; s < S; ++s) {
        const double* row = z.data() + (i * S + s) * K;
        out.pred.push_back(static_cast<int>(std::max_element(row, row + K) - row));
        out.truth.push_back(y.at(i, s));
      }
    }
  }
  out.loss = loss_sum / static_cast<double>(windows.size());
  return out;
}

ValidationResult validate(const ModelParams& params, const ModelConfig& model,
                          const EpochStore& store, const TrainConfig& cfg) {
  const Predictions p = predict_store(params, model, store, cfg.loss, cfg.eval_batch);
  return {p.loss, evaluate_metrics(p.truth, p.pred)};
}

TrainResult train_with_validator(const EpochStore& train_store, const ModelConfig& model,
                                 const TrainConfig& cfg, const Validator& validator) {
  cfg.validate();
  model.validate();
  check_store_matches(train_store, model);
  const SequenceIndex index(train_store, model.seq_len);

  ModelParams params = init_params(model, cfg.seed);
  std::vector<Tensor> tensors = params.tensors();
  std::seed_seq seq{cfg.seed, std::uint64_t{0x5eed}};
  std::mt19937_64 rng(seq);
  SamplingMemory memory;
  memory.p0 = cfg.p0;
  memory.mode = cfg.sampling;
  OptState opt;
  const AdamConfig adam{cfg.lr, {cfg.beta1, cfg.beta2}, cfg.weight_decay};

  TrainResult result{params.clone(), {}};
  RunSummary& summary = result.summary;
  summary.best_val_metric = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    PairBatch batch = draw_pair_batch(index, memory, cfg.batch, rng);
    const Tensor cnn_x = cnn_block_forward(batch.x, params, model);
    const Tensor cnn_xp = cnn_block_forward(batch.xp, params, model);
    const ForwardTrace fwd = sst_forward_features(cnn_x, cnn_xp, cfg.batch, params, model);
    const ForwardTrace rev = sst_forward_features(cnn_xp, cnn_x, cfg.batch, params, model);
    const LossBreakdown loss = total_loss(fwd, rev, batch.y, cfg.loss);
    if (!std::isfinite(loss.total.item())) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "non-finite loss at step %zu (ls=%g cos=%g kl=%g)", step,
                    loss.ls.item(), loss.cos.item(), loss.kl.item());
      throw NumericalError(buf);
    }
    params.zero_grad();
    backward(loss.total);
    clip_global_norm(tensors, cfg.clip_norm);
    adam_step(tensors, opt, adam);
    summary.steps_run = step;

    if (step % cfg.validate_every != 0 && step != cfg.max_steps) continue;
    const ValidationResult v = validator(params, step);
    update_memory(memory, batch, v.loss);
    summary.history.push_back(
        {step, v.loss, v.report.macro_f1, v.report.accuracy, v.report.kappa});
    if (v.report.macro_f1 > summary.best_val_metric) {
      summary.best_val_metric = v.report.macro_f1;
      summary.best_step = step;
      summary.best_report = v.report;
      result.params = params.clone();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      summary.stopped_early = step < cfg.max_steps;
      break;
    }
  }
  return result;
}

TrainResult train(const EpochStore& store, const ModelConfig& model, const TrainConfig& cfg) {
  cfg.validate();
  const SubjectSplit split = split_subjects(store.subjects().size(), cfg.val_fraction, 0);
  const EpochStore train_store = store.select(split.train);
  const EpochStore val_store = store.select(split.val);
  return train_with_validator(train_store, model, cfg,
                              [&](const ModelParams& p, std::size_t) {
                                return validate(p, model, val_store, cfg);
                              });
}

MetricsReport transfer_evaluate(const ModelParams& params, const ModelConfig& model,
                                const EpochStore& store, const TrainConfig& cfg) {
  const Predictions p = predict_store(params, model, store, cfg.loss, cfg.eval_batch);
  return evaluate_metrics(p.truth, p.pred);
}

MeanSd mean_sd(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

std::vector<VarianceRow> variance_experiment(const EpochStore& train_store,
                                             const EpochStore& test_store,
                                             const ModelConfig& model, const TrainConfig& cfg,
                                             std::size_t n_runs, bool identical_seeds) {
  if (n_runs < 2) throw ConfigError("variance experiment needs at least 2 runs");
  std::vector<VarianceRow> rows;
  for (SamplingMode mode :
       {SamplingMode::none, SamplingMode::easy, SamplingMode::easy_difficult}) {
    VarianceRow row;
    row.mode = mode;
    std::vector<double> f1, acc, kappa;
    for (std::size_t r = 0; r < n_runs; ++r) {
      TrainConfig c = cfg;
      c.sampling = mode;
      c.seed = identical_seeds ? cfg.seed : cfg.seed + r;
      const TrainResult trained = train(train_store, model, c);
      row.runs.push_back(transfer_evaluate(trained.params, model, test_store, c));
      f1.push_back(row.runs.back().macro_f1);
      acc.push_back(row.runs.back().accuracy);
      kappa.push_back(row.runs.back().kappa);
    }
    row.macro_f1 = mean_sd(f1);
    row.accuracy = mean_sd(acc);
    row.kappa = mean_sd(kappa);
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const MetricsReport& report) {
  return {{"confusion", report.confusion},
          {"per_class_f1", report.per_class_f1},
          {"macro_f1", report.macro_f1},
          {"accuracy", report.accuracy},
          {"kappa", report.kappa}};
}

nlohmann::json to_json(const ValidationPoint& p) {
  return {{"step", p.step},
          {"loss", p.loss},
          {"macro_f1", p.macro_f1},
          {"accuracy", p.accuracy},
          {"kappa", p.kappa}};
}

nlohmann::json metrics_json(const MetricsReport& report,
                            const std::vector<ValidationPoint>& history) {
  nlohmann::json j = to_json(report);
  j["history"] = nlohmann::json::array();
  for (const auto& p : history) j["history"].push_back(to_json(p));
  return j;
}

std::string format_f1_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-16s %6s %6s %6s %6s %6s %6s %6s %6s\n", "", "W", "N1", "N2",
                "N3", "R", "Mean", "Acc", "Kappa");
  out += buf;
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f %6.3f\n",
                  name.c_str(), r.per_class_f1[0], r.per_class_f1[1], r.per_class_f1[2],
                  r.per_class_f1[3], r.per_class_f1[4], r.macro_f1, r.accuracy, r.kappa);
    out += buf;
  }
  return out;
}

std::string format_variance_table(const std::vector<VarianceRow>& rows) {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-16s %17s %17s %17s\n", "Sampling", "F1", "Acc", "Kappa");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %8.3f +- %5.3f %8.3f +- %5.3f %8.3f +- %5.3f\n",
                  to_string(r.mode), r.macro_f1.mean, r.macro_f1.sd, r.accuracy.mean,
                  r.accuracy.sd, r.kappa.mean, r.kappa.sd);
    out += buf;
  }
  return out;
}

}  // namespace sst
