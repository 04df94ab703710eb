#pragma once

// Training loop with validation cadence and early stopping, sequential
// inference, classification metrics and the repeated-seed experiment.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sst/losses.hpp"
#include "sst/model.hpp"
#include "sst/sampling.hpp"

namespace sst {

struct TrainConfig {
  std::size_t max_steps = 10000;
  std::size_t validate_every = 100;
  std::size_t patience = 10;  // consecutive non-improving validations
  std::size_t batch = 64;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double clip_norm = 5.0;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  SamplingMode sampling = SamplingMode::easy_difficult;
  double p0 = 0.25;
  std::size_t eval_batch = 32;  // sequences per inference pass
  LossConfig loss;

  void validate() const;  // ConfigError
};

struct MetricsReport {
  std::array<std::array<std::size_t, kNumStages>, kNumStages> confusion{};  // [true][pred]
  std::array<double, kNumStages> per_class_f1{};
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double kappa = 0.0;
};

// F1 = 2TP / (2TP + FP + FN), 0 for a class absent from both vectors.
// kappa = (p_o - p_e) / (1 - p_e), defined as 0 when p_e == 1.
MetricsReport evaluate_metrics(const std::vector<int>& truth, const std::vector<int>& pred);

struct ValidationResult {
  double loss = 0.0;
  MetricsReport report;
};

struct ValidationPoint {
  std::size_t step = 0;
  double loss = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  double kappa = 0.0;

  friend bool operator==(const ValidationPoint&, const ValidationPoint&) = default;
};

struct RunSummary {
  double best_val_metric = 0.0;  // macro-F1
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool stopped_early = false;
  std::vector<ValidationPoint> history;
  MetricsReport best_report;  // validation metrics of the returned checkpoint
};

struct TrainResult {
  ModelParams params;  // best checkpoint
  RunSummary summary;
};

using Validator = std::function<ValidationResult(const ModelParams&, std::size_t step)>;

// Deterministic split of subject indices; at least one subject lands on
// each side. DataError with fewer than two subjects.
struct SubjectSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
SubjectSplit split_subjects(std::size_t n_subjects, double val_fraction, std::uint64_t seed);

// Per-epoch predictions over non-overlapping length-S windows; a subject
// whose length is not a multiple of S gets one extra window aligned to its
// end, used only for the epochs not yet covered. Subjects shorter than S
// are skipped.
struct Predictions {
  std::vector<int> truth;
  std::vector<int> pred;
  double loss = 0.0;  // mean total loss per window, X' = X
};
Predictions predict_store(const ModelParams& params, const ModelConfig& model,
                          const EpochStore& store, const LossConfig& loss,
                          std::size_t eval_batch = 32);

ValidationResult validate(const ModelParams& params, const ModelConfig& model,
                          const EpochStore& store, const TrainConfig& cfg);

// Runs the loop on `train_store` with an explicit validator. Validation
// happens every validate_every steps and after the last step; training ends
// at max_steps or once `patience` validations in a row fail to beat the
// best macro-F1.
TrainResult train_with_validator(const EpochStore& train_store, const ModelConfig& model,
                                 const TrainConfig& cfg, const Validator& validator);

// Splits off val_fraction of the subjects and validates on them.
TrainResult train(const EpochStore& store, const ModelConfig& model, const TrainConfig& cfg);

// Pure inference; ConfigError if the store's rate or epoch length does not
// match the checkpoint.
MetricsReport transfer_evaluate(const ModelParams& params, const ModelConfig& model,
                                const EpochStore& store, const TrainConfig& cfg);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
};

struct VarianceRow {
  SamplingMode mode = SamplingMode::none;
  std::vector<MetricsReport> runs;
  MeanSd macro_f1, accuracy, kappa;
};

// n_runs trainings per sampling mode with seeds base_seed + r (or base_seed
// for every run when identical_seeds), each scored on `test_store`.
std::vector<VarianceRow> variance_experiment(const EpochStore& train_store,
                                             const EpochStore& test_store,
                                             const ModelConfig& model, const TrainConfig& cfg,
                                             std::size_t n_runs, bool identical_seeds = false);

MeanSd mean_sd(const std::vector<double>& values);

nlohmann::json to_json(const MetricsReport& report);
nlohmann::json to_json(const ValidationPoint& point);
// {confusion, per_class_f1, macro_f1, accuracy, kappa, history}
nlohmann::json metrics_json(const MetricsReport& report,
                            const std::vector<ValidationPoint>& history);

// Columns W N1 N2 N3 R Mean, plus accuracy and kappa.
std::string format_f1_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);
std::string format_variance_table(const std::vector<VarianceRow>& rows);

}  // namespace sst
