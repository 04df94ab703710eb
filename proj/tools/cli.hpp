#pragma once

// Command-line front end: INI run configs, dataset sources and the
// train / transfer / inspect-edf / variance / synth commands.

#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "sst/ingest.hpp"
#include "sst/model.hpp"
#include "sst/training.hpp"

namespace sst::cli {

// Flattened "section.key" -> value.
using KeyValues = std::map<std::string, std::string>;

// ConfigError on unreadable files, malformed lines, duplicate keys or keys
// outside a section.
KeyValues parse_config_text(const std::string& text, const std::string& origin = "config");
KeyValues read_config_file(const std::string& path);

struct DataConfig {
  std::string train;  // "synth" or a dataset directory
  std::string test;   // optional, same forms
  std::string channel = "EEG";
  double resample_to = 0.0;  // 0 keeps the recorded rate
  bool lenient = false;
};

struct SynthConfig {
  std::size_t subjects = 8;
  std::size_t epochs = 60;
  std::size_t fs = 0;  // 0 follows model.fs
  double noise_sd = 0.1;
  std::uint64_t seed = 1;
  std::size_t test_subjects = 3;
  std::uint64_t test_seed = 2;
  SynthSpec spec;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;  // train.loss holds the [loss] section
  DataConfig data;
  SynthConfig synth;
};

// Every key the config format accepts.
const std::vector<std::string>& known_keys();

// Merges file < SST_SEED (as train.seed) < flag overrides, then validates.
// Unknown keys and missing required keys (data.train, train.seed) raise
// ConfigError naming the key.
RunConfig resolve_config(const KeyValues& file, const char* env_seed, const KeyValues& flags);

// Canonical key=value view of a resolved config, as recorded in summaries.
KeyValues config_kv(const RunConfig& cfg);

// "synth" draws from the [synth] section with `synth_seed`; anything else
// is a dataset directory. A positive `resample_to` converts the store rate.
EpochStore load_source(const std::string& source, const RunConfig& cfg, std::uint64_t synth_seed,
                       std::size_t synth_subjects, double resample_to);

// Resamples every subject's contiguous signal; ConfigError if the epoch
// length does not map to a whole number of samples.
EpochStore resample_store(const EpochStore& store, double target_fs);

struct TrainOutputs {
  std::string checkpoint_path;
  std::string summary_path;
  std::string table_path;
  RunSummary summary;
};

// Writes checkpoint.sst, summary.json and summary.txt into out_dir.
TrainOutputs cmd_train(const RunConfig& cfg, const std::string& out_dir, std::ostream& out);

struct TransferOptions {
  std::string checkpoint;
  std::string data;  // "synth" or a dataset directory
  double resample_to = 0.0;
  bool lenient = false;
  std::string channel = "EEG";
  std::string out_dir = ".";
  RunConfig run;  // [synth] and eval settings
};

// Writes transfer.json and transfer.txt.
MetricsReport cmd_transfer(const TransferOptions& opts, std::ostream& out);

void cmd_inspect_edf(const std::string& path, bool lenient, std::ostream& out);

// Writes variance.json and variance.txt.
std::vector<VarianceRow> cmd_variance(const RunConfig& cfg, std::size_t runs,
                                      bool identical_seeds, const std::string& out_dir,
                                      std::ostream& out);

// Writes the [synth] training store (or the test store) as a dataset dir.
void cmd_synth(const RunConfig& cfg, const std::string& out_dir, bool test_split,
               std::ostream& out);

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

// Full entry point; reads SST_SEED from the environment.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sst::cli
