#pragma once

// Turning recordings into labelled 30 s epochs: epoching, rational
// resampling, synthetic stores and on-disk dataset directories.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sst/edf.hpp"
#include "sst/sampling.hpp"

namespace sst {

struct EpochedSignal {
  std::vector<int> labels;
  std::vector<double> signal;  // labels.size() * T samples
  std::size_t samples = 0;     // T
  std::size_t dropped = 0;     // windows without a single covering stage
};

// Consecutive non-overlapping windows of epoch_s * fs samples. A window is
// kept only if one W/N1/N2/N3/REM entry covers its whole span. ConfigError
// when fs * epoch_s is not an integer.
EpochedSignal epoch_and_label(const SignalTrace& trace, const Hypnogram& hyp,
                              double epoch_s = 30.0);

// Same windows with one sidecar label per window; extra labels or windows
// beyond the shorter of the two are dropped and counted.
EpochedSignal epoch_with_labels(const SignalTrace& trace, const std::vector<int>& labels,
                                double epoch_s = 30.0);

struct RateRatio {
  std::size_t up = 1;
  std::size_t down = 1;
};

// target / fs as a reduced fraction; ConfigError if it needs more than
// `max_factor` on either side.
RateRatio rational_ratio(double fs, double target_fs, std::size_t max_factor = 1024);

// Polyphase resampler: upsample by L, Kaiser-windowed sinc (beta 8.6, 64
// taps per phase, cutoff min(pi/L, pi/M)), downsample by M. Output length
// is ceil(n * L / M); each phase is normalised to unit DC gain.
SignalTrace resample(const SignalTrace& trace, double target_fs);

// First trace whose label contains `pattern`; DataError listing the
// available labels otherwise.
const SignalTrace& select_channel(const std::vector<SignalTrace>& traces,
                                  const std::string& pattern);

struct SynthSpec {
  std::array<double, kNumStages> freq_hz{4.0, 3.0, 2.0, 1.0, 2.5};
  std::array<double, kNumStages> amplitude{1.0, 1.0, 1.0, 1.0, 1.0};
  double stay_probability = 0.8;  // label chain: keep the stage, else jump uniformly
};

// Each epoch is amplitude * sin(2 pi f t + phase) + N(0, noise_sd) with a
// random phase; labels follow the stay-or-jump chain. Deterministic in rng.
EpochStore synth_dataset(std::size_t n_subjects, std::size_t epochs_per_subject,
                         std::size_t fs, const SynthSpec& spec, double noise_sd,
                         std::mt19937_64& rng);

// Dataset directory: subject files `<id>.edf` holding one EEG signal, with
// stages in `<id>.labels` (sidecar) or `<id>.hyp.edf` (EDF+ TAL).
struct LoadOptions {
  std::string channel = "EEG";
  double target_fs = 0.0;  // 0 keeps the recorded rate
  bool lenient = false;
};

struct LoadReport {
  std::size_t subjects = 0;
  std::size_t epochs = 0;
  std::size_t dropped = 0;
};

EpochStore load_dataset(const std::string& dir, const LoadOptions& options,
                        LoadReport* report = nullptr);

// Writes every subject of a single-channel store as EDF + label sidecar.
// Physical range is the signal's own min/max, quantised to 16 bits.
void save_dataset(const EpochStore& store, const std::string& dir);

}  // namespace sst
