#pragma once

// Training batch construction: balanced anchors, label-matched companions
// and the two-slot easy/difficult companion memory.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sst/losses.hpp"
#include "sst/tensor.hpp"

namespace sst {

inline constexpr std::size_t kNumStages = 5;
inline constexpr std::array<const char*, kNumStages> kStageNames{"W", "N1", "N2", "N3", "REM"};

struct Subject {
  std::string id;
  std::vector<int> labels;     // one per epoch, temporal order
  std::vector<double> signal;  // epochs * channels * samples, row-major

  friend bool operator==(const Subject&, const Subject&) = default;
};

// Per-subject epoch sequences sharing one sampling rate and epoch shape.
class EpochStore {
 public:
  EpochStore() = default;
  EpochStore(std::size_t fs, std::size_t channels, std::size_t samples);

  // Throws DataError on a size mismatch or a label outside {0..4}.
  void add_subject(Subject subject);

  std::size_t fs() const { return fs_; }
  std::size_t channels() const { return channels_; }
  std::size_t samples() const { return samples_; }
  std::size_t epoch_size() const { return channels_ * samples_; }
  const std::vector<Subject>& subjects() const { return subjects_; }
  std::size_t total_epochs() const;

  std::span<const double> epoch(std::size_t subject, std::size_t position) const;
  int label(std::size_t subject, std::size_t position) const {
    return subjects_[subject].labels[position];
  }

  // Subset by subject index, in the given order.
  EpochStore select(std::span<const std::size_t> subject_indices) const;

  friend bool operator==(const EpochStore&, const EpochStore&) = default;

 private:
  std::size_t fs_ = 0;
  std::size_t channels_ = 0;
  std::size_t samples_ = 0;
  std::vector<Subject> subjects_;
};

struct EpochRef {
  std::size_t subject = 0;
  std::size_t position = 0;

  friend bool operator==(const EpochRef&, const EpochRef&) = default;
};

struct Window {
  std::size_t subject = 0;
  std::size_t start = 0;

  friend bool operator==(const Window&, const Window&) = default;
};

// Lookup tables over every length-S window of a store. The store must
// outlive the index and stay unchanged.
class SequenceIndex {
 public:
  SequenceIndex(const EpochStore& store, std::size_t seq_len);

  const EpochStore& store() const { return *store_; }
  std::size_t seq_len() const { return seq_len_; }

  // Windows whose center epoch (offset floor(S/2)) has class c.
  const std::vector<Window>& centered(int c) const { return centered_[c]; }
  // Every epoch of class c, from all subjects.
  const std::vector<EpochRef>& epochs_of(int c) const { return epochs_[c]; }
  // Windows with exactly this label sequence; null when there are none.
  const std::vector<Window>* exact(std::span<const int> labels) const;

 private:
  const EpochStore* store_;
  std::size_t seq_len_;
  std::array<std::vector<Window>, kNumStages> centered_;
  std::array<std::vector<EpochRef>, kNumStages> epochs_;
  std::map<std::vector<int>, std::vector<Window>> by_sequence_;
};

// Per sequence: uniform class, then a uniform window centred on that class.
// Throws DataError naming the first class with no window.
std::vector<Window> balanced_anchor_indices(const SequenceIndex& index, std::size_t batch,
                                            std::mt19937_64& rng);

// Companion epochs for every (b, s) of `labels`, row-major. Each sequence
// uses a uniformly drawn window with the identical label sequence when one
// exists and otherwise one random epoch of the right class per position.
std::vector<EpochRef> match_companion(const SequenceIndex& index, const LabelGrid& labels,
                                      std::mt19937_64& rng);

std::vector<EpochRef> expand_windows(std::span<const Window> windows, std::size_t seq_len);

// [B, S, C, T] gather of the referenced epochs.
Tensor gather_epochs(const EpochStore& store, std::span<const EpochRef> refs, std::size_t batch,
                     std::size_t seq_len);
LabelGrid gather_labels(const EpochStore& store, std::span<const EpochRef> refs,
                        std::size_t batch, std::size_t seq_len);

enum class Provenance { random, easy, difficult };
enum class SamplingMode { none, easy, easy_difficult };

const char* to_string(Provenance p);
const char* to_string(SamplingMode m);
SamplingMode parse_sampling_mode(const std::string& text);  // ConfigError on bad text

struct PairBatch {
  Tensor x;   // [B, S, C, T]
  Tensor xp;  // [B, S, C, T]
  LabelGrid y;
  Provenance provenance = Provenance::random;
  std::vector<EpochRef> anchor;     // row-major [B, S]
  std::vector<EpochRef> companion;  // row-major [B, S]
};

struct StoredCompanion {
  std::vector<EpochRef> companion;
  LabelGrid labels;
  double loss = 0.0;
};

struct SamplingMemory {
  double p0 = 0.25;
  SamplingMode mode = SamplingMode::easy_difficult;
  std::optional<StoredCompanion> easy;
  std::optional<StoredCompanion> difficult;
  // Lowest and highest losses seen so far.
  std::optional<double> best;
  std::optional<double> worst;
};

// One u ~ U[0,1) per batch: u < p0 reuses the easy companion, u < 2 p0 the
// difficult one, anything else (or an empty or disabled slot) draws fresh.
// A reused companion fixes Y and the anchors are redrawn to match it.
PairBatch draw_pair_batch(const SequenceIndex& index, const SamplingMemory& memory,
                          std::size_t batch, std::mt19937_64& rng);

// Strict improvements only: ties keep the incumbent. NaN throws ContractError.
void update_memory(SamplingMemory& memory, const PairBatch& batch, double val_loss);

}  // namespace sst
