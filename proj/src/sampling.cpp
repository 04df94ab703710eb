#include "sst/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "sst/errors.hpp"

namespace sst {

EpochStore::EpochStore(std::size_t fs, std::size_t channels, std::size_t samples)
    : fs_(fs), channels_(channels), samples_(samples) {
  if (fs == 0 || channels == 0 || samples == 0) {
    throw DataError("epoch store needs positive fs, channels and samples");
  }
}

void EpochStore::add_subject(Subject subject) {
  if (subject.signal.size() != subject.labels.size() * epoch_size()) {
    throw DataError("subject '" + subject.id + "': " + std::to_string(subject.signal.size()) +
                    " samples for " + std::to_string(subject.labels.size()) + " epochs of " +
                    std::to_string(epoch_size()));
  }
  for (std::size_t i = 0; i < subject.labels.size(); ++i) {
    const int l = subject.labels[i];
    if (l < 0 || l >= static_cast<int>(kNumStages)) {
      throw DataError("subject '" + subject.id + "' epoch " + std::to_string(i) + ": label " +
                      std::to_string(l) + " outside {0..4}");
    }
  }
  subjects_.push_back(std::move(subject));
}

std::size_t EpochStore::total_epochs() const {
  std::size_t n = 0;
  for (const auto& s : subjects_) n += s.labels.size();
  return n;
}

std::span<const double> EpochStore::epoch(std::size_t subject, std::size_t position) const {
  const auto& sig = subjects_.at(subject).signal;
  return std::span<const double>(sig).subspan(position * epoch_size(), epoch_size());
}

EpochStore EpochStore::select(std::span<const std::size_t> subject_indices) const {
  EpochStore out(fs_, channels_, samples_);
  for (std::size_t i : subject_indices) out.subjects_.push_back(subjects_.at(i));
  return out;
}

SequenceIndex::SequenceIndex(const EpochStore& store, std::size_t seq_len)
    : store_(&store), seq_len_(seq_len) {
  if (seq_len == 0) throw ConfigError("sequence length must be positive");
  const auto& subjects = store.subjects();
  for (std::size_t si = 0; si < subjects.size(); ++si) {
    const auto& labels = subjects[si].labels;
    for (std::size_t p = 0; p < labels.size(); ++p) epochs_[labels[p]].push_back({si, p});
    if (labels.size() < seq_len) continue;
    for (std::size_t start = 0; start + seq_len <= labels.size(); ++start) {
      centered_[labels[start + seq_len / 2]].push_back({si, start});
      by_sequence_[std::vector<int>(labels.begin() + static_cast<std::ptrdiff_t>(start),
                                    labels.begin() +
                                        static_cast<std::ptrdiff_t>(start + seq_len))]
          .push_back({si, start});
    }
  }
}

const std::vector<Window>* SequenceIndex::exact(std::span<const int> labels) const {
  const auto it = by_sequence_.find(std::vector<int>(labels.begin(), labels.end()));
  return it == by_sequence_.end() ? nullptr : &it->second;
}

namespace {

template <typename T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

}  // namespace

std::vector<Window> balanced_anchor_indices(const SequenceIndex& index, std::size_t batch,
                                            std::mt19937_64& rng) {
  for (std::size_t c = 0; c < kNumStages; ++c) {
    if (index.centered(static_cast<int>(c)).empty()) {
      throw DataError(std::string("no length-") + std::to_string(index.seq_len()) +
                      " window centred on class " + kStageNames[c]);
    }
  }
  std::uniform_int_distribution<int> cls(0, static_cast<int>(kNumStages) - 1);
  std::vector<Window> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) out.push_back(pick(index.centered(cls(rng)), rng));
  return out;
}

std::vector<EpochRef> match_companion(const SequenceIndex& index, const LabelGrid& labels,
                                      std::mt19937_64& rng) {
  const std::size_t S = index.seq_len();
  if (labels.seq != S || labels.labels.size() != labels.batch * S) {
    throw DimensionError("label grid does not match sequence length " + std::to_string(S));
  }
  std::vector<EpochRef> out;
  out.reserve(labels.labels.size());
  for (std::size_t b = 0; b < labels.batch; ++b) {
    const std::span<const int> row(labels.labels.data() + b * S, S);
    if (const auto* windows = index.exact(row)) {
      const Window w = pick(*windows, rng);
      for (std::size_t s = 0; s < S; ++s) out.push_back({w.subject, w.start + s});
      continue;
    }
    for (int c : row) {
      if (c < 0 || c >= static_cast<int>(kNumStages) || index.epochs_of(c).empty()) {
        throw DataError("no epoch of class " + std::to_string(c) + " to build a companion");
      }
      out.push_back(pick(index.epochs_of(c), rng));
    }
  }
  return out;
}

std::vector<EpochRef> expand_windows(std::span<const Window> windows, std::size_t seq_len) {
  std::vector<EpochRef> out;
  out.reserve(windows.size() * seq_len);
  for (const auto& w : windows) {
    for (std::size_t s = 0; s < seq_len; ++s) out.push_back({w.subject, w.start + s});
  }
  return out;
}

Tensor gather_epochs(const EpochStore& store, std::span<const EpochRef> refs, std::size_t batch,
                     std::size_t seq_len) {
  if (refs.size() != batch * seq_len) throw DimensionError("epoch refs do not fill [B, S]");
  std::vector<double> data;
  data.reserve(refs.size() * store.epoch_size());
  for (const auto& r : refs) {
    const auto e = store.epoch(r.subject, r.position);
    data.insert(data.end(), e.begin(), e.end());
  }
  return Tensor({batch, seq_len, store.channels(), store.samples()}, std::move(data));
}

LabelGrid gather_labels(const EpochStore& store, std::span<const EpochRef> refs,
                        std::size_t batch, std::size_t seq_len) {
  if (refs.size() != batch * seq_len) throw DimensionError("epoch refs do not fill [B, S]");
  LabelGrid g{batch, seq_len, {}};
  g.labels.reserve(refs.size());
  for (const auto& r : refs) g.labels.push_back(store.label(r.subject, r.position));
  return g;
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::easy: return "easy";
    case Provenance::difficult: return "difficult";
    case Provenance::random: break;
  }
  return "random";
}

const char* to_string(SamplingMode m) {
  switch (m) {
    case SamplingMode::none: return "none";
    case SamplingMode::easy: return "easy";
    case SamplingMode::easy_difficult: break;
  }
  return "easy+difficult";
}

SamplingMode parse_sampling_mode(const std::string& text) {
  if (text == "none") return SamplingMode::none;
  if (text == "easy") return SamplingMode::easy;
  if (text == "easy+difficult" || text == "easy_difficult") return SamplingMode::easy_difficult;
  throw ConfigError("unknown sampling mode '" + text + "' (none, easy, easy+difficult)");
}

PairBatch draw_pair_batch(const SequenceIndex& index, const SamplingMemory& memory,
                          std::size_t batch, std::mt19937_64& rng) {
  if (!(memory.p0 >= 0.0 && memory.p0 < 0.5)) {
    throw ContractError("p0 must lie in [0, 0.5), got " + std::to_string(memory.p0));
  }
  const std::size_t S = index.seq_len();
  const EpochStore& store = index.store();
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

  const StoredCompanion* reuse = nullptr;
  Provenance prov = Provenance::random;
  if (u < memory.p0) {
    if (memory.mode != SamplingMode::none && memory.easy && memory.easy->labels.batch == batch) {
      reuse = &*memory.easy;
      prov = Provenance::easy;
    }
  } else if (u < 2.0 * memory.p0) {
    if (memory.mode == SamplingMode::easy_difficult && memory.difficult &&
        memory.difficult->labels.batch == batch) {
      reuse = &*memory.difficult;
      prov = Provenance::difficult;
    }
  }

  PairBatch out;
  out.provenance = prov;
  if (reuse) {
    out.y = reuse->labels;
    out.companion = reuse->companion;
    out.anchor = match_companion(index, out.y, rng);
  } else {
    out.anchor = expand_windows(balanced_anchor_indices(index, batch, rng), S);
    out.y = gather_labels(store, out.anchor, batch, S);
    out.companion = match_companion(index, out.y, rng);
  }
  out.x = gather_epochs(store, out.anchor, batch, S);
  out.xp = gather_epochs(store, out.companion, batch, S);
  return out;
}

void update_memory(SamplingMemory& memory, const PairBatch& batch, double val_loss) {
  if (!std::isfinite(val_loss)) {
    throw ContractError("update_memory: validation loss is not finite");
  }
  if (!memory.best || val_loss < *memory.best) {
    memory.best = val_loss;
    memory.easy = StoredCompanion{batch.companion, batch.y, val_loss};
  }
  if (!memory.worst || val_loss > *memory.worst) {
    memory.worst = val_loss;
    memory.difficult = StoredCompanion{batch.companion, batch.y, val_loss};
  }
}

}  // namespace sst
