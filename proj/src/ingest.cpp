#include "sst/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "sst/errors.hpp"

namespace sst {

namespace {

std::size_t epoch_length(double fs, double epoch_s) {
  const double exact = fs * epoch_s;
  const double rounded = std::round(exact);
  if (!(fs > 0.0) || !(epoch_s > 0.0) || std::abs(exact - rounded) > 1e-6 || rounded < 1.0) {
    throw ConfigError("fs * epoch length (" + std::to_string(fs) + " * " +
                      std::to_string(epoch_s) + ") is not a positive integer");
  }
  return static_cast<std::size_t>(rounded);
}

}  // namespace

EpochedSignal epoch_and_label(const SignalTrace& trace, const Hypnogram& hyp, double epoch_s) {
  const std::size_t T = epoch_length(trace.fs, epoch_s);
  const std::size_t windows = trace.samples.size() / T;
  const auto& entries = hyp.entries;
  constexpr double tol = 1e-9;
  EpochedSignal out;
  out.samples = T;
  for (std::size_t w = 0; w < windows; ++w) {
    const double start = static_cast<double>(w) * epoch_s;
    const double end = start + epoch_s;
    auto it = std::upper_bound(entries.begin(), entries.end(), start + tol,
                               [](double t, const HypnogramEntry& e) { return t < e.onset_s; });
    bool kept = false;
    if (it != entries.begin()) {
      const HypnogramEntry& e = *std::prev(it);
      if (e.onset_s + e.duration_s >= end - tol && e.stage != Stage::Other) {
        out.labels.push_back(static_cast<int>(e.stage));
        const auto first = trace.samples.begin() + static_cast<std::ptrdiff_t>(w * T);
        out.signal.insert(out.signal.end(), first, first + static_cast<std::ptrdiff_t>(T));
        kept = true;
      }
    }
    if (!kept) ++out.dropped;
  }
  return out;
}

EpochedSignal epoch_with_labels(const SignalTrace& trace, const std::vector<int>& labels,
                                double epoch_s) {
  const std::size_t T = epoch_length(trace.fs, epoch_s);
  const std::size_t windows = trace.samples.size() / T;
  const std::size_t n = std::min(windows, labels.size());
  EpochedSignal out;
  out.samples = T;
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  out.signal.assign(trace.samples.begin(),
                    trace.samples.begin() + static_cast<std::ptrdiff_t>(n * T));
  out.dropped = std::max(windows, labels.size()) - n;
  return out;
}

RateRatio rational_ratio(double fs, double target_fs, std::size_t max_factor) {
  if (!(fs > 0.0) || !(target_fs > 0.0) || !std::isfinite(fs) || !std::isfinite(target_fs)) {
    throw ConfigError("sampling rates must be positive and finite");
  }
  // Rates given to a thousandth of a Hz are treated as exact.
  const double a = std::round(target_fs * 1000.0), b = std::round(fs * 1000.0);
  if (std::abs(a - target_fs * 1000.0) > 1e-6 || std::abs(b - fs * 1000.0) > 1e-6) {
    throw ConfigError("rates " + std::to_string(fs) + " -> " + std::to_string(target_fs) +
                      " do not form a rational ratio");
  }
  const auto up = static_cast<std::uint64_t>(a), down = static_cast<std::uint64_t>(b);
  const std::uint64_t g = std::gcd(up, down);
  RateRatio r{static_cast<std::size_t>(up / g), static_cast<std::size_t>(down / g)};
  if (r.up > max_factor || r.down > max_factor) {
    throw ConfigError("resampling ratio " + std::to_string(r.up) + ":" + std::to_string(r.down) +
                      " is too large");
  }
  return r;
}

SignalTrace resample(const SignalTrace& trace, double target_fs) {
  const RateRatio r = rational_ratio(trace.fs, target_fs);
  if (r.up == r.down) return trace;
  const std::size_t L = r.up, M = r.down;
  const std::size_t half = 32 * L;
  const std::size_t K = 2 * half + 1;
  const double fc = 1.0 / static_cast<double>(std::max(L, M));
  constexpr double beta = 8.6;
  const double i0_beta = std::cyl_bessel_i(0.0, beta);

  std::vector<double> h(K);
  for (std::size_t j = 0; j < K; ++j) {
    const double x = static_cast<double>(j) - static_cast<double>(half);
    const double arg = std::numbers::pi * fc * x;
    const double sinc = x == 0.0 ? 1.0 : std::sin(arg) / arg;
    const double ratio = x / static_cast<double>(half);
    const double arg_w = beta * std::sqrt(std::max(0.0, 1.0 - ratio * ratio));
    const double window = std::cyl_bessel_i(0.0, arg_w) / i0_beta;
    h[j] = fc * sinc * window;
  }
  std::vector<double> phase_sum(L, 0.0);
  for (std::size_t j = 0; j < K; ++j) phase_sum[j % L] += h[j];
  for (std::size_t j = 0; j < K; ++j) h[j] /= phase_sum[j % L];

  const std::size_t n = trace.samples.size();
  if (n == 0) return SignalTrace{trace.label, target_fs, {}};
  const std::size_t out_len = (n * L + M - 1) / M;
  SignalTrace out{trace.label, target_fs, std::vector<double>(out_len, 0.0)};
  for (std::size_t m = 0; m < out_len; ++m) {
    const std::size_t pos = m * M + half;  // index into h is pos - n_in * L
    const std::size_t n_hi = std::min(pos / L, n - 1);
    const std::size_t n_lo = pos + 1 > K ? (pos + 1 - K + L - 1) / L : 0;
    double acc = 0.0;
    for (std::size_t k = n_lo; k <= n_hi; ++k) acc += trace.samples[k] * h[pos - k * L];
    out.samples[m] = acc;
  }
  return out;
}

const SignalTrace& select_channel(const std::vector<SignalTrace>& traces,
                                  const std::string& pattern) {
  for (const auto& t : traces) {
    if (t.label.find(pattern) != std::string::npos) return t;
  }
  std::string names;
  for (const auto& t : traces) names += (names.empty() ? "" : ", ") + t.label;
  throw DataError("no signal label contains '" + pattern + "' (available: " + names + ")");
}

EpochStore synth_dataset(std::size_t n_subjects, std::size_t epochs_per_subject,
                         std::size_t fs, const SynthSpec& spec, double noise_sd,
                         std::mt19937_64& rng) {
  const std::size_t T = 30 * fs;
  EpochStore store(fs, 1, T);
  std::uniform_int_distribution<int> stage(0, static_cast<int>(kNumStages) - 1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::bernoulli_distribution stay(spec.stay_probability);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t s = 0; s < n_subjects; ++s) {
    Subject subj;
    subj.id = "synth" + std::string(s < 10 ? "00" : s < 100 ? "0" : "") + std::to_string(s);
    subj.signal.reserve(epochs_per_subject * T);
    for (std::size_t e = 0; e < epochs_per_subject; ++e) {
      const int label = e == 0 || !stay(rng) ? stage(rng) : subj.labels.back();
      subj.labels.push_back(label);
      const double f = spec.freq_hz[label], a = spec.amplitude[label], ph = phase(rng);
      for (std::size_t t = 0; t < T; ++t) {
        const double time = static_cast<double>(t) / static_cast<double>(fs);
        double v = a * std::sin(2.0 * std::numbers::pi * f * time + ph);
        if (noise_sd > 0.0) v += noise_sd * noise(rng);
        subj.signal.push_back(v);
      }
    }
    store.add_subject(std::move(subj));
  }
  return store;
}

EpochStore load_dataset(const std::string& dir, const LoadOptions& options,
                        LoadReport* report) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("data directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.ends_with(".edf") && !name.ends_with(".hyp.edf")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .edf recordings in '" + dir + "'");

  LoadReport rep;
  EpochStore store;
  bool first = true;
  for (const auto& path : files) {
    const EdfFile edf = parse_edf(read_file(path.string()), options.lenient);
    SignalTrace trace = select_channel(edf.traces, options.channel);
    if (options.target_fs > 0.0) trace = resample(trace, options.target_fs);
    const double rounded = std::round(trace.fs);
    if (std::abs(trace.fs - rounded) > 1e-9) {
      throw DataError(path.string() + ": non-integer sampling rate " + std::to_string(trace.fs));
    }
    const auto stem = path.string().substr(0, path.string().size() - 4);
    EpochedSignal ep;
    if (fs::exists(stem + ".labels")) {
      ep = epoch_with_labels(trace, parse_label_sidecar(read_file(stem + ".labels")));
    } else if (fs::exists(stem + ".hyp.edf")) {
      const EdfFile hyp = parse_edf(read_file(stem + ".hyp.edf"), options.lenient);
      ep = epoch_and_label(trace, parse_tal_annotations(hyp.annotations));
    } else {
      throw DataError(path.string() + ": no .labels or .hyp.edf stage file next to it");
    }
    const auto fs_int = static_cast<std::size_t>(rounded);
    if (first) {
      store = EpochStore(fs_int, 1, ep.samples);
      first = false;
    } else if (fs_int != store.fs()) {
      throw DataError(path.string() + ": sampling rate " + std::to_string(fs_int) +
                      " Hz differs from " + std::to_string(store.fs()) +
                      " Hz; resample to a common rate");
    }
    rep.dropped += ep.dropped;
    rep.epochs += ep.labels.size();
    ++rep.subjects;
    store.add_subject(Subject{path.stem().string(), std::move(ep.labels), std::move(ep.signal)});
  }
  if (report) *report = rep;
  return store;
}

void save_dataset(const EpochStore& store, const std::string& dir) {
  namespace fs = std::filesystem;
  if (store.channels() != 1) throw DataError("save_dataset writes single-channel stores only");
  fs::create_directories(dir);
  for (const auto& subj : store.subjects()) {
    EdfSignalHeader sig;
    sig.label = "EEG synth";
    sig.physical_dim = "uV";
    const auto [lo, hi] = std::minmax_element(subj.signal.begin(), subj.signal.end());
    sig.physical_min = subj.signal.empty() ? -1.0 : std::floor(*lo) - 1.0;
    sig.physical_max = subj.signal.empty() ? 1.0 : std::ceil(*hi) + 1.0;
    sig.samples_per_record = static_cast<int>(store.fs());
    EdfHeader header;
    header.patient = subj.id;
    header.recording = "synthetic";
    header.record_duration_s = 1.0;
    header.signals = {sig};
    std::vector<std::int16_t> digital;
    digital.reserve(subj.signal.size());
    for (double v : subj.signal) digital.push_back(physical_to_digital(sig, v));
    const std::string base = (fs::path(dir) / subj.id).string();
    write_file(base + ".edf", write_edf(header, {digital}));
    write_file(base + ".labels", format_label_sidecar(subj.labels));
  }
}

}  // namespace sst
