#include "cli.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "json.hpp"

#include "sst/checkpoint.hpp"
#include "sst/edf.hpp"
#include "sst/errors.hpp"

namespace sst::cli {

namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kModelKeys = {"fs",    "seq_len",    "channels", "epoch_samples",
                                             "dim",   "tokens",     "heads",    "head_dim",
                                             "depth", "ffn_dim",    "n_classes"};

const std::array<std::string, kNumStages> kFreqKeys = {
    "synth.freq_w", "synth.freq_n1", "synth.freq_n2", "synth.freq_n3", "synth.freq_rem"};

std::string text(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

template <typename T>
T number(const KeyValues& kv, const std::string& key, T fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& s = it->second;
  T v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
    throw ConfigError("config key '" + key + "' has invalid value '" + s + "'");
  }
  return v;
}

bool flag(const KeyValues& kv, const std::string& key, bool fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: '" + s + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

ModelConfig build_model(const KeyValues& kv) {
  const std::string preset = text(kv, "model.preset", "full");
  ModelConfig base;
  if (preset == "toy") {
    base = ModelConfig::toy();
  } else if (preset != "full") {
    throw ConfigError("config key 'model.preset' must be 'full' or 'toy', got '" + preset + "'");
  }
  auto merged = base.to_kv();
  // A new rate without an explicit epoch length means 30 s epochs.
  if (kv.count("model.fs") && !kv.count("model.epoch_samples")) merged.erase("epoch_samples");
  for (const auto& key : kModelKeys) {
    const auto it = kv.find("model." + key);
    if (it != kv.end()) merged[key] = it->second;
  }
  ModelConfig m = ModelConfig::from_kv(merged);
  m.validate();
  return m;
}

void write_text(const fs::path& path, const std::string& body) { write_file(path.string(), body); }

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

std::string history_table(const std::vector<ValidationPoint>& history) {
  std::ostringstream os;
  os << std::setw(8) << "step" << std::setw(10) << "loss" << std::setw(10) << "macroF1"
     << std::setw(10) << "acc" << std::setw(10) << "kappa" << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& p : history) {
    os << std::setw(8) << p.step << std::setw(10) << p.loss << std::setw(10) << p.macro_f1
       << std::setw(10) << p.accuracy << std::setw(10) << p.kappa << "\n";
  }
  return os.str();
}

void check_store_fits(const EpochStore& store, const ModelConfig& model, const std::string& what) {
  if (store.fs() != model.fs || store.samples() != model.epoch_samples ||
      store.channels() != model.channels) {
    throw ConfigError(what + " is " + std::to_string(store.fs()) + " Hz, " +
                      std::to_string(store.channels()) + " x " + std::to_string(store.samples()) +
                      " samples per epoch; model expects " + std::to_string(model.fs) + " Hz, " +
                      std::to_string(model.channels) + " x " +
                      std::to_string(model.epoch_samples) + " (set data.resample_to)");
  }
}

EpochStore test_store_for(const RunConfig& cfg) {
  if (!cfg.data.test.empty()) {
    return load_source(cfg.data.test, cfg, cfg.synth.test_seed, cfg.synth.test_subjects,
                       cfg.data.resample_to);
  }
  if (cfg.data.train == "synth") {
    return load_source("synth", cfg, cfg.synth.test_seed, cfg.synth.test_subjects,
                       cfg.data.resample_to);
  }
  throw ConfigError("missing required key 'data.test' (no synthetic fallback for a directory)");
}

}  // namespace

KeyValues parse_config_text(const std::string& body, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(body);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  KeyValues kv;
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      throw ConfigError(origin + ": key '" + section + "' is outside a [section]");
    }
    for (const auto& [key, leaf] : node) kv[section + "." + key] = leaf.data();
  }
  return kv;
}

KeyValues read_config_file(const std::string& path) {
  std::string body;
  try {
    body = read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config file '" + path + "'");
  }
  return parse_config_text(body, path);
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = {"model.preset"};
    for (const auto& m : kModelKeys) k.push_back("model." + m);
    for (const char* s : {"tau", "lambda", "alpha", "use_cos"}) k.push_back(std::string("loss.") + s);
    for (const char* s : {"max_steps", "validate_every", "patience", "batch", "lr", "weight_decay",
                          "beta1", "beta2", "clip_norm", "val_fraction", "seed", "sampling", "p0",
                          "eval_batch"}) {
      k.push_back(std::string("train.") + s);
    }
    for (const char* s : {"train", "test", "channel", "resample_to", "lenient"}) {
      k.push_back(std::string("data.") + s);
    }
    for (const char* s : {"subjects", "epochs", "fs", "noise_sd", "seed", "test_subjects",
                          "test_seed", "stay_probability", "amplitude"}) {
      k.push_back(std::string("synth.") + s);
    }
    k.insert(k.end(), kFreqKeys.begin(), kFreqKeys.end());
    return k;
  }();
  return keys;
}

RunConfig resolve_config(const KeyValues& file, const char* env_seed, const KeyValues& flags) {
  KeyValues kv = file;
  if (env_seed != nullptr && *env_seed != '\0') kv["train.seed"] = env_seed;
  for (const auto& [k, v] : flags) kv[k] = v;

  const auto& known = known_keys();
  for (const auto& [k, v] : kv) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  for (const char* required : {"data.train", "train.seed"}) {
    if (!kv.count(required)) {
      throw ConfigError(std::string("missing required key '") + required + "'");
    }
  }

  RunConfig cfg;
  cfg.model = build_model(kv);

  TrainConfig& t = cfg.train;
  t.max_steps = number(kv, "train.max_steps", t.max_steps);
  t.validate_every = number(kv, "train.validate_every", t.validate_every);
  t.patience = number(kv, "train.patience", t.patience);
  t.batch = number(kv, "train.batch", t.batch);
  t.lr = number(kv, "train.lr", t.lr);
  t.weight_decay = number(kv, "train.weight_decay", t.weight_decay);
  t.beta1 = number(kv, "train.beta1", t.beta1);
  t.beta2 = number(kv, "train.beta2", t.beta2);
  t.clip_norm = number(kv, "train.clip_norm", t.clip_norm);
  t.val_fraction = number(kv, "train.val_fraction", t.val_fraction);
  t.seed = number(kv, "train.seed", t.seed);
  t.p0 = number(kv, "train.p0", t.p0);
  t.eval_batch = number(kv, "train.eval_batch", t.eval_batch);
  if (kv.count("train.sampling")) {
    try {
      t.sampling = parse_sampling_mode(kv.at("train.sampling"));
    } catch (const std::exception& e) {
      throw ConfigError("config key 'train.sampling': " + std::string(e.what()));
    }
  }
  t.loss.tau = number(kv, "loss.tau", t.loss.tau);
  t.loss.lambda = number(kv, "loss.lambda", t.loss.lambda);
  t.loss.alpha = number(kv, "loss.alpha", t.loss.alpha);
  t.loss.use_cos = flag(kv, "loss.use_cos", t.loss.use_cos);
  t.loss.n_classes = cfg.model.n_classes;
  t.validate();

  DataConfig& d = cfg.data;
  d.train = text(kv, "data.train", "");
  d.test = text(kv, "data.test", "");
  d.channel = text(kv, "data.channel", d.channel);
  d.resample_to = number(kv, "data.resample_to", d.resample_to);
  d.lenient = flag(kv, "data.lenient", d.lenient);
  if (d.train.empty()) throw ConfigError("config key 'data.train' is empty");
  if (d.resample_to < 0.0) throw ConfigError("config key 'data.resample_to' must be >= 0");

  SynthConfig& s = cfg.synth;
  s.subjects = number(kv, "synth.subjects", s.subjects);
  s.epochs = number(kv, "synth.epochs", s.epochs);
  s.fs = number(kv, "synth.fs", s.fs);
  s.noise_sd = number(kv, "synth.noise_sd", s.noise_sd);
  s.seed = number(kv, "synth.seed", s.seed);
  s.test_subjects = number(kv, "synth.test_subjects", s.test_subjects);
  s.test_seed = number(kv, "synth.test_seed", s.test_seed);
  s.spec.stay_probability = number(kv, "synth.stay_probability", s.spec.stay_probability);
  const double amp = number(kv, "synth.amplitude", s.spec.amplitude[0]);
  s.spec.amplitude.fill(amp);
  for (std::size_t c = 0; c < kNumStages; ++c) {
    s.spec.freq_hz[c] = number(kv, kFreqKeys[c], s.spec.freq_hz[c]);
  }
  if (!(s.noise_sd >= 0.0)) throw ConfigError("config key 'synth.noise_sd' must be >= 0");
  if (!(s.spec.stay_probability >= 0.0 && s.spec.stay_probability <= 1.0)) {
    throw ConfigError("config key 'synth.stay_probability' must lie in [0, 1]");
  }
  if (s.subjects == 0 || s.epochs == 0 || s.test_subjects == 0) {
    throw ConfigError("synth subjects and epochs must be positive");
  }
  return cfg;
}

KeyValues config_kv(const RunConfig& cfg) {
  KeyValues kv;
  for (const auto& [k, v] : cfg.model.to_kv()) kv["model." + k] = v;
  const TrainConfig& t = cfg.train;
  kv["train.max_steps"] = std::to_string(t.max_steps);
  kv["train.validate_every"] = std::to_string(t.validate_every);
  kv["train.patience"] = std::to_string(t.patience);
  kv["train.batch"] = std::to_string(t.batch);
  kv["train.lr"] = fmt_double(t.lr);
  kv["train.weight_decay"] = fmt_double(t.weight_decay);
  kv["train.beta1"] = fmt_double(t.beta1);
  kv["train.beta2"] = fmt_double(t.beta2);
  kv["train.clip_norm"] = fmt_double(t.clip_norm);
  kv["train.val_fraction"] = fmt_double(t.val_fraction);
  kv["train.seed"] = std::to_string(t.seed);
  kv["train.sampling"] = to_string(t.sampling);
  kv["train.p0"] = fmt_double(t.p0);
  kv["train.eval_batch"] = std::to_string(t.eval_batch);
  kv["loss.tau"] = fmt_double(t.loss.tau);
  kv["loss.lambda"] = fmt_double(t.loss.lambda);
  kv["loss.alpha"] = fmt_double(t.loss.alpha);
  kv["loss.use_cos"] = t.loss.use_cos ? "true" : "false";
  kv["data.train"] = cfg.data.train;
  kv["data.test"] = cfg.data.test;
  kv["data.channel"] = cfg.data.channel;
  kv["data.resample_to"] = fmt_double(cfg.data.resample_to);
  kv["data.lenient"] = cfg.data.lenient ? "true" : "false";
  const SynthConfig& s = cfg.synth;
  kv["synth.subjects"] = std::to_string(s.subjects);
  kv["synth.epochs"] = std::to_string(s.epochs);
  kv["synth.fs"] = std::to_string(s.fs);
  kv["synth.noise_sd"] = fmt_double(s.noise_sd);
  kv["synth.seed"] = std::to_string(s.seed);
  kv["synth.test_subjects"] = std::to_string(s.test_subjects);
  kv["synth.test_seed"] = std::to_string(s.test_seed);
  kv["synth.stay_probability"] = fmt_double(s.spec.stay_probability);
  kv["synth.amplitude"] = fmt_double(s.spec.amplitude[0]);
  for (std::size_t c = 0; c < kNumStages; ++c) kv[kFreqKeys[c]] = fmt_double(s.spec.freq_hz[c]);
  return kv;
}

EpochStore resample_store(const EpochStore& store, double target_fs) {
  if (store.channels() != 1) throw ConfigError("resampling needs a single-channel store");
  const RateRatio r = rational_ratio(static_cast<double>(store.fs()), target_fs);
  if ((store.samples() * r.up) % r.down != 0) {
    throw ConfigError("epoch of " + std::to_string(store.samples()) + " samples at " +
                      std::to_string(store.fs()) + " Hz is not a whole number of samples at " +
                      fmt_double(target_fs) + " Hz");
  }
  const double rounded = std::round(target_fs);
  if (std::abs(rounded - target_fs) > 1e-9) {
    throw ConfigError("resample target must be a whole number of Hz, got " + fmt_double(target_fs));
  }
  EpochStore out(static_cast<std::size_t>(rounded), 1, store.samples() * r.up / r.down);
  for (const auto& subj : store.subjects()) {
    const SignalTrace t = resample(SignalTrace{subj.id, static_cast<double>(store.fs()),
                                               subj.signal},
                                   target_fs);
    out.add_subject(Subject{subj.id, subj.labels, t.samples});
  }
  return out;
}

EpochStore load_source(const std::string& source, const RunConfig& cfg, std::uint64_t synth_seed,
                       std::size_t synth_subjects, double resample_to) {
  if (source == "synth") {
    const std::size_t rate = cfg.synth.fs > 0 ? cfg.synth.fs : cfg.model.fs;
    std::mt19937_64 rng(synth_seed);
    EpochStore store = synth_dataset(synth_subjects, cfg.synth.epochs, rate, cfg.synth.spec,
                                     cfg.synth.noise_sd, rng);
    if (resample_to > 0.0 && std::abs(resample_to - static_cast<double>(rate)) > 1e-9) {
      return resample_store(store, resample_to);
    }
    return store;
  }
  LoadOptions opts;
  opts.channel = cfg.data.channel;
  opts.target_fs = resample_to;
  opts.lenient = cfg.data.lenient;
  return load_dataset(source, opts);
}

TrainOutputs cmd_train(const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
  const EpochStore store =
      load_source(cfg.data.train, cfg, cfg.synth.seed, cfg.synth.subjects, cfg.data.resample_to);
  check_store_fits(store, cfg.model, "training data");
  std::optional<EpochStore> test;
  if (!cfg.data.test.empty()) {
    test = test_store_for(cfg);
    check_store_fits(*test, cfg.model, "test data");
  }

  const TrainResult result = train(store, cfg.model, cfg.train);
  fs::create_directories(out_dir);
  TrainOutputs o;
  o.checkpoint_path = (fs::path(out_dir) / "checkpoint.sst").string();
  o.summary_path = (fs::path(out_dir) / "summary.json").string();
  o.table_path = (fs::path(out_dir) / "summary.txt").string();
  o.summary = result.summary;
  save_checkpoint(o.checkpoint_path, cfg.model, result.params);

  const RunSummary& s = result.summary;
  nlohmann::json j;
  j["command"] = "train";
  j["config"] = config_kv(cfg);
  j["best_val_metric"] = s.best_val_metric;
  j["best_step"] = s.best_step;
  j["steps_run"] = s.steps_run;
  j["stopped_early"] = s.stopped_early;
  j["validation"] = metrics_json(s.best_report, s.history);
  std::vector<std::pair<std::string, MetricsReport>> rows = {{"validation", s.best_report}};
  if (test) {
    const MetricsReport tr = transfer_evaluate(result.params, cfg.model, *test, cfg.train);
    j["test"] = to_json(tr);
    rows.emplace_back("test", tr);
  }
  write_text(o.summary_path, dump(j));

  std::ostringstream table;
  table << "steps run " << s.steps_run << ", best step " << s.best_step << ", best macro-F1 "
        << std::fixed << std::setprecision(4) << s.best_val_metric
        << (s.stopped_early ? ", stopped early" : "") << "\n\n"
        << history_table(s.history) << "\n"
        << format_f1_table(rows);
  write_text(o.table_path, table.str());
  out << table.str();
  return o;
}

MetricsReport cmd_transfer(const TransferOptions& opts, std::ostream& out) {
  Checkpoint ck;
  try {
    ck = load_checkpoint(opts.checkpoint);
  } catch (const ParseError& e) {
    throw DataError("checkpoint '" + opts.checkpoint + "': " + e.what());
  }
  RunConfig run = opts.run;
  run.model = ck.config;
  run.train.loss.n_classes = ck.config.n_classes;
  run.data.channel = opts.channel;
  run.data.lenient = opts.lenient;
  const EpochStore store =
      load_source(opts.data, run, run.synth.test_seed, run.synth.test_subjects, opts.resample_to);
  if (store.fs() != ck.config.fs && opts.resample_to <= 0.0) {
    throw ConfigError("data is sampled at " + std::to_string(store.fs()) +
                      " Hz but the checkpoint expects " + std::to_string(ck.config.fs) +
                      " Hz; pass --resample-to " + std::to_string(ck.config.fs));
  }
  const MetricsReport report = transfer_evaluate(ck.params, ck.config, store, run.train);

  fs::create_directories(opts.out_dir);
  nlohmann::json j = to_json(report);
  j["checkpoint"] = fs::path(opts.checkpoint).filename().string();
  j["epochs"] = store.total_epochs();
  j["subjects"] = store.subjects().size();
  write_text(fs::path(opts.out_dir) / "transfer.json", dump(j));
  const std::string table = format_f1_table({{"transfer", report}});
  write_text(fs::path(opts.out_dir) / "transfer.txt", table);
  out << table;
  return report;
}

void cmd_inspect_edf(const std::string& path, bool lenient, std::ostream& out) {
  const EdfFile edf = parse_edf(read_file(path), lenient);
  const EdfHeader& h = edf.header;
  out << "file            " << path << "\n"
      << "version         " << h.version << "\n"
      << "patient         " << h.patient << "\n"
      << "recording       " << h.recording << "\n"
      << "start           " << h.start_date << " " << h.start_time << "\n"
      << "header bytes    " << h.header_bytes << "\n"
      << "reserved        " << h.reserved << "\n"
      << "records         " << h.n_records << "\n"
      << "record duration " << fmt_double(h.record_duration_s) << " s\n"
      << "signals         " << h.signals.size() << "\n";
  for (std::size_t i = 0; i < h.signals.size(); ++i) {
    const EdfSignalHeader& s = h.signals[i];
    const double rate = s.samples_per_record / h.record_duration_s;
    out << "  [" << i << "] " << s.label << ": " << s.samples_per_record << " samples/record, "
        << fmt_double(rate) << " Hz, " << edf.digital[i].size() << " samples, physical "
        << fmt_double(s.physical_min) << ".." << fmt_double(s.physical_max) << " "
        << s.physical_dim << ", digital " << s.digital_min << ".." << s.digital_max << "\n";
  }
  for (const auto& w : edf.warnings) out << "warning: " << w << "\n";
  if (!edf.annotations.empty()) {
    const Hypnogram hyp = parse_tal_annotations(edf.annotations);
    out << "annotations     " << hyp.entries.size() << " stage entries\n";
    const std::size_t shown = std::min<std::size_t>(hyp.entries.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) {
      const auto& e = hyp.entries[i];
      out << "  +" << fmt_double(e.onset_s) << " s  " << fmt_double(e.duration_s) << " s  "
          << stage_name(e.stage) << "\n";
    }
  }
}

std::vector<VarianceRow> cmd_variance(const RunConfig& cfg, std::size_t runs,
                                      bool identical_seeds, const std::string& out_dir,
                                      std::ostream& out) {
  const EpochStore train_store =
      load_source(cfg.data.train, cfg, cfg.synth.seed, cfg.synth.subjects, cfg.data.resample_to);
  check_store_fits(train_store, cfg.model, "training data");
  const EpochStore test_store = test_store_for(cfg);
  check_store_fits(test_store, cfg.model, "test data");
  const auto rows =
      variance_experiment(train_store, test_store, cfg.model, cfg.train, runs, identical_seeds);

  nlohmann::json j;
  j["command"] = "variance";
  j["config"] = config_kv(cfg);
  j["runs"] = runs;
  j["identical_seeds"] = identical_seeds;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json r;
    r["mode"] = to_string(row.mode);
    for (const auto& [name, ms] : {std::pair{"macro_f1", row.macro_f1},
                                   std::pair{"accuracy", row.accuracy},
                                   std::pair{"kappa", row.kappa}}) {
      r[name] = {{"mean", ms.mean}, {"sd", ms.sd}};
    }
    r["runs"] = nlohmann::json::array();
    for (const auto& rep : row.runs) r["runs"].push_back(to_json(rep));
    j["rows"].push_back(r);
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "variance.json", dump(j));
  const std::string table = format_variance_table(rows);
  write_text(fs::path(out_dir) / "variance.txt", table);
  out << table;
  return rows;
}

void cmd_synth(const RunConfig& cfg, const std::string& out_dir, bool test_split,
               std::ostream& out) {
  const EpochStore store =
      test_split ? load_source("synth", cfg, cfg.synth.test_seed, cfg.synth.test_subjects, 0.0)
                 : load_source("synth", cfg, cfg.synth.seed, cfg.synth.subjects, 0.0);
  save_dataset(store, out_dir);
  out << "wrote " << store.subjects().size() << " subjects, " << store.total_epochs()
      << " epochs at " << store.fs() << " Hz to " << out_dir << "\n";
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sleep stage transformer: training, transfer evaluation and EDF tools", "sst"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  const auto add_run_options = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("-c,--config", config_path, "INI run config");
    if (config_required) opt->required();
    sub->add_option("--set", sets, "override a key, section.key=value (repeatable)");
    sub->add_option("--seed", seed, "training seed, overrides config and SST_SEED");
    sub->add_option("-o,--out", out_dir, "output directory");
  };

  auto* train_cmd = app.add_subcommand("train", "train a model, write checkpoint and summary");
  add_run_options(train_cmd, true);

  TransferOptions topts;
  auto* transfer_cmd = app.add_subcommand("transfer", "evaluate a checkpoint on another dataset");
  transfer_cmd->add_option("--checkpoint", topts.checkpoint, "checkpoint file")->required();
  transfer_cmd->add_option("--data", topts.data, "dataset directory or 'synth'")->required();
  transfer_cmd->add_option("--resample-to", topts.resample_to, "resample recordings to this rate");
  transfer_cmd->add_flag("--lenient", topts.lenient, "tolerate malformed EDF headers");
  transfer_cmd->add_option("--channel", topts.channel, "signal label pattern");
  add_run_options(transfer_cmd, false);

  std::string edf_path;
  bool lenient = false;
  auto* inspect_cmd = app.add_subcommand("inspect-edf", "print EDF header and annotation summary");
  inspect_cmd->add_option("file", edf_path, "EDF or EDF+ file")->required();
  inspect_cmd->add_flag("--lenient", lenient, "tolerate malformed headers");

  std::size_t runs = 5;
  bool identical = false;
  auto* variance_cmd = app.add_subcommand("variance", "repeat training per sampling mode");
  add_run_options(variance_cmd, true);
  variance_cmd->add_option("--runs", runs, "runs per sampling mode")->check(CLI::Range(2, 1000));
  variance_cmd->add_flag("--identical-seeds", identical, "use the base seed for every run");

  bool test_split = false;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset directory");
  add_run_options(synth_cmd, true);
  synth_cmd->add_flag("--test", test_split, "write the test split ([synth] test_seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto run_config = [&](const KeyValues& file) {
      KeyValues flags;
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw ConfigError("--set expects section.key=value, got '" + s + "'");
        }
        flags[s.substr(0, eq)] = s.substr(eq + 1);
      }
      if (seed) flags["train.seed"] = std::to_string(*seed);
      return resolve_config(file, std::getenv("SST_SEED"), flags);
    };

    if (*train_cmd) {
      cmd_train(run_config(read_config_file(config_path)), out_dir, out);
    } else if (*transfer_cmd) {
      // Without a config only evaluation defaults and the synthetic source apply.
      topts.run = run_config(config_path.empty()
                                 ? KeyValues{{"data.train", topts.data}, {"train.seed", "0"}}
                                 : read_config_file(config_path));
      topts.out_dir = out_dir;
      cmd_transfer(topts, out);
    } else if (*inspect_cmd) {
      cmd_inspect_edf(edf_path, lenient, out);
    } else if (*variance_cmd) {
      cmd_variance(run_config(read_config_file(config_path)), runs, identical, out_dir, out);
    } else if (*synth_cmd) {
      cmd_synth(run_config(read_config_file(config_path)), out_dir, test_split, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace sst::cli
