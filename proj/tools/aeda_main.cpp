// aeda: command-line front end over the library. One subcommand per
// workflow; every option has a documented default, so a bare subcommand is a
// valid run (synthetic data, default training settings).
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "aeda/aedann.hpp"
#include "aeda/data.hpp"
#include "aeda/engine.hpp"
#include "aeda/errors.hpp"
#include "aeda/eval.hpp"
#include "aeda/rng.hpp"
#include "aeda/synth.hpp"

using namespace aeda;

namespace {

struct RunSpec {
  // data
  std::string source_path;
  std::string target_path;
  bool synthetic = false;
  std::string format = "wds";  // wds | casas | imu
  std::size_t stride = 10;
  std::size_t imu_col_start = 3;
  std::size_t imu_col_end = 54;
  std::size_t imu_label_col = 1;
  std::string source_fingerprint;  // filled from manifests, verified on load
  std::string target_fingerprint;
  // synth (window is shared with raw-data windowing)
  SynthConfig synth;
  // train
  TrainConfig train;
  // dann
  double lambda = 1.0;
  std::size_t f_dim = 32;
  // run
  double labeled_fraction = 0.1;
  std::size_t n_seeds = 5;
  std::string fractions = "0.2,0.4,0.6,0.8";
  std::string alphas = "1e-8,1e-7,1e-6,1e-5,1e-4,1e-3,1e-2";
  std::size_t workers = 1;
  std::string run_id;
  // io
  std::string out = ".";
  std::string report;
  std::string config_path;
};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': bad number '" + v + "'");
  }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  if (!v.empty() && v[0] == '-') throw DataError("config key '" + key + "': negative '" + v + "'");
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': bad count '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw DataError("config key '" + key + "': bad boolean '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const std::size_t comma = v.find(',', start);
    const std::string item = v.substr(start, comma == std::string::npos ? comma : comma - start);
    if (item.empty()) throw DataError("config key '" + key + "': empty entry in list '" + v + "'");
    out.push_back(parse_double(key, item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw DataError("config key '" + key + "': empty list");
  return out;
}

// One row of the config/manifest schema: a key, its section, and accessors
// into a RunSpec. The key doubles as the long CLI flag name.
struct ConfigEntry {
  std::string section;
  std::string key;
  std::string help;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
  bool has_flag = true;
  bool is_bool = false;
};

std::vector<ConfigEntry> make_table(RunSpec& s) {
  std::vector<ConfigEntry> t;
  auto str = [&](const char* sec, const char* key, std::string& ref, const char* help,
                 bool flag = true) {
    t.push_back({sec, key, help, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; },
                 flag});
  };
  auto num = [&](const char* sec, const char* key, double& ref, const char* help) {
    t.push_back({sec, key, help, [&ref] { return fmt_double(ref); },
                 [&ref, key = std::string(key)](const std::string& v) {
                   ref = parse_double(key, v);
                 },
                 true});
  };
  auto size = [&](const char* sec, const char* key, std::size_t& ref, const char* help) {
    t.push_back({sec, key, help, [&ref] { return std::to_string(ref); },
                 [&ref, key = std::string(key)](const std::string& v) { ref = parse_size(key, v); },
                 true});
  };
  auto u64 = [&](const char* sec, const char* key, std::uint64_t& ref, const char* help) {
    t.push_back({sec, key, help, [&ref] { return std::to_string(ref); },
                 [&ref, key = std::string(key)](const std::string& v) {
                   ref = static_cast<std::uint64_t>(parse_size(key, v));
                 },
                 true});
  };
  auto boolean = [&](const char* sec, const char* key, bool& ref, const char* help) {
    t.push_back({sec, key, help, [&ref] { return ref ? std::string("true") : std::string("false"); },
                 [&ref, key = std::string(key)](const std::string& v) { ref = parse_bool(key, v); },
                 true, true});
  };

  str("data", "source", s.source_path, "source dataset path (empty: synthetic)");
  str("data", "target", s.target_path, "target dataset path (empty: synthetic)");
  boolean("data", "synthetic", s.synthetic, "generate data instead of reading files");
  str("data", "format", s.format, "input format: wds, casas, or imu");
  size("data", "stride", s.stride, "window stride for raw inputs");
  size("data", "imu-col-start", s.imu_col_start, "first feature column of imu rows");
  size("data", "imu-col-end", s.imu_col_end, "one past the last feature column of imu rows");
  size("data", "imu-label-col", s.imu_label_col, "label column of imu rows");
  str("data", "source-fingerprint", s.source_fingerprint, "", false);
  str("data", "target-fingerprint", s.target_fingerprint, "", false);

  size("synth", "classes", s.synth.n_classes, "synthetic class count");
  size("synth", "shared", s.synth.shared_classes, "classes present in both domains");
  size("synth", "latent", s.synth.latent_dim, "latent trajectory dimension");
  size("synth", "features-source", s.synth.n_f_source, "source feature count");
  size("synth", "features-target", s.synth.n_f_target, "target feature count");
  size("synth", "per-class", s.synth.samples_per_class, "windows per class");
  num("synth", "sigma", s.synth.noise_sigma, "synthetic noise level");
  size("synth", "window", s.synth.n_w, "window length (synthetic and raw)");
  u64("synth", "data-seed", s.synth.seed, "generator seed");

  num("train", "alpha", s.train.alpha, "alignment weight");
  size("train", "batch", s.train.batch_size, "batch size");
  size("train", "epochs", s.train.max_epochs, "epoch cap per stage");
  size("train", "patience", s.train.patience, "early-stopping patience");
  num("train", "lr", s.train.learning_rate, "Adam learning rate");
  u64("train", "seed", s.train.seed, "training seed");
  size("train", "bottleneck", s.train.b, "auto-encoder bottleneck width");
  size("train", "head-layers", s.train.c_l, "classifier head layer count");
  boolean("train", "recon-unlabeled", s.train.use_unlabeled_recon,
          "reconstruct unlabeled target windows too");
  boolean("train", "kld-decoder", s.train.kld_include_decoder,
          "extend alignment to the decoder conv layer");

  num("dann", "lambda", s.lambda, "gradient-reversal strength");
  size("dann", "f-dim", s.f_dim, "shared feature-extractor width");

  num("run", "labeled-fraction", s.labeled_fraction, "fraction of target windows labeled");
  size("run", "seeds", s.n_seeds, "seed count for sweep commands");
  str("run", "fractions", s.fractions, "comma list for sweep-fraction");
  str("run", "alphas", s.alphas, "comma list for sweep-alpha");
  size("run", "workers", s.workers, "parallel jobs for sweep commands");
  str("run", "run-id", s.run_id, "run identifier (empty: derived from the config)");

  str("io", "out", s.out, "output directory (default: AEDA_OUT or .)");
  str("io", "report", s.report, "report CSV path (empty: <out>/report.csv)");
  return t;
}

void register_options(CLI::App* sub, RunSpec& spec, std::vector<ConfigEntry>& table) {
  std::map<std::string, std::string> groups = {{"data", "Data"},   {"synth", "Synthetic"},
                                               {"train", "Training"}, {"dann", "Aedann"},
                                               {"run", "Run"},     {"io", "Output"}};
  for (auto& e : table) {
    if (!e.has_flag) continue;
    if (e.is_bool) {
      sub->add_flag_function(
             "--" + e.key, [&e](std::int64_t) { e.set("true"); }, e.help)
          ->group(groups[e.section]);
      sub->add_flag_function(
             "--no-" + e.key, [&e](std::int64_t) { e.set("false"); }, "")
          ->group("");
      continue;
    }
    auto* opt = sub->add_option_function<std::string>(
        "--" + e.key, [&e](const std::string& v) { e.set(v); }, e.help);
    opt->default_str(e.get())->group(groups[e.section]);
  }
  sub->add_option("--config", spec.config_path, "key = value file; explicit flags win")
      ->group("Output");
}

void trim(std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

// Applies a config file underneath any flags given on the command line.
void apply_config_file(const std::string& path, std::vector<ConfigEntry>& table, CLI::App* sub,
                       const std::string& command) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::map<std::string, ConfigEntry*> by_key;
  for (auto& e : table) by_key[e.key] = &e;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    trim(line);
    if (line.empty() || line[0] == '#' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    trim(key);
    trim(value);
    if (key == "command") {
      if (value != command)
        std::fprintf(stderr, "note: config was written by '%s', running '%s'\n", value.c_str(),
                     command.c_str());
      continue;
    }
    const auto it = by_key.find(key);
    if (it == by_key.end())
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    const ConfigEntry& e = *it->second;
    if (e.has_flag && sub->count("--" + key) > 0) continue;
    if (e.is_bool && sub->count("--no-" + key) > 0) continue;
    e.set(value);
  }
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string stem_of(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

std::string fingerprint_hex(const WindowedDataset& ds) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(dataset_fingerprint(ds)));
  return buf;
}

WindowedDataset load_input(const RunSpec& spec, const std::string& path) {
  if (spec.format == "wds") {
    WindowedDataset ds = load_dataset(path);
    ds.spec.name = stem_of(path);
    return ds;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset: " + path);
  if (spec.format == "casas") {
    const CasasParse parse = parse_casas_log(in, stem_of(path));
    const FeaturizedEvents feat = featurize_events(parse.events, parse.spec);
    return make_windows(feat.features, feat.labels, parse.spec, spec.synth.n_w, spec.stride);
  }
  if (spec.format == "imu") {
    const ImuParse parse =
        parse_imu_csv(in, spec.imu_col_start, spec.imu_col_end, spec.imu_label_col, stem_of(path));
    return make_windows(parse.rows, parse.labels, parse.spec, spec.synth.n_w, spec.stride);
  }
  throw DataError("unknown dataset format: " + spec.format + " (expected wds, casas, or imu)");
}

void describe(const WindowedDataset& ds) {
  std::printf("loaded %s: %zu windows of %zu x %zu, %zu classes\n", ds.spec.name.c_str(),
              ds.size(), ds.spec.n_f(), ds.n_w, ds.spec.label_vocabulary.size());
}

struct Datasets {
  WindowedDataset source;
  WindowedDataset target;
};

// Verifies a recorded fingerprint and stores the live one for the manifest.
void check_fingerprint(const WindowedDataset& ds, std::string& recorded, const char* which) {
  const std::string live = fingerprint_hex(ds);
  if (!recorded.empty() && recorded != live)
    std::fprintf(stderr, "warning: %s dataset fingerprint %s differs from the recorded %s\n",
                 which, live.c_str(), recorded.c_str());
  recorded = live;
}

Datasets materialize(RunSpec& spec) {
  Datasets ds;
  const bool no_paths = spec.source_path.empty() && spec.target_path.empty();
  if (spec.synthetic || no_paths) {
    if (!spec.synthetic)
      std::printf("no dataset paths given; using the synthetic generator\n");
    auto pair = generate_domain_pair(spec.synth);
    ds.source = std::move(pair.first);
    ds.target = std::move(pair.second);
  } else {
    if (spec.source_path.empty() || spec.target_path.empty())
      throw DataError("give both --source and --target, or neither for synthetic data");
    ds.source = load_input(spec, spec.source_path);
    ds.target = load_input(spec, spec.target_path);
  }
  describe(ds.source);
  describe(ds.target);
  check_fingerprint(ds.source, spec.source_fingerprint, "source");
  check_fingerprint(ds.target, spec.target_fingerprint, "target");
  return ds;
}

// The baseline trains and evaluates on one domain: an explicit target, an
// explicit source, or the synthetic target.
WindowedDataset pick_baseline_dataset(RunSpec& spec) {
  if (!spec.target_path.empty() || !spec.source_path.empty()) {
    WindowedDataset ds = load_input(
        spec, spec.target_path.empty() ? spec.source_path : spec.target_path);
    describe(ds);
    check_fingerprint(ds, spec.target_fingerprint, "target");
    spec.source_fingerprint = spec.target_fingerprint;
    return ds;
  }
  std::printf("no dataset path given; using the synthetic target domain\n");
  auto pair = generate_domain_pair(spec.synth);
  describe(pair.second);
  check_fingerprint(pair.second, spec.target_fingerprint, "target");
  spec.source_fingerprint = spec.target_fingerprint;
  return std::move(pair.second);
}

void write_manifest(RunSpec& spec, const std::string& command, const std::string& run_id) {
  std::vector<ConfigEntry> table = make_table(spec);
  KvList kv;
  kv.push_back({"[invocation]", ""});
  kv.push_back({"command", command});
  std::string section;
  for (const auto& e : table) {
    if (e.key == "run-id") {
      // Pin the id so a replayed manifest reuses it.
      if (spec.run_id.empty()) {
        kv.push_back({"run-id", run_id});
        continue;
      }
    }
    if (e.section != section) {
      section = e.section;
      kv.push_back({"[" + section + "]", ""});
    }
    kv.push_back({e.key, e.get()});
  }
  const std::string path = join_path(spec.out, run_id + ".manifest");
  write_kv_file(path, kv);
  std::printf("manifest: %s\n", path.c_str());
}

std::string derive_run_id(const RunSpec& spec, const std::string& command,
                          const std::string& source_name, const std::string& target_name) {
  if (!spec.run_id.empty()) return spec.run_id;
  return make_run_id(command, source_name, target_name, spec.labeled_fraction, spec.train.alpha,
                     spec.train.seed);
}

std::string report_path(const RunSpec& spec) {
  return spec.report.empty() ? join_path(spec.out, "report.csv") : spec.report;
}

StageLogger stdout_logger() {
  return [](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  };
}

void append_rows(const RunSpec& spec, const std::vector<ExperimentReport>& rows) {
  ReportWriter writer(report_path(spec));
  for (const auto& r : rows) writer.append(r);
  std::printf("%zu row%s appended to %s\n", rows.size(), rows.size() == 1 ? "" : "s",
              writer.path().c_str());
}

void print_result(const ExperimentReport& r) {
  if (r.accuracy_unseen)
    std::printf("result: accuracy_overall=%.4f accuracy_unseen=%.4f\n", r.accuracy_overall,
                *r.accuracy_unseen);
  else
    std::printf("result: accuracy_overall=%.4f accuracy_unseen=n/a\n", r.accuracy_overall);
}

void save_aeda_checkpoints(const RunSpec& spec, const std::string& run_id, const AedaRun& run) {
  save_model(join_path(spec.out, run_id + ".src_ae.aeda"), run.source_stages.model);
  save_head(join_path(spec.out, run_id + ".src_clf.aeda"), run.source_stages.head);
  save_model(join_path(spec.out, run_id + ".tgt_ae.aeda"), run.target_run.tgt_model);
  save_head(join_path(spec.out, run_id + ".final.aeda"), run.target_run.head);
  std::printf("checkpoints: %s.{src_ae,src_clf,tgt_ae,final}.aeda\n",
              join_path(spec.out, run_id).c_str());
}

void summarize_group(const std::vector<ExperimentReport>& rows, const char* label,
                     double ExperimentReport::*field) {
  std::vector<double> keys;
  for (const auto& r : rows)
    if (std::find(keys.begin(), keys.end(), r.*field) == keys.end()) keys.push_back(r.*field);
  for (double k : keys) {
    std::vector<double> accs;
    for (const auto& r : rows)
      if (r.*field == k) accs.push_back(r.accuracy_overall);
    const MeanStd ms = mean_std(accs);
    std::printf("%s %s: accuracy %.4f +- %.4f (%zu seeds)\n", label, fmt_double(k).c_str(),
                ms.mean, ms.stddev, ms.n);
  }
}

int cmd_gen(RunSpec& spec) {
  std::filesystem::create_directories(spec.out);
  auto pair = generate_domain_pair(spec.synth);
  describe(pair.first);
  describe(pair.second);
  const DiversityProfile prof = diversity_profile(pair.first, pair.second);
  std::printf("diversity: %zu unseen features (%s), %zu unseen classes (%s)\n",
              prof.unseen_features, prof.high_sensor_diversity ? "high" : "low",
              prof.unseen_classes, prof.high_class_diversity ? "high" : "low");
  const std::string src_path =
      spec.source_path.empty() ? join_path(spec.out, "source.wds") : spec.source_path;
  const std::string tgt_path =
      spec.target_path.empty() ? join_path(spec.out, "target.wds") : spec.target_path;
  save_dataset(src_path, pair.first);
  save_dataset(tgt_path, pair.second);
  std::printf("wrote %s and %s\n", src_path.c_str(), tgt_path.c_str());
  spec.source_fingerprint = fingerprint_hex(pair.first);
  spec.target_fingerprint = fingerprint_hex(pair.second);
  const std::string run_id = derive_run_id(spec, "gen", pair.first.spec.name,
                                           pair.second.spec.name);
  write_manifest(spec, "gen", run_id);
  return 0;
}

int cmd_train_src(RunSpec& spec) {
  std::filesystem::create_directories(spec.out);
  WindowedDataset source;
  DomainSpec union_partner;
  std::string target_name;
  if (!spec.source_path.empty() && spec.target_path.empty() && !spec.synthetic) {
    source = load_input(spec, spec.source_path);
    describe(source);
    check_fingerprint(source, spec.source_fingerprint, "source");
    union_partner = source.spec;
    target_name = source.spec.name;
  } else {
    Datasets ds = materialize(spec);
    source = std::move(ds.source);
    union_partner = ds.target.spec;
    target_name = ds.target.spec.name;
  }
  const std::string run_id = derive_run_id(spec, "train-src", source.spec.name, target_name);
  SourceStages stages = run_source_stages(source, union_partner, spec.train, stdout_logger());
  save_model(join_path(spec.out, run_id + ".src_ae.aeda"), stages.model);
  save_head(join_path(spec.out, run_id + ".src_clf.aeda"), stages.head);
  std::printf("checkpoints: %s.{src_ae,src_clf}.aeda (union of %zu classes)\n",
              join_path(spec.out, run_id).c_str(), stages.union_vocab.size());
  write_manifest(spec, "train-src", run_id);
  return 0;
}

int cmd_pipeline_aeda(RunSpec& spec) {
  std::filesystem::create_directories(spec.out);
  Datasets ds = materialize(spec);
  const std::string run_id =
      derive_run_id(spec, "pipeline-aeda", ds.source.spec.name, ds.target.spec.name);
  const AedaRun run = run_aeda(ds.source, ds.target, spec.labeled_fraction, spec.train, run_id,
                               "aeda", stdout_logger());
  print_result(run.target_run.report);
  append_rows(spec, {run.target_run.report});
  save_aeda_checkpoints(spec, run_id, run);
  write_manifest(spec, "pipeline-aeda", run_id);
  return 0;
}

int cmd_pipeline_aedann(RunSpec& spec) {
  std::filesystem::create_directories(spec.out);
  Datasets ds = materialize(spec);
  const std::string run_id =
      derive_run_id(spec, "pipeline-aedann", ds.source.spec.name, ds.target.spec.name);
  DannConfig cfg;
  cfg.base = spec.train;
  cfg.lambda = spec.lambda;
  cfg.f_dim = spec.f_dim;
  const AedannRun run = run_aedann_pipeline(ds.source, ds.target, spec.labeled_fraction, cfg,
                                            run_id, stdout_logger());
  print_result(run.report);
  append_rows(spec, {run.report});
  save_model(join_path(spec.out, run_id + ".src_ae.aeda"), run.src_model);
  save_model(join_path(spec.out, run_id + ".tgt_ae.aeda"), run.tgt_model);
  save_dann(join_path(spec.out, run_id + ".aedann.aeda"), run.net);
  std::printf("checkpoints: %s.{src_ae,tgt_ae,aedann}.aeda\n",
              join_path(spec.out, run_id).c_str());
  write_manifest(spec, "pipeline-aedann", run_id);
  return 0;
}

int cmd_sweep_fraction(RunSpec& spec) {
  std::filesystem::create_directories(spec.out);
  Datasets ds = materialize(spec);
  const std::vector<double> fractions = parse_list("fractions", spec.fractions);
  std::vector<std::string> warnings;
  const auto rows = fraction_sweep(ds.source, ds.target, fractions, spec.n_seeds, spec.train,
                                   "sweep-fraction", &warnings, spec.workers);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  summarize_group(rows, "fraction", &ExperimentReport::labeled_fraction);
  append_rows(spec, rows);
  const std::string run_id =
      derive_run_id(spec, "sweep-fraction", ds.source.spec.name, ds.target.spec.name);
  write_manifest(spec, "sweep-fraction", run_id);
  return 0;
}

int cmd_sweep_alpha(RunSpec& spec) {
  std::filesystem::create_directories(spec.out);
  Datasets ds = materialize(spec);
  const std::vector<double> alphas = parse_list("alphas", spec.alphas);
  std::vector<std::string> warnings;
  double best_alpha = 0.0;
  const auto rows = alpha_sweep(ds.source, ds.target, spec.labeled_fraction, alphas, spec.n_seeds,
                                spec.train, "sweep-alpha", &best_alpha, &warnings, spec.workers);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  summarize_group(rows, "alpha", &ExperimentReport::alpha);
  std::printf("best alpha: %s\n", fmt_double(best_alpha).c_str());
  append_rows(spec, rows);
  const std::string run_id =
      derive_run_id(spec, "sweep-alpha", ds.source.spec.name, ds.target.spec.name);
  write_manifest(spec, "sweep-alpha", run_id);
  return 0;
}

int cmd_ablate(RunSpec& spec) {
  std::filesystem::create_directories(spec.out);
  Datasets ds = materialize(spec);
  const AblationOutcome out = ablation(ds.source, ds.target, spec.labeled_fraction, spec.n_seeds,
                                       spec.train, "ablate", spec.workers);
  for (std::size_t i = 0; i + 1 < out.reports.size(); i += 2) {
    const auto& a = out.reports[i];
    const auto& b = out.reports[i + 1];
    std::printf("seed %llu: aeda=%.4f no_kld=%.4f delta=%+.2f pts\n",
                static_cast<unsigned long long>(a.seed), a.accuracy_overall, b.accuracy_overall,
                (a.accuracy_overall - b.accuracy_overall) * 100.0);
  }
  std::printf("mean delta: %+.2f pts (%zu seeds)\n", out.mean_delta, spec.n_seeds);
  append_rows(spec, out.reports);
  const std::string run_id =
      derive_run_id(spec, "ablate", ds.source.spec.name, ds.target.spec.name);
  write_manifest(spec, "ablate", run_id);
  return 0;
}

int cmd_baseline(RunSpec& spec) {
  std::filesystem::create_directories(spec.out);
  WindowedDataset ds = pick_baseline_dataset(spec);
  const std::string run_id = derive_run_id(spec, "baseline", ds.spec.name, ds.spec.name);
  const AedaRun run =
      baseline_same_domain(ds, spec.labeled_fraction, spec.train, run_id, stdout_logger());
  print_result(run.target_run.report);
  append_rows(spec, {run.target_run.report});
  save_aeda_checkpoints(spec, run_id, run);
  write_manifest(spec, "baseline", run_id);
  return 0;
}

int cmd_eval(RunSpec& spec) {
  if (spec.run_id.empty()) throw DataError("eval needs --run-id of a completed run");
  const std::string manifest = join_path(spec.out, spec.run_id + ".manifest");
  std::ifstream probe(manifest);
  if (!probe) throw DataError("no manifest for run id: " + manifest);

  // The manifest is authoritative for everything except the output directory.
  RunSpec rs;
  rs.out = spec.out;
  std::string command;
  {
    std::vector<ConfigEntry> table = make_table(rs);
    std::map<std::string, ConfigEntry*> by_key;
    for (auto& e : table) by_key[e.key] = &e;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(probe, line)) {
      ++lineno;
      trim(line);
      if (line.empty() || line[0] == '#' || line[0] == '[') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw DataError(manifest + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      trim(key);
      trim(value);
      if (key == "command") {
        command = value;
        continue;
      }
      if (key == "out") continue;
      const auto it = by_key.find(key);
      if (it == by_key.end())
        throw DataError(manifest + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      it->second->set(value);
    }
  }

  WindowedDataset source, target;
  if (command == "baseline") {
    source = pick_baseline_dataset(rs);
    target = source;
  } else if (command == "pipeline-aeda" || command == "pipeline-aedann") {
    Datasets ds = materialize(rs);
    source = std::move(ds.source);
    target = std::move(ds.target);
  } else {
    throw DataError("run '" + spec.run_id + "' was a '" + command +
                    "' invocation; only pipeline and baseline runs are evaluable");
  }

  const auto union_vocab = union_vocabulary(source.spec, target.spec);
  const WindowedDataset split = split_labeled(target, rs.labeled_fraction, rs.train.seed);
  const EvalSet eval = evaluation_set(split, source.spec.label_vocabulary, union_vocab);
  if (eval.rows.empty()) throw DataError("no evaluation windows remain");
  std::vector<Tensor> wins;
  wins.reserve(eval.rows.size());
  for (std::size_t i : eval.rows) wins.push_back(split.windows[i]);

  Rng rng(0);
  Prediction pred;
  const std::string base = join_path(spec.out, spec.run_id);
  if (command == "pipeline-aedann") {
    AutoEncoderModel tgt_model =
        make_autoencoder(target.spec.n_f(), target.n_w, rs.train.b, rng);
    load_model(base + ".tgt_ae.aeda", tgt_model);
    DannConfig cfg;
    cfg.base = rs.train;
    cfg.lambda = rs.lambda;
    cfg.f_dim = rs.f_dim;
    DannNetwork net = make_dann_network(rs.train.b, union_vocab.size(), cfg, rng);
    load_dann(base + ".aedann.aeda", net);
    pred = predict_aedann(net, tgt_model, wins, rs.train.batch_size);
  } else {
    AutoEncoderModel tgt_model =
        make_autoencoder(target.spec.n_f(), target.n_w, rs.train.b, rng);
    load_model(base + ".tgt_ae.aeda", tgt_model);
    ClassifierHead head =
        make_classifier_head(rs.train.b, union_vocab.size(), rs.train.c_l, rng);
    load_head(base + ".final.aeda", head);
    pred = predict(tgt_model, head, wins, rs.train.batch_size);
  }

  const double acc = accuracy(pred.labels, eval.truth);
  const auto unseen =
      unseen_accuracy(pred.labels, eval.truth, source.spec.label_vocabulary, union_vocab);
  std::printf("evaluated %zu windows from run %s\n", wins.size(), spec.run_id.c_str());
  if (unseen)
    std::printf("result: accuracy_overall=%.4f accuracy_unseen=%.4f\n", acc, *unseen);
  else
    std::printf("result: accuracy_overall=%.4f accuracy_unseen=n/a\n", acc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunSpec spec;
  if (const char* env = std::getenv("AEDA_OUT"); env && *env) spec.out = env;

  CLI::App app{"aeda: dual auto-encoder domain adaptation"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* desc;
    int (*fn)(RunSpec&);
  };
  const Command commands[] = {
      {"gen", "generate a synthetic domain pair and write dataset caches", cmd_gen},
      {"train-src", "train the source auto-encoder and classifier", cmd_train_src},
      {"pipeline-aeda", "run the full dual auto-encoder pipeline", cmd_pipeline_aeda},
      {"pipeline-aedann", "run the adversarial variant", cmd_pipeline_aedann},
      {"sweep-fraction", "pipeline across labeled fractions and seeds", cmd_sweep_fraction},
      {"sweep-alpha", "pipeline across alignment weights and seeds", cmd_sweep_alpha},
      {"ablate", "paired runs at the configured alpha and at alpha = 0", cmd_ablate},
      {"baseline", "same-domain pipeline (source = target)", cmd_baseline},
      {"eval", "re-score a completed run from its manifest and checkpoints", cmd_eval},
  };

  std::vector<ConfigEntry> table = make_table(spec);
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.desc);
    register_options(sub, spec, table);
    subs[c.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  for (const auto& c : commands) {
    if (!subs[c.name]->parsed()) continue;
    try {
      if (!spec.config_path.empty()) apply_config_file(spec.config_path, table, subs[c.name], c.name);
      return c.fn(spec);
    } catch (const DivergenceError& e) {
      std::fprintf(stderr, "divergence: %s (epoch %d, batch %d)\n", e.what(), e.epoch, e.batch);
      return 4;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 3;
    }
  }
  return 2;
}
