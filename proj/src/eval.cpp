#include "aeda/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "aeda/errors.hpp"

namespace aeda {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fmt_4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt_3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '-' || c == '_';
    if (!ok) c = '-';
  }
  return out;
}

void check_unit_interval(const char* what, double v) {
  if (!(v >= 0.0 && v <= 1.0))
    throw DataError(std::string(what) + " outside [0,1]: " + fmt_g(v));
}

// Runs fn(0..n-1), spreading the indices over up to `workers` threads. The
// first exception wins and is rethrown on the caller's thread.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// Stage summaries for interactive callers.
void note(const StageLogger& log, const char* stage, const StageInfo& info) {
  if (!log) return;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s: epochs=%zu loss=%.6g", stage, info.epochs, info.best_loss);
  log(buf);
}

std::vector<Tensor> gather_eval_windows(const WindowedDataset& split, const EvalSet& eval) {
  std::vector<Tensor> out;
  out.reserve(eval.rows.size());
  for (std::size_t i : eval.rows) out.push_back(split.windows[i]);
  return out;
}

void check_run_fraction(const WindowedDataset& target, double fraction) {
  const std::size_t n_labeled = labeled_count(target.size(), fraction);
  if (n_labeled == 0) throw DataError("labeled fraction yields no labeled windows");
  if (n_labeled == target.size())
    throw DataError("labeled fraction " + fmt_g(fraction) + " leaves no evaluation windows");
}

// Reasons to skip a sweep point, or empty when it can run.
std::string sweep_skip_reason(const WindowedDataset& target, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0)
    return "fraction " + fmt_g(fraction) + " outside (0,1]; skipped";
  const std::size_t n_labeled = labeled_count(target.size(), fraction);
  if (n_labeled == 0) return "fraction " + fmt_g(fraction) + " yields no labeled windows; skipped";
  if (n_labeled == target.size())
    return "fraction " + fmt_g(fraction) + " leaves no evaluation windows; skipped";
  return "";
}

}  // namespace

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths) {
  if (predictions.empty()) throw DataError("accuracy: empty input");
  if (predictions.size() != truths.size())
    throw DataError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                    std::to_string(truths.size()) + " truths");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == truths[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

std::optional<double> unseen_accuracy(const std::vector<int>& predictions,
                                      const std::vector<int>& truths,
                                      const std::vector<std::string>& source_vocab,
                                      const std::vector<std::string>& union_vocab) {
  if (predictions.size() != truths.size())
    throw DataError("unseen_accuracy: " + std::to_string(predictions.size()) +
                    " predictions vs " + std::to_string(truths.size()) + " truths");
  std::vector<char> seen(union_vocab.size(), 0);
  for (const auto& name : source_vocab) {
    const auto it = std::find(union_vocab.begin(), union_vocab.end(), name);
    if (it == union_vocab.end())
      throw DataError("unseen_accuracy: source class " + name + " outside the union vocabulary");
    seen[static_cast<std::size_t>(it - union_vocab.begin())] = 1;
  }
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i];
    if (t < 0 || static_cast<std::size_t>(t) >= union_vocab.size())
      throw DataError("unseen_accuracy: truth index outside the union vocabulary");
    if (seen[static_cast<std::size_t>(t)]) continue;
    ++n;
    if (predictions[i] == t) ++hit;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(n);
}

EvalSet evaluation_set(const WindowedDataset& target, const std::vector<std::string>& source_vocab,
                       const std::vector<std::string>& union_vocab) {
  const auto vmap = vocabulary_map(target.spec.label_vocabulary, union_vocab);
  std::vector<char> in_source(vmap.size(), 0);
  for (std::size_t c = 0; c < target.spec.label_vocabulary.size(); ++c)
    in_source[c] = std::find(source_vocab.begin(), source_vocab.end(),
                             target.spec.label_vocabulary[c]) != source_vocab.end()
                       ? 1
                       : 0;

  EvalSet out;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target.labeled_mask[i]) continue;
    const int raw = target.labels[i];
    if (raw < 0 || static_cast<std::size_t>(raw) >= vmap.size()) continue;
    out.rows.push_back(i);
    out.truth.push_back(vmap[static_cast<std::size_t>(raw)]);
    out.unseen.push_back(in_source[static_cast<std::size_t>(raw)] ? 0 : 1);
  }
  return out;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  out.n = values.size();
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return out;
}

std::string make_run_id(const std::string& command, const std::string& source,
                        const std::string& target, double fraction, double alpha,
                        std::uint64_t seed) {
  return sanitize(command) + "_" + sanitize(source) + "_" + sanitize(target) + "_f" +
         fmt_g(fraction) + "_a" + fmt_g(alpha) + "_s" + std::to_string(seed);
}

ReportWriter::ReportWriter(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (in) {
    std::string line;
    if (!std::getline(in, line) || line != header())
      throw DataError("report file has a foreign header: " + path_);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      seen_.insert(line.substr(0, line.find(',')));
    }
    return;
  }
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw DataError("cannot create report file: " + path_);
  out << header() << '\n';
}

std::string ReportWriter::header() {
  return "run_id,method,source,target,labeled_fraction,alpha,seed,accuracy_overall,"
         "accuracy_unseen,epochs_src_ae,epochs_src_clf,epochs_tgt_ae,epochs_finetune,wall_time_s";
}

std::string ReportWriter::format_row(const ExperimentReport& r) {
  check_unit_interval("accuracy_overall", r.accuracy_overall);
  if (r.accuracy_unseen) check_unit_interval("accuracy_unseen", *r.accuracy_unseen);
  std::ostringstream os;
  os << sanitize(r.run_id) << ',' << sanitize(r.method) << ',' << sanitize(r.source) << ','
     << sanitize(r.target) << ',' << fmt_g(r.labeled_fraction) << ',' << fmt_g(r.alpha) << ','
     << r.seed << ',' << fmt_4(r.accuracy_overall) << ','
     << (r.accuracy_unseen ? fmt_4(*r.accuracy_unseen) : std::string()) << ',' << r.epochs_src_ae
     << ',' << r.epochs_src_clf << ',' << r.epochs_tgt_ae << ',' << r.epochs_finetune << ','
     << fmt_3(r.wall_time_s);
  return os.str();
}

void ReportWriter::append(const ExperimentReport& r) {
  const std::string id = sanitize(r.run_id);
  if (seen_.count(id)) throw DataError("duplicate run id: " + id);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw DataError("cannot open report file: " + path_);
  out << format_row(r) << '\n';
  out.flush();
  if (!out) throw DataError("cannot write report file: " + path_);
  seen_.insert(id);
}

void write_kv_file(const std::string& path, const KvList& kv) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot create file: " + path);
  for (const auto& [key, value] : kv) {
    if (!key.empty() && key.front() == '[' && value.empty())
      out << key << '\n';
    else
      out << key << " = " << value << '\n';
  }
  if (!out.flush()) throw DataError("cannot write file: " + path);
}

SourceStages run_source_stages(const WindowedDataset& source, const DomainSpec& target_spec,
                               const TrainConfig& cfg, const StageLogger& log) {
  const auto t0 = Clock::now();
  SourceStages out;
  out.union_vocab = union_vocabulary(source.spec, target_spec);
  out.model = train_source_ae(source, cfg, &out.ae_info);
  note(log, "src_ae", out.ae_info);
  out.head = train_source_classifier(out.model, source, out.union_vocab, cfg, &out.clf_info);
  note(log, "src_clf", out.clf_info);
  out.ref = compute_reference_stats(out.model, source, cfg);
  out.elapsed_s = seconds_since(t0);
  return out;
}

TargetRun run_target_stages(SourceStages& src, const WindowedDataset& source,
                            const WindowedDataset& target, double labeled_fraction,
                            const TrainConfig& cfg, const std::string& run_id,
                            const std::string& method, const StageLogger& log) {
  const auto t0 = Clock::now();
  check_run_fraction(target, labeled_fraction);
  const WindowedDataset split = split_labeled(target, labeled_fraction, cfg.seed);

  TargetRun run;
  StageInfo tgt_info, ft_info;
  run.tgt_model = train_target_ae(split, src.ref, cfg, &tgt_info);
  note(log, "tgt_ae", tgt_info);
  run.head = clone_head(src.head);
  finetune_target(run.tgt_model, run.head, split, src.union_vocab, cfg, &ft_info);
  note(log, "finetune", ft_info);

  EvalSet eval = evaluation_set(split, source.spec.label_vocabulary, src.union_vocab);
  if (eval.rows.empty()) throw DataError("no evaluation windows remain");
  const std::vector<Tensor> wins = gather_eval_windows(split, eval);
  run.pred = predict(run.tgt_model, run.head, wins, cfg.batch_size);
  run.truth = std::move(eval.truth);
  run.unseen = std::move(eval.unseen);

  ExperimentReport& r = run.report;
  r.run_id = run_id;
  r.method = method;
  r.source = source.spec.name;
  r.target = target.spec.name;
  r.labeled_fraction = labeled_fraction;
  r.alpha = cfg.alpha;
  r.seed = cfg.seed;
  r.accuracy_overall = accuracy(run.pred.labels, run.truth);
  r.accuracy_unseen =
      unseen_accuracy(run.pred.labels, run.truth, source.spec.label_vocabulary, src.union_vocab);
  r.epochs_src_ae = src.ae_info.epochs;
  r.epochs_src_clf = src.clf_info.epochs;
  r.epochs_tgt_ae = tgt_info.epochs;
  r.epochs_finetune = ft_info.epochs;
  r.wall_time_s = src.elapsed_s + seconds_since(t0);
  return run;
}

AedaRun run_aeda(const WindowedDataset& source, const WindowedDataset& target,
                 double labeled_fraction, const TrainConfig& cfg, const std::string& run_id,
                 const std::string& method, const StageLogger& log) {
  AedaRun out;
  out.source_stages = run_source_stages(source, target.spec, cfg, log);
  out.target_run = run_target_stages(out.source_stages, source, target, labeled_fraction, cfg,
                                     run_id, method, log);
  return out;
}

AedannRun run_aedann_pipeline(const WindowedDataset& source, const WindowedDataset& target,
                              double labeled_fraction, const DannConfig& cfg,
                              const std::string& run_id, const StageLogger& log) {
  const auto t0 = Clock::now();
  const TrainConfig& base = cfg.base;
  check_run_fraction(target, labeled_fraction);
  const WindowedDataset split = split_labeled(target, labeled_fraction, base.seed);

  AedannRun run;
  run.src_model = train_source_ae(source, base, &run.src_ae_info);
  freeze_stack(run.src_model.encoder);
  note(log, "src_ae", run.src_ae_info);
  const auto union_vocab = union_vocabulary(source.spec, target.spec);
  const ReferenceStats ref = compute_reference_stats(run.src_model, source, base);
  run.tgt_model = train_target_ae(split, ref, base, &run.tgt_ae_info);
  freeze_stack(run.tgt_model.encoder);
  note(log, "tgt_ae", run.tgt_ae_info);
  run.net = train_aedann(run.src_model, run.tgt_model, source, split, union_vocab, cfg,
                         &run.dann_info);
  if (log) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "aedann: epochs=%zu loss=%.6g holdout_domain_acc=%.4f",
                  run.dann_info.epochs, run.dann_info.best_loss,
                  run.dann_info.holdout_domain_accuracy);
    log(buf);
  }

  EvalSet eval = evaluation_set(split, source.spec.label_vocabulary, union_vocab);
  if (eval.rows.empty()) throw DataError("no evaluation windows remain");
  const std::vector<Tensor> wins = gather_eval_windows(split, eval);
  run.pred = predict_aedann(run.net, run.tgt_model, wins, base.batch_size);
  run.truth = std::move(eval.truth);
  run.unseen = std::move(eval.unseen);

  ExperimentReport& r = run.report;
  r.run_id = run_id;
  r.method = "aedann";
  r.source = source.spec.name;
  r.target = target.spec.name;
  r.labeled_fraction = labeled_fraction;
  r.alpha = base.alpha;
  r.seed = base.seed;
  r.accuracy_overall = accuracy(run.pred.labels, run.truth);
  r.accuracy_unseen =
      unseen_accuracy(run.pred.labels, run.truth, source.spec.label_vocabulary, union_vocab);
  r.epochs_src_ae = run.src_ae_info.epochs;
  r.epochs_src_clf = 0;
  r.epochs_tgt_ae = run.tgt_ae_info.epochs;
  r.epochs_finetune = run.dann_info.epochs;
  r.wall_time_s = seconds_since(t0);
  return run;
}

std::vector<ExperimentReport> fraction_sweep(const WindowedDataset& source,
                                             const WindowedDataset& target,
                                             const std::vector<double>& fractions,
                                             std::size_t n_seeds, const TrainConfig& cfg,
                                             const std::string& command,
                                             std::vector<std::string>* warnings,
                                             std::size_t workers) {
  if (fractions.empty()) throw DataError("fraction sweep needs at least one fraction");
  if (!std::is_sorted(fractions.begin(), fractions.end()))
    throw DataError("fractions must be sorted ascending");
  if (n_seeds == 0) throw DataError("sweep needs at least one seed");

  std::vector<double> kept;
  for (double f : fractions) {
    const std::string reason = sweep_skip_reason(target, f);
    if (reason.empty()) {
      kept.push_back(f);
    } else if (warnings) {
      warnings->push_back(reason);
    }
  }

  std::vector<std::vector<ExperimentReport>> per_seed(n_seeds);
  parallel_for(n_seeds, workers, [&](std::size_t s) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + s;
    SourceStages src = run_source_stages(source, target.spec, c);
    for (double f : kept) {
      const std::string id =
          make_run_id(command, source.spec.name, target.spec.name, f, c.alpha, c.seed);
      per_seed[s].push_back(
          run_target_stages(src, source, target, f, c, id, "aeda").report);
    }
  });

  std::vector<ExperimentReport> out;
  for (std::size_t fi = 0; fi < kept.size(); ++fi)
    for (std::size_t s = 0; s < n_seeds; ++s) out.push_back(per_seed[s][fi]);
  return out;
}

std::vector<ExperimentReport> alpha_sweep(const WindowedDataset& source,
                                          const WindowedDataset& target, double labeled_fraction,
                                          const std::vector<double>& alphas, std::size_t n_seeds,
                                          const TrainConfig& cfg, const std::string& command,
                                          double* best_alpha, std::vector<std::string>* warnings,
                                          std::size_t workers) {
  if (alphas.empty()) throw DataError("alpha sweep needs at least one alpha");
  for (double a : alphas)
    if (!(a > 0.0)) throw DataError("alpha sweep values must be positive");
  if (n_seeds == 0) throw DataError("sweep needs at least one seed");

  std::vector<double> grid = alphas;
  const bool has_default_point =
      std::any_of(grid.begin(), grid.end(), [](double a) { return a == 1e-6; });
  if (!has_default_point) {
    grid.push_back(1e-6);
    if (warnings) warnings->push_back("alpha grid extended to include 1e-06");
  }

  std::vector<std::vector<ExperimentReport>> per_seed(n_seeds);
  parallel_for(n_seeds, workers, [&](std::size_t s) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + s;
    SourceStages src = run_source_stages(source, target.spec, c);
    for (double a : grid) {
      TrainConfig ca = c;
      ca.alpha = a;
      const std::string id =
          make_run_id(command, source.spec.name, target.spec.name, labeled_fraction, a, ca.seed);
      per_seed[s].push_back(
          run_target_stages(src, source, target, labeled_fraction, ca, id, "aeda").report);
    }
  });

  std::vector<ExperimentReport> out;
  std::size_t best_idx = 0;
  double best_mean = -1.0;
  for (std::size_t ai = 0; ai < grid.size(); ++ai) {
    std::vector<double> accs;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      out.push_back(per_seed[s][ai]);
      accs.push_back(per_seed[s][ai].accuracy_overall);
    }
    const double m = mean_std(accs).mean;
    if (m > best_mean) {
      best_mean = m;
      best_idx = ai;
    }
  }
  if (best_alpha) *best_alpha = grid[best_idx];
  return out;
}

AblationOutcome ablation(const WindowedDataset& source, const WindowedDataset& target,
                         double labeled_fraction, std::size_t n_seeds, const TrainConfig& cfg,
                         const std::string& command, std::size_t workers) {
  if (n_seeds == 0) throw DataError("ablation needs at least one seed");

  std::vector<std::vector<ExperimentReport>> per_seed(n_seeds);
  parallel_for(n_seeds, workers, [&](std::size_t s) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + s;
    SourceStages src = run_source_stages(source, target.spec, c);

    const std::string id_kld =
        make_run_id(command, source.spec.name, target.spec.name, labeled_fraction, c.alpha, c.seed);
    per_seed[s].push_back(
        run_target_stages(src, source, target, labeled_fraction, c, id_kld, "aeda").report);

    TrainConfig c0 = c;
    c0.alpha = 0.0;
    const std::string id_off =
        make_run_id(command, source.spec.name, target.spec.name, labeled_fraction, 0.0, c0.seed);
    per_seed[s].push_back(
        run_target_stages(src, source, target, labeled_fraction, c0, id_off, "ablation_no_kld")
            .report);
  });

  AblationOutcome out;
  double delta_sum = 0.0;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    out.reports.push_back(per_seed[s][0]);
    out.reports.push_back(per_seed[s][1]);
    delta_sum += (per_seed[s][0].accuracy_overall - per_seed[s][1].accuracy_overall) * 100.0;
  }
  out.mean_delta = delta_sum / static_cast<double>(n_seeds);
  return out;
}

AedaRun baseline_same_domain(const WindowedDataset& dataset, double labeled_fraction,
                             const TrainConfig& cfg, const std::string& run_id,
                             const StageLogger& log) {
  return run_aeda(dataset, dataset, labeled_fraction, cfg, run_id, "baseline_same_domain", log);
}

}  // namespace aeda
