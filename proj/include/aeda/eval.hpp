#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "aeda/aedann.hpp"
#include "aeda/data.hpp"
#include "aeda/engine.hpp"

namespace aeda {

// Exact-match fraction over parallel label vectors.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& truths);

// Accuracy restricted to windows whose true class is absent from the source
// vocabulary. Empty result when no such window exists.
std::optional<double> unseen_accuracy(const std::vector<int>& predictions,
                                      const std::vector<int>& truths,
                                      const std::vector<std::string>& source_vocab,
                                      const std::vector<std::string>& union_vocab);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 below two values
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& values);

struct ExperimentReport {
  std::string run_id;
  std::string method;  // aeda, aedann, ablation_no_kld, baseline_same_domain
  std::string source;
  std::string target;
  double labeled_fraction = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double accuracy_overall = 0.0;
  std::optional<double> accuracy_unseen;
  std::size_t epochs_src_ae = 0;
  std::size_t epochs_src_clf = 0;
  std::size_t epochs_tgt_ae = 0;
  std::size_t epochs_finetune = 0;
  double wall_time_s = 0.0;
};

std::string make_run_id(const std::string& command, const std::string& source,
                        const std::string& target, double fraction, double alpha,
                        std::uint64_t seed);

// Append-only CSV sink. Rows are immutable: a run_id already present in the
// file is rejected, never overwritten.
class ReportWriter {
 public:
  explicit ReportWriter(std::string path);

  static std::string header();
  static std::string format_row(const ExperimentReport& r);

  void append(const ExperimentReport& r);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::set<std::string> seen_;
};

// Ordered key=value lines, reloadable as a config file.
using KvList = std::vector<std::pair<std::string, std::string>>;
void write_kv_file(const std::string& path, const KvList& kv);

// Receives a one-line summary each time a pipeline stage completes.
using StageLogger = std::function<void(const std::string&)>;

// The scoring set of a target split: unlabeled windows with known truth.
struct EvalSet {
  std::vector<std::size_t> rows;
  std::vector<int> truth;    // union-vocabulary indices
  std::vector<char> unseen;  // truth class absent from the source vocabulary
};

EvalSet evaluation_set(const WindowedDataset& target, const std::vector<std::string>& source_vocab,
                       const std::vector<std::string>& union_vocab);

// Stages 1-2 plus the frozen-encoder reference statistics; shared by every
// target-side arm that uses the same seed.
struct SourceStages {
  AutoEncoderModel model;
  ClassifierHead head;
  ReferenceStats ref;
  std::vector<std::string> union_vocab;
  StageInfo ae_info;
  StageInfo clf_info;
  double elapsed_s = 0.0;
};

SourceStages run_source_stages(const WindowedDataset& source, const DomainSpec& target_spec,
                               const TrainConfig& cfg, const StageLogger& log = {});

// One target-side run: labeled split, target auto-encoder, head fine-tune,
// prediction on the unlabeled remainder.
struct TargetRun {
  ExperimentReport report;
  AutoEncoderModel tgt_model;
  ClassifierHead head;
  Prediction pred;
  std::vector<int> truth;     // union-vocabulary indices of the scored windows
  std::vector<char> unseen;   // truth class absent from the source vocabulary
};

TargetRun run_target_stages(SourceStages& src, const WindowedDataset& source,
                            const WindowedDataset& target, double labeled_fraction,
                            const TrainConfig& cfg, const std::string& run_id,
                            const std::string& method, const StageLogger& log = {});

// Full four-stage run on one pair.
struct AedaRun {
  SourceStages source_stages;
  TargetRun target_run;
};

AedaRun run_aeda(const WindowedDataset& source, const WindowedDataset& target,
                 double labeled_fraction, const TrainConfig& cfg, const std::string& run_id,
                 const std::string& method = "aeda", const StageLogger& log = {});

// Full adversarial run: source AE, KLD-coupled target AE, adversarial head.
struct AedannRun {
  ExperimentReport report;
  AutoEncoderModel src_model;
  AutoEncoderModel tgt_model;
  DannNetwork net;
  DannInfo dann_info;
  StageInfo src_ae_info;
  StageInfo tgt_ae_info;
  Prediction pred;
  std::vector<int> truth;
  std::vector<char> unseen;
};

AedannRun run_aedann_pipeline(const WindowedDataset& source, const WindowedDataset& target,
                              double labeled_fraction, const DannConfig& cfg,
                              const std::string& run_id, const StageLogger& log = {});

// One full run per (fraction, seed) with seeds cfg.seed .. cfg.seed+n_seeds-1;
// source stages are shared across fractions within a seed. Fractions that
// leave no labeled or no evaluation windows are skipped with a warning.
std::vector<ExperimentReport> fraction_sweep(const WindowedDataset& source,
                                             const WindowedDataset& target,
                                             const std::vector<double>& fractions,
                                             std::size_t n_seeds, const TrainConfig& cfg,
                                             const std::string& command,
                                             std::vector<std::string>* warnings = nullptr,
                                             std::size_t workers = 1);

// One full run per (alpha, seed); the grid is extended to include 1e-6 when
// missing. `best_alpha` receives the grid value with the top seed-mean
// accuracy.
std::vector<ExperimentReport> alpha_sweep(const WindowedDataset& source,
                                          const WindowedDataset& target, double labeled_fraction,
                                          const std::vector<double>& alphas, std::size_t n_seeds,
                                          const TrainConfig& cfg, const std::string& command,
                                          double* best_alpha = nullptr,
                                          std::vector<std::string>* warnings = nullptr,
                                          std::size_t workers = 1);

// Per seed: one run at cfg.alpha and one at alpha = 0, identical otherwise.
struct AblationOutcome {
  std::vector<ExperimentReport> reports;  // aeda row then ablation_no_kld row per seed
  double mean_delta = 0.0;                // mean accuracy gap, percentage points
};

AblationOutcome ablation(const WindowedDataset& source, const WindowedDataset& target,
                         double labeled_fraction, std::size_t n_seeds, const TrainConfig& cfg,
                         const std::string& command, std::size_t workers = 1);

// Full pipeline with the dataset serving as both source and target.
AedaRun baseline_same_domain(const WindowedDataset& dataset, double labeled_fraction,
                             const TrainConfig& cfg, const std::string& run_id,
                             const StageLogger& log = {});

}  // namespace aeda
