#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "aeda/errors.hpp"
#include "aeda/eval.hpp"
#include "aeda/rng.hpp"
#include "aeda/synth.hpp"

using namespace aeda;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

SynthConfig tiny_synth() {
  SynthConfig sc;
  sc.n_classes = 4;
  sc.shared_classes = 3;
  sc.latent_dim = 4;
  sc.n_f_source = 12;
  sc.n_f_target = 16;
  sc.samples_per_class = 30;
  sc.n_w = 8;
  sc.noise_sigma = 0.1;
  sc.seed = 5;
  return sc;
}

TrainConfig tiny_cfg() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  cfg.b = 24;
  cfg.seed = 3;
  return cfg;
}

ExperimentReport sample_report() {
  ExperimentReport r;
  r.run_id = "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s7";
  r.method = "aeda";
  r.source = "synth-source";
  r.target = "synth-target";
  r.labeled_fraction = 0.1;
  r.alpha = 1e-6;
  r.seed = 7;
  r.accuracy_overall = 0.87654;
  r.accuracy_unseen = 0.25;
  r.epochs_src_ae = 12;
  r.epochs_src_clf = 30;
  r.epochs_tgt_ae = 8;
  r.epochs_finetune = 21;
  r.wall_time_s = 3.14159;
  return r;
}

}  // namespace

TEST_CASE("accuracy agrees with a confusion-matrix trace oracle") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(4000 + seed);
    const std::size_t n = 1 + rng.below(500);
    const std::size_t k = 2 + rng.below(6);
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.below(k));
      truth[i] = static_cast<int>(rng.below(k));
    }

    std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < n; ++i)
      confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])]++;
    std::size_t trace = 0, total = 0;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        total += confusion[a][b];
        if (a == b) trace += confusion[a][b];
      }
    REQUIRE(total == n);
    CHECK(accuracy(pred, truth) == static_cast<double>(trace) / static_cast<double>(total));
  }
}

TEST_CASE("accuracy basics") {
  CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(accuracy({0, 1}, {0, 2}) == 0.5);
  CHECK_THROWS_AS(accuracy({}, {}), DataError);
  CHECK_THROWS_AS(accuracy({1}, {1, 2}), DataError);

  // Simultaneous shuffles leave the score unchanged.
  Rng rng(9);
  std::vector<int> pred(97), truth(97);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = static_cast<int>(rng.below(4));
    truth[i] = static_cast<int>(rng.below(4));
  }
  const double before = accuracy(pred, truth);
  std::vector<std::size_t> order(pred.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> pred2(pred.size()), truth2(truth.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    pred2[i] = pred[order[i]];
    truth2[i] = truth[order[i]];
  }
  CHECK(accuracy(pred2, truth2) == before);
}

TEST_CASE("unseen accuracy restricts to classes outside the source vocabulary") {
  const std::vector<std::string> source_vocab = {"walk", "sit"};
  const std::vector<std::string> union_vocab = {"walk", "sit", "run", "lie"};

  SUBCASE("all truths seen") {
    const auto r = unseen_accuracy({0, 1, 0}, {0, 1, 1}, source_vocab, union_vocab);
    CHECK_FALSE(r.has_value());
  }
  SUBCASE("one of four unseen windows is predicted correctly") {
    // Truths: run, lie, run, lie (all unseen) plus two seen windows that must
    // not influence the score.
    const std::vector<int> truth = {2, 3, 2, 3, 0, 1};
    const std::vector<int> pred = {2, 0, 0, 0, 0, 0};
    const auto r = unseen_accuracy(pred, truth, source_vocab, union_vocab);
    REQUIRE(r.has_value());
    CHECK(*r == 0.25);
  }
  SUBCASE("seen-window predictions are ignored entirely") {
    const std::vector<int> truth = {2, 0};
    const auto right = unseen_accuracy({2, 3}, truth, source_vocab, union_vocab);
    const auto wrong_seen = unseen_accuracy({2, 1}, truth, source_vocab, union_vocab);
    REQUIRE(right.has_value());
    REQUIRE(wrong_seen.has_value());
    CHECK(*right == *wrong_seen);
    CHECK(*right == 1.0);
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(unseen_accuracy({0}, {0, 1}, source_vocab, union_vocab), DataError);
    CHECK_THROWS_AS(unseen_accuracy({0}, {7}, source_vocab, union_vocab), DataError);
    CHECK_THROWS_AS(unseen_accuracy({0}, {0}, {"walk", "jump"}, union_vocab), DataError);
  }
}

TEST_CASE("mean and sample standard deviation") {
  const MeanStd ms = mean_std({2, 4, 4, 4, 5, 5, 7, 9});
  CHECK(ms.n == 8);
  CHECK(ms.mean == 5.0);
  CHECK(std::abs(ms.stddev - std::sqrt(32.0 / 7.0)) < 1e-15);
  CHECK(mean_std({3.5}).stddev == 0.0);
  CHECK(mean_std({3.5}).mean == 3.5);
  CHECK(mean_std({}).n == 0);
}

TEST_CASE("run ids are deterministic and filesystem safe") {
  CHECK(make_run_id("pipeline-aeda", "synth-source", "synth-target", 0.1, 1e-6, 7) ==
        "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s7");
  CHECK(make_run_id("ablate", "a b,c", "t", 0.5, 0.0, 0) == "ablate_a-b-c_t_f0.5_a0_s0");
}

TEST_CASE("report rows render the pinned schema") {
  CHECK(ReportWriter::header() ==
        "run_id,method,source,target,labeled_fraction,alpha,seed,accuracy_overall,"
        "accuracy_unseen,epochs_src_ae,epochs_src_clf,epochs_tgt_ae,epochs_finetune,wall_time_s");

  ExperimentReport r = sample_report();
  CHECK(ReportWriter::format_row(r) ==
        "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s7,aeda,synth-source,synth-target,"
        "0.1,1e-06,7,0.8765,0.2500,12,30,8,21,3.142");

  r.accuracy_unseen.reset();
  CHECK(ReportWriter::format_row(r) ==
        "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s7,aeda,synth-source,synth-target,"
        "0.1,1e-06,7,0.8765,,12,30,8,21,3.142");

  r.accuracy_overall = 1.0;
  CHECK(ReportWriter::format_row(r).find(",1.0000,") != std::string::npos);

  r.accuracy_overall = 1.5;
  CHECK_THROWS_AS(ReportWriter::format_row(r), DataError);
  r.accuracy_overall = 0.5;
  r.accuracy_unseen = -0.1;
  CHECK_THROWS_AS(ReportWriter::format_row(r), DataError);
}

TEST_CASE("report files append and reject duplicate run ids") {
  const std::string path = "eval_report_test.csv";
  std::remove(path.c_str());

  {
    ReportWriter w(path);
    ExperimentReport r = sample_report();
    w.append(r);
    CHECK_THROWS_AS(w.append(r), DataError);
    r.run_id = "second";
    r.accuracy_unseen.reset();
    w.append(r);
  }
  {
    // Reopening sees the existing ids.
    ReportWriter w(path);
    ExperimentReport r = sample_report();
    CHECK_THROWS_AS(w.append(r), DataError);
    r.run_id = "third";
    w.append(r);
  }

  const std::string content = slurp(path);
  std::size_t lines = 0;
  for (char c : content)
    if (c == '\n') ++lines;
  CHECK(lines == 4);
  CHECK(content.substr(0, content.find('\n')) == ReportWriter::header());
  std::remove(path.c_str());

  std::ofstream bad("eval_bad_header.csv");
  bad << "not,a,report\n";
  bad.close();
  CHECK_THROWS_AS(ReportWriter("eval_bad_header.csv"), DataError);
  std::remove("eval_bad_header.csv");
}

TEST_CASE("key value files round trip") {
  const std::string path = "eval_kv_test.txt";
  write_kv_file(path, {{"[run]", ""}, {"alpha", "1e-06"}, {"batch", "128"}});
  CHECK(slurp(path) == "[run]\nalpha = 1e-06\nbatch = 128\n");
  std::remove(path.c_str());
}

TEST_CASE("a full pipeline run fills every report field") {
  const auto pair = generate_domain_pair(tiny_synth());
  const TrainConfig cfg = tiny_cfg();
  const AedaRun run = run_aeda(pair.first, pair.second, 0.25, cfg, "smoke_run", "aeda");
  const ExperimentReport& r = run.target_run.report;

  CHECK(r.run_id == "smoke_run");
  CHECK(r.method == "aeda");
  CHECK(r.source == "synth-source");
  CHECK(r.target == "synth-target");
  CHECK(r.labeled_fraction == 0.25);
  CHECK(r.alpha == cfg.alpha);
  CHECK(r.seed == cfg.seed);
  CHECK(r.accuracy_overall >= 0.0);
  CHECK(r.accuracy_overall <= 1.0);
  // The tiny pair has one target-only class, so unseen windows exist.
  REQUIRE(r.accuracy_unseen.has_value());
  CHECK(*r.accuracy_unseen >= 0.0);
  CHECK(*r.accuracy_unseen <= 1.0);
  CHECK(r.epochs_src_ae > 0);
  CHECK(r.epochs_src_clf > 0);
  CHECK(r.epochs_tgt_ae > 0);
  CHECK(r.epochs_finetune > 0);
  CHECK(r.wall_time_s > 0.0);

  // The scored windows are exactly the unlabeled remainder.
  const std::size_t n = pair.second.size();
  CHECK(run.target_run.truth.size() == n - labeled_count(n, 0.25));

  // Unseen flags mark the one target-only class.
  std::size_t flagged = 0;
  for (char u : run.target_run.unseen) flagged += u ? 1 : 0;
  CHECK(flagged > 0);
  CHECK(flagged < run.target_run.unseen.size());
}

TEST_CASE("the alpha-zero ablation arm equals a plain reconstruction run") {
  const auto pair = generate_domain_pair(tiny_synth());
  TrainConfig cfg = tiny_cfg();
  cfg.alpha = 1e-6;

  const AblationOutcome out = ablation(pair.first, pair.second, 0.25, 1, cfg, "ablate");
  REQUIRE(out.reports.size() == 2);
  CHECK(out.reports[0].method == "aeda");
  CHECK(out.reports[0].alpha == 1e-6);
  CHECK(out.reports[1].method == "ablation_no_kld");
  CHECK(out.reports[1].alpha == 0.0);
  CHECK(out.mean_delta ==
        (out.reports[0].accuracy_overall - out.reports[1].accuracy_overall) * 100.0);

  // An independent run with alpha forced to zero reproduces the ablation arm.
  TrainConfig plain = cfg;
  plain.alpha = 0.0;
  const AedaRun ref = run_aeda(pair.first, pair.second, 0.25, plain, "plain", "aeda");
  CHECK(ref.target_run.report.accuracy_overall == out.reports[1].accuracy_overall);
  CHECK(ref.target_run.report.epochs_tgt_ae == out.reports[1].epochs_tgt_ae);
  CHECK(ref.target_run.report.epochs_finetune == out.reports[1].epochs_finetune);

  // Paired arms share the seed and the evaluation split.
  CHECK(out.reports[0].seed == out.reports[1].seed);
  CHECK(out.reports[0].labeled_fraction == out.reports[1].labeled_fraction);
}

TEST_CASE("fraction sweep bookkeeping") {
  const auto pair = generate_domain_pair(tiny_synth());
  const TrainConfig cfg = tiny_cfg();

  std::vector<std::string> warnings;
  const auto rows =
      fraction_sweep(pair.first, pair.second, {0.2, 0.5, 1.0}, 2, cfg, "sweep-fraction",
                     &warnings);
  REQUIRE(rows.size() == 4);  // fraction 1.0 skipped: nothing left to score
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("no evaluation windows") != std::string::npos);

  CHECK(rows[0].labeled_fraction == 0.2);
  CHECK(rows[1].labeled_fraction == 0.2);
  CHECK(rows[2].labeled_fraction == 0.5);
  CHECK(rows[3].labeled_fraction == 0.5);
  CHECK(rows[0].seed == cfg.seed);
  CHECK(rows[1].seed == cfg.seed + 1);
  CHECK(rows[0].run_id != rows[1].run_id);
  CHECK(rows[0].run_id != rows[2].run_id);
  for (const auto& r : rows) CHECK(r.method == "aeda");

  CHECK_THROWS_AS(
      fraction_sweep(pair.first, pair.second, {0.5, 0.2}, 1, cfg, "sweep-fraction"), DataError);
  CHECK_THROWS_AS(fraction_sweep(pair.first, pair.second, {}, 1, cfg, "sweep-fraction"),
                  DataError);
}

TEST_CASE("parallel sweep workers reproduce the sequential rows") {
  const auto pair = generate_domain_pair(tiny_synth());
  const TrainConfig cfg = tiny_cfg();

  const auto seq = fraction_sweep(pair.first, pair.second, {0.25}, 3, cfg, "sweep-fraction",
                                  nullptr, 1);
  const auto par = fraction_sweep(pair.first, pair.second, {0.25}, 3, cfg, "sweep-fraction",
                                  nullptr, 3);
  REQUIRE(seq.size() == par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    ExperimentReport a = seq[i], b = par[i];
    a.wall_time_s = b.wall_time_s = 0.0;
    CHECK(ReportWriter::format_row(a) == ReportWriter::format_row(b));
  }
}

TEST_CASE("alpha sweep grid handling") {
  const auto pair = generate_domain_pair(tiny_synth());
  const TrainConfig cfg = tiny_cfg();

  std::vector<std::string> warnings;
  double best = 0.0;
  const auto rows = alpha_sweep(pair.first, pair.second, 0.25, {1e-7, 1e-5}, 2, cfg,
                                "sweep-alpha", &best, &warnings);
  REQUIRE(rows.size() == 6);  // grid extended with the 1e-6 operating point
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("1e-06") != std::string::npos);
  CHECK(rows[0].alpha == 1e-7);
  CHECK(rows[2].alpha == 1e-5);
  CHECK(rows[4].alpha == 1e-6);
  CHECK((best == 1e-7 || best == 1e-5 || best == 1e-6));

  std::vector<std::string> none;
  const auto rows2 = alpha_sweep(pair.first, pair.second, 0.25, {1e-6}, 1, cfg, "sweep-alpha",
                                 nullptr, &none);
  CHECK(rows2.size() == 1);
  CHECK(none.empty());

  CHECK_THROWS_AS(
      alpha_sweep(pair.first, pair.second, 0.25, {0.0}, 1, cfg, "sweep-alpha"), DataError);
}

TEST_CASE("same-domain baseline runs source equal to target") {
  const auto pair = generate_domain_pair(tiny_synth());
  const TrainConfig cfg = tiny_cfg();
  const AedaRun run = baseline_same_domain(pair.second, 0.25, cfg, "baseline_run");
  const ExperimentReport& r = run.target_run.report;
  CHECK(r.method == "baseline_same_domain");
  CHECK(r.source == r.target);
  CHECK_FALSE(r.accuracy_unseen.has_value());
}

TEST_CASE("aedann pipeline emits a complete report row") {
  const auto pair = generate_domain_pair(tiny_synth());
  DannConfig cfg;
  cfg.base = tiny_cfg();
  cfg.f_dim = 16;
  const AedannRun run = run_aedann_pipeline(pair.first, pair.second, 0.25, cfg, "aedann_smoke");
  const ExperimentReport& r = run.report;
  CHECK(r.method == "aedann");
  CHECK(r.run_id == "aedann_smoke");
  CHECK(r.accuracy_overall >= 0.0);
  CHECK(r.accuracy_overall <= 1.0);
  CHECK(r.epochs_src_ae > 0);
  CHECK(r.epochs_src_clf == 0);
  CHECK(r.epochs_tgt_ae > 0);
  CHECK(r.epochs_finetune > 0);
  REQUIRE(r.accuracy_unseen.has_value());
  CHECK(stack_frozen(run.src_model.encoder));
  CHECK(stack_frozen(run.tgt_model.encoder));
}
