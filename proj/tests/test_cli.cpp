#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aeda/data.hpp"

namespace fs = std::filesystem;

namespace {

std::string binary() {
  const char* bin = std::getenv("AEDA_BIN");
  REQUIRE(bin != nullptr);
  return bin;
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("aeda_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args, const fs::path& dir, std::string* output = nullptr) {
  const fs::path out_file = dir / "stdout.txt";
  const fs::path err_file = dir / "stderr.txt";
  const std::string cmd =
      binary() + " " + args + " >" + out_file.string() + " 2>" + err_file.string();
  const int raw = std::system(cmd.c_str());
  if (output) {
    std::ifstream o(out_file), e(err_file);
    std::stringstream ss;
    ss << o.rdbuf() << e.rdbuf();
    *output = ss.str();
  }
  REQUIRE(WIFEXITED(raw));
  return WEXITSTATUS(raw);
}

// Small and fast: tiny synthetic pair, two epochs per stage.
std::string tiny = " --synthetic --per-class 30 --epochs 2 --patience 2 --batch 32 "
                   "--bottleneck 24 ";

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string strip_wall_time(const std::string& row) {
  return row.substr(0, row.rfind(','));
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  REQUIRE(fa.good());
  REQUIRE(fb.good());
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return sa.str() == sb.str();
}

}  // namespace

TEST_CASE("a bare pipeline run writes one row, checkpoints, and a manifest") {
  const fs::path dir = fresh_dir("pipeline");
  std::string out;
  const int rc = run_cli("pipeline-aeda" + tiny + "--seed 7 --out " + dir.string(), dir, &out);
  CHECK(rc == 0);
  CHECK(out.find("src_ae: epochs=2") != std::string::npos);
  CHECK(out.find("src_clf: epochs=2") != std::string::npos);
  CHECK(out.find("tgt_ae: epochs=2") != std::string::npos);
  CHECK(out.find("finetune: epochs=2") != std::string::npos);
  CHECK(out.find("result: accuracy_overall=") != std::string::npos);

  const auto rows = read_lines(dir / "report.csv");
  REQUIRE(rows.size() == 2);
  const std::string id = "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s7";
  CHECK(rows[1].substr(0, id.size()) == id);
  for (const char* stage : {"src_ae", "src_clf", "tgt_ae", "final"})
    CHECK(fs::exists(dir / (id + "." + stage + ".aeda")));
  CHECK(fs::exists(dir / (id + ".manifest")));
}

TEST_CASE("two fresh-directory runs are bit-identical") {
  const fs::path a = fresh_dir("det_a");
  const fs::path b = fresh_dir("det_b");
  const std::string args = "pipeline-aeda" + tiny + "--seed 7 --out ";
  CHECK(run_cli(args + a.string(), a) == 0);
  CHECK(run_cli(args + b.string(), b) == 0);

  const std::string id = "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s7";
  for (const char* stage : {"src_ae", "src_clf", "tgt_ae", "final"})
    CHECK(same_bytes(a / (id + "." + stage + ".aeda"), b / (id + "." + stage + ".aeda")));

  const auto ra = read_lines(a / "report.csv");
  const auto rb = read_lines(b / "report.csv");
  REQUIRE(ra.size() == 2);
  REQUIRE(rb.size() == 2);
  CHECK(ra[0] == rb[0]);
  // Identical except the wall-clock field, which records real elapsed time.
  CHECK(strip_wall_time(ra[1]) == strip_wall_time(rb[1]));
}

TEST_CASE("a manifest fed back as config reproduces the run") {
  const fs::path a = fresh_dir("echo_a");
  const fs::path b = fresh_dir("echo_b");
  CHECK(run_cli("pipeline-aeda" + tiny + "--seed 3 --out " + a.string(), a) == 0);
  const std::string id = "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s3";
  CHECK(run_cli("pipeline-aeda --config " + (a / (id + ".manifest")).string() + " --out " +
                    b.string(),
                b) == 0);
  for (const char* stage : {"src_ae", "src_clf", "tgt_ae", "final"})
    CHECK(same_bytes(a / (id + "." + stage + ".aeda"), b / (id + "." + stage + ".aeda")));
  const auto ra = read_lines(a / "report.csv");
  const auto rb = read_lines(b / "report.csv");
  CHECK(strip_wall_time(ra[1]) == strip_wall_time(rb[1]));
}

TEST_CASE("explicit flags beat config values") {
  const fs::path a = fresh_dir("win_a");
  CHECK(run_cli("pipeline-aeda" + tiny + "--seed 3 --out " + a.string(), a) == 0);
  const std::string id = "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s3";

  const fs::path b = fresh_dir("win_b");
  CHECK(run_cli("pipeline-aeda --config " + (a / (id + ".manifest")).string() +
                    " --seed 4 --run-id overridden --out " + b.string(),
                b) == 0);
  const auto rows = read_lines(b / "report.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].substr(0, 11) == "overridden,");
  CHECK(rows[1].find(",4,") != std::string::npos);
}

TEST_CASE("ablate writes two rows per seed") {
  const fs::path dir = fresh_dir("ablate");
  CHECK(run_cli("ablate" + tiny + "--seeds 2 --out " + dir.string(), dir) == 0);
  const auto rows = read_lines(dir / "report.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[1].find(",aeda,") != std::string::npos);
  CHECK(rows[2].find(",ablation_no_kld,") != std::string::npos);
  CHECK(rows[3].find(",aeda,") != std::string::npos);
  CHECK(rows[4].find(",ablation_no_kld,") != std::string::npos);
}

TEST_CASE("sweep-fraction writes one row per kept point and seed") {
  const fs::path dir = fresh_dir("sweep");
  std::string out;
  CHECK(run_cli("sweep-fraction" + tiny + "--fractions 0.2,0.5 --seeds 2 --out " + dir.string(),
                dir, &out) == 0);
  const auto rows = read_lines(dir / "report.csv");
  REQUIRE(rows.size() == 5);
  CHECK(out.find("fraction 0.2: accuracy") != std::string::npos);
  CHECK(out.find("fraction 0.5: accuracy") != std::string::npos);
}

TEST_CASE("eval re-scores a finished run to the recorded accuracy") {
  const fs::path dir = fresh_dir("eval");
  std::string out;
  CHECK(run_cli("pipeline-aeda" + tiny + "--seed 9 --out " + dir.string(), dir, &out) == 0);
  const std::string id = "pipeline-aeda_synth-source_synth-target_f0.1_a1e-06_s9";
  const std::string recorded = out.substr(out.find("result: "));

  std::string replay;
  CHECK(run_cli("eval --run-id " + id + " --out " + dir.string(), dir, &replay) == 0);
  REQUIRE(replay.find("result: ") != std::string::npos);
  const std::string replayed = replay.substr(replay.find("result: "));
  CHECK(replayed.substr(0, replayed.find('\n')) == recorded.substr(0, recorded.find('\n')));
}

TEST_CASE("gen writes loadable caches that reproduce under config echo") {
  const fs::path a = fresh_dir("gen_a");
  CHECK(run_cli("gen --per-class 30 --out " + a.string(), a) == 0);
  const aeda::WindowedDataset src = aeda::load_dataset((a / "source.wds").string());
  const aeda::WindowedDataset tgt = aeda::load_dataset((a / "target.wds").string());
  CHECK(src.spec.n_f() == 20);
  CHECK(tgt.spec.n_f() == 32);
  CHECK(src.size() == 4 * 30);
  CHECK(tgt.size() == 6 * 30);

  const fs::path b = fresh_dir("gen_b");
  const std::string id = "gen_synth-source_synth-target_f0.1_a1e-06_s0";
  CHECK(run_cli("gen --config " + (a / (id + ".manifest")).string() + " --out " + b.string(),
                b) == 0);
  CHECK(same_bytes(a / "source.wds", b / "source.wds"));
  CHECK(same_bytes(a / "target.wds", b / "target.wds"));
}

TEST_CASE("generated caches feed the pipeline through dataset paths") {
  const fs::path dir = fresh_dir("files");
  CHECK(run_cli("gen --per-class 30 --out " + dir.string(), dir) == 0);
  std::string out;
  CHECK(run_cli("pipeline-aeda --source " + (dir / "source.wds").string() + " --target " +
                    (dir / "target.wds").string() +
                    " --epochs 2 --patience 2 --batch 32 --bottleneck 24 --out " + dir.string(),
                dir, &out) == 0);
  CHECK(out.find("loaded source: 120 windows") != std::string::npos);
  const auto rows = read_lines(dir / "report.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].find(",source,target,") != std::string::npos);
}

TEST_CASE("duplicate run ids are rejected, not overwritten") {
  const fs::path dir = fresh_dir("dup");
  CHECK(run_cli("pipeline-aeda" + tiny + "--out " + dir.string(), dir) == 0);
  const auto before = read_lines(dir / "report.csv");
  std::string out;
  CHECK(run_cli("pipeline-aeda" + tiny + "--out " + dir.string(), dir, &out) == 3);
  CHECK(out.find("duplicate run id") != std::string::npos);
  CHECK(read_lines(dir / "report.csv") == before);
}

TEST_CASE("error categories map to exit codes") {
  const fs::path dir = fresh_dir("codes");

  CHECK(run_cli("pipeline-aeda --bogus 1", dir) == 2);
  CHECK(run_cli("no-such-command", dir) == 2);
  CHECK(run_cli("", dir) == 2);
  CHECK(run_cli("pipeline-aeda --epochs nope", dir) == 2);

  std::ofstream(dir / "bad.cfg") << "mystery = 1\n";
  CHECK(run_cli("pipeline-aeda --config " + (dir / "bad.cfg").string(), dir) == 3);
  CHECK(run_cli("pipeline-aeda --source missing.wds --target missing2.wds", dir) == 3);
  CHECK(run_cli("eval --run-id nothing --out " + dir.string(), dir) == 3);

  std::string out;
  CHECK(run_cli("pipeline-aeda" + tiny + "--lr 1e300 --out " + dir.string() + " --report " +
                    (dir / "div.csv").string(),
                dir, &out) == 4);
  CHECK(out.find("divergence") != std::string::npos);
}

TEST_CASE("baseline trains source equal to target") {
  const fs::path dir = fresh_dir("baseline");
  std::string out;
  CHECK(run_cli("baseline" + tiny + "--out " + dir.string(), dir, &out) == 0);
  const auto rows = read_lines(dir / "report.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].find(",baseline_same_domain,synth-target,synth-target,") != std::string::npos);
  // Same domain leaves no unseen classes, so the field stays empty.
  const std::string row = rows[1];
  std::size_t commas = 0, pos = 0;
  for (; commas < 8; ++pos)
    if (row[pos] == ',') ++commas;
  CHECK(row[pos] == ',');
}
