#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "physio/dataset.hpp"
#include "physio/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PHYSIO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "physio_cli_suite";
    fs::remove_all(root);
    fs::create_directories(root);
  }
  std::string p(const std::string& rel) const { return (root / rel).string(); }
};

const Workspace& ws() {
  static Workspace w;
  return w;
}

/// Shared fixture: toy dataset, a tiny trained generator and oracle.
void ensure_fixture() {
  static bool done = false;
  if (done) return;
  REQUIRE(run_cli("make-toy --out " + ws().p("toy") +
                  " --T 16 --n-per-class 12 --noise 0.05 --seed 1") == 0);
  std::ofstream(ws().p("cfg.json"))
      << R"({"epochs": 3, "batch_size": 16, "nz": 4, "enc_hidden": 8, "dec_hidden": 8,
             "conv_filters": 8, "oracle_hidden": 12})";
  std::ofstream(ws().p("oracle_cfg.json"))
      << R"({"epochs": 120, "learning_rate": 0.005, "batch_size": 16, "oracle_hidden": 12})";
  REQUIRE(run_cli("train --dataset " + ws().p("toy") + " --model physiogan --config " +
                  ws().p("cfg.json") + " --out " + ws().p("gan") + " --seed 4") == 0);
  REQUIRE(run_cli("train --dataset " + ws().p("toy") + " --model rcgan --config " +
                  ws().p("cfg.json") + " --out " + ws().p("rcgan") + " --seed 4") == 0);
  REQUIRE(run_cli("train --dataset " + ws().p("toy") + " --model oracle --config " +
                  ws().p("oracle_cfg.json") + " --out " + ws().p("oracle") + " --seed 4") == 0);
  done = true;
}

std::set<std::string> manifest_artifacts(const fs::path& dir) {
  const json manifest = json::parse(physio::read_text_file(dir / "manifest.json"));
  std::set<std::string> listed;
  for (const auto& a : manifest.at("artifacts")) listed.insert(a.at("path").get<std::string>());
  return listed;
}

std::set<std::string> files_on_disk(const fs::path& dir) {
  std::set<std::string> found;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
      found.insert(fs::relative(entry.path(), dir).generic_string());
  return found;
}

}  // namespace

TEST_CASE("exit code taxonomy") {
  ensure_fixture();
  // 0: success is covered by the fixture itself
  SECTION("2: unknown model kind") {
    CHECK(run_cli("train --dataset " + ws().p("toy") + " --model vaegan --out " +
                  ws().p("x1")) == 2);
  }
  SECTION("2: malformed flags") {
    CHECK(run_cli("train --model physiogan") == 2);
    CHECK(run_cli("frobnicate") == 2);
  }
  SECTION("2: invalid imputation rate") {
    CHECK(run_cli("impute --dataset " + ws().p("toy") +
                  " --scenario segment --rate 1.5 --method knn --out " + ws().p("x2")) == 2);
  }
  SECTION("1: runtime failure on a missing dataset") {
    CHECK(run_cli("train --dataset " + ws().p("nope") + " --model physiogan --out " +
                  ws().p("x3")) == 1);
  }
  SECTION("0: help") { CHECK(run_cli("--help") == 0); }
}

TEST_CASE("train outputs and reproducibility") {
  ensure_fixture();
  const fs::path run = ws().root / "gan";
  CHECK(fs::exists(run / "checkpoint.bin"));
  CHECK(fs::exists(run / "training_log.csv"));
  CHECK(fs::exists(run / "manifest.json"));

  SECTION("training log carries the eta column") {
    const std::string log = physio::read_text_file(run / "training_log.csv");
    CHECK(log.rfind("epoch,eta,", 0) == 0);
  }

  SECTION("manifest lists exactly the files produced") {
    CHECK(manifest_artifacts(run) == files_on_disk(run));
  }

  SECTION("same seed gives identical first-3-epoch log rows") {
    REQUIRE(run_cli("train --dataset " + ws().p("toy") + " --model physiogan --config " +
                    ws().p("cfg.json") + " --out " + ws().p("gan_again") + " --seed 4") == 0);
    auto head = [](const fs::path& p) {
      const std::string all = physio::read_text_file(p);
      std::size_t pos = 0;
      for (int i = 0; i < 4; ++i) pos = all.find('\n', pos) + 1;
      return all.substr(0, pos);
    };
    CHECK(head(run / "training_log.csv") == head(ws().root / "gan_again" / "training_log.csv"));
  }
}

TEST_CASE("generate: formats, label modes and the rcgan length refusal") {
  ensure_fixture();
  REQUIRE(run_cli("generate --checkpoint " + ws().p("gan/checkpoint.bin") +
                  " --n 20 --labels stratified --seed 2 --out " + ws().p("synth")) == 0);
  auto bundle = physio::load_dataset(ws().p("synth"));
  REQUIRE(bundle.train.size() == 20);
  int c1 = 0;
  for (const auto& s : bundle.train) c1 += (s.label == 1);
  CHECK(c1 == 10);  // stratified: exactly balanced
  CHECK(manifest_artifacts(ws().root / "synth") == files_on_disk(ws().root / "synth"));

  SECTION("the autoregressive decoder can run past its training length") {
    CHECK(run_cli("generate --checkpoint " + ws().p("gan/checkpoint.bin") +
                  " --n 4 --length 48 --seed 2 --out " + ws().p("synth_long")) == 0);
    CHECK(physio::load_dataset(ws().p("synth_long")).train[0].values.rows() == 48);
  }

  SECTION("rcgan refuses lengths beyond its training window") {
    CHECK(run_cli("generate --checkpoint " + ws().p("rcgan/checkpoint.bin") +
                  " --n 4 --length 48 --seed 2 --out " + ws().p("synth_refused")) == 2);
    CHECK(run_cli("generate --checkpoint " + ws().p("rcgan/checkpoint.bin") +
                  " --n 4 --length 16 --seed 2 --out " + ws().p("synth_rc")) == 0);
  }

  SECTION("re-running over the same --out overwrites cleanly") {
    CHECK(run_cli("generate --checkpoint " + ws().p("gan/checkpoint.bin") +
                  " --n 20 --labels stratified --seed 2 --out " + ws().p("synth")) == 0);
    CHECK(physio::load_dataset(ws().p("synth")).train.size() == 20);
  }
}

TEST_CASE("evaluate: identity scores and metric subsets") {
  ensure_fixture();
  // a synthetic set that IS the real train split
  auto real = physio::load_dataset(ws().p("toy"));
  physio::DatasetBundle copy = real;
  copy.test.clear();
  physio::save_dataset(copy, ws().p("self"));

  REQUIRE(run_cli("evaluate --real " + ws().p("toy") + " --synthetic " + ws().p("self") +
                  " --metrics diversity,novelty --out " + ws().p("self_report.json")) == 0);
  const json report = json::parse(physio::read_text_file(ws().p("self_report.json")));
  CHECK(std::abs(report.at("diversity").get<double>() - 1.0) < 1e-9);
  CHECK(report.at("novelty").get<double>() < 1e-9);
  CHECK(report.at("normalizer").get<double>() > 0.0);
  CHECK(fs::exists(ws().p("self_report_novelty_hist.csv")));

  SECTION("subset selection runs only the requested metrics") {
    REQUIRE(run_cli("evaluate --real " + ws().p("toy") + " --synthetic " + ws().p("self") +
                    " --metrics diversity --out " + ws().p("div_only.json")) == 0);
    const json r = json::parse(physio::read_text_file(ws().p("div_only.json")));
    CHECK(r.contains("diversity"));
    CHECK_FALSE(r.contains("novelty"));
    CHECK_FALSE(r.contains("conditional_accuracy"));
    CHECK_FALSE(r.contains("tstr"));
  }

  SECTION("conditional metric needs an oracle") {
    CHECK(run_cli("evaluate --real " + ws().p("toy") + " --synthetic " + ws().p("self") +
                  " --metrics conditional --out " + ws().p("no_oracle.json")) == 2);
    CHECK(run_cli("evaluate --real " + ws().p("toy") + " --synthetic " + ws().p("self") +
                  " --metrics conditional --oracle " + ws().p("oracle/checkpoint.bin") +
                  " --out " + ws().p("cond.json")) == 0);
    const json r = json::parse(physio::read_text_file(ws().p("cond.json")));
    CHECK(r.at("conditional_accuracy").get<double>() >= 0.0);
  }

  SECTION("unknown metric name is a usage error") {
    CHECK(run_cli("evaluate --real " + ws().p("toy") + " --synthetic " + ws().p("self") +
                  " --metrics fid --out " + ws().p("bad.json")) == 2);
  }
}

TEST_CASE("impute command") {
  ensure_fixture();

  SECTION("rate 0 under mcar: zero error, undefined semantic repair") {
    REQUIRE(run_cli("impute --dataset " + ws().p("toy") +
                    " --scenario mcar --rate 0 --method knn --seed 3 --oracle " +
                    ws().p("oracle/checkpoint.bin") + " --out " + ws().p("imp0")) == 0);
    const json r = json::parse(physio::read_text_file(ws().p("imp0/repair_report.json")));
    CHECK(r.at("mae").get<double>() == 0.0);
    CHECK(r.at("semantic_repair").is_null());
    CHECK(r.at("acc_complete") == r.at("acc_corrupted"));
  }

  SECTION("physiogan repair produces a report and triptychs; seeds reproduce") {
    const std::string args = "impute --dataset " + ws().p("toy") + " --checkpoint " +
                             ws().p("gan/checkpoint.bin") +
                             " --scenario segment --rate 0.25 --method physiogan --seed 9";
    REQUIRE(run_cli(args + " --out " + ws().p("impA")) == 0);
    REQUIRE(run_cli(args + " --out " + ws().p("impB")) == 0);
    CHECK(physio::read_text_file(ws().p("impA/repair_report.json")) ==
          physio::read_text_file(ws().p("impB/repair_report.json")));
    CHECK(fs::exists(ws().p("impA/triptych/sample_0000.csv")));
    CHECK(manifest_artifacts(ws().root / "impA") == files_on_disk(ws().root / "impA"));
    const std::string block = physio::read_text_file(ws().p("impA/triptych/sample_0000.csv"));
    CHECK(block.find("# complete") != std::string::npos);
    CHECK(block.find("# corrupted") != std::string::npos);
    CHECK(block.find("# repaired") != std::string::npos);
  }
}

TEST_CASE("export-plots") {
  ensure_fixture();
  REQUIRE(run_cli("export-plots --in " + ws().p("toy") + " --out " + ws().p("plots")) == 0);
  CHECK(fs::exists(ws().p("plots/samples.csv")));
  CHECK(fs::exists(ws().p("plots/samples.svg")));
  const std::string svg = physio::read_text_file(ws().p("plots/samples.svg"));
  CHECK(svg.find("class_1") != std::string::npos);
  CHECK(svg.find("class_2") != std::string::npos);
  const std::string csv = physio::read_text_file(ws().p("plots/samples.csv"));
  CHECK(csv.rfind("class_index,class_name,row,t,channel,value", 0) == 0);
  CHECK(manifest_artifacts(ws().root / "plots") == files_on_disk(ws().root / "plots"));

  SECTION("row count is configurable") {
    REQUIRE(run_cli("export-plots --in " + ws().p("toy") + " --out " + ws().p("plots1") +
                    " --rows 1") == 0);
    // third CSV column is the within-class row index; with --rows 1 it is
    // always 1
    std::istringstream lines(physio::read_text_file(ws().p("plots1/samples.csv")));
    std::string line;
    std::getline(lines, line);  // header
    int max_row = 0;
    while (std::getline(lines, line)) {
      std::size_t p1 = line.find(',');
      std::size_t p2 = line.find(',', p1 + 1);
      std::size_t p3 = line.find(',', p2 + 1);
      max_row = std::max(max_row, std::stoi(line.substr(p2 + 1, p3 - p2 - 1)));
    }
    CHECK(max_row == 1);
  }

  SECTION("empty input fails at runtime") {
    CHECK(run_cli("export-plots --in " + ws().p("missing_dir") + " --out " +
                  ws().p("plots2")) == 1);
  }
}

TEST_CASE("bad config files are usage errors") {
  ensure_fixture();
  std::ofstream(ws().p("bad_cfg.json")) << "{\"episodes\": 10}";
  CHECK(run_cli("train --dataset " + ws().p("toy") + " --model physiogan --config " +
                ws().p("bad_cfg.json") + " --out " + ws().p("xbad")) == 2);
  std::ofstream(ws().p("not_json.json")) << "epochs = 3";
  CHECK(run_cli("train --dataset " + ws().p("toy") + " --model physiogan --config " +
                ws().p("not_json.json") + " --out " + ws().p("xbad2")) == 2);
}
