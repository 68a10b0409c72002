#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssn/nifti.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path tmp = fs::temp_directory_path();
  const fs::path out_file = tmp / ("ssn_cli_out_" + std::to_string(counter));
  const fs::path err_file = tmp / ("ssn_cli_err_" + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string(SSN_CLI_PATH) + " " + args + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("cli params reports the published budgets") {
  auto res = run_cli("params --arch resnet3d");
  CHECK(res.exit_code == 0);
  CHECK(res.out.find("total 33150522") != std::string::npos);

  res = run_cli("params --arch r2plus1d");
  CHECK(res.exit_code == 0);
  CHECK(res.out.find("total 31297254") != std::string::npos);

  res = run_cli("params --arch mixedconv");
  CHECK(res.exit_code == 0);
  CHECK(res.out.find("total 11472963") != std::string::npos);

  res = run_cli("params --arch resnet3d --stem stem3d");
  CHECK(res.exit_code == 0);
  CHECK(res.out.find("total 33148995") != std::string::npos);
}

TEST_CASE("cli error reporting") {
  SECTION("unknown architecture is a config error") {
    auto res = run_cli("params --arch alexnet");
    CHECK(res.exit_code == 1);
    CHECK(res.err.find("error:") != std::string::npos);
  }
  SECTION("missing input file is a data error") {
    auto res = run_cli("split --manifest /nonexistent/manifest.csv");
    CHECK(res.exit_code == 2);
  }
  SECTION("unknown flag is a usage error") {
    auto res = run_cli("params --arch resnet3d --bogus 1");
    CHECK(res.exit_code == 1);
  }
  SECTION("a subcommand is required") {
    auto res = run_cli("--seed 1");
    CHECK(res.exit_code == 1);
  }
  SECTION("malformed config file") {
    const auto dir = testutil::fresh_dir("cli_badcfg");
    const auto cfg = dir / "cfg.json";
    std::ofstream(cfg) << "{not json";
    auto res = run_cli("--config " + cfg.string() + " params --arch resnet3d");
    CHECK(res.exit_code == 1);
    CHECK(res.err.find("config") != std::string::npos);
  }
}

TEST_CASE("cli config file supplies defaults but flags win") {
  const auto dir = testutil::fresh_dir("cli_cfg");
  const auto cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"arch": "mixedconv", "classes": 3})" << "\n";

  auto res = run_cli("--config " + cfg.string() + " params");
  CHECK(res.exit_code == 0);
  CHECK(res.out.find("total 11472963") != std::string::npos);

  res = run_cli("--config " + cfg.string() + " params --arch resnet3d");
  CHECK(res.exit_code == 0);
  CHECK(res.out.find("total 33150522") != std::string::npos);
}

TEST_CASE("cli end-to-end pipeline on a desk-scale dataset") {
  const auto dir = testutil::fresh_dir("cli_pipe");
  const auto raw = dir / "raw";
  const auto prep = dir / "prep";
  const auto sp = dir / "sp";
  const auto run_dir = dir / "run";

  auto res = run_cli("--seed 7 --out " + raw.string() +
                     " synth --classes 3 --per-class 3 --extent 16");
  REQUIRE(res.exit_code == 0);
  CHECK(res.out.find("wrote 9 volumes") != std::string::npos);
  REQUIRE(fs::exists(raw / "manifest.csv"));
  std::size_t nii_count = 0;
  for (const auto& e : fs::directory_iterator(raw))
    if (e.path().extension() == ".nii") ++nii_count;
  CHECK(nii_count == 9);

  res = run_cli("--out " + prep.string() + " preprocess --manifest " +
                (raw / "manifest.csv").string() + " --spacing 2.0");
  REQUIRE(res.exit_code == 0);
  REQUIRE(fs::exists(prep / "manifest.csv"));

  res = run_cli("--seed 7 --out " + sp.string() + " split --manifest " +
                (prep / "manifest.csv").string() + " --k 2 --ratio 0.7");
  REQUIRE(res.exit_code == 0);
  REQUIRE(fs::exists(sp / "splits.json"));
  CHECK(res.out.find("fold 0: train 6, test 3") != std::string::npos);
  CHECK(res.out.find("fold 1: train 6, test 3") != std::string::npos);

  res = run_cli("--seed 7 --out " + run_dir.string() + " train --manifest " +
                (prep / "manifest.csv").string() +
                " --arch mixedconv --epochs 2 --lr 1e-3 --no-augment --split " +
                (sp / "splits.json").string() + " --fold 0");
  REQUIRE(res.exit_code == 0);
  REQUIRE(fs::exists(run_dir / "model.ckpt"));
  REQUIRE(fs::exists(run_dir / "train_log.jsonl"));
  REQUIRE(fs::exists(run_dir / "metrics.json"));
  REQUIRE(fs::exists(run_dir / "confusion.csv"));
  REQUIRE(fs::exists(run_dir / "confusion_normalized.csv"));

  const std::string log = slurp(run_dir / "train_log.jsonl");
  REQUIRE(count_lines(log) == 2);
  std::istringstream lines(log);
  std::string line;
  std::size_t epoch = 1;
  while (std::getline(lines, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.at("epoch").get<std::size_t>() == epoch++);
    CHECK(rec.at("samples").get<std::size_t>() == 6);
    CHECK(rec.at("loss").get<double>() > 0.0);
    CHECK(rec.at("train_accuracy").get<double>() >= 0.0);
  }

  const auto metrics = nlohmann::json::parse(slurp(run_dir / "metrics.json"));
  CHECK(metrics.contains("accuracy"));
  CHECK(metrics.contains("per_class"));

  SECTION("eval scores the held-out fold from the saved checkpoint") {
    const auto ev = dir / "ev";
    res = run_cli("--out " + ev.string() + " eval --checkpoint " +
                  (run_dir / "model.ckpt").string() + " --manifest " +
                  (prep / "manifest.csv").string() + " --split " +
                  (sp / "splits.json").string() + " --fold 0");
    REQUIRE(res.exit_code == 0);
    REQUIRE(fs::exists(ev / "confusion.csv"));
    // 3 held-out subjects, one per class
    const std::string csv = slurp(ev / "confusion.csv");
    std::size_t total = 0;
    std::istringstream rows(csv);
    std::string row;
    std::getline(rows, row);  // header
    while (std::getline(rows, row)) {
      std::istringstream cells(row);
      std::string cell;
      std::getline(cells, cell, ',');  // row label
      while (std::getline(cells, cell, ',')) total += std::stoull(cell);
    }
    CHECK(total == 3);
  }

  SECTION("predict emits a label and a probability vector") {
    fs::path sample;
    for (const auto& e : fs::directory_iterator(prep))
      if (e.path().extension() == ".nii") {
        sample = e.path();
        break;
      }
    REQUIRE(!sample.empty());

    res = run_cli("predict --checkpoint " + (run_dir / "model.ckpt").string() +
                  " --volume " + sample.string());
    REQUIRE(res.exit_code == 0);
    const auto rec = nlohmann::json::parse(res.out);
    const auto label = rec.at("label").get<std::size_t>();
    CHECK(label < 3);
    const auto probs = rec.at("probs").get<std::vector<double>>();
    REQUIRE(probs.size() == 3);
    double sum = 0;
    for (double p : probs) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-5));
  }

  SECTION("predict rejects a mismatched architecture claim") {
    fs::path sample;
    for (const auto& e : fs::directory_iterator(prep))
      if (e.path().extension() == ".nii") {
        sample = e.path();
        break;
      }
    res = run_cli("predict --checkpoint " + (run_dir / "model.ckpt").string() +
                  " --volume " + sample.string() + " --arch resnet3d");
    CHECK(res.exit_code == 1);
    CHECK(res.err.find("mixedconv") != std::string::npos);
  }

  SECTION("predict maps an undersized volume to a geometry failure") {
    ssn::Volume tiny(8, 8, 8, {2.0, 2.0, 2.0});
    for (auto& v : tiny.data) v = 0.5f;
    const auto tiny_path = dir / "tiny.nii";
    ssn::write_nifti(tiny, tiny_path.string());
    res = run_cli("predict --checkpoint " + (run_dir / "model.ckpt").string() +
                  " --volume " + tiny_path.string());
    CHECK(res.exit_code == 3);
    CHECK(res.err.find("too small") != std::string::npos);
  }
}

TEST_CASE("cli cross-validation is reproducible byte for byte") {
  const auto dir = testutil::fresh_dir("cli_cv");
  const auto raw = dir / "raw";
  auto res = run_cli("--seed 11 --out " + raw.string() +
                     " synth --classes 3 --per-class 3 --extent 16");
  REQUIRE(res.exit_code == 0);

  auto crossval_into = [&](const fs::path& out) {
    return run_cli("--seed 3 --out " + out.string() + " crossval --manifest " +
                   (raw / "manifest.csv").string() +
                   " --arch mixedconv --epochs 1 --lr 1e-3 --no-augment --k 2");
  };

  const auto cva = dir / "cva";
  res = crossval_into(cva);
  REQUIRE(res.exit_code == 0);
  REQUIRE(fs::exists(cva / "summary.json"));
  REQUIRE(fs::exists(cva / "fold0_log.jsonl"));
  REQUIRE(fs::exists(cva / "fold1_log.jsonl"));
  REQUIRE(fs::exists(cva / "fold0_model.ckpt"));
  REQUIRE(fs::exists(cva / "fold1_model.ckpt"));

  const auto summary = nlohmann::json::parse(slurp(cva / "summary.json"));
  REQUIRE(summary.at("folds").size() == 2);
  CHECK(summary.contains("accuracy"));
  CHECK(summary.contains("per_class"));

  const auto cvb = dir / "cvb";
  res = crossval_into(cvb);
  REQUIRE(res.exit_code == 0);
  CHECK(slurp(cva / "summary.json") == slurp(cvb / "summary.json"));
  CHECK(slurp(cva / "fold0_log.jsonl") == slurp(cvb / "fold0_log.jsonl"));
  CHECK(slurp(cva / "fold0_model.ckpt") == slurp(cvb / "fold0_model.ckpt"));
}
