#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#ifndef DSPR_CLI_PATH
#define DSPR_CLI_PATH "dspr"
#endif

namespace fs = std::filesystem;

namespace {

std::string sandbox(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("dspr_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

int run(const std::string& args) {
  const std::string cmd = std::string(DSPR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("generate: same seed twice gives byte-identical CSV") {
  const std::string root = sandbox("det");
  CHECK(run("generate --kind transport_delay --seed 5 --steps 400 --out " + root + "/a") == 0);
  CHECK(run("generate --kind transport_delay --seed 5 --steps 400 --out " + root + "/b") == 0);
  CHECK(read_file(root + "/a/data.csv") == read_file(root + "/b/data.csv"));
  CHECK(read_file(root + "/a/prior.json") == read_file(root + "/b/prior.json"));
  CHECK(read_file(root + "/a/true_tau.csv") == read_file(root + "/b/true_tau.csv"));
}

TEST_CASE("generate: unknown kind is a usage error with exit code 2") {
  const std::string root = sandbox("usage");
  CHECK(run("generate --kind nonsense --out " + root + "/x") == 2);
  CHECK(run("definitely-not-a-command") == 2);
}

TEST_CASE("generate: refusing to overwrite a non-empty directory is a runtime error") {
  const std::string root = sandbox("force");
  CHECK(run("generate --kind conservation --seed 1 --steps 300 --out " + root) == 0);
  CHECK(run("generate --kind conservation --seed 1 --steps 300 --out " + root) == 1);
  CHECK(run("generate --kind conservation --seed 1 --steps 300 --force --out " + root) == 0);
}

TEST_CASE("eval: missing checkpoint exits 1 and names the path") {
  const std::string root = sandbox("missing");
  CHECK(run("generate --kind transport_delay --seed 2 --steps 400 --out " + root + "/d") == 0);
  CHECK(run("eval --checkpoint " + root + "/no_such.ckpt --data " + root + "/d") == 1);
}

TEST_CASE("DSPR_SEED environment variable overrides --seed") {
  const std::string root = sandbox("env");
  CHECK(run("generate --kind transport_delay --seed 1 --steps 400 --out " + root + "/ref") == 0);
  // Same command but --seed 999 and DSPR_SEED=1: output must match seed 1.
  const std::string cmd = std::string("DSPR_SEED=1 ") + DSPR_CLI_PATH +
                          " generate --kind transport_delay --seed 999 --steps 400 --out " +
                          root + "/env >/dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(read_file(root + "/ref/data.csv") == read_file(root + "/env/data.csv"));
}

TEST_CASE("a JSON config file supplies flags; explicit flags win") {
  const std::string root = sandbox("config");
  {
    std::ofstream cfg(root + "/gen.json");
    cfg << R"({"kind": "transport_delay", "seed": 9, "steps": 400})";
  }
  CHECK(run("generate --config " + root + "/gen.json --out " + root + "/from_cfg") == 0);
  CHECK(run("generate --kind transport_delay --seed 9 --steps 400 --out " + root + "/direct") ==
        0);
  CHECK(read_file(root + "/from_cfg/data.csv") == read_file(root + "/direct/data.csv"));

  // Flag overrides the config's seed.
  CHECK(run("generate --config " + root + "/gen.json --seed 21 --out " + root + "/override") ==
        0);
  CHECK(run("generate --kind transport_delay --seed 21 --steps 400 --out " + root +
            "/ref21") == 0);
  CHECK(read_file(root + "/override/data.csv") == read_file(root + "/ref21/data.csv"));
  CHECK(read_file(root + "/override/data.csv") != read_file(root + "/direct/data.csv"));
}

TEST_CASE("train then eval: emitted files are re-ingestible and consistent") {
  const std::string root = sandbox("train_eval");
  REQUIRE(run("generate --kind transport_delay --seed 3 --steps 700 --out " + root + "/d") ==
          0);
  REQUIRE(run("train --data " + root + "/d --out " + root +
              "/run --variant trend_only --seed 2 --epochs 2 --lookback 8 --horizon 4 "
              "--trend-d-model 8 --trend-depth 1 --ma-kernel 5") == 0);
  CHECK(fs::exists(root + "/run/checkpoint.dspr"));
  CHECK(fs::exists(root + "/run/run_record.json"));
  REQUIRE(run("eval --checkpoint " + root + "/run/checkpoint.dspr --data " + root +
              "/d --out " + root + "/eval") == 0);
  CHECK(fs::exists(root + "/eval/metrics.csv"));
  CHECK(fs::exists(root + "/eval/eval_summary.json"));

  // The recomputed validation metrics must reproduce the stored snapshot.
  const auto summary = nlohmann::json::parse(read_file(root + "/eval/eval_summary.json"));
  const double recomputed = summary.at("val_mae").get<double>();
  const double stored = summary.at("snapshot").at("val_mae").get<double>();
  CHECK(std::abs(recomputed - stored) < 1e-9);
  const double recomputed_rmse = summary.at("val_rmse").get<double>();
  const double stored_rmse = summary.at("snapshot").at("val_rmse").get<double>();
  CHECK(std::abs(recomputed_rmse - stored_rmse) < 1e-9);
}

TEST_CASE("report over multiple runs assembles the ablation table and figures") {
  const std::string root = sandbox("report");
  REQUIRE(run("generate --kind transport_delay --seed 6 --steps 700 --out " + root + "/d") ==
          0);
  const std::string common = " --data " + root + "/d --seed 4 --epochs 2 --lookback 12 "
                             "--horizon 4 --d-emb 8 --heads 2 --trend-d-model 8 "
                             "--trend-depth 1 --ma-kernel 5 --node-emb 4";
  REQUIRE(run("train --variant full --out " + root + "/runs/full" + common) == 0);
  REQUIRE(run("train --variant trend_only --out " + root + "/runs/trend_only" + common) ==
          0);
  REQUIRE(run("report --runs " + root + "/runs --out " + root + "/rep") == 0);
  CHECK(fs::exists(root + "/rep/metrics_table.csv"));
  CHECK(fs::exists(root + "/rep/ablation_table.csv"));
  CHECK(fs::exists(root + "/rep/regime_table.csv"));
  CHECK(fs::exists(root + "/rep/adjacency_heatmap.svg"));
  CHECK(fs::exists(root + "/rep/delay_histogram.svg"));
  const std::string ablation = read_file(root + "/rep/ablation_table.csv");
  CHECK(ablation.find("trend_only") != std::string::npos);
  CHECK(ablation.find("full") != std::string::npos);

  // Empty runs directory is an error.
  fs::create_directories(root + "/empty");
  CHECK(run("report --runs " + root + "/empty --out " + root + "/rep2") == 1);
}

TEST_CASE("eval --regimes on a 9-test-window dataset splits tertiles 3/3/3") {
  const std::string root = sandbox("nine");
  // T=220 with L=8, H=4: the test segment holds exactly 9 stride-H windows.
  REQUIRE(run("generate --kind transport_delay --seed 8 --steps 220 --dwell-min 30 "
              "--dwell-max 60 --out " + root + "/d") == 0);
  REQUIRE(run("train --data " + root + "/d --out " + root +
              "/run --variant trend_only --seed 1 --epochs 1 --lookback 8 --horizon 4 "
              "--trend-d-model 8 --trend-depth 1 --ma-kernel 5") == 0);
  REQUIRE(run("eval --checkpoint " + root + "/run/checkpoint.dspr --data " + root +
              "/d --regimes --out " + root + "/eval") == 0);
  const std::string table = read_file(root + "/eval/regime_table.csv");
  size_t count = 0, at = 0;
  while ((at = table.find(",3,", at)) != std::string::npos) {
    ++count;
    ++at;
  }
  CHECK(count == 3);  // High, Medium, Low all carry exactly 3 samples
}

TEST_CASE("eval with a mismatched lookback reports the shape diff and exits 1") {
  const std::string root = sandbox("lookback");
  REQUIRE(run("generate --kind transport_delay --seed 4 --steps 700 --out " + root + "/d") ==
          0);
  REQUIRE(run("train --data " + root + "/d --out " + root +
              "/run --variant trend_only --seed 1 --epochs 1 --lookback 8 --horizon 4 "
              "--trend-d-model 8 --trend-depth 1 --ma-kernel 5") == 0);
  CHECK(run("eval --checkpoint " + root + "/run/checkpoint.dspr --data " + root +
            "/d --lookback 16 --out " + root + "/eval") == 1);
  CHECK(run("eval --checkpoint " + root + "/run/checkpoint.dspr --data " + root +
            "/d --lookback 8 --out " + root + "/eval8") == 0);
}
