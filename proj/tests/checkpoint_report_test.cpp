#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dspr/checkpoint.hpp"
#include "dspr/report.hpp"
#include "dspr/rng.hpp"
#include "oracles.hpp"

using namespace dspr;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact, including awkward doubles") {
  Checkpoint ckpt;
  ckpt.seed = 1234567890123ULL;
  ckpt.config_json = R"({"epochs":3,"note":"x"})";
  ckpt.metrics = {{"val_mae", 0.1 + 0.2}, {"val_rmse", 1e-300}};
  Rng rng(1);
  std::vector<double> vals = rng.normal_vec(64);
  vals[0] = 0.1 + 0.2;           // not exactly 0.3
  vals[1] = -0.0;                // negative zero
  vals[2] = 5e-324;              // subnormal
  vals[3] = 1.7976931348623157e308;
  ckpt.params.push_back({"w", Tensor::from({8, 8}, vals)});
  ckpt.params.push_back({"b", Tensor::from({4}, {1, 2, 3, 4})});

  const std::string path = tmp_path("ckpt_roundtrip.dspr");
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.seed == ckpt.seed);
  REQUIRE(back.params.size() == 2);
  CHECK(back.params[0].tensor.shape() == Shape{8, 8});
  // Bit-exact comparison via memcmp semantics.
  for (size_t i = 0; i < vals.size(); ++i) {
    uint64_t a, b;
    std::memcpy(&a, &vals[i], 8);
    std::memcpy(&b, &back.params[0].tensor.values()[i], 8);
    CHECK(a == b);
  }

  // Save the loaded checkpoint again: the files must be byte-identical.
  const std::string path2 = tmp_path("ckpt_roundtrip2.dspr");
  save_checkpoint(back, path2);
  CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("version mismatch is a hard error") {
  Checkpoint ckpt;
  ckpt.params.push_back({"w", Tensor::from({1}, {1.0})});
  const std::string path = tmp_path("ckpt_version.dspr");
  save_checkpoint(ckpt, path);
  // Corrupt the version word (offset 8, little endian).
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  const uint32_t bad = 99;
  f.write(reinterpret_cast<const char*>(&bad), 4);
  f.close();
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                       std::runtime_error);
}

TEST_CASE("missing checkpoint file raises an error naming the path") {
  CHECK_THROWS_WITH_AS(load_checkpoint("/nonexistent/nowhere.dspr"),
                       doctest::Contains("/nonexistent/nowhere.dspr"), std::runtime_error);
}

TEST_CASE("delay histogram SVG is well-formed XML") {
  std::vector<DelayRow> rows;
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    DelayRow r;
    r.sample = i;
    r.t = i % 8;
    r.channel = i % 3;
    r.tau = rng.uniform(1.0, 20.0);
    r.regime = i % 2 ? "0" : "1";
    rows.push_back(r);
  }
  const std::string svg = svg_delay_histogram(rows, 20, 1);
  CHECK(oracles::xml_well_formed(svg));
  CHECK(svg.find("<svg") != std::string::npos);
}

TEST_CASE("adjacency heatmap renders the diagonal as exact zero and is well-formed") {
  const std::vector<std::string> names{"a", "b", "c"};
  // Deliberately poison the diagonal: the renderer must show 0.00 there.
  const std::vector<double> adj{0.9, 0.2, 0.3, 0.4, 0.8, 0.6, 0.1, 0.5, 0.7};
  const std::string svg = svg_adjacency_heatmap(adj, names);
  CHECK(oracles::xml_well_formed(svg));
  // Three diagonal cells, each labelled 0.00.
  size_t count = 0, at = 0;
  while ((at = svg.find(">0.00<", at)) != std::string::npos) {
    ++count;
    ++at;
  }
  CHECK(count == 3);
}

TEST_CASE("xml checker rejects malformed documents") {
  CHECK(!oracles::xml_well_formed("<svg><rect></svg>"));
  CHECK(!oracles::xml_well_formed("<svg attr=unquoted></svg>"));
  CHECK(oracles::xml_well_formed("<svg a=\"1\"><g/><g></g></svg>"));
}

TEST_CASE("metric table CSV prints NA for undefined TDA") {
  MetricReport r;
  r.label = "h=4";
  r.horizon = 4;
  r.n_samples = 10;
  r.mae = 0.5;
  r.rmse = 0.6;
  r.mca = 99.0;
  r.tvr = 88.0;
  const std::string path = tmp_path("metrics_na.csv");
  write_metric_table_csv({r}, path);
  const std::string text = read_file(path);
  CHECK(text.find(",NA,") != std::string::npos);
}

TEST_CASE("ablation table uses the (variant - full)/full percent convention") {
  std::vector<AblationRow> rows(2);
  rows[0].variant = "full";
  rows[0].mae = 0.291;
  rows[0].rmse = 0.436;
  rows[1].variant = "no_prior";
  rows[1].mae = 0.332;
  rows[1].rmse = 0.495;
  for (auto& r : rows) {
    r.delta_mae_pct = (r.mae - rows[0].mae) / rows[0].mae * 100.0;
    r.delta_rmse_pct = (r.rmse - rows[0].rmse) / rows[0].rmse * 100.0;
  }
  CHECK(rows[1].delta_mae_pct == doctest::Approx(14.09).epsilon(1e-3));
  const std::string path = tmp_path("ablation.csv");
  write_ablation_table_csv(rows, path);
  const std::string text = read_file(path);
  CHECK(text.find("no_prior") != std::string::npos);
}

TEST_CASE("delay profile CSV round-trips through its reader") {
  std::vector<DelayRow> rows;
  for (int i = 0; i < 12; ++i) {
    DelayRow r;
    r.sample = i / 4;
    r.t = i % 4;
    r.channel = i % 2;
    r.tau = 1.0 + 0.25 * i;
    r.regime = i % 2 ? "High" : "Low";
    rows.push_back(r);
  }
  const std::vector<std::string> names{"u", "y"};
  const std::string path = tmp_path("delay_profile.csv");
  write_delay_profile_csv(rows, names, path);
  const auto back = read_delay_profile_csv(path, names);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].sample == rows[i].sample);
    CHECK(back[i].t == rows[i].t);
    CHECK(back[i].channel == rows[i].channel);
    CHECK(back[i].tau == doctest::Approx(rows[i].tau).epsilon(1e-9));
    CHECK(back[i].regime == rows[i].regime);
  }
}

TEST_CASE("adjacency CSV round-trips through its reader") {
  const std::vector<std::string> names{"u", "v", "y"};
  Rng rng(3);
  const std::vector<double> adj = rng.uniform_vec(9, 0.0, 1.0);
  const std::string path = tmp_path("adj.csv");
  write_adjacency_csv(adj, names, path);
  const auto [back_names, back_adj] = read_adjacency_csv(path);
  CHECK(back_names == names);
  REQUIRE(back_adj.size() == 9);
  for (size_t i = 0; i < 9; ++i) CHECK(back_adj[i] == adj[i]);
}
