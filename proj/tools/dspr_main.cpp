#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dspr/checkpoint.hpp"
#include "dspr/data.hpp"
#include "dspr/model.hpp"
#include "dspr/report.hpp"
#include "dspr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// A JSON config file may supply any flag; explicit command-line flags win.
// Implemented by injecting config-derived arguments before the user's own,
// with take-last option policy.
std::vector<std::string> merge_config_args(const std::vector<std::string>& args) {
  std::string config_path;
  size_t sub_at = std::string::npos;
  for (size_t i = 0; i < args.size(); ++i) {
    if (sub_at == std::string::npos && !args[i].empty() && args[i][0] != '-') {
      sub_at = i;
    }
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
  }
  if (config_path.empty() || sub_at == std::string::npos) return args;

  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot read config file " + config_path);
  json cfg;
  in >> cfg;
  if (!cfg.is_object()) throw std::runtime_error(config_path + ": expected a JSON object");

  std::vector<std::string> merged(args.begin(), args.begin() + sub_at + 1);
  for (const auto& [key, value] : cfg.items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) merged.push_back("--" + key);
    } else if (value.is_string()) {
      merged.push_back("--" + key);
      merged.push_back(value.get<std::string>());
    } else {
      merged.push_back("--" + key);
      merged.push_back(value.dump());
    }
  }
  merged.insert(merged.end(), args.begin() + sub_at + 1, args.end());
  return merged;
}

uint64_t effective_seed(uint64_t flag_seed) {
  if (const char* env = std::getenv("DSPR_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return flag_seed;
}

std::vector<dspr::LagRegime> parse_regimes(const std::string& arg) {
  std::vector<dspr::LagRegime> out;
  std::string token;
  std::stringstream ss(arg);
  while (std::getline(ss, token, ',')) {
    const auto colon = token.find(':');
    if (colon == std::string::npos) {
      throw CLI::ValidationError("--regimes", "expected v_level:tau_steps pairs, got '" +
                                                  token + "'");
    }
    dspr::LagRegime r;
    r.v_level = std::stod(token.substr(0, colon));
    r.tau_steps = std::stoll(token.substr(colon + 1));
    out.push_back(r);
  }
  if (out.empty()) throw CLI::ValidationError("--regimes", "no regimes given");
  return out;
}

struct GenerateArgs {
  std::string kind, out, config;
  uint64_t seed = 0;
  int64_t steps = 0;  // 0: generator default
  double noise_std = 0.1;
  std::string regimes = "-1:4,1:12";
  int64_t dwell_min = 150, dwell_max = 350;
  double leak = 0.0;
  double period = 10.0;
  bool force = false;
};

int run_generate(const GenerateArgs& a) {
  const uint64_t seed = effective_seed(a.seed);
  if (fs::exists(a.out) && !fs::is_empty(a.out) && !a.force) {
    std::cerr << "error: output directory " << a.out
              << " is not empty (use --force to overwrite)\n";
    return 1;
  }
  dspr::SeriesDataset ds;
  if (a.kind == "transport_delay") {
    dspr::TransportDelayConfig cfg;
    cfg.seed = seed;
    if (a.steps > 0) cfg.steps = a.steps;
    cfg.noise_std = a.noise_std;
    cfg.lag_regimes = parse_regimes(a.regimes);
    cfg.dwell_min = a.dwell_min;
    cfg.dwell_max = a.dwell_max;
    cfg.period_seconds = a.period;
    ds = dspr::gen_transport_delay(cfg);
  } else {
    dspr::ConservationConfig cfg;
    cfg.seed = seed;
    if (a.steps > 0) cfg.steps = a.steps;
    cfg.leak = a.leak;
    cfg.noise_std = a.noise_std;
    cfg.period_seconds = a.period;
    ds = dspr::gen_conservation(cfg);
  }
  dspr::save_dataset(ds, a.out);
  std::cout << "wrote " << ds.steps << " steps x " << ds.n_vars() << " variables to "
            << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, variant = "full", config;
  uint64_t seed = 0;
  dspr::TrainConfig cfg;
  int64_t lookback = 24, horizon = 4;
};

int run_train(TrainArgs a) {
  a.cfg.seed = effective_seed(a.seed);
  a.cfg.variant = dspr::variant_from_str(a.variant);
  const dspr::SeriesDataset ds = dspr::load_dataset(a.data);
  const dspr::WindowedData wd = dspr::split_windows(ds, a.lookback, a.horizon);
  dspr::EvalOptions eval_opts;
  eval_opts.regimes = true;
  const dspr::RunRecord rec = dspr::train_model(wd, a.cfg, a.out, eval_opts);
  for (const auto& r : rec.test_reports) {
    if (r.label == "h=" + std::to_string(a.horizon) && r.regime == "All") {
      std::cout << "variant=" << a.variant << " seed=" << a.cfg.seed
                << " test MAE=" << r.mae << " RMSE=" << r.rmse << " MCA=" << r.mca
                << " TVR=" << r.tvr << "\n";
    }
  }
  std::cout << "wall time " << rec.wall_seconds << "s; run artifacts in " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, out = "eval_out", config;
  int64_t lookback = 0;  // 0: take from the checkpoint
  bool regimes = false;
  double tda_delta = 0.0;
  int64_t tda_segment = 4;
};

int run_eval(const EvalArgs& a) {
  const dspr::Checkpoint ckpt = dspr::load_checkpoint(a.checkpoint);
  dspr::TrainConfig cfg = dspr::train_config_from_json(ckpt.config_json);
  if (a.lookback > 0 && a.lookback != cfg.model.lookback) {
    std::cerr << "error: config mismatch: checkpoint was trained with lookback L="
              << cfg.model.lookback << ", horizon H=" << cfg.model.horizon
              << "; requested L=" << a.lookback
              << ". The trend stream's time-axis layers are sized by L, so the "
                 "checkpoint cannot serve a different lookback.\n";
    return 1;
  }
  const dspr::SeriesDataset ds = dspr::load_dataset(a.data);
  const dspr::WindowedData wd =
      dspr::split_windows(ds, cfg.model.lookback, cfg.model.horizon);

  dspr::EvalOptions opts;
  opts.regimes = a.regimes;
  opts.tda_delta = a.tda_delta;
  opts.tda_segment = a.tda_segment;

  fs::create_directories(a.out);

  dspr::Tape tape;
  dspr::RestoredModel restored = dspr::restore_model(ckpt, ds.prior, tape);

  json summary;
  summary["checkpoint"] = a.checkpoint;
  summary["snapshot"] = ckpt.metrics;

  if (restored.arx) {
    const dspr::WindowBatch val = wd.val_batch();
    const dspr::Tensor val_hat = dspr::arx_predictions(*restored.arx, val);
    summary["val_mae"] = dspr::mae(val_hat, val.y_tensor());
    summary["val_rmse"] = dspr::rmse(val_hat, val.y_tensor());
    const dspr::WindowBatch test = wd.test_batch();
    const dspr::Tensor test_hat = dspr::arx_predictions(*restored.arx, test);
    const double delta =
        opts.tda_delta > 0.0 ? opts.tda_delta : dspr::tda_default_delta(test.y_tensor());
    dspr::MetricReport rep = dspr::evaluate_forecasts(test_hat, test.y_tensor(), delta,
                                                      opts.tda_segment);
    rep.label = "h=" + std::to_string(wd.horizon);
    dspr::write_metric_table_csv({rep}, (fs::path(a.out) / "metrics.csv").string());
    dspr::write_metric_reports_json({rep}, (fs::path(a.out) / "metrics.json").string());
  } else {
    dspr::DsprModel& model = *restored.model;
    {
      const dspr::EvalArtifacts val =
          dspr::evaluate_model(model, wd, wd.val_starts, dspr::EvalOptions{});
      summary["val_mae"] = dspr::mae(val.y_hat, val.y);
      summary["val_rmse"] = dspr::rmse(val.y_hat, val.y);
    }
    const dspr::EvalArtifacts art = dspr::evaluate_model(model, wd, wd.test_starts, opts);
    dspr::write_metric_table_csv(art.reports, (fs::path(a.out) / "metrics.csv").string());
    dspr::write_metric_reports_json(art.reports,
                                    (fs::path(a.out) / "metrics.json").string());
    if (a.regimes) {
      std::vector<dspr::MetricReport> regime_rows;
      for (const auto& r : art.reports) {
        if (r.regime != "All") regime_rows.push_back(r);
      }
      dspr::write_regime_table_csv(regime_rows,
                                   (fs::path(a.out) / "regime_table.csv").string());
    }
    if (!art.delay_profile.empty()) {
      dspr::write_delay_profile_csv(art.delay_profile, ds.names,
                                    (fs::path(a.out) / "delay_profile.csv").string());
    }
    if (!art.adjacency_mean.empty()) {
      dspr::write_adjacency_csv(art.adjacency_mean, ds.names,
                                (fs::path(a.out) / "adjacency_mean.csv").string());
    }
  }
  dspr::write_text_file((fs::path(a.out) / "eval_summary.json").string(),
                        summary.dump(2) + "\n");
  std::cout << "eval artifacts in " << a.out << "\n";
  return 0;
}

struct ReportArgs {
  std::string runs, out, config;
};

int run_report(const ReportArgs& a) {
  std::vector<fs::path> run_dirs;
  if (fs::exists(fs::path(a.runs) / "run_record.json")) {
    run_dirs.push_back(a.runs);
  } else if (fs::is_directory(a.runs)) {
    for (const auto& entry : fs::directory_iterator(a.runs)) {
      if (entry.is_directory() && fs::exists(entry.path() / "run_record.json")) {
        run_dirs.push_back(entry.path());
      }
    }
  }
  std::sort(run_dirs.begin(), run_dirs.end());
  if (run_dirs.empty()) {
    std::cerr << "error: no completed runs under " << a.runs << "\n";
    return 1;
  }
  fs::create_directories(a.out);

  // Metric table over all runs, ablation deltas vs the full variant, and the
  // per-regime table.
  std::ostringstream metrics_csv;
  metrics_csv << "run,variant,seed,label,regime,MAE,RMSE,MCA,TVR,TDA\n";
  std::vector<dspr::AblationRow> ablation;
  std::map<std::string, std::pair<double, double>> variant_metrics;
  std::vector<dspr::MetricReport> regime_rows;
  fs::path full_dir;

  for (const auto& dir : run_dirs) {
    std::ifstream in(dir / "run_record.json");
    json rec;
    in >> rec;
    const std::string variant = rec.at("config").at("variant").get<std::string>();
    const auto seed = rec.at("config").at("seed").get<uint64_t>();
    const auto horizon = rec.at("config").at("model").at("horizon").get<int64_t>();
    for (const auto& rep : rec.at("test_reports")) {
      const std::string label = rep.value("label", "");
      const std::string regime = rep.value("regime", "All");
      metrics_csv << dir.filename().string() << "," << variant << "," << seed << ","
                  << label << "," << regime << "," << rep.at("mae").get<double>() << ","
                  << rep.at("rmse").get<double>() << "," << rep.at("mca").get<double>()
                  << "," << rep.at("tvr").get<double>() << ",";
      if (rep.contains("tda") && !rep["tda"].is_null()) {
        metrics_csv << rep["tda"].get<double>();
      } else {
        metrics_csv << "NA";
      }
      metrics_csv << "\n";
      if (label == "h=" + std::to_string(horizon) && regime == "All" &&
          !variant_metrics.count(variant)) {
        variant_metrics[variant] = {rep.at("mae").get<double>(),
                                    rep.at("rmse").get<double>()};
        if (variant == "full") full_dir = dir;
      }
      if (regime != "All") {
        dspr::MetricReport r;
        r.regime = regime;
        r.label = dir.filename().string();
        r.n_samples = rep.at("n_samples").get<int64_t>();
        r.mae = rep.at("mae").get<double>();
        r.rmse = rep.at("rmse").get<double>();
        r.mca = rep.at("mca").get<double>();
        r.tvr = rep.at("tvr").get<double>();
        if (rep.contains("tda") && !rep["tda"].is_null()) r.tda = rep["tda"].get<double>();
        regime_rows.push_back(r);
      }
    }
  }
  dspr::write_text_file((fs::path(a.out) / "metrics_table.csv").string(),
                        metrics_csv.str());

  if (variant_metrics.count("full")) {
    const auto [full_mae, full_rmse] = variant_metrics["full"];
    for (const auto& [variant, mr] : variant_metrics) {
      dspr::AblationRow row;
      row.variant = variant;
      row.mae = mr.first;
      row.rmse = mr.second;
      row.delta_mae_pct = (mr.first - full_mae) / full_mae * 100.0;
      row.delta_rmse_pct = (mr.second - full_rmse) / full_rmse * 100.0;
      ablation.push_back(row);
    }
    dspr::write_ablation_table_csv(ablation,
                                   (fs::path(a.out) / "ablation_table.csv").string());
  }
  if (!regime_rows.empty()) {
    dspr::write_regime_table_csv(regime_rows,
                                 (fs::path(a.out) / "regime_table.csv").string());
  }

  // Figures come from the full run when present, otherwise the first run.
  const fs::path fig_dir = full_dir.empty() ? run_dirs.front() : full_dir;
  if (fs::exists(fig_dir / "adjacency_mean.csv")) {
    const auto [names, adj] =
        dspr::read_adjacency_csv((fig_dir / "adjacency_mean.csv").string());
    dspr::write_text_file((fs::path(a.out) / "adjacency_heatmap.svg").string(),
                          dspr::svg_adjacency_heatmap(adj, names));
  }
  if (fs::exists(fig_dir / "delay_profile.csv") &&
      fs::exists(fig_dir / "adjacency_mean.csv")) {
    const auto [names, adj] =
        dspr::read_adjacency_csv((fig_dir / "adjacency_mean.csv").string());
    std::ifstream in(fig_dir / "run_record.json");
    json rec;
    in >> rec;
    const auto target = rec.at("config").at("model").at("target").get<int64_t>();
    const auto tau_max = rec.at("config").at("model").at("tau_max").get<int64_t>();
    const auto rows =
        dspr::read_delay_profile_csv((fig_dir / "delay_profile.csv").string(), names);
    dspr::write_text_file((fs::path(a.out) / "delay_histogram.svg").string(),
                          dspr::svg_delay_histogram(rows, tau_max, target));
  }
  std::cout << "report artifacts in " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DSPR dual-stream physics-residual forecasting toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenerateArgs gen;
  auto* sub_gen = app.add_subcommand("generate", "Generate a synthetic dataset directory");
  sub_gen->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  sub_gen->add_option("--kind", gen.kind, "Generator kind")
      ->required()
      ->check(CLI::IsMember({"transport_delay", "conservation"}));
  sub_gen->add_option("--out", gen.out, "Output directory")->required();
  sub_gen->add_option("--seed", gen.seed, "RNG seed");
  sub_gen->add_option("--steps", gen.steps, "Series length");
  sub_gen->add_option("--noise-std", gen.noise_std, "Observation noise");
  sub_gen->add_option("--regimes", gen.regimes, "v_level:tau pairs, comma separated");
  sub_gen->add_option("--dwell-min", gen.dwell_min, "Minimum regime dwell (steps)");
  sub_gen->add_option("--dwell-max", gen.dwell_max, "Maximum regime dwell (steps)");
  sub_gen->add_option("--leak", gen.leak, "Leak rate (conservation)");
  sub_gen->add_option("--period", gen.period, "Sampling period in seconds");
  sub_gen->add_flag("--force", gen.force, "Overwrite a non-empty output directory");
  sub_gen->add_option("--config", gen.config, "JSON config file (flags win)");

  TrainArgs tr;
  auto* sub_tr = app.add_subcommand("train", "Train a model variant");
  sub_tr->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  sub_tr->add_option("--data", tr.data, "Dataset directory")->required();
  sub_tr->add_option("--out", tr.out, "Run output directory")->required();
  sub_tr->add_option("--variant", tr.variant, "Model variant")
      ->check(CLI::IsMember({"full", "no_prior", "shuffled_prior", "no_adaptive_window",
                             "trend_only", "pgnn", "arx"}));
  sub_tr->add_option("--seed", tr.seed, "RNG seed");
  sub_tr->add_option("--epochs", tr.cfg.epochs, "Training epochs");
  sub_tr->add_option("--batch", tr.cfg.batch_size, "Batch size");
  sub_tr->add_option("--lr", tr.cfg.lr, "Learning rate");
  sub_tr->add_option("--gate-lr-scale", tr.cfg.gate_lr_scale, "Gate learning-rate multiplier");
  sub_tr->add_option("--clip", tr.cfg.clip_norm, "Gradient clip norm");
  sub_tr->add_option("--patience", tr.cfg.patience, "Early-stop patience");
  sub_tr->add_option("--lookback", tr.lookback, "Lookback window L");
  sub_tr->add_option("--horizon", tr.horizon, "Forecast horizon H");
  sub_tr->add_option("--d-emb", tr.cfg.model.d_emb, "Residual embedding width");
  sub_tr->add_option("--heads", tr.cfg.model.n_heads, "Attention heads");
  sub_tr->add_option("--tau-max", tr.cfg.model.tau_max, "Adaptive window upper bound");
  sub_tr->add_option("--node-emb", tr.cfg.model.node_emb_dim, "Static node embedding dim");
  sub_tr->add_option("--trend-d-model", tr.cfg.model.trend_d_model, "Trend stream width");
  sub_tr->add_option("--trend-depth", tr.cfg.model.trend_depth, "Trend mixing blocks");
  sub_tr->add_option("--ma-kernel", tr.cfg.model.ma_kernel, "Decomposition kernel (odd)");
  sub_tr->add_option("--lambda-phys", tr.cfg.model.lambda_phys, "Prior alignment weight");
  sub_tr->add_option("--lambda-sparse", tr.cfg.model.lambda_sparse, "Sparsity weight");
  sub_tr->add_option("--pgnn-lambda", tr.cfg.pgnn_lambda, "PG-NN penalty weight");
  sub_tr->add_option("--arx-p", tr.cfg.arx_p, "ARX own-lag order");
  sub_tr->add_option("--arx-q", tr.cfg.arx_q, "ARX exogenous-lag order");
  sub_tr->add_option("--config", tr.config, "JSON config file (flags win)");

  EvalArgs ev;
  auto* sub_ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  sub_ev->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  sub_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  sub_ev->add_option("--data", ev.data, "Dataset directory")->required();
  sub_ev->add_option("--out", ev.out, "Output directory");
  sub_ev->add_option("--lookback", ev.lookback, "Lookback window (must match checkpoint)");
  sub_ev->add_flag("--regimes", ev.regimes, "Add High/Medium/Low volatility reports");
  sub_ev->add_option("--tda-delta", ev.tda_delta, "TDA significance threshold");
  sub_ev->add_option("--tda-segment", ev.tda_segment, "TDA interval length");
  sub_ev->add_option("--config", ev.config, "JSON config file (flags win)");

  ReportArgs rp;
  auto* sub_rp = app.add_subcommand("report", "Assemble tables and figures from runs");
  sub_rp->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  sub_rp->add_option("--runs", rp.runs, "Directory of run directories")->required();
  sub_rp->add_option("--out", rp.out, "Report output directory")->required();
  sub_rp->add_option("--config", rp.config, "JSON config file (flags win)");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config_args(args);
    // CLI11 consumes reversed argument vectors.
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (sub_gen->parsed()) return run_generate(gen);
    if (sub_tr->parsed()) return run_train(tr);
    if (sub_ev->parsed()) return run_eval(ev);
    if (sub_rp->parsed()) return run_report(rp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
