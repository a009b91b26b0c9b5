#include "dspr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "dspr/rng.hpp"

namespace fs = std::filesystem;

namespace dspr {

double ConservationLaw::apply(const double* row, int64_t n) const {
  if (static_cast<int64_t>(weights.size()) != n) {
    throw ShapeError("f_cons: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(n) + " variables");
  }
  double acc = intercept;
  for (int64_t c = 0; c < n; ++c) acc += weights[static_cast<size_t>(c)] * row[c];
  return acc;
}

// ---- generators -----------------------------------------------------------

namespace {

// Stationary first-order autoregression; rho close to 1 gives the smooth
// random-walk look of slow process variables.
std::vector<double> ou_series(Rng& rng, int64_t steps, double rho) {
  std::vector<double> out(static_cast<size_t>(steps));
  const double innov = std::sqrt(1.0 - rho * rho);
  double z = rng.normal();
  out[0] = z;
  for (int64_t t = 1; t < steps; ++t) {
    z = rho * z + innov * rng.normal();
    out[static_cast<size_t>(t)] = z;
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

SeriesDataset gen_transport_delay(const TransportDelayConfig& cfg) {
  if (cfg.lag_regimes.empty()) {
    throw ContractError("gen_transport_delay: at least one lag regime required");
  }
  for (const auto& r : cfg.lag_regimes) {
    if (r.tau_steps < 1) {
      throw ContractError("gen_transport_delay: regime delay must be >= 1 step");
    }
  }
  for (size_t i = 0; i < cfg.lag_regimes.size(); ++i) {
    for (size_t j = i + 1; j < cfg.lag_regimes.size(); ++j) {
      if (cfg.lag_regimes[i].tau_steps == cfg.lag_regimes[j].tau_steps) {
        throw ContractError("gen_transport_delay: regimes must have distinct delays");
      }
    }
  }
  if (cfg.dwell_min < 1 || cfg.dwell_max < cfg.dwell_min) {
    throw ContractError("gen_transport_delay: invalid dwell bounds");
  }

  Rng rng(cfg.seed);
  const int64_t T = cfg.steps;
  const auto u = ou_series(rng, T, 0.95);
  const auto x = ou_series(rng, T, 0.9);
  const auto d = ou_series(rng, T, 0.9);

  // Regime schedule: piecewise-constant flow level with random dwell times.
  std::vector<int64_t> regime(static_cast<size_t>(T));
  std::vector<double> v(static_cast<size_t>(T));
  const int64_t n_regimes = static_cast<int64_t>(cfg.lag_regimes.size());
  int64_t current = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n_regimes)));
  int64_t remaining = 0;
  for (int64_t t = 0; t < T; ++t) {
    if (remaining == 0) {
      remaining = cfg.dwell_min +
                  static_cast<int64_t>(rng.below(
                      static_cast<uint64_t>(cfg.dwell_max - cfg.dwell_min + 1)));
      if (t > 0 && n_regimes > 1) {
        int64_t next = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n_regimes - 1)));
        if (next >= current) ++next;
        current = next;
      }
    }
    regime[static_cast<size_t>(t)] = current;
    v[static_cast<size_t>(t)] =
        cfg.lag_regimes[static_cast<size_t>(current)].v_level + 0.05 * rng.normal();
    --remaining;
  }

  SeriesDataset ds;
  ds.names = {"u_act", "v_flow", "x_state", "d_noise", "y_target"};
  const int64_t n = 5;
  ds.values.assign(static_cast<size_t>(T * n), 0.0);
  ds.steps = T;
  ds.period_seconds = cfg.period_seconds;
  ds.target = 4;
  ds.generator = "transport_delay";
  ds.true_tau.resize(static_cast<size_t>(T));
  ds.regime_id = regime;

  for (int64_t t = 0; t < T; ++t) {
    const int64_t tau = cfg.lag_regimes[static_cast<size_t>(regime[static_cast<size_t>(t)])]
                            .tau_steps;
    ds.true_tau[static_cast<size_t>(t)] = tau;
    const int64_t lagged = std::max<int64_t>(0, t - tau);
    const double y = cfg.actuator_gain * u[static_cast<size_t>(lagged)] +
                     cfg.state_gain * x[static_cast<size_t>(t)] +
                     cfg.noise_std * rng.normal();
    double* row = &ds.values[static_cast<size_t>(t * n)];
    row[0] = u[static_cast<size_t>(t)];
    row[1] = v[static_cast<size_t>(t)];
    row[2] = x[static_cast<size_t>(t)];
    row[3] = d[static_cast<size_t>(t)];
    row[4] = y;
  }

  ds.prior = build_prior(ds.names,
                         {VariableRole::Actuator, VariableRole::State, VariableRole::State,
                          VariableRole::State, VariableRole::Target},
                         {{1, 4}, {2, 4}});  // v->y, x->y confirmed; u->y from the role rule

  nlohmann::json params;
  params["steps"] = cfg.steps;
  params["seed"] = cfg.seed;
  params["noise_std"] = cfg.noise_std;
  params["dwell_min"] = cfg.dwell_min;
  params["dwell_max"] = cfg.dwell_max;
  params["actuator_gain"] = cfg.actuator_gain;
  params["state_gain"] = cfg.state_gain;
  params["lag_regimes"] = nlohmann::json::array();
  for (const auto& r : cfg.lag_regimes) {
    params["lag_regimes"].push_back({{"v_level", r.v_level}, {"tau_steps", r.tau_steps}});
  }
  ds.generator_params_json = params.dump();
  return ds;
}

SeriesDataset gen_conservation(const ConservationConfig& cfg) {
  Rng rng(cfg.seed);
  const int64_t T = cfg.steps;

  // AR(2)-smoothed inflows; the double pole at 0.6 gives the sluggish
  // thermal-inertia look without drifting.
  auto ar2 = [&rng, T]() {
    std::vector<double> s(static_cast<size_t>(T));
    double a = 0.0, b = 0.0;
    for (int64_t t = 0; t < T; ++t) {
      const double next = 1.2 * a - 0.36 * b + 0.1 * rng.normal();
      b = a;
      a = next;
      s[static_cast<size_t>(t)] = next;
    }
    return s;
  };
  const auto s1 = ar2();
  const auto s2 = ar2();

  SeriesDataset ds;
  ds.names = {"f_in1", "f_in2", "level", "y_out"};
  const int64_t n = 4;
  ds.values.assign(static_cast<size_t>(T * n), 0.0);
  ds.steps = T;
  ds.period_seconds = cfg.period_seconds;
  ds.target = 3;
  ds.generator = "conservation";

  double lvl = 3.0;
  for (int64_t t = 0; t < T; ++t) {
    const double f1 = std::max(0.0, 1.5 + s1[static_cast<size_t>(t)]);
    const double f2 = std::max(0.0, 1.5 + s2[static_cast<size_t>(t)]);
    lvl = 0.98 * lvl + 0.02 * (f1 + f2);
    const double y = (1.0 - cfg.leak) * (f1 + f2) + cfg.noise_std * rng.normal();
    double* row = &ds.values[static_cast<size_t>(t * n)];
    row[0] = f1;
    row[1] = f2;
    row[2] = lvl;
    row[3] = y;
  }

  ds.prior = build_prior(ds.names,
                         {VariableRole::Actuator, VariableRole::Actuator, VariableRole::State,
                          VariableRole::Target},
                         {});
  ConservationLaw law;
  law.weights = {1.0 - cfg.leak, 1.0 - cfg.leak, 0.0, 0.0};
  law.intercept = 0.0;
  ds.f_cons = law;

  nlohmann::json params;
  params["steps"] = cfg.steps;
  params["seed"] = cfg.seed;
  params["leak"] = cfg.leak;
  params["noise_std"] = cfg.noise_std;
  ds.generator_params_json = params.dump();
  return ds;
}

// ---- CSV --------------------------------------------------------------------

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

bool is_missing_token(const std::string& s) {
  return s.empty() || s == "nan" || s == "NaN" || s == "NA" || s == "null";
}

// Linear interpolation of NaN runs; edges take the nearest valid value.
void fill_gaps(std::vector<double>& col, const std::string& name) {
  const int64_t n = static_cast<int64_t>(col.size());
  int64_t first_valid = -1;
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isnan(col[static_cast<size_t>(i)])) {
      first_valid = i;
      break;
    }
  }
  if (first_valid < 0) {
    throw ParseError("column '" + name + "' has no usable values");
  }
  for (int64_t i = 0; i < first_valid; ++i) {
    col[static_cast<size_t>(i)] = col[static_cast<size_t>(first_valid)];
  }
  int64_t last_valid = first_valid;
  for (int64_t i = first_valid + 1; i < n; ++i) {
    if (std::isnan(col[static_cast<size_t>(i)])) continue;
    if (i > last_valid + 1) {
      const double lo = col[static_cast<size_t>(last_valid)];
      const double hi = col[static_cast<size_t>(i)];
      const double span = static_cast<double>(i - last_valid);
      for (int64_t j = last_valid + 1; j < i; ++j) {
        col[static_cast<size_t>(j)] = lo + (hi - lo) * static_cast<double>(j - last_valid) / span;
      }
    }
    last_valid = i;
  }
  for (int64_t i = last_valid + 1; i < n; ++i) {
    col[static_cast<size_t>(i)] = col[static_cast<size_t>(last_valid)];
  }
}

}  // namespace

CsvTable ingest_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  CsvTable table;
  for (const auto& name : split_csv_line(line)) table.names.push_back(trim(name));
  table.cols = static_cast<int64_t>(table.names.size());

  std::vector<double> raw;
  int64_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<int64_t>(cells.size()) != table.cols) {
      throw ParseError(path + ": row " + std::to_string(row_no) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(table.cols));
    }
    for (int64_t c = 0; c < table.cols; ++c) {
      const std::string cell = trim(cells[static_cast<size_t>(c)]);
      if (is_missing_token(cell)) {
        raw.push_back(kMissing);
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') {
        throw ParseError(path + ": row " + std::to_string(row_no) + " col " +
                         std::to_string(c + 1) + ": cannot parse '" + cell + "'");
      }
      raw.push_back(v);
    }
  }
  table.rows = static_cast<int64_t>(raw.size()) / table.cols;

  // Column-wise preprocessing.
  for (int64_t c = 0; c < table.cols; ++c) {
    std::vector<double> col(static_cast<size_t>(table.rows));
    for (int64_t r = 0; r < table.rows; ++r) {
      col[static_cast<size_t>(r)] = raw[static_cast<size_t>(r * table.cols + c)];
    }

    const bool zero_clip =
        std::find(schema.zero_clip_columns.begin(), schema.zero_clip_columns.end(),
                  table.names[static_cast<size_t>(c)]) != schema.zero_clip_columns.end();
    if (zero_clip) {
      for (auto& v : col) {
        if (!std::isnan(v) && v < 0.0) v = 0.0;
      }
    }

    if (schema.clip_sigma > 0.0) {
      double sum = 0.0, sq = 0.0;
      int64_t count = 0;
      for (double v : col) {
        if (std::isnan(v)) continue;
        sum += v;
        sq += v * v;
        ++count;
      }
      if (count > 1) {
        const double mean = sum / static_cast<double>(count);
        const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
        const double sd = std::sqrt(var);
        if (sd > 0.0) {
          for (auto& v : col) {
            if (!std::isnan(v) && std::abs(v - mean) > schema.clip_sigma * sd) v = kMissing;
          }
        }
      }
    }

    fill_gaps(col, table.names[static_cast<size_t>(c)]);
    for (int64_t r = 0; r < table.rows; ++r) {
      raw[static_cast<size_t>(r * table.cols + c)] = col[static_cast<size_t>(r)];
    }
  }

  table.values = std::move(raw);
  return table;
}

void write_csv(const std::string& path, const std::vector<std::string>& names,
               const std::vector<double>& values, int64_t rows, int64_t cols) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) out << ",";
    out << names[i];
  }
  out << "\n";
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      if (c) out << ",";
      out << format_double(values[static_cast<size_t>(r * cols + c)]);
    }
    out << "\n";
  }
}

// ---- dataset directory -------------------------------------------------------

void save_dataset(const SeriesDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  write_csv((fs::path(dir) / "data.csv").string(), ds.names, ds.values, ds.steps,
            ds.n_vars());
  save_prior(ds.prior, (fs::path(dir) / "prior.json").string());

  nlohmann::json meta;
  meta["names"] = ds.names;
  meta["period_seconds"] = ds.period_seconds;
  meta["target"] = ds.target;
  meta["generator"] = ds.generator;
  meta["generator_params"] = nlohmann::json::parse(ds.generator_params_json);
  meta["clean"] = true;
  if (ds.f_cons) {
    meta["f_cons"] = {{"weights", ds.f_cons->weights}, {"intercept", ds.f_cons->intercept}};
  } else {
    meta["f_cons"] = nullptr;
  }
  std::ofstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw std::runtime_error("cannot write meta.json in " + dir);
  mf << meta.dump(2) << "\n";

  if (!ds.true_tau.empty()) {
    std::ofstream tf(fs::path(dir) / "true_tau.csv");
    tf << "t,tau,regime\n";
    for (int64_t t = 0; t < ds.steps; ++t) {
      tf << t << "," << ds.true_tau[static_cast<size_t>(t)] << ","
         << (ds.regime_id.empty() ? -1 : ds.regime_id[static_cast<size_t>(t)]) << "\n";
    }
  }
}

SeriesDataset load_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw std::runtime_error("cannot read meta.json in " + dir);
  nlohmann::json meta;
  mf >> meta;

  CsvSchema schema;
  if (meta.value("clean", false)) schema.clip_sigma = 0.0;
  CsvTable table = ingest_csv((fs::path(dir) / "data.csv").string(), schema);

  SeriesDataset ds;
  ds.names = meta.at("names").get<std::vector<std::string>>();
  if (ds.names != table.names) {
    throw ParseError(dir + ": meta.json names disagree with data.csv header");
  }
  ds.values = std::move(table.values);
  ds.steps = table.rows;
  ds.period_seconds = meta.at("period_seconds").get<double>();
  ds.target = meta.at("target").get<int64_t>();
  ds.generator = meta.value("generator", "csv");
  ds.generator_params_json = meta.value("generator_params", nlohmann::json::object()).dump();
  if (meta.contains("f_cons") && !meta["f_cons"].is_null()) {
    ConservationLaw law;
    law.weights = meta["f_cons"].at("weights").get<std::vector<double>>();
    law.intercept = meta["f_cons"].at("intercept").get<double>();
    ds.f_cons = law;
  }
  ds.prior = load_prior((fs::path(dir) / "prior.json").string());

  const fs::path tau_path = fs::path(dir) / "true_tau.csv";
  if (fs::exists(tau_path)) {
    CsvSchema raw_schema;
    raw_schema.clip_sigma = 0.0;
    CsvTable tau = ingest_csv(tau_path.string(), raw_schema);
    if (tau.rows != ds.steps) {
      throw ParseError(dir + ": true_tau.csv has " + std::to_string(tau.rows) +
                       " rows, expected " + std::to_string(ds.steps));
    }
    ds.true_tau.resize(static_cast<size_t>(ds.steps));
    ds.regime_id.resize(static_cast<size_t>(ds.steps));
    for (int64_t t = 0; t < ds.steps; ++t) {
      ds.true_tau[static_cast<size_t>(t)] =
          static_cast<int64_t>(tau.values[static_cast<size_t>(t * 3 + 1)]);
      ds.regime_id[static_cast<size_t>(t)] =
          static_cast<int64_t>(tau.values[static_cast<size_t>(t * 3 + 2)]);
    }
  }
  return ds;
}

// ---- windowing ----------------------------------------------------------------

std::array<double, 4> time_features_at(int64_t t, double period_seconds) {
  const double sec = static_cast<double>(t) * period_seconds;
  const double minute_phase = std::fmod(sec / 60.0, 60.0) / 60.0;
  const double hour_phase = std::fmod(sec / 3600.0, 24.0) / 24.0;
  constexpr double two_pi = 2.0 * 3.141592653589793238462643383279502884;
  return {std::sin(two_pi * minute_phase), std::cos(two_pi * minute_phase),
          std::sin(two_pi * hour_phase), std::cos(two_pi * hour_phase)};
}

WindowedData split_windows(const SeriesDataset& ds, int64_t lookback, int64_t horizon,
                           std::array<double, 3> ratios) {
  const int64_t T = ds.steps;
  const int64_t window = lookback + horizon;
  const int64_t n1 = static_cast<int64_t>(static_cast<double>(T) * ratios[0]);
  const int64_t n2 = static_cast<int64_t>(static_cast<double>(T) * (ratios[0] + ratios[1]));
  if (n1 < window || n2 - n1 < window || T - n2 < window) {
    throw ContractError("split_windows: series of length " + std::to_string(T) +
                        " cannot host lookback+horizon " + std::to_string(window) +
                        " in every split");
  }

  WindowedData wd;
  wd.dataset = ds;
  wd.lookback = lookback;
  wd.horizon = horizon;
  wd.train_range = {0, n1};
  wd.val_range = {n1, n2};
  wd.test_range = {n2, T};

  const int64_t n = ds.n_vars();
  wd.norm.mean.assign(static_cast<size_t>(n), 0.0);
  wd.norm.stddev.assign(static_cast<size_t>(n), 1.0);
  for (int64_t c = 0; c < n; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int64_t t = 0; t < n1; ++t) {
      const double v = ds.at(t, c);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / static_cast<double>(n1);
    const double var = std::max(0.0, sq / static_cast<double>(n1) - mean * mean);
    wd.norm.mean[static_cast<size_t>(c)] = mean;
    wd.norm.stddev[static_cast<size_t>(c)] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  wd.norm_values.resize(ds.values.size());
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t c = 0; c < n; ++c) {
      wd.norm_values[static_cast<size_t>(t * n + c)] = wd.norm.normalize(ds.at(t, c), c);
    }
  }

  auto enumerate = [window](std::pair<int64_t, int64_t> range, int64_t stride) {
    std::vector<int64_t> starts;
    for (int64_t s = range.first; s + window <= range.second; s += stride) {
      starts.push_back(s);
    }
    return starts;
  };
  wd.train_starts = enumerate(wd.train_range, 1);
  wd.val_starts = enumerate(wd.val_range, horizon);
  wd.test_starts = enumerate(wd.test_range, horizon);
  return wd;
}

WindowBatch WindowedData::make_batch(const std::vector<int64_t>& starts) const {
  const int64_t L = lookback, H = horizon, n = dataset.n_vars();
  const int64_t F = time_features;
  WindowBatch b;
  b.count = static_cast<int64_t>(starts.size());
  b.lookback = L;
  b.horizon = H;
  b.n_vars = n;
  b.time_features = F;
  b.x.resize(static_cast<size_t>(b.count * L * n));
  b.time_feats.resize(static_cast<size_t>(b.count * (L + H) * F));
  b.y.resize(static_cast<size_t>(b.count * H));
  b.sample_std.resize(static_cast<size_t>(b.count));
  b.origin = starts;
  b.regime.assign(static_cast<size_t>(b.count), -1);
  const bool has_tau = !dataset.true_tau.empty();
  if (has_tau) b.true_tau.resize(static_cast<size_t>(b.count * L));

  for (int64_t i = 0; i < b.count; ++i) {
    const int64_t s = starts[static_cast<size_t>(i)];
    for (int64_t t = 0; t < L; ++t) {
      for (int64_t c = 0; c < n; ++c) {
        b.x[static_cast<size_t>((i * L + t) * n + c)] =
            norm_values[static_cast<size_t>((s + t) * n + c)];
      }
      if (has_tau) {
        b.true_tau[static_cast<size_t>(i * L + t)] =
            static_cast<double>(dataset.true_tau[static_cast<size_t>(s + t)]);
      }
    }
    for (int64_t t = 0; t < L + H; ++t) {
      const auto tf = time_features_at(s + t, dataset.period_seconds);
      for (int64_t f = 0; f < F; ++f) {
        b.time_feats[static_cast<size_t>((i * (L + H) + t) * F + f)] =
            tf[static_cast<size_t>(f)];
      }
    }
    double sum = 0.0, sq = 0.0;
    for (int64_t t = 0; t < L + H; ++t) {
      const double v = norm_values[static_cast<size_t>((s + t) * n + dataset.target)];
      sum += v;
      sq += v * v;
    }
    const double mean = sum / static_cast<double>(L + H);
    b.sample_std[static_cast<size_t>(i)] =
        std::sqrt(std::max(0.0, sq / static_cast<double>(L + H) - mean * mean));
    for (int64_t h = 0; h < H; ++h) {
      b.y[static_cast<size_t>(i * H + h)] =
          norm_values[static_cast<size_t>((s + L + h) * n + dataset.target)];
    }
    if (!dataset.regime_id.empty()) {
      b.regime[static_cast<size_t>(i)] = dataset.regime_id[static_cast<size_t>(s + L - 1)];
    }
  }
  return b;
}

Tensor WindowBatch::x_tensor(int64_t b) const {
  const size_t offset = static_cast<size_t>(b * lookback * n_vars);
  return Tensor::from({lookback, n_vars},
                      std::vector<double>(x.begin() + offset,
                                          x.begin() + offset +
                                              static_cast<size_t>(lookback * n_vars)));
}

Tensor WindowBatch::time_feats_tensor(int64_t b) const {
  const int64_t rows = lookback + horizon;
  const size_t offset = static_cast<size_t>(b * rows * time_features);
  return Tensor::from({rows, time_features},
                      std::vector<double>(time_feats.begin() + offset,
                                          time_feats.begin() + offset +
                                              static_cast<size_t>(rows * time_features)));
}

Tensor WindowBatch::y_tensor() const {
  return Tensor::from({count, horizon}, y);
}

}  // namespace dspr
