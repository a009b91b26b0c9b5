#pragma once

#include <json.hpp>

#include "dspr/metrics.hpp"

namespace dspr {

inline nlohmann::json metric_report_json(const MetricReport& r) {
  nlohmann::json j;
  j["label"] = r.label;
  j["regime"] = r.regime;
  j["horizon"] = r.horizon;
  j["n_samples"] = r.n_samples;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["mca"] = r.mca;
  j["tvr"] = r.tvr;
  if (r.tda) {
    j["tda"] = *r.tda;
  } else {
    j["tda"] = nullptr;
  }
  j["mca_clipped"] = r.mca_clipped;
  j["tvr_clipped"] = r.tvr_clipped;
  j["tda_delta"] = r.tda_delta;
  j["tda_segment"] = r.tda_segment;
  return j;
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.label = j.value("label", "");
  r.regime = j.value("regime", "All");
  r.horizon = j.at("horizon").get<int64_t>();
  r.n_samples = j.at("n_samples").get<int64_t>();
  r.mae = j.at("mae").get<double>();
  r.rmse = j.at("rmse").get<double>();
  r.mca = j.at("mca").get<double>();
  r.tvr = j.at("tvr").get<double>();
  if (j.contains("tda") && !j["tda"].is_null()) r.tda = j["tda"].get<double>();
  r.mca_clipped = j.value("mca_clipped", 0.0);
  r.tvr_clipped = j.value("tvr_clipped", 0.0);
  r.tda_delta = j.value("tda_delta", 0.0);
  r.tda_segment = j.value("tda_segment", int64_t{4});
  return r;
}

}  // namespace dspr
