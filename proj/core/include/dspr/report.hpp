#pragma once

#include <string>
#include <vector>

#include "dspr/metrics.hpp"
#include "dspr/training.hpp"

namespace dspr {

/// Metric table mirroring the results-table layout: one row per horizon cut
/// (and regime), columns MAE, RMSE, MCA, TVR, TDA. Undefined TDA prints NA.
void write_metric_table_csv(const std::vector<MetricReport>& reports,
                            const std::string& path);
void write_metric_reports_json(const std::vector<MetricReport>& reports,
                               const std::string& path);

/// Ablation table with relative degradation vs the full model, the
/// "(variant - full)/full * 100%" convention.
void write_ablation_table_csv(const std::vector<AblationRow>& rows, const std::string& path);

/// Per-regime table (rows High/Medium/Low/All).
void write_regime_table_csv(const std::vector<MetricReport>& reports,
                            const std::string& path);

void write_adjacency_csv(const std::vector<double>& adjacency,
                         const std::vector<std::string>& names, const std::string& path);

/// Delay-profile dump, columns sample_id,t,channel,tau,regime.
void write_delay_profile_csv(const std::vector<DelayRow>& rows,
                             const std::vector<std::string>& channel_names,
                             const std::string& path);

/// Histogram of learned receptive fields, one bar series per regime label.
std::string svg_delay_histogram(const std::vector<DelayRow>& rows, int64_t tau_max,
                                int64_t target_channel);

/// Heatmap of the mean dynamic adjacency with per-cell weight labels; the
/// diagonal renders as exact zero.
std::string svg_adjacency_heatmap(const std::vector<double>& adjacency,
                                  const std::vector<std::string>& names);

/// Readers for the emitted artifacts (the report command re-ingests run dirs).
std::vector<DelayRow> read_delay_profile_csv(const std::string& path,
                                             const std::vector<std::string>& channel_names);
std::pair<std::vector<std::string>, std::vector<double>> read_adjacency_csv(
    const std::string& path);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace dspr
