#include "dspr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "json_util.hpp"

namespace dspr {

namespace {

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

std::string tda_cell(const MetricReport& r) {
  return r.tda ? fmt(*r.tda) : std::string("NA");
}

}  // namespace

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void write_metric_table_csv(const std::vector<MetricReport>& reports,
                            const std::string& path) {
  std::ostringstream os;
  os << "label,regime,horizon,n_samples,MAE,RMSE,MCA,TVR,TDA,MCA_clipped,TVR_clipped,"
        "tda_delta,tda_segment\n";
  for (const auto& r : reports) {
    os << r.label << "," << r.regime << "," << r.horizon << "," << r.n_samples << ","
       << fmt(r.mae) << "," << fmt(r.rmse) << "," << fmt(r.mca) << "," << fmt(r.tvr) << ","
       << tda_cell(r) << "," << fmt(r.mca_clipped) << "," << fmt(r.tvr_clipped) << ","
       << fmt(r.tda_delta) << "," << r.tda_segment << "\n";
  }
  write_text_file(path, os.str());
}

void write_metric_reports_json(const std::vector<MetricReport>& reports,
                               const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(metric_report_json(r));
  write_text_file(path, arr.dump(2) + "\n");
}

void write_ablation_table_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ostringstream os;
  os << "variant,MAE,RMSE,delta_MAE_pct,delta_RMSE_pct\n";
  for (const auto& r : rows) {
    os << r.variant << "," << fmt(r.mae) << "," << fmt(r.rmse) << ","
       << fmt(r.delta_mae_pct) << "," << fmt(r.delta_rmse_pct) << "\n";
  }
  write_text_file(path, os.str());
}

void write_regime_table_csv(const std::vector<MetricReport>& reports,
                            const std::string& path) {
  std::ostringstream os;
  os << "label,regime,n_samples,MAE,RMSE,MCA,TVR,TDA\n";
  for (const auto& r : reports) {
    os << r.label << "," << r.regime << "," << r.n_samples << "," << fmt(r.mae) << ","
       << fmt(r.rmse) << "," << fmt(r.mca) << "," << fmt(r.tvr) << "," << tda_cell(r)
       << "\n";
  }
  write_text_file(path, os.str());
}

void write_adjacency_csv(const std::vector<double>& adjacency,
                         const std::vector<std::string>& names, const std::string& path) {
  const auto n = static_cast<int64_t>(names.size());
  std::ostringstream os;
  os << "src";
  for (const auto& name : names) os << "," << name;
  os << "\n";
  for (int64_t i = 0; i < n; ++i) {
    os << names[static_cast<size_t>(i)];
    for (int64_t j = 0; j < n; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", adjacency[static_cast<size_t>(i * n + j)]);
      os << "," << buf;
    }
    os << "\n";
  }
  write_text_file(path, os.str());
}

void write_delay_profile_csv(const std::vector<DelayRow>& rows,
                             const std::vector<std::string>& channel_names,
                             const std::string& path) {
  std::ostringstream os;
  os << "sample_id,t,channel,tau,regime\n";
  for (const auto& r : rows) {
    os << r.sample << "," << r.t << "," << channel_names[static_cast<size_t>(r.channel)]
       << "," << fmt(r.tau, 10) << "," << r.regime << "\n";
  }
  write_text_file(path, os.str());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
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

}  // namespace

std::vector<DelayRow> read_delay_profile_csv(const std::string& path,
                                             const std::vector<std::string>& channel_names) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<DelayRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != 5) throw std::runtime_error(path + ": malformed delay row");
    DelayRow r;
    r.sample = std::stoll(cells[0]);
    r.t = std::stoll(cells[1]);
    const auto it = std::find(channel_names.begin(), channel_names.end(), cells[2]);
    if (it == channel_names.end()) {
      throw std::runtime_error(path + ": unknown channel '" + cells[2] + "'");
    }
    r.channel = static_cast<int64_t>(it - channel_names.begin());
    r.tau = std::stod(cells[3]);
    r.regime = cells[4];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::pair<std::vector<std::string>, std::vector<double>> read_adjacency_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(in, line);
  auto header = split_line(line);
  header.erase(header.begin());  // drop the "src" column
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    for (size_t i = 1; i < cells.size(); ++i) values.push_back(std::stod(cells[i]));
  }
  if (values.size() != header.size() * header.size()) {
    throw std::runtime_error(path + ": adjacency shape mismatch");
  }
  return {header, values};
}

// ---- SVG ---------------------------------------------------------------------

namespace {

const char* kPalette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string svg_delay_histogram(const std::vector<DelayRow>& rows, int64_t tau_max,
                                int64_t target_channel) {
  // Bin tau per regime for the requested channel.
  std::map<std::string, std::vector<int64_t>> bins;
  const int64_t n_bins = tau_max;
  for (const auto& r : rows) {
    if (r.channel != target_channel) continue;
    auto& b = bins[r.regime];
    if (b.empty()) b.assign(static_cast<size_t>(n_bins), 0);
    int64_t bin = static_cast<int64_t>(std::floor(r.tau - 1.0));
    bin = std::clamp<int64_t>(bin, 0, n_bins - 1);
    ++b[static_cast<size_t>(bin)];
  }

  const double width = 640.0, height = 360.0, margin = 48.0;
  const double plot_w = width - 2 * margin, plot_h = height - 2 * margin;
  int64_t max_count = 1;
  for (const auto& [name, b] : bins) {
    for (int64_t v : b) max_count = std::max(max_count, v);
  }

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "  <rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "  <text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << "Learned receptive field distribution (target channel)</text>\n";
  os << "  <line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
     << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  os << "  <line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
     << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";

  const auto n_series = static_cast<double>(std::max<size_t>(1, bins.size()));
  const double group_w = plot_w / static_cast<double>(n_bins);
  const double bar_w = group_w / n_series;
  size_t series = 0;
  for (const auto& [name, b] : bins) {
    const char* color = kPalette[series % 6];
    for (int64_t i = 0; i < n_bins; ++i) {
      const double h = plot_h * static_cast<double>(b[static_cast<size_t>(i)]) /
                       static_cast<double>(max_count);
      if (h <= 0.0) continue;
      const double x = margin + group_w * static_cast<double>(i) +
                       bar_w * static_cast<double>(series);
      os << "  <rect x=\"" << x << "\" y=\"" << height - margin - h << "\" width=\""
         << bar_w * 0.9 << "\" height=\"" << h << "\" fill=\"" << color << "\"/>\n";
    }
    os << "  <text x=\"" << width - margin - 110 << "\" y=\""
       << margin + 16.0 * static_cast<double>(series) << "\" font-size=\"12\" fill=\""
       << color << "\">regime " << xml_escape(name) << "</text>\n";
    ++series;
  }
  for (int64_t i = 0; i < n_bins; i += std::max<int64_t>(1, n_bins / 10)) {
    os << "  <text x=\"" << margin + group_w * (static_cast<double>(i) + 0.5) << "\" y=\""
       << height - margin + 16 << "\" text-anchor=\"middle\" font-size=\"10\">" << i + 1
       << "</text>\n";
  }
  os << "  <text x=\"" << width / 2 << "\" y=\"" << height - 8
     << "\" text-anchor=\"middle\" font-size=\"12\">tau (steps)</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string svg_adjacency_heatmap(const std::vector<double>& adjacency,
                                  const std::vector<std::string>& names) {
  const auto n = static_cast<int64_t>(names.size());
  double max_w = 1e-12;
  for (double v : adjacency) max_w = std::max(max_w, v);

  const double cell = 64.0, margin = 88.0;
  const double size = margin + cell * static_cast<double>(n) + 24.0;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
     << size << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  os << "  <rect width=\"" << size << "\" height=\"" << size << "\" fill=\"white\"/>\n";
  os << "  <text x=\"" << size / 2
     << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">Mean dynamic adjacency "
        "(row: source, column: sink)</text>\n";
  for (int64_t i = 0; i < n; ++i) {
    os << "  <text x=\"" << margin - 8 << "\" y=\""
       << margin + cell * (static_cast<double>(i) + 0.6)
       << "\" text-anchor=\"end\" font-size=\"12\">" << xml_escape(names[static_cast<size_t>(i)])
       << "</text>\n";
    os << "  <text x=\"" << margin + cell * (static_cast<double>(i) + 0.5) << "\" y=\""
       << margin - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
       << xml_escape(names[static_cast<size_t>(i)]) << "</text>\n";
  }
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      const double v = i == j ? 0.0 : adjacency[static_cast<size_t>(i * n + j)];
      const double intensity = v / max_w;
      const int red = 255;
      const int other = static_cast<int>(255.0 * (1.0 - intensity));
      const double x = margin + cell * static_cast<double>(j);
      const double y = margin + cell * static_cast<double>(i);
      os << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\""
         << cell << "\" fill=\"rgb(" << red << "," << other << "," << other
         << ")\" stroke=\"#ccc\"/>\n";
      char label[32];
      std::snprintf(label, sizeof(label), "%.2f", v);
      os << "  <text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
         << "\" text-anchor=\"middle\" font-size=\"12\" fill=\""
         << (intensity > 0.6 ? "white" : "black") << "\">" << label << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace dspr
