#pragma once

// Result-log reporting: markdown tables with compact "0.136±.000" mean-std
// formatting and a static SVG scatter of accuracy versus training batch time
// (circle area tracks parameter count).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsbench/harness.hpp"

namespace tsbench {

struct ReportRecord {
  std::string timestamp;
  std::string fingerprint;
  ModelConfig config;
  double mse = 0.0, mse_std = 0.0;
  double mae = 0.0, mae_std = 0.0;
  double batch_time_ms = 0.0;
  long long param_count = 0;
};

inline std::vector<ReportRecord> load_result_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("report: cannot open " + path);
  std::vector<ReportRecord> out;
  std::string line;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::invalid_argument("report: " + path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ReportRecord r;
    r.timestamp = j.value("timestamp", "");
    r.fingerprint = j.value("fingerprint", "");
    r.config = parse_model_config(j.value("config", "")).config;
    r.mse = j.value("mse", 0.0);
    r.mse_std = j.value("mse_std", 0.0);
    r.mae = j.value("mae", 0.0);
    r.mae_std = j.value("mae_std", 0.0);
    r.batch_time_ms = j.value("batch_time_ms", 0.0);
    r.param_count = j.value("param_count", 0LL);
    out.push_back(std::move(r));
  }
  return out;
}

// "0.136±.000": three decimals, std printed without its leading zero.
inline std::string format_mean_std(double mean, double stddev) {
  char m[32], s[32];
  std::snprintf(m, sizeof m, "%.3f", mean);
  std::snprintf(s, sizeof s, "%.3f", stddev);
  std::string st = s;
  if (st.size() > 1 && st[0] == '0') st.erase(0, 1);
  return std::string(m) + "±" + st;
}

inline std::string config_group_value(const ModelConfig& c, const std::string& key) {
  if (key == "d1_mode") return to_string(c.d1_mode);
  if (key == "covariates") return to_string(c.covariates);
  if (key == "temporal") return to_string(c.temporal.kind);
  if (key == "spatial") return to_string(c.spatial.kind);
  if (key == "hidden") return std::to_string(c.temporal.d_h);
  if (key == "window") return std::to_string(c.window);
  if (key == "horizon") return std::to_string(c.horizon);
  if (key == "revin") return c.revin ? "on" : "off";
  if (key == "scaler") return c.scaler ? "on" : "off";
  if (key == "patching") return c.patching ? "on" : "off";
  throw std::invalid_argument("report: unknown grouping key '" + key + "'");
}

inline std::string markdown_table(const std::vector<ReportRecord>& records,
                                  const std::vector<std::string>& group_keys) {
  std::ostringstream out;
  out << "|";
  for (const auto& k : group_keys) out << " " << k << " |";
  out << " MSE | MAE | batch ms | params | fingerprint |\n";
  out << "|";
  for (std::size_t i = 0; i < group_keys.size(); ++i) out << "---|";
  out << "---|---|---|---|---|\n";
  for (const auto& r : records) {
    out << "|";
    for (const auto& k : group_keys) out << " " << config_group_value(r.config, k) << " |";
    out << " " << format_mean_std(r.mse, r.mse_std) << " | " << format_mean_std(r.mae, r.mae_std)
        << " | ";
    char bt[32];
    std::snprintf(bt, sizeof bt, "%.2f", r.batch_time_ms);
    out << bt << " | " << r.param_count << " | " << r.fingerprint << " |\n";
  }
  return out.str();
}

// Two-arm delta table; the better (lower-MSE) arm of each metric is bold, the
// usual benchmark-table convention for marking winners.
inline std::string ablation_delta_table(const RunResult& with_arm, const RunResult& without_arm,
                                        const std::string& axis_name) {
  auto cell = [&](double mean, double stddev, bool bold) {
    const std::string s = format_mean_std(mean, stddev);
    return bold ? "**" + s + "**" : s;
  };
  std::ostringstream out;
  out << "| axis | arm | MSE | MAE |\n|---|---|---|---|\n";
  const bool with_mse = with_arm.mse_mean <= without_arm.mse_mean;
  const bool with_mae = with_arm.mae_mean <= without_arm.mae_mean;
  out << "| " << axis_name << " | with | " << cell(with_arm.mse_mean, with_arm.mse_std, with_mse)
      << " | " << cell(with_arm.mae_mean, with_arm.mae_std, with_mae) << " |\n";
  out << "| " << axis_name << " | without | "
      << cell(without_arm.mse_mean, without_arm.mse_std, !with_mse) << " | "
      << cell(without_arm.mae_mean, without_arm.mae_std, !with_mae) << " |\n";
  char d[64];
  std::snprintf(d, sizeof d, "%+.3f", with_arm.mse_mean - without_arm.mse_mean);
  out << "| " << axis_name << " | delta (with - without) | " << d << " | ";
  std::snprintf(d, sizeof d, "%+.3f", with_arm.mae_mean - without_arm.mae_mean);
  out << d << " |\n";
  return out.str();
}

// One circle per record; x = mean batch time (ms), y = MSE, radius tracks
// sqrt(parameter count).
inline std::string svg_scatter(const std::vector<ReportRecord>& records) {
  if (records.empty()) throw std::invalid_argument("svg_scatter: no records");
  const int width = 640, height = 480, margin = 56;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300, pmax = 1.0;
  for (const auto& r : records) {
    xmin = std::min(xmin, r.batch_time_ms);
    xmax = std::max(xmax, r.batch_time_ms);
    ymin = std::min(ymin, r.mse);
    ymax = std::max(ymax, r.mse);
    pmax = std::max(pmax, static_cast<double>(r.param_count));
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  auto px = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); };
  auto py = [&](double y) { return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin); };
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<text x=\"%d\" y=\"%d\" font-size=\"12\">batch time (ms)</text>\n", width / 2 - 40,
                height - 16);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"14\" y=\"%d\" font-size=\"12\" transform=\"rotate(-90 14 %d)\">MSE</text>\n",
                height / 2, height / 2);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.2f</text>\n", margin - 8,
                height - margin + 14, xmin);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.2f</text>\n",
                width - margin - 16, height - margin + 14, xmax);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.3f</text>\n", 8,
                height - margin, ymin);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.3f</text>\n", 8,
                margin + 4, ymax);
  out << buf;
  for (const auto& r : records) {
    const double rad = 3.0 + 12.0 * std::sqrt(static_cast<double>(r.param_count) / pmax);
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"%.1f\" fill=\"steelblue\" fill-opacity=\"0.6\" "
                  "stroke=\"navy\"/>\n",
                  px(r.batch_time_ms), py(r.mse), rad);
    out << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"9\">%s</text>\n",
                  px(r.batch_time_ms) + rad + 2, py(r.mse) + 3,
                  to_string(r.config.temporal.kind));
    out << buf;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace tsbench
