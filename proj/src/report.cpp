#include "anchorstream/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace anchorstream {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<double> cumulative_error(const PredictionLog& log) {
  if (log.records.empty()) throw ReportError("cumulative_error: empty prediction log");
  std::vector<double> series;
  series.reserve(log.records.size());
  long wrong = 0;
  for (std::size_t n = 0; n < log.records.size(); ++n) {
    const auto& r = log.records[n];
    if (r.true_class < 0) {
      throw ReportError("cumulative_error: record " + std::to_string(n) +
                        " has no true label");
    }
    if (r.predicted_class != r.true_class) ++wrong;
    series.push_back(100.0 * static_cast<double>(wrong) / static_cast<double>(n + 1));
  }
  return series;
}

double error_rate(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw ReportError("error_rate: predictions and labels must be nonempty and equal-length");
  }
  long wrong = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] != labels[i]) ++wrong;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

std::vector<std::pair<std::int64_t, double>> downsample_series(const std::vector<double>& series,
                                                               std::size_t max_points) {
  if (max_points == 0) throw ReportError("downsample_series: max_points must be positive");
  std::vector<std::pair<std::int64_t, double>> out;
  if (series.empty()) return out;
  if (series.size() <= max_points) {
    for (std::size_t i = 0; i < series.size(); ++i) {
      out.emplace_back(static_cast<std::int64_t>(i), series[i]);
    }
    return out;
  }
  const double stride = static_cast<double>(series.size()) / static_cast<double>(max_points);
  for (std::size_t p = 0; p < max_points; ++p) {
    const auto idx = static_cast<std::size_t>(std::llround((p + 1) * stride)) - 1;
    out.emplace_back(static_cast<std::int64_t>(idx), series[idx]);
  }
  out.back() = {static_cast<std::int64_t>(series.size() - 1), series.back()};
  return out;
}

RobustnessSummary order_robustness(const std::function<double(int)>& run_once, int runs) {
  if (runs < 2) throw ReportError("order_robustness: need at least two runs");
  RobustnessSummary summary;
  for (int i = 0; i < runs; ++i) summary.final_errors.push_back(run_once(i));
  double sum = 0.0;
  for (double e : summary.final_errors) sum += e;
  summary.mean = sum / static_cast<double>(runs);
  double sq = 0.0;
  for (double e : summary.final_errors) sq += (e - summary.mean) * (e - summary.mean);
  summary.stddev = std::sqrt(sq / static_cast<double>(runs - 1));
  return summary;
}

TimingSummary timing_summary(double wall_seconds, std::int64_t samples) {
  if (samples <= 0) throw ReportError("timing_summary: zero-length stream");
  TimingSummary t;
  t.wall_seconds = wall_seconds;
  t.samples = samples;
  t.samples_per_second =
      wall_seconds > 0.0 ? static_cast<double>(samples) / wall_seconds : 0.0;
  return t;
}

std::string RunReport::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["config"] = config;
  j["final_error"] = format_double(final_error);
  j["samples"] = samples;
  nlohmann::json series_json = nlohmann::json::array();
  for (const auto& [idx, value] : series) {
    series_json.push_back({{"arrival_index", idx}, {"cumulative_error", format_double(value)}});
  }
  j["series"] = std::move(series_json);
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& row : rows) {
    rows_json.push_back({{"family", row.family},
                         {"severity", row.severity},
                         {"baseline_error", format_double(row.baseline_error)},
                         {"adapted_error", format_double(row.adapted_error)}});
  }
  j["benchmark_rows"] = std::move(rows_json);
  if (robustness.has_value()) {
    nlohmann::json r;
    nlohmann::json errors = nlohmann::json::array();
    for (double e : robustness->final_errors) errors.push_back(format_double(e));
    r["final_errors"] = std::move(errors);
    r["mean"] = format_double(robustness->mean);
    r["stddev"] = format_double(robustness->stddev);
    j["order_robustness"] = std::move(r);
  }
  return j.dump(2) + "\n";
}

void RunReport::save(const std::string& json_path) const {
  std::ofstream out(json_path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + json_path);
  out << to_json();
  if (!out) throw IoError("write failed: " + json_path);
}

void save_series_csv(const std::vector<std::pair<std::int64_t, double>>& series,
                     const std::string& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "arrival_index,cumulative_error\n";
  for (const auto& [idx, value] : series) {
    out << idx << ',' << format_double(value) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

void save_timing(const TimingSummary& timing, const std::string& path) {
  nlohmann::json j;
  j["wall_seconds"] = timing.wall_seconds;
  j["samples"] = timing.samples;
  j["samples_per_second"] = timing.samples_per_second;
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace anchorstream
