#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "anchorstream/engine.hpp"

namespace anchorstream {

// e_n = (errors among the first n predictions) / n * 100, for n = 1..N.
// Every record must carry a true label; throws ReportError otherwise (or on
// an empty log).
std::vector<double> cumulative_error(const PredictionLog& log);

// Percentage of wrong rows in a (predictions, labels) pairing.
double error_rate(const std::vector<int>& predictions, const std::vector<int>& labels);

// At most `max_points` evenly spaced (arrival_index, value) pairs; the last
// point is always kept so the curve ends at the final error.
std::vector<std::pair<std::int64_t, double>> downsample_series(const std::vector<double>& series,
                                                               std::size_t max_points);

// Mean and sample standard deviation of the final error across `runs`
// replays of the same stream under different arrival orders. `run_once`
// receives the shuffle index and must return the final error of a fresh
// run.
struct RobustnessSummary {
  std::vector<double> final_errors;
  double mean = 0.0;
  double stddev = 0.0;
};
RobustnessSummary order_robustness(const std::function<double(int)>& run_once, int runs);

// Samples-per-second over a run; throws ReportError on an empty stream.
struct TimingSummary {
  double wall_seconds = 0.0;
  std::int64_t samples = 0;
  double samples_per_second = 0.0;
};
TimingSummary timing_summary(double wall_seconds, std::int64_t samples);

// One benchmark row: a corruption setting with its unadapted and adapted
// final errors.
struct BenchmarkRow {
  std::string family;
  int severity = 0;
  double baseline_error = 0.0;
  double adapted_error = 0.0;
};

// The deterministic run artifact. Everything that influenced the run is in
// `config`; wall-clock timing deliberately lives elsewhere (timing.json) so
// these bytes stay identical under a fixed seed.
struct RunReport {
  std::map<std::string, std::string> config;
  double final_error = 0.0;
  std::int64_t samples = 0;
  std::vector<std::pair<std::int64_t, double>> series;  // downsampled
  std::vector<BenchmarkRow> rows;
  std::optional<RobustnessSummary> robustness;

  // Sorted-key JSON with round-trip double formatting: byte-identical for
  // identical runs.
  std::string to_json() const;
  void save(const std::string& json_path) const;
};

// The series as its own two-column CSV (arrival_index,cumulative_error).
void save_series_csv(const std::vector<std::pair<std::int64_t, double>>& series,
                     const std::string& path);

void save_timing(const TimingSummary& timing, const std::string& path);

}  // namespace anchorstream
