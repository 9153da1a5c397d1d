#pragma once

#include <optional>
#include <string>

#include "anchorstream/engine.hpp"
#include "anchorstream/report.hpp"

namespace anchorstream {

// One complete streaming run packaged with its metrics.
struct PipelineResult {
  PredictionLog log;
  double final_error = 0.0;     // one_pass: last cumulative point;
                                // multi_pass: final-sweep error
  double baseline_error = 0.0;  // the untouched model's error on the same
                                // stream (the no-adaptation reference)
  std::vector<double> series;   // full cumulative-error curve
  TimingSummary timing;
};

// Builds a fresh engine on copies of `model`/`anchors` and runs the
// configured protocol over `target`. When shuffle_seed is set the stream
// order is permuted first (labels move with their rows). Requires labels —
// every reported metric needs them.
PipelineResult run_pipeline(const Model& model, const std::optional<SourceAnchors>& anchors,
                            const Dataset& target, const EngineConfig& config,
                            std::optional<std::uint64_t> shuffle_seed = std::nullopt,
                            const std::string& dump_dir = ".");

// Seeded row permutation, labels kept aligned.
Dataset shuffle_dataset(const Dataset& data, std::uint64_t seed);

}  // namespace anchorstream
