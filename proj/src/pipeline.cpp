#include "anchorstream/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace anchorstream {

Dataset shuffle_dataset(const Dataset& data, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset out;
  out.inputs = Matrix(data.inputs.rows(), data.inputs.cols());
  if (!data.labels.empty()) out.labels.resize(data.labels.size());
  for (int i = 0; i < data.rows(); ++i) {
    out.inputs.row(i) = data.inputs.row(order[static_cast<std::size_t>(i)]);
    if (!data.labels.empty()) {
      out.labels[static_cast<std::size_t>(i)] =
          data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    }
  }
  return out;
}

PipelineResult run_pipeline(const Model& model, const std::optional<SourceAnchors>& anchors,
                            const Dataset& target, const EngineConfig& config,
                            std::optional<std::uint64_t> shuffle_seed,
                            const std::string& dump_dir) {
  if (target.labels.empty()) {
    throw ReportError("run_pipeline: the stream must be labelled to score it");
  }
  const Dataset stream =
      shuffle_seed.has_value() ? shuffle_dataset(target, *shuffle_seed) : target;

  Engine engine(model, anchors, config);
  engine.set_dump_dir(dump_dir);

  PipelineResult result;
  // The no-adaptation reference: the initial model scored on the same rows.
  result.baseline_error = error_rate(engine.predict(stream.inputs), stream.labels);

  const RunResult run = engine.run(stream);
  result.log = run.log;
  result.series = cumulative_error(run.log);
  result.final_error = run.sweep_predictions.has_value()
                           ? error_rate(*run.sweep_predictions, stream.labels)
                           : result.series.back();
  result.timing = timing_summary(run.wall_seconds, run.samples_seen);
  return result;
}

}  // namespace anchorstream
