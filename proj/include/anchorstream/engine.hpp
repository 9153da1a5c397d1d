#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "anchorstream/alignment.hpp"
#include "anchorstream/anchors.hpp"
#include "anchorstream/filtering.hpp"
#include "anchorstream/mlp.hpp"

namespace anchorstream {

enum class Protocol { one_pass, multi_pass };
// filtered: hard pseudo-labels gated by both confidence filters.
// no_filter: hard pseudo-labels, every row admitted.
// soft_assignment: posterior rows as fractional cluster weights.
enum class Strategy { filtered, no_filter, soft_assignment };
// source_stats: anchors frozen from labelled source features.
// classifier_prototypes: source-free anchors rebuilt from the classifier
// rows each stream step.
enum class AnchorMode { source_stats, classifier_prototypes };
// When the running statistics commit: after every inner minibatch (the
// adaptation loop literally advances N on each gradient step) or exactly
// once per arriving stream batch (inner epochs then use transient
// recurrences for gradients only).
enum class CountPer { inner, outer };

// Defaults are tuned for feature spaces of a few dozen dimensions or less,
// where per-class covariance estimates carry far more sampling noise than
// their large-backbone counterparts. Three knobs carry that tuning: a large
// `ridge` damps the noisy covariance part of the objective (and bounds the
// 1/ridge^2-scale gradients a still-rank-deficient early cluster scatter
// would otherwise expose through the inverse), `momentum = 0` avoids
// amplifying noisy loss gradients into occasional runaway trajectories
// (plain SGD with a larger `lr` covers the same ground stably), and a
// moderate `tau_pp` keeps the pseudo-label gate from starving clusters when
// posterior confidence sags under a hard shift.
struct EngineConfig {
  int batch_size = 128;       // stream arrival granularity N_B
  int queue_capacity = 512;   // replay buffer size N_C (multiple of N_B)
  int inner_epochs = 6;       // adaptation epochs over the queue per arrival
  double ema_xi = 0.9;
  double tau_tc = -0.001;
  double tau_pp = 0.7;
  std::int64_t clip_global = 1280;  // 0 = unbounded
  std::int64_t clip_cluster = 512;  // 0 = unbounded
  double lambda_global = 1.0;
  double lr = 3e-3;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  Protocol protocol = Protocol::one_pass;
  int passes = 4;  // multi_pass only
  Strategy strategy = Strategy::filtered;
  AnchorMode anchor_mode = AnchorMode::source_stats;
  KlForm kl_form = KlForm::standard;
  GaForm ga_form = GaForm::kld;
  CountPer count_per = CountPer::inner;
  bool freeze_head = false;
  double ridge = 0.5;  // eigenvalue floor for every factorized covariance
  double prototype_cov_scale = 1.0;
  bool adapt = true;  // false = pure inference (the unadapted baseline)

  // Throws ConfigError on out-of-range values or a queue capacity that is
  // not a positive multiple of the batch size.
  void validate() const;
};

// One instant prediction, recorded before the sample could influence any
// update.
struct PredictionRecord {
  std::int64_t sample_id = 0;      // stable across passes
  std::int64_t arrival_index = 0;  // position in the stream
  int predicted_class = -1;
  int true_class = -1;             // -1 when unknown
  std::uint64_t model_version = 0;
};

// Append-only; one record per streamed sample, in arrival order.
struct PredictionLog {
  std::vector<PredictionRecord> records;

  void save_csv(const std::string& path) const;
  static PredictionLog load_csv(const std::string& path);
};

struct RunResult {
  PredictionLog log;
  // multi_pass only: predictions of the final inference sweep, indexed by
  // sample id.
  std::optional<std::vector<int>> sweep_predictions;
  double wall_seconds = 0.0;
  std::int64_t samples_seen = 0;
};

// Sequential adaptation driver. Every arriving batch is predicted with the
// model as-is, then (optionally) the model adapts on the replay queue of
// already-seen samples. Nothing about a sample's prediction can depend on
// samples that arrive after it.
class Engine {
 public:
  // `anchors` may be empty only in classifier_prototypes mode.
  Engine(Model model, std::optional<SourceAnchors> anchors, const EngineConfig& config);

  // Feeds one batch: predicts, enqueues, adapts. true_labels may be empty
  // (predictions then carry true_class -1). Returns the records it
  // appended. If adaptation leaves the numerical domain the full engine
  // state is dumped first, then NumericalError is rethrown with the dump
  // path appended to its message.
  std::vector<PredictionRecord> stream_step(const Eigen::Ref<const Matrix>& inputs,
                                            const std::vector<int>& true_labels);

  // Runs the configured protocol over a finite stream. one_pass: a single
  // traversal. multi_pass: `passes` traversals with model, queue and
  // posterior history persisting across passes, predictions logged only on
  // the first, then a final inference-only sweep.
  RunResult run(const Dataset& stream);

  // Inference without any side effects on engine state.
  std::vector<int> predict(const Eigen::Ref<const Matrix>& inputs) const;

  const PredictionLog& log() const { return log_; }
  const Model& model() const { return model_; }
  const ClusterBank& bank() const { return bank_; }
  const EngineConfig& config() const { return config_; }
  std::int64_t samples_seen() const { return next_sample_id_; }
  std::int64_t queued_rows() const { return queued_rows_; }
  std::size_t posterior_history_size() const { return store_.size(); }

  // Where a numerical-failure state dump lands (default: current directory).
  void set_dump_dir(const std::string& dir) { dump_dir_ = dir; }
  const std::string& last_dump_path() const { return last_dump_path_; }

 private:
  struct QueuedBatch {
    std::int64_t first_id = 0;
    Matrix inputs;
  };

  void adapt_on_queue();
  SourceAnchors current_anchors();
  Matrix strategy_weights(const FilteredBatch& batch, const Matrix& posteriors) const;
  std::string dump_state(const std::string& reason);

  Model model_;
  std::optional<SourceAnchors> anchors_;
  EngineConfig config_;
  ClusterBank bank_;
  PosteriorStore store_;
  std::deque<QueuedBatch> queue_;
  std::int64_t queued_rows_ = 0;
  std::int64_t next_sample_id_ = 0;
  std::int64_t step_counter_ = 0;
  bool log_predictions_ = true;
  std::mt19937_64 rng_;
  SgdOptimizer optimizer_;
  PredictionLog log_;
  std::string dump_dir_ = ".";
  std::string last_dump_path_;
};

}  // namespace anchorstream
