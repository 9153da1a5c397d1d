#include "anchorstream/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "anchorstream/config.hpp"
#include "anchorstream/datagen.hpp"

namespace anchorstream {

void EngineConfig::validate() const {
  if (batch_size < 1) throw ConfigError("EngineConfig: batch_size must be >= 1");
  if (queue_capacity < batch_size || queue_capacity % batch_size != 0) {
    throw ConfigError("EngineConfig: queue_capacity must be a positive multiple of batch_size");
  }
  if (inner_epochs < 0) throw ConfigError("EngineConfig: inner_epochs must be >= 0");
  if (!(ema_xi > 0.0) || ema_xi > 1.0) throw ConfigError("EngineConfig: ema_xi outside (0, 1]");
  if (!(tau_pp > 0.0) || !(tau_pp < 1.0)) throw ConfigError("EngineConfig: tau_pp outside (0, 1)");
  if (!std::isfinite(tau_tc)) throw ConfigError("EngineConfig: tau_tc must be finite");
  if (clip_global < 0 || clip_cluster < 0) {
    throw ConfigError("EngineConfig: clips must be >= 0 (0 = unbounded)");
  }
  if (lambda_global < 0.0) throw ConfigError("EngineConfig: lambda_global must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("EngineConfig: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("EngineConfig: momentum outside [0, 1)");
  if (passes < 1) throw ConfigError("EngineConfig: passes must be >= 1");
  if (!(ridge > 0.0)) throw ConfigError("EngineConfig: ridge must be positive");
  if (!(prototype_cov_scale > 0.0)) {
    throw ConfigError("EngineConfig: prototype_cov_scale must be positive");
  }
}

void PredictionLog::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "sample_id,arrival_index,predicted_class,true_class,model_version\n";
  for (const auto& r : records) {
    out << r.sample_id << ',' << r.arrival_index << ',' << r.predicted_class << ','
        << r.true_class << ',' << r.model_version << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

PredictionLog PredictionLog::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "sample_id,arrival_index,predicted_class,true_class,model_version") {
    throw ParseError("not a prediction log: " + path, 1);
  }
  PredictionLog log;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    PredictionRecord r;
    long long sid = 0, arrival = 0;
    unsigned long long version = 0;
    if (std::sscanf(line.c_str(), "%lld,%lld,%d,%d,%llu", &sid, &arrival, &r.predicted_class,
                    &r.true_class, &version) != 5) {
      throw ParseError("bad prediction log row in " + path, line_no);
    }
    r.sample_id = sid;
    r.arrival_index = arrival;
    r.model_version = version;
    log.records.push_back(r);
  }
  return log;
}

Engine::Engine(Model model, std::optional<SourceAnchors> anchors, const EngineConfig& config)
    : model_(std::move(model)),
      anchors_(std::move(anchors)),
      config_(config),
      rng_(config.seed),
      optimizer_(model_, config.lr, config.momentum) {
  config_.validate();
  model_.validate();
  if (config_.anchor_mode == AnchorMode::source_stats) {
    if (!anchors_.has_value()) {
      throw ConfigError("Engine: source_stats anchor mode requires source anchors");
    }
    anchors_->validate();
    if (anchors_->dim() != model_.feature_dim() ||
        anchors_->num_classes() != model_.num_classes()) {
      throw ConfigError("Engine: anchors do not match the model's feature/class shape");
    }
    bank_ = ClusterBank::init_from(*anchors_, config_.clip_global, config_.clip_cluster);
  } else {
    // Source-free: seed the bank from unit-scale classifier prototypes.
    ClusterBank empty;
    empty.priors = Vector::Constant(model_.num_classes(),
                                    1.0 / static_cast<double>(model_.num_classes()));
    for (int c = 0; c < model_.num_classes(); ++c) {
      empty.clusters.push_back(RunningGaussian::zero(model_.feature_dim()));
    }
    empty.global = RunningGaussian::zero(model_.feature_dim());
    const SourceAnchors seed_anchors =
        classifier_prototype_anchors(model_.head, empty, config_.prototype_cov_scale);
    bank_ = ClusterBank::init_from(seed_anchors, config_.clip_global, config_.clip_cluster);
  }
}

SourceAnchors Engine::current_anchors() {
  if (config_.anchor_mode == AnchorMode::source_stats) return *anchors_;
  return classifier_prototype_anchors(model_.head, bank_, config_.prototype_cov_scale);
}

Matrix Engine::strategy_weights(const FilteredBatch& batch, const Matrix& posteriors) const {
  switch (config_.strategy) {
    case Strategy::filtered:
      return hard_assignment_weights(batch, model_.num_classes());
    case Strategy::no_filter:
      return no_filter_weights(batch, model_.num_classes());
    case Strategy::soft_assignment:
      return soft_assignment_weights(posteriors);
  }
  throw ConfigError("unknown strategy");
}

std::vector<int> Engine::predict(const Eigen::Ref<const Matrix>& inputs) const {
  const ForwardCache cache = forward(model_, inputs);
  std::vector<int> preds(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    preds[static_cast<std::size_t>(i)] =
        argmax_lowest(cache.posteriors.row(i).transpose());
  }
  return preds;
}

std::vector<PredictionRecord> Engine::stream_step(const Eigen::Ref<const Matrix>& inputs,
                                                  const std::vector<int>& true_labels) {
  if (inputs.rows() == 0) throw ConfigError("stream_step: empty batch");
  if (inputs.cols() != model_.input_dim()) {
    throw ConfigError("stream_step: input width does not match the model");
  }
  if (!true_labels.empty() &&
      static_cast<Eigen::Index>(true_labels.size()) != inputs.rows()) {
    throw ConfigError("stream_step: label count does not match batch rows");
  }

  // 1. Instant predictions with the model exactly as it stands. A sample's
  // own batch has not touched the model yet and never will before this
  // point — updates only ever come from samples that already streamed.
  const std::vector<int> preds = predict(inputs);
  std::vector<PredictionRecord> appended(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    PredictionRecord r;
    r.sample_id = next_sample_id_ + i;
    r.arrival_index = next_sample_id_ + i;
    r.predicted_class = preds[static_cast<std::size_t>(i)];
    r.true_class = true_labels.empty() ? -1 : true_labels[static_cast<std::size_t>(i)];
    r.model_version = model_.revision;
    appended[static_cast<std::size_t>(i)] = r;
    if (log_predictions_) log_.records.push_back(r);
  }

  // 2. Enqueue, strictly FIFO by batch.
  queue_.push_back(QueuedBatch{next_sample_id_, inputs});
  queued_rows_ += inputs.rows();
  next_sample_id_ += inputs.rows();
  while (queued_rows_ > config_.queue_capacity) {
    const QueuedBatch& oldest = queue_.front();
    if (config_.protocol == Protocol::one_pass) {
      std::vector<std::int64_t> ids(static_cast<std::size_t>(oldest.inputs.rows()));
      std::iota(ids.begin(), ids.end(), oldest.first_id);
      store_.evict(ids);
    }
    queued_rows_ -= oldest.inputs.rows();
    queue_.pop_front();
  }

  // 3. Adapt on the queue of already-seen samples.
  if (config_.adapt) {
    try {
      adapt_on_queue();
    } catch (const NumericalError& err) {
      const std::string dump = dump_state(err.what());
      throw NumericalError(std::string(err.what()) + " [state dump: " + dump + "]",
                           err.pivot());
    }
  }
  return appended;
}

void Engine::adapt_on_queue() {
  if (queued_rows_ == 0) return;
  const int d = model_.input_dim();
  Matrix qx(queued_rows_, d);
  std::vector<std::int64_t> qids(static_cast<std::size_t>(queued_rows_));
  Eigen::Index row = 0;
  for (const auto& batch : queue_) {
    for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i, ++row) {
      qx.row(row) = batch.inputs.row(i);
      qids[static_cast<std::size_t>(row)] = batch.first_id + i;
    }
  }

  const SourceAnchors anchors = current_anchors();
  const FilterThresholds thresholds{config_.ema_xi, config_.tau_tc, config_.tau_pp};
  AlignmentOptions opts;
  opts.lambda = config_.lambda_global;
  opts.ridge = config_.ridge;
  opts.kl_form = config_.kl_form;
  opts.ga_form = config_.ga_form;

  auto require_finite_forward = [this](const ForwardCache& cache) {
    if (!cache.features.allFinite() || !cache.posteriors.allFinite()) {
      throw NumericalError("forward pass produced non-finite activations at update step " +
                           std::to_string(step_counter_));
    }
  };

  if (config_.count_per == CountPer::outer) {
    // Commit the statistics once, from the batch that just arrived; the
    // inner loop below then only differentiates transient recurrences.
    const QueuedBatch& newest = queue_.back();
    const ForwardCache cache = forward(model_, newest.inputs);
    require_finite_forward(cache);
    std::vector<std::int64_t> ids(static_cast<std::size_t>(newest.inputs.rows()));
    std::iota(ids.begin(), ids.end(), newest.first_id);
    const FilteredBatch fb = make_filtered_batch(cache.features, cache.posteriors, ids, store_,
                                                 thresholds, step_counter_);
    const Matrix weights = strategy_weights(fb, cache.posteriors);
    update_global(bank_.global, cache.features);
    for (int c = 0; c < bank_.num_classes(); ++c) {
      update_weighted(bank_.clusters[static_cast<std::size_t>(c)], cache.features,
                      weights.col(c));
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(queued_rows_));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config_.inner_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      const auto rows = static_cast<Eigen::Index>(stop - start);
      Matrix x(rows, d);
      std::vector<std::int64_t> ids(static_cast<std::size_t>(rows));
      for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index src = order[start + static_cast<std::size_t>(r)];
        x.row(r) = qx.row(src);
        ids[static_cast<std::size_t>(r)] = qids[static_cast<std::size_t>(src)];
      }

      const ForwardCache cache = forward(model_, x);
      require_finite_forward(cache);
      const FilteredBatch fb = make_filtered_batch(cache.features, cache.posteriors, ids,
                                                   store_, thresholds, step_counter_);
      const Matrix weights = strategy_weights(fb, cache.posteriors);
      const MinibatchAlignment align =
          align_minibatch(bank_, anchors, cache.features, weights, opts);
      if (!std::isfinite(align.loss.total) || !align.feature_grad.allFinite()) {
        throw NumericalError("adaptation objective left the finite domain at update step " +
                             std::to_string(step_counter_));
      }
      if (config_.count_per == CountPer::inner) bank_ = align.updated;

      const ParamGrads grads = backward(model_, cache, align.feature_grad);
      optimizer_.step(model_, grads, config_.freeze_head);
      ++step_counter_;
    }
  }
}

RunResult Engine::run(const Dataset& stream) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = stream.rows();
  if (n == 0) throw ConfigError("run: empty stream");
  const bool labelled = !stream.labels.empty();

  auto stream_once = [&]() {
    for (int start = 0; start < n; start += config_.batch_size) {
      const int stop = std::min(n, start + config_.batch_size);
      std::vector<int> labels;
      if (labelled) {
        labels.assign(stream.labels.begin() + start, stream.labels.begin() + stop);
      }
      stream_step(stream.inputs.middleRows(start, stop - start), labels);
    }
  };

  RunResult result;
  if (config_.protocol == Protocol::one_pass) {
    stream_once();
  } else {
    stream_once();  // predictions logged on the first traversal only
    log_predictions_ = false;
    for (int pass = 1; pass < config_.passes; ++pass) {
      // Re-visit the same stream: sample ids restart at 0 so the posterior
      // history and queue stay keyed to the same samples.
      next_sample_id_ = 0;
      stream_once();
    }
    next_sample_id_ = n;
    log_predictions_ = true;

    // Final inference sweep: the multi-pass error metric.
    std::vector<int> sweep(static_cast<std::size_t>(n));
    for (int start = 0; start < n; start += config_.batch_size) {
      const int stop = std::min(n, start + config_.batch_size);
      const std::vector<int> preds = predict(stream.inputs.middleRows(start, stop - start));
      std::copy(preds.begin(), preds.end(), sweep.begin() + start);
    }
    result.sweep_predictions = std::move(sweep);
  }

  result.log = log_;
  result.samples_seen = n;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

namespace {

void write_bank(const ClusterBank& bank, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  const char magic[4] = {'A', 'S', 'B', 'K'};
  const std::uint32_t version = 1;
  out.write(magic, sizeof(magic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const auto k = static_cast<std::uint32_t>(bank.num_classes());
  const auto d = static_cast<std::uint32_t>(bank.dim());
  out.write(reinterpret_cast<const char*>(&k), sizeof(k));
  out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  auto write_rg = [&](const RunningGaussian& g) {
    out.write(reinterpret_cast<const char*>(&g.count), sizeof(g.count));
    out.write(reinterpret_cast<const char*>(&g.clip), sizeof(g.clip));
    out.write(reinterpret_cast<const char*>(g.mean.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(g.mean.size())));
    out.write(reinterpret_cast<const char*>(g.cov.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(g.cov.size())));
  };
  for (const auto& c : bank.clusters) write_rg(c);
  write_rg(bank.global);
}

}  // namespace

std::string Engine::dump_state(const std::string& reason) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(dump_dir_) /
                       ("numerical-failure-step-" + std::to_string(step_counter_));
  std::error_code ec;
  fs::create_directories(dir, ec);

  nlohmann::json meta;
  meta["reason"] = reason;
  meta["samples_seen"] = next_sample_id_;
  meta["update_steps"] = step_counter_;
  meta["queued_rows"] = queued_rows_;
  meta["config"] = config_to_map(config_);
  std::ofstream(dir / "state.json") << meta.dump(2) << '\n';

  save_model(model_, (dir / "model.ckpt").string());
  write_bank(bank_, (dir / "bank.bin").string());
  if (anchors_.has_value()) save_anchors(*anchors_, (dir / "anchors.bin").string());
  if (queued_rows_ > 0) {
    Dataset queued;
    queued.inputs = Matrix(queued_rows_, model_.input_dim());
    Eigen::Index row = 0;
    for (const auto& batch : queue_) {
      for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i, ++row) {
        queued.inputs.row(row) = batch.inputs.row(i);
      }
    }
    save_dataset_binary(queued, (dir / "queue.bin").string());
  }
  last_dump_path_ = dir.string();
  return last_dump_path_;
}

}  // namespace anchorstream
