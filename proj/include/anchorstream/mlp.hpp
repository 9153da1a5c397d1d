#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "anchorstream/errors.hpp"
#include "anchorstream/running_stats.hpp"

namespace anchorstream {

enum class Activation { relu, tanh, identity };

// One dense layer, y = act(x W^T + b). weight is (out x in); batches are
// row-major (one sample per row). No normalization layers anywhere: rows
// pass through independently, so a prediction can never be influenced by
// its batch neighbours.
struct DenseLayer {
  Matrix weight;
  Vector bias;
  Activation activation = Activation::relu;
};

// Feature extractor: input -> penultimate features.
struct Mlp {
  std::vector<DenseLayer> layers;

  int input_dim() const;
  int feature_dim() const;
};

// Linear classifier on top of the features, logits = f W^T + b (K x d).
struct LinearHead {
  Matrix weight;
  Vector bias;

  int num_classes() const { return static_cast<int>(weight.rows()); }
};

// Backbone + head. `revision` counts parameter mutations; forward caches are
// stamped with it so a backward pass against stale activations is rejected
// instead of silently producing wrong gradients.
struct Model {
  Mlp backbone;
  LinearHead head;
  std::uint64_t revision = 0;

  int input_dim() const { return backbone.input_dim(); }
  int feature_dim() const { return backbone.feature_dim(); }
  int num_classes() const { return head.num_classes(); }
  // Throws ConfigError when adjacent layer shapes do not chain.
  void validate() const;
};

// Everything forward() computed, kept for the matching backward pass.
struct ForwardCache {
  Matrix input;                       // N x input_dim
  std::vector<Matrix> pre;            // per layer, N x out (pre-activation)
  std::vector<Matrix> post;           // per layer, N x out (post-activation)
  Matrix features;                    // N x feature_dim
  Matrix logits;                      // N x K
  Matrix posteriors;                  // N x K, rows on the simplex
  std::uint64_t revision = 0;

  int rows() const { return static_cast<int>(input.rows()); }
};

// Row-wise stable softmax (max subtraction before exponentiation).
Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits);

// Full forward pass over a batch of rows.
ForwardCache forward(const Model& model, const Eigen::Ref<const Matrix>& inputs);

// Gradients for every parameter, same shapes as the model.
struct ParamGrads {
  std::vector<Matrix> weight;  // backbone
  std::vector<Vector> bias;
  Matrix head_weight;
  Vector head_bias;

  static ParamGrads zeros_like(const Model& model);
};

// Backpropagation from an upstream gradient at the feature layer
// (grad_features, N x d) and optionally at the logits (grad_logits, N x K;
// pass nullptr when the objective does not touch the head). Throws
// std::logic_error when the cache was built by a different model revision.
ParamGrads backward(const Model& model, const ForwardCache& cache,
                    const Eigen::Ref<const Matrix>& grad_features,
                    const Matrix* grad_logits = nullptr);

// SGD with classical momentum: v <- momentum * v + g; p <- p - lr * v.
class SgdOptimizer {
 public:
  SgdOptimizer(const Model& model, double lr, double momentum);

  // Applies one step and bumps model.revision. freeze_head skips the head
  // parameters (and leaves their velocities untouched).
  void step(Model& model, const ParamGrads& grads, bool freeze_head = false);

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::vector<Matrix> vel_weight_;
  std::vector<Vector> vel_bias_;
  Matrix vel_head_weight_;
  Vector vel_head_bias_;
};

// Labelled design matrix; the common currency between the generator, the
// pretrainer and the streaming engine.
struct Dataset {
  Matrix inputs;           // N x input_dim
  std::vector<int> labels; // empty when unlabelled

  int rows() const { return static_cast<int>(inputs.rows()); }
};

struct PretrainOptions {
  int epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 128;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  double holdout_accuracy = 0.0;
  double final_train_loss = 0.0;
  int epochs_run = 0;
};

// Cross-entropy pretraining on labelled source data with a held-out split
// carved off before training. epochs == 0 returns the model untouched.
// Throws TrainingError (with the epoch) if the loss leaves the finite domain.
PretrainResult pretrain_source(Model& model, const Dataset& data, const PretrainOptions& opts);

// Architecture helper: builds input -> hidden... -> feature backbone plus a
// K-class head, parameters drawn from scaled Gaussians (seeded).
Model make_model(int input_dim, const std::vector<int>& hidden_dims, int feature_dim,
                 int num_classes, std::uint64_t seed);

// Shape-prefixed little-endian float64 binary checkpoint; round-trips
// bit-exactly.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace anchorstream
