#include "anchorstream/mlp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "anchorstream/filtering.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace anchorstream {

namespace {

Matrix apply_activation(const Matrix& pre, Activation act) {
  switch (act) {
    case Activation::relu:
      return pre.cwiseMax(0.0);
    case Activation::tanh:
      return pre.array().tanh().matrix();
    case Activation::identity:
      return pre;
  }
  throw ConfigError("unknown activation");
}

// Derivative evaluated from the pre-activation values.
Matrix activation_grad(const Matrix& pre, Activation act) {
  switch (act) {
    case Activation::relu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::tanh:
      return (1.0 - pre.array().tanh().square()).matrix();
    case Activation::identity:
      return Matrix::Ones(pre.rows(), pre.cols());
  }
  throw ConfigError("unknown activation");
}

}  // namespace

int Mlp::input_dim() const {
  if (layers.empty()) throw ConfigError("Mlp: no layers");
  return static_cast<int>(layers.front().weight.cols());
}

int Mlp::feature_dim() const {
  if (layers.empty()) throw ConfigError("Mlp: no layers");
  return static_cast<int>(layers.back().weight.rows());
}

void Model::validate() const {
  if (backbone.layers.empty()) throw ConfigError("Model: backbone has no layers");
  for (std::size_t l = 0; l < backbone.layers.size(); ++l) {
    const auto& layer = backbone.layers[l];
    if (layer.weight.rows() != layer.bias.size()) {
      throw ConfigError("Model: layer " + std::to_string(l) + " weight/bias rows disagree");
    }
    if (l > 0 && layer.weight.cols() != backbone.layers[l - 1].weight.rows()) {
      throw ConfigError("Model: layer " + std::to_string(l) +
                        " input width does not chain with previous layer");
    }
  }
  if (head.weight.cols() != backbone.layers.back().weight.rows()) {
    throw ConfigError("Model: head input width does not match feature dimension");
  }
  if (head.weight.rows() != head.bias.size()) {
    throw ConfigError("Model: head weight/bias rows disagree");
  }
}

Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

ForwardCache forward(const Model& model, const Eigen::Ref<const Matrix>& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw ConfigError("forward: input has " + std::to_string(inputs.cols()) +
                      " columns, model expects " + std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  cache.input = inputs;
  cache.revision = model.revision;
  Matrix x = inputs;
  for (const auto& layer : model.backbone.layers) {
    Matrix pre = (x * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    Matrix post = apply_activation(pre, layer.activation);
    cache.pre.push_back(std::move(pre));
    cache.post.push_back(post);
    x = std::move(post);
  }
  cache.features = x;
  cache.logits = (x * model.head.weight.transpose()).rowwise() + model.head.bias.transpose();
  cache.posteriors = softmax_rows(cache.logits);
  return cache;
}

ParamGrads ParamGrads::zeros_like(const Model& model) {
  ParamGrads g;
  for (const auto& layer : model.backbone.layers) {
    g.weight.emplace_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.emplace_back(Vector::Zero(layer.bias.size()));
  }
  g.head_weight = Matrix::Zero(model.head.weight.rows(), model.head.weight.cols());
  g.head_bias = Vector::Zero(model.head.bias.size());
  return g;
}

ParamGrads backward(const Model& model, const ForwardCache& cache,
                    const Eigen::Ref<const Matrix>& grad_features, const Matrix* grad_logits) {
  if (cache.revision != model.revision) {
    throw std::logic_error("backward: forward cache is stale (model revision " +
                           std::to_string(model.revision) + ", cache revision " +
                           std::to_string(cache.revision) + ")");
  }
  if (grad_features.rows() != cache.input.rows() ||
      grad_features.cols() != cache.features.cols()) {
    throw ConfigError("backward: grad_features shape does not match cached features");
  }

  ParamGrads grads = ParamGrads::zeros_like(model);
  Matrix delta = grad_features;  // gradient flowing into the feature layer
  if (grad_logits != nullptr) {
    if (grad_logits->rows() != cache.logits.rows() ||
        grad_logits->cols() != cache.logits.cols()) {
      throw ConfigError("backward: grad_logits shape does not match cached logits");
    }
    grads.head_weight = grad_logits->transpose() * cache.features;
    grads.head_bias = grad_logits->colwise().sum().transpose();
    delta += *grad_logits * model.head.weight;
  }

  for (int l = static_cast<int>(model.backbone.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = model.backbone.layers[static_cast<std::size_t>(l)];
    const Matrix pre_grad =
        delta.cwiseProduct(activation_grad(cache.pre[static_cast<std::size_t>(l)],
                                           layer.activation));
    const Matrix& layer_input =
        (l == 0) ? cache.input : cache.post[static_cast<std::size_t>(l - 1)];
    grads.weight[static_cast<std::size_t>(l)] = pre_grad.transpose() * layer_input;
    grads.bias[static_cast<std::size_t>(l)] = pre_grad.colwise().sum().transpose();
    if (l > 0) delta = pre_grad * layer.weight;
  }
  return grads;
}

SgdOptimizer::SgdOptimizer(const Model& model, double lr, double momentum)
    : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw ConfigError("SgdOptimizer: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("SgdOptimizer: momentum must lie in [0, 1)");
  }
  for (const auto& layer : model.backbone.layers) {
    vel_weight_.emplace_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    vel_bias_.emplace_back(Vector::Zero(layer.bias.size()));
  }
  vel_head_weight_ = Matrix::Zero(model.head.weight.rows(), model.head.weight.cols());
  vel_head_bias_ = Vector::Zero(model.head.bias.size());
}

void SgdOptimizer::step(Model& model, const ParamGrads& grads, bool freeze_head) {
  if (grads.weight.size() != model.backbone.layers.size()) {
    throw ConfigError("SgdOptimizer: gradient layer count does not match model");
  }
  for (std::size_t l = 0; l < model.backbone.layers.size(); ++l) {
    vel_weight_[l] = momentum_ * vel_weight_[l] + grads.weight[l];
    vel_bias_[l] = momentum_ * vel_bias_[l] + grads.bias[l];
    model.backbone.layers[l].weight -= lr_ * vel_weight_[l];
    model.backbone.layers[l].bias -= lr_ * vel_bias_[l];
  }
  if (!freeze_head) {
    vel_head_weight_ = momentum_ * vel_head_weight_ + grads.head_weight;
    vel_head_bias_ = momentum_ * vel_head_bias_ + grads.head_bias;
    model.head.weight -= lr_ * vel_head_weight_;
    model.head.bias -= lr_ * vel_head_bias_;
  }
  ++model.revision;
}

PretrainResult pretrain_source(Model& model, const Dataset& data, const PretrainOptions& opts) {
  model.validate();
  const int n = data.rows();
  if (static_cast<int>(data.labels.size()) != n) {
    throw ConfigError("pretrain_source: dataset is unlabelled");
  }
  if (opts.epochs < 0) throw ConfigError("pretrain_source: negative epoch count");
  if (!(opts.holdout_fraction >= 0.0 && opts.holdout_fraction < 1.0)) {
    throw ConfigError("pretrain_source: holdout_fraction must lie in [0, 1)");
  }

  std::mt19937_64 rng(opts.seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const int holdout = static_cast<int>(std::llround(opts.holdout_fraction * n));
  std::vector<int> hold(order.begin(), order.begin() + holdout);
  std::vector<int> train(order.begin() + holdout, order.end());
  if (train.empty()) throw ConfigError("pretrain_source: no training rows after holdout split");

  const int k = model.num_classes();
  SgdOptimizer opt(model, opts.lr, opts.momentum);
  PretrainResult result;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < train.size();
         start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t stop =
          std::min(train.size(), start + static_cast<std::size_t>(opts.batch_size));
      const auto rows = static_cast<Eigen::Index>(stop - start);
      Matrix x(rows, data.inputs.cols());
      std::vector<int> y(static_cast<std::size_t>(rows));
      for (Eigen::Index r = 0; r < rows; ++r) {
        const int idx = train[start + static_cast<std::size_t>(r)];
        x.row(r) = data.inputs.row(idx);
        y[static_cast<std::size_t>(r)] = data.labels[static_cast<std::size_t>(idx)];
      }

      ForwardCache cache = forward(model, x);
      double loss = 0.0;
      Matrix grad_logits = cache.posteriors;
      for (Eigen::Index r = 0; r < rows; ++r) {
        const int label = y[static_cast<std::size_t>(r)];
        if (label < 0 || label >= k) {
          throw ConfigError("pretrain_source: label outside [0, K)");
        }
        loss -= std::log(std::max(cache.posteriors(r, label), 1e-300));
        grad_logits(r, label) -= 1.0;
      }
      loss /= static_cast<double>(rows);
      grad_logits /= static_cast<double>(rows);
      if (!std::isfinite(loss)) {
        throw TrainingError("pretrain_source: loss left the finite domain at epoch " +
                                std::to_string(epoch),
                            epoch);
      }
      epoch_loss += loss;
      ++batches;

      const Matrix zero_feature_grad =
          Matrix::Zero(cache.features.rows(), cache.features.cols());
      ParamGrads grads = backward(model, cache, zero_feature_grad, &grad_logits);
      opt.step(model, grads);
    }
    result.final_train_loss = batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0;
    result.epochs_run = epoch + 1;
  }

  if (!hold.empty()) {
    Matrix hx(static_cast<Eigen::Index>(hold.size()), data.inputs.cols());
    for (std::size_t r = 0; r < hold.size(); ++r) hx.row(static_cast<Eigen::Index>(r)) =
        data.inputs.row(hold[r]);
    const ForwardCache cache = forward(model, hx);
    long correct = 0;
    for (std::size_t r = 0; r < hold.size(); ++r) {
      const Vector row = cache.posteriors.row(static_cast<Eigen::Index>(r)).transpose();
      if (argmax_lowest(row) == data.labels[static_cast<std::size_t>(hold[r])]) ++correct;
    }
    result.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(hold.size());
  }
  return result;
}

Model make_model(int input_dim, const std::vector<int>& hidden_dims, int feature_dim,
                 int num_classes, std::uint64_t seed) {
  if (input_dim <= 0 || feature_dim <= 0 || num_classes <= 1) {
    throw ConfigError("make_model: dimensions must be positive (and K >= 2)");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto init = [&](int out, int in) {
    Matrix w(out, in);
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) w(i, j) = scale * normal(rng);
    return w;
  };

  Model model;
  int prev = input_dim;
  for (int h : hidden_dims) {
    model.backbone.layers.push_back({init(h, prev), Vector::Zero(h), Activation::relu});
    prev = h;
  }
  // The embedding layer is linear: rectifying it would confine features to
  // the nonnegative cone, which starves some classes (dead units collapse a
  // whole class mean to ~0) and puts classifier weight directions — which mix
  // signs — outside the reachable set, breaking weight-derived anchors.
  model.backbone.layers.push_back({init(feature_dim, prev), Vector::Zero(feature_dim),
                                   Activation::identity});
  model.head.weight = init(num_classes, feature_dim);
  model.head.bias = Vector::Zero(num_classes);
  model.validate();
  return model;
}

namespace {

constexpr char kModelMagic[4] = {'A', 'S', 'C', 'K'};
constexpr std::uint32_t kModelVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_matrix(std::ofstream& out, const Matrix& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}
void write_vector(std::ofstream& out, const Vector& v) {
  write_u64(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double x = v[i];
    out.write(reinterpret_cast<const char*>(&x), sizeof(x));
  }
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw IoError("truncated file: " + path);
  }
  return v;
}
std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw IoError("truncated file: " + path);
  }
  return v;
}
Matrix read_matrix(std::ifstream& in, const std::string& path) {
  const auto rows = static_cast<Eigen::Index>(read_u64(in, path));
  const auto cols = static_cast<Eigen::Index>(read_u64(in, path));
  if (rows < 0 || cols < 0 || rows > (1 << 24) || cols > (1 << 24)) {
    throw IoError("implausible tensor shape in " + path);
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      double v = 0.0;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw IoError("truncated file: " + path);
      }
      m(i, j) = v;
    }
  }
  return m;
}
Vector read_vector(std::ifstream& in, const std::string& path) {
  const auto n = static_cast<Eigen::Index>(read_u64(in, path));
  if (n < 0 || n > (1 << 24)) throw IoError("implausible vector length in " + path);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double x = 0.0;
    if (!in.read(reinterpret_cast<char*>(&x), sizeof(x))) {
      throw IoError("truncated file: " + path);
    }
    v[i] = x;
  }
  return v;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kModelMagic, sizeof(kModelMagic));
  write_u32(out, kModelVersion);
  write_u32(out, static_cast<std::uint32_t>(model.backbone.layers.size()));
  for (const auto& layer : model.backbone.layers) {
    write_u32(out, static_cast<std::uint32_t>(layer.activation));
    write_matrix(out, layer.weight);
    write_vector(out, layer.bias);
  }
  write_matrix(out, model.head.weight);
  write_vector(out, model.head.bias);
  if (!out) throw IoError("write failed: " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4] = {};
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw IoError("not a model checkpoint: " + path);
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kModelVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  const std::uint32_t layers = read_u32(in, path);
  if (layers == 0 || layers > 64) throw IoError("implausible layer count in " + path);
  Model model;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::uint32_t act = read_u32(in, path);
    if (act > static_cast<std::uint32_t>(Activation::identity)) {
      throw IoError("unknown activation tag in " + path);
    }
    DenseLayer layer;
    layer.activation = static_cast<Activation>(act);
    layer.weight = read_matrix(in, path);
    layer.bias = read_vector(in, path);
    model.backbone.layers.push_back(std::move(layer));
  }
  model.head.weight = read_matrix(in, path);
  model.head.bias = read_vector(in, path);
  model.validate();
  return model;
}

}  // namespace anchorstream
