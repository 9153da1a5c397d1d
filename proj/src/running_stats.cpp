#include "anchorstream/running_stats.hpp"

#include <cmath>
#include <string>

namespace anchorstream {

namespace {

// Kahan-compensated elementwise accumulation. The batch sums feed a
// recurrence whose permutation invariance is tested at 1e-12, which plain
// left-to-right summation does not reliably deliver.
void kahan_add(Vector& sum, Vector& comp, const Vector& term) {
  const Vector y = term - comp;
  const Vector t = sum + y;
  comp = (t - sum) - y;
  sum = t;
}

void kahan_add(Matrix& sum, Matrix& comp, const Matrix& term) {
  const Matrix y = term - comp;
  const Matrix t = sum + y;
  comp = (t - sum) - y;
  sum = t;
}

}  // namespace

double clip_coefficient(double count, std::int64_t clip) {
  if (!(count > 0.0)) {
    throw std::logic_error("clip_coefficient: count must be positive, got " +
                           std::to_string(count));
  }
  if (clip != kUnboundedClip && count >= static_cast<double>(clip)) {
    return 1.0 / static_cast<double>(clip);
  }
  return 1.0 / count;
}

RunningGaussian RunningGaussian::zero(int dim, std::int64_t clip) {
  if (dim <= 0) throw ConfigError("RunningGaussian: dimension must be positive");
  RunningGaussian g;
  g.mean = Vector::Zero(dim);
  g.cov = Matrix::Zero(dim, dim);
  g.count = 0.0;
  g.clip = clip;
  return g;
}

void FilteredBatch::validate(int num_classes) const {
  const auto n = static_cast<std::size_t>(features.rows());
  if (pseudo_labels.size() != n || pass_mask.size() != n) {
    throw ConfigError("FilteredBatch: features/pseudo_labels/pass_mask row counts differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (pseudo_labels[i] < 0 || pseudo_labels[i] >= num_classes) {
      throw ConfigError("FilteredBatch: pseudo-label " + std::to_string(pseudo_labels[i]) +
                        " at row " + std::to_string(i) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
}

BatchUpdate update_weighted(RunningGaussian& stats, const Eigen::Ref<const Matrix>& batch,
                            const Eigen::Ref<const Vector>& weights) {
  const int d = stats.dim();
  const auto n = batch.rows();
  if (batch.cols() != d) {
    throw ConfigError("update: batch has " + std::to_string(batch.cols()) +
                      " columns, state has dimension " + std::to_string(d));
  }
  if (weights.size() != n) {
    throw ConfigError("update: weight vector length does not match batch rows");
  }
  if ((weights.array() < 0.0).any()) {
    throw ConfigError("update: negative sample weight");
  }

  const double weight_sum = weights.sum();
  if (weight_sum == 0.0) {
    return BatchUpdate{Vector::Zero(d), 0.0, 0.0};
  }

  const double new_count = stats.count + weight_sum;
  const double a = clip_coefficient(new_count, stats.clip);

  Vector dev_sum = Vector::Zero(d), dev_comp = Vector::Zero(d);
  Matrix outer_sum = Matrix::Zero(d, d), outer_comp = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    const Vector dev = batch.row(i).transpose() - stats.mean;
    kahan_add(dev_sum, dev_comp, w * dev);
    kahan_add(outer_sum, outer_comp, (w * dev) * dev.transpose());
  }

  const Vector delta = a * dev_sum;
  stats.mean += delta;
  stats.cov += a * outer_sum - (a * weight_sum) * stats.cov - delta * delta.transpose();
  stats.cov = 0.5 * (stats.cov + stats.cov.transpose()).eval();
  stats.count = new_count;
  return BatchUpdate{delta, a, weight_sum};
}

BatchUpdate update_global(RunningGaussian& stats, const Eigen::Ref<const Matrix>& batch) {
  if (batch.rows() == 0) throw ConfigError("update_global: empty batch");
  return update_weighted(stats, batch, Vector::Ones(batch.rows()));
}

BatchUpdate update_cluster(RunningGaussian& stats, const FilteredBatch& batch, int k) {
  Vector w = Vector::Zero(batch.rows());
  for (int i = 0; i < batch.rows(); ++i) {
    if (batch.pass_mask[static_cast<std::size_t>(i)] &&
        batch.pseudo_labels[static_cast<std::size_t>(i)] == k) {
      w[i] = 1.0;
    }
  }
  return update_weighted(stats, batch.features, w);
}

std::pair<Vector, Matrix> batch_mle(const Eigen::Ref<const Matrix>& features) {
  const auto n = features.rows();
  if (n < 1) throw ConfigError("batch_mle: need at least one sample");
  const Vector mean = features.colwise().mean().transpose();
  const Matrix centered = features.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n);
  cov = 0.5 * (cov + cov.transpose()).eval();
  return {mean, cov};
}

}  // namespace anchorstream
