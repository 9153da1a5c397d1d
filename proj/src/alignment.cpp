#include "anchorstream/alignment.hpp"

#include <string>

namespace anchorstream {

std::pair<double, Vector> anchored_clustering_loss(const std::vector<Gaussian>& anchors,
                                                   const std::vector<Gaussian>& targets,
                                                   const std::vector<int>& active, double ridge,
                                                   KlForm form) {
  if (anchors.size() != targets.size()) {
    throw ConfigError("anchored_clustering_loss: anchor/target class counts differ");
  }
  const int k = static_cast<int>(anchors.size());
  Vector per_class = Vector::Zero(k);
  double total = 0.0;
  for (int c : active) {
    if (c < 0 || c >= k) {
      throw ConfigError("anchored_clustering_loss: active class " + std::to_string(c) +
                        " out of range");
    }
    per_class[c] = kl_gaussian(anchors[static_cast<std::size_t>(c)],
                               targets[static_cast<std::size_t>(c)], ridge, form);
    total += per_class[c];
  }
  return {total, per_class};
}

double global_alignment_loss(const Gaussian& source_global, const Gaussian& target_global,
                             double ridge, KlForm form) {
  return kl_gaussian(source_global, target_global, ridge, form);
}

double l2_alignment_loss(const Gaussian& source_global, const Gaussian& target_global) {
  if (source_global.dim() != target_global.dim()) {
    throw ConfigError("l2_alignment_loss: dimensions differ");
  }
  return (target_global.mean - source_global.mean).squaredNorm() +
         (target_global.cov - source_global.cov).squaredNorm();
}

Matrix hard_assignment_weights(const FilteredBatch& batch, int num_classes) {
  batch.validate(num_classes);
  Matrix w = Matrix::Zero(batch.rows(), num_classes);
  for (int i = 0; i < batch.rows(); ++i) {
    if (batch.pass_mask[static_cast<std::size_t>(i)]) {
      w(i, batch.pseudo_labels[static_cast<std::size_t>(i)]) = 1.0;
    }
  }
  return w;
}

Matrix no_filter_weights(const FilteredBatch& batch, int num_classes) {
  batch.validate(num_classes);
  Matrix w = Matrix::Zero(batch.rows(), num_classes);
  for (int i = 0; i < batch.rows(); ++i) {
    w(i, batch.pseudo_labels[static_cast<std::size_t>(i)]) = 1.0;
  }
  return w;
}

Matrix soft_assignment_weights(const Eigen::Ref<const Matrix>& posteriors) {
  return posteriors;
}

namespace {

// Gradient of one KL (or l2) term pushed through the weighted recurrence
// onto the minibatch rows: d(term)/d(f_i) = a * w_i * (g_mu + 2 G (v_i -
// delta)) with v_i = f_i - mean_before. Vectorized over rows; `scale`
// multiplies the whole contribution (lambda for the global term).
void accumulate_feature_grad(Matrix& grad, const Eigen::Ref<const Matrix>& features,
                             const Vector& mean_before, const BatchUpdate& update,
                             const Vector& g_mean, const Matrix& g_cov, const Vector& weights,
                             double scale) {
  if (update.coeff == 0.0 || scale == 0.0) return;
  const Vector base = g_mean - 2.0 * (g_cov * update.delta);
  const Matrix centered = features.rowwise() - mean_before.transpose();
  Matrix contrib = 2.0 * (centered * g_cov);
  contrib.rowwise() += base.transpose();
  grad.noalias() += (scale * update.coeff) * (weights.asDiagonal() * contrib);
}

}  // namespace

MinibatchAlignment align_minibatch(const ClusterBank& before, const SourceAnchors& anchors,
                                   const Eigen::Ref<const Matrix>& features,
                                   const Eigen::Ref<const Matrix>& cluster_weights,
                                   const AlignmentOptions& opts) {
  const int k = before.num_classes();
  const auto n = features.rows();
  if (anchors.num_classes() != k) {
    throw ConfigError("align_minibatch: bank and anchors disagree on class count");
  }
  if (cluster_weights.rows() != n || cluster_weights.cols() != k) {
    throw ConfigError("align_minibatch: cluster_weights must be rows x classes");
  }

  MinibatchAlignment out;
  out.updated = before;
  out.feature_grad = Matrix::Zero(n, features.cols());
  out.loss.per_class_kl = Vector::Zero(k);

  // Global pool first: every row, unit weight.
  const BatchUpdate global_update = update_global(out.updated.global, features);

  std::vector<BatchUpdate> cluster_updates;
  cluster_updates.reserve(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    cluster_updates.push_back(
        update_weighted(out.updated.clusters[static_cast<std::size_t>(c)], features,
                        cluster_weights.col(c)));
  }

  // Per-class anchored terms over clusters that have ever seen mass.
  for (int c = 0; c < k; ++c) {
    const auto& cluster = out.updated.clusters[static_cast<std::size_t>(c)];
    if (cluster.count <= 0.0) {
      out.loss.skipped_classes.push_back(c);
      continue;
    }
    const Gaussian target{cluster.mean, cluster.cov};
    const KlWithGrad term = kl_gaussian_with_grad(
        anchors.class_anchors[static_cast<std::size_t>(c)], target, opts.ridge, opts.kl_form);
    out.loss.per_class_kl[c] = term.value;
    out.loss.l_ac += term.value;
    const Vector mean_before =
        before.clusters[static_cast<std::size_t>(c)].mean;
    accumulate_feature_grad(out.feature_grad, features, mean_before,
                            cluster_updates[static_cast<std::size_t>(c)], term.wrt_mean,
                            term.wrt_cov, cluster_weights.col(c), 1.0);
  }

  // Global alignment term.
  const Gaussian target_global{out.updated.global.mean, out.updated.global.cov};
  Vector g_mean;
  Matrix g_cov;
  if (opts.ga_form == GaForm::kld) {
    const KlWithGrad term =
        kl_gaussian_with_grad(anchors.global, target_global, opts.ridge, opts.kl_form);
    out.loss.l_ga = term.value;
    g_mean = term.wrt_mean;
    g_cov = term.wrt_cov;
  } else {
    out.loss.l_ga = l2_alignment_loss(anchors.global, target_global);
    g_mean = 2.0 * (target_global.mean - anchors.global.mean);
    g_cov = 2.0 * (target_global.cov - anchors.global.cov);
  }
  accumulate_feature_grad(out.feature_grad, features, before.global.mean, global_update, g_mean,
                          g_cov, Vector::Ones(n), opts.lambda);

  out.loss.total = out.loss.l_ac + opts.lambda * out.loss.l_ga;
  return out;
}

Matrix loss_gradient_wrt_features(const FilteredBatch& batch, const ClusterBank& before,
                                  const SourceAnchors& anchors, double lambda,
                                  const AlignmentOptions& opts) {
  AlignmentOptions local = opts;
  local.lambda = lambda;
  const Matrix weights = hard_assignment_weights(batch, before.num_classes());
  return align_minibatch(before, anchors, batch.features, weights, local).feature_grad;
}

}  // namespace anchorstream
