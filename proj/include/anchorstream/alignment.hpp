#pragma once

#include <vector>

#include "anchorstream/anchors.hpp"
#include "anchorstream/gaussian.hpp"
#include "anchorstream/running_stats.hpp"

namespace anchorstream {

// Global-alignment objective: Gaussian KL or a plain squared-distance
// baseline (||mu_t - mu_s||^2 + ||cov_t - cov_s||_F^2) for ablation.
enum class GaForm { kld, l2 };

struct AlignmentOptions {
  double lambda = 1.0;  // weight of the global term
  double ridge = kDefaultRidge;
  KlForm kl_form = KlForm::standard;
  GaForm ga_form = GaForm::kld;
};

// One loss evaluation, decomposed. skipped_classes lists clusters that have
// never received a sample (count still zero) and therefore contribute no
// term; per_class_kl is zero at those indices.
struct LossBreakdown {
  double l_ac = 0.0;
  double l_ga = 0.0;
  double total = 0.0;
  Vector per_class_kl;
  std::vector<int> skipped_classes;
};

// Sum over `active` classes of KL(anchor_k || target_k). Returns the sum and
// the per-class vector (zeros outside `active`).
std::pair<double, Vector> anchored_clustering_loss(const std::vector<Gaussian>& anchors,
                                                   const std::vector<Gaussian>& targets,
                                                   const std::vector<int>& active,
                                                   double ridge = kDefaultRidge,
                                                   KlForm form = KlForm::standard);

// KL(source_global || target_global).
double global_alignment_loss(const Gaussian& source_global, const Gaussian& target_global,
                             double ridge = kDefaultRidge, KlForm form = KlForm::standard);

// Squared-distance variant of the global term.
double l2_alignment_loss(const Gaussian& source_global, const Gaussian& target_global);

// The full per-minibatch computation: applies the weighted statistics
// recurrence to a copy of the bank (global uses every row with weight 1,
// cluster k uses column k of cluster_weights), evaluates the combined loss
// on the updated moments, and backpropagates it to the minibatch features.
//
// Gradients treat the pre-batch statistics and the weights as constants
// (truncated backpropagation through the recurrence: only the current
// batch's contribution is differentiated). Column weights come from hard
// pseudo-label masks or soft posteriors; either way they carry no gradient.
struct MinibatchAlignment {
  LossBreakdown loss;
  Matrix feature_grad;  // N x d, d(total)/d(features)
  ClusterBank updated;  // bank after folding this minibatch in
};

MinibatchAlignment align_minibatch(const ClusterBank& before, const SourceAnchors& anchors,
                                   const Eigen::Ref<const Matrix>& features,
                                   const Eigen::Ref<const Matrix>& cluster_weights,
                                   const AlignmentOptions& opts);

// Hard-assignment convenience wrapper: cluster weights are the pass_mask
// one-hot rows of `batch`. Returns only the feature gradient.
Matrix loss_gradient_wrt_features(const FilteredBatch& batch, const ClusterBank& before,
                                  const SourceAnchors& anchors, double lambda,
                                  const AlignmentOptions& opts);

// Column-weight builders for the three update strategies.
Matrix hard_assignment_weights(const FilteredBatch& batch, int num_classes);
Matrix no_filter_weights(const FilteredBatch& batch, int num_classes);  // ignores pass_mask
// Soft assignment: every row contributes its full posterior row.
Matrix soft_assignment_weights(const Eigen::Ref<const Matrix>& posteriors);

}  // namespace anchorstream
