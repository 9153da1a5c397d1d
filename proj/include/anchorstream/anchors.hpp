#pragma once

#include <string>
#include <vector>

#include "anchorstream/gaussian.hpp"
#include "anchorstream/mlp.hpp"

namespace anchorstream {

// Frozen per-class and global source feature statistics — the fixed targets
// the streaming estimates are pulled towards.
struct SourceAnchors {
  std::vector<Gaussian> class_anchors;  // one per class
  Vector priors;                        // alpha, uniform 1/K
  Gaussian global;

  int num_classes() const { return static_cast<int>(class_anchors.size()); }
  int dim() const { return class_anchors.empty() ? 0 : class_anchors.front().dim(); }
  // Throws ConfigError on ragged dimensions or a prior vector that is not a
  // length-K simplex.
  void validate() const;
};

// Mean and covariance of a Gaussian mixture with the given component
// weights: mu = sum_k w_k mu_k; cov pools within- and between-component
// spread.
Gaussian mixture_moments(const std::vector<Gaussian>& components, const Vector& weights);

// Runs the backbone over labelled source data and freezes per-class MLE
// statistics plus the global pool. Throws AnchorError naming any class with
// zero samples.
SourceAnchors compute_source_anchors(const Model& model, const Dataset& source);

// Source-free fallback: class k's anchor mean is the classifier weight row
// w_k rescaled to the norm of the current target cluster mean (unit norm
// when that mean is still zero), with an isotropic covariance cov_scale * I.
// Throws AnchorError if any head row has zero norm.
struct ClusterBank;  // defined below
SourceAnchors classifier_prototype_anchors(const LinearHead& head, const ClusterBank& bank,
                                           double cov_scale);

// The live streaming side: one clipped running Gaussian per class plus the
// clipped global pool. Initialized from the anchors with count 0 — the
// first qualifying batch overwrites the seeded moments exactly (the
// recurrence cancels a zero-count prior), so seeding only shapes the loss
// before any evidence arrives, never the statistics after.
struct ClusterBank {
  std::vector<RunningGaussian> clusters;
  Vector priors;  // beta, uniform 1/K
  RunningGaussian global;

  int num_classes() const { return static_cast<int>(clusters.size()); }
  int dim() const { return clusters.empty() ? 0 : clusters.front().dim(); }

  static ClusterBank init_from(const SourceAnchors& anchors, std::int64_t clip_global,
                               std::int64_t clip_cluster);
};

// Binary anchor files (shape-prefixed little-endian float64); round-trip
// bit-exactly.
void save_anchors(const SourceAnchors& anchors, const std::string& path);
SourceAnchors load_anchors(const std::string& path);

}  // namespace anchorstream
