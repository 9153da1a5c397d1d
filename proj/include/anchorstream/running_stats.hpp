#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

#include "anchorstream/errors.hpp"

namespace anchorstream {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// clip == kUnboundedClip disables the count clip entirely.
inline constexpr std::int64_t kUnboundedClip = 0;

// Inverse-count step size with an optional ceiling on the effective count:
// 1/count while count < clip, then exactly 1/clip forever after. Turns the
// running average into an exponential moving average once the clip engages.
// count must be > 0.
double clip_coefficient(double count, std::int64_t clip);

// First two moments of a feature stream, updated incrementally. `count` is
// the effective sample count N (real-valued: soft assignments contribute
// fractional mass). With an unbounded clip the state after any sequence of
// updates equals the population MLE over everything seen so far.
struct RunningGaussian {
  Vector mean;
  Matrix cov;
  double count = 0.0;
  std::int64_t clip = kUnboundedClip;

  static RunningGaussian zero(int dim, std::int64_t clip = kUnboundedClip);
  int dim() const { return static_cast<int>(mean.size()); }
};

// A scored minibatch after pseudo-label filtering: row i carries its argmax
// pseudo-label and whether it survived both confidence filters.
struct FilteredBatch {
  Matrix features;                 // N x d
  std::vector<int> pseudo_labels;  // per row, in [0, K)
  std::vector<char> pass_mask;     // per row, 1 = usable for cluster updates

  int rows() const { return static_cast<int>(features.rows()); }
  // Throws ConfigError when the three members disagree on N or a label
  // falls outside [0, num_classes).
  void validate(int num_classes) const;
};

// What one incremental update did: the mean shift delta, the step
// coefficient a, and the total weight that entered. Callers that need the
// pre-update mean can recover it as mean_after - delta.
struct BatchUpdate {
  Vector delta;
  double coeff = 0.0;
  double weight_sum = 0.0;
};

// Fold a full minibatch (every row, weight 1) into the running moments.
// The batch must be nonempty and match the state dimension.
BatchUpdate update_global(RunningGaussian& stats, const Eigen::Ref<const Matrix>& batch);

// Weighted generalization: row i enters with mass weights[i] >= 0. Rows with
// zero weight are no-ops; an all-zero weight vector leaves the state
// untouched and returns coeff 0. Hard-masked and soft-assigned updates are
// both thin wrappers over this.
BatchUpdate update_weighted(RunningGaussian& stats, const Eigen::Ref<const Matrix>& batch,
                            const Eigen::Ref<const Vector>& weights);

// Fold only the rows of `batch` whose pass_mask is set and whose
// pseudo-label equals k, each with weight 1.
BatchUpdate update_cluster(RunningGaussian& stats, const FilteredBatch& batch, int k);

// One-shot population MLE (divisor N) over the rows of `features`; the
// reference that the incremental path must reproduce. Requires N >= 1.
std::pair<Vector, Matrix> batch_mle(const Eigen::Ref<const Matrix>& features);

}  // namespace anchorstream
