#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "anchorstream/errors.hpp"
#include "anchorstream/running_stats.hpp"

namespace anchorstream {

// Confidence-gate knobs for pseudo-label selection. tau_tc bounds how much
// the current argmax probability may have *dropped* against its history
// (slightly negative by default: a small dip is tolerated, a slump is not);
// tau_pp is the floor the smoothed probability must clear.
struct FilterThresholds {
  double xi = 0.9;         // EMA mixing weight for the newest posterior
  double tau_tc = -0.001;  // temporal-consistency margin
  double tau_pp = 0.7;     // posterior-probability floor

  // Throws ConfigError when xi is outside (0, 1] or tau_pp outside (0, 1).
  void validate() const;
};

// Index of the row-wise largest entry; ties resolve to the lowest index.
int argmax_lowest(const Eigen::Ref<const Vector>& v);

// Exponentially smoothed posterior history, keyed by a stable per-sample id.
// A sample's first observation seeds the EMA with the posterior itself.
class PosteriorStore {
 public:
  struct Entry {
    Vector ema;
    std::int64_t last_update_step = -1;
  };

  // Folds `posterior` into the sample's EMA and returns the *pre-update*
  // smoothed posterior (for a first observation this equals `posterior`,
  // making the temporal-consistency difference exactly zero). Validates that
  // the posterior lies on the simplex: entries in [0, 1], sum within 1e-4
  // of 1 — otherwise throws ValidationError.
  Vector update(std::int64_t sample_id, const Eigen::Ref<const Vector>& posterior, double xi,
                std::int64_t step);

  const Entry* find(std::int64_t sample_id) const;
  void evict(const std::vector<std::int64_t>& sample_ids);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::unordered_map<std::int64_t, Entry> entries_;
};

// Temporal-consistency gate: the current posterior of the *current* argmax
// class, minus its previous smoothed value, must strictly exceed tau_tc.
bool tc_filter(const Eigen::Ref<const Vector>& posterior,
               const Eigen::Ref<const Vector>& ema_previous, double tau_tc);

// Posterior-probability gate: the *updated* smoothed posterior at class
// k_hat must strictly exceed tau_pp.
bool pp_filter(const Eigen::Ref<const Vector>& ema_current, int k_hat, double tau_pp);

// Scores one minibatch: updates the EMA store for every row (all rows keep
// their history current regardless of gate outcomes), assigns argmax
// pseudo-labels, and sets pass_mask = tc AND pp per row.
FilteredBatch make_filtered_batch(const Eigen::Ref<const Matrix>& features,
                                  const Eigen::Ref<const Matrix>& posteriors,
                                  const std::vector<std::int64_t>& sample_ids,
                                  PosteriorStore& store, const FilterThresholds& thresholds,
                                  std::int64_t step = 0);

}  // namespace anchorstream
