#include "anchorstream/filtering.hpp"

#include <cmath>
#include <string>

namespace anchorstream {

void FilterThresholds::validate() const {
  if (!(xi > 0.0) || xi > 1.0) {
    throw ConfigError("FilterThresholds: xi must lie in (0, 1], got " + std::to_string(xi));
  }
  if (!(tau_pp > 0.0) || !(tau_pp < 1.0)) {
    throw ConfigError("FilterThresholds: tau_pp must lie in (0, 1), got " +
                      std::to_string(tau_pp));
  }
  if (!std::isfinite(tau_tc)) {
    throw ConfigError("FilterThresholds: tau_tc must be finite");
  }
}

int argmax_lowest(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) throw ConfigError("argmax_lowest: empty vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

namespace {

void check_simplex(const Eigen::Ref<const Vector>& posterior) {
  if ((posterior.array() < 0.0).any() || (posterior.array() > 1.0).any() ||
      std::abs(posterior.sum() - 1.0) > 1e-4) {
    throw ValidationError("posterior is not on the probability simplex (sum " +
                          std::to_string(posterior.sum()) + ")");
  }
}

}  // namespace

Vector PosteriorStore::update(std::int64_t sample_id, const Eigen::Ref<const Vector>& posterior,
                              double xi, std::int64_t step) {
  check_simplex(posterior);
  auto it = entries_.find(sample_id);
  if (it == entries_.end()) {
    entries_.emplace(sample_id, Entry{posterior, step});
    return posterior;
  }
  if (it->second.ema.size() != posterior.size()) {
    throw ConfigError("PosteriorStore: class count changed for sample " +
                      std::to_string(sample_id));
  }
  Vector previous = it->second.ema;
  it->second.ema = (1.0 - xi) * previous + xi * posterior;
  it->second.last_update_step = step;
  return previous;
}

const PosteriorStore::Entry* PosteriorStore::find(std::int64_t sample_id) const {
  auto it = entries_.find(sample_id);
  return it == entries_.end() ? nullptr : &it->second;
}

void PosteriorStore::evict(const std::vector<std::int64_t>& sample_ids) {
  for (std::int64_t id : sample_ids) entries_.erase(id);
}

bool tc_filter(const Eigen::Ref<const Vector>& posterior,
               const Eigen::Ref<const Vector>& ema_previous, double tau_tc) {
  if (posterior.size() != ema_previous.size()) {
    throw ConfigError("tc_filter: posterior and history have different class counts");
  }
  const int k_hat = argmax_lowest(posterior);
  return posterior[k_hat] - ema_previous[k_hat] > tau_tc;
}

bool pp_filter(const Eigen::Ref<const Vector>& ema_current, int k_hat, double tau_pp) {
  if (k_hat < 0 || k_hat >= static_cast<int>(ema_current.size())) {
    throw ConfigError("pp_filter: class index out of range");
  }
  return ema_current[k_hat] > tau_pp;
}

FilteredBatch make_filtered_batch(const Eigen::Ref<const Matrix>& features,
                                  const Eigen::Ref<const Matrix>& posteriors,
                                  const std::vector<std::int64_t>& sample_ids,
                                  PosteriorStore& store, const FilterThresholds& thresholds,
                                  std::int64_t step) {
  thresholds.validate();
  const auto n = features.rows();
  if (posteriors.rows() != n || static_cast<Eigen::Index>(sample_ids.size()) != n) {
    throw ConfigError("make_filtered_batch: features/posteriors/sample_ids row counts differ");
  }

  FilteredBatch out;
  out.features = features;
  out.pseudo_labels.resize(static_cast<std::size_t>(n));
  out.pass_mask.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector posterior = posteriors.row(i).transpose();
    const Vector previous = store.update(sample_ids[static_cast<std::size_t>(i)], posterior,
                                         thresholds.xi, step);
    const Vector& current = store.find(sample_ids[static_cast<std::size_t>(i)])->ema;
    const int k_hat = argmax_lowest(posterior);
    const bool tc = posterior[k_hat] - previous[k_hat] > thresholds.tau_tc;
    const bool pp = current[k_hat] > thresholds.tau_pp;
    out.pseudo_labels[static_cast<std::size_t>(i)] = k_hat;
    out.pass_mask[static_cast<std::size_t>(i)] = static_cast<char>(tc && pp);
  }
  return out;
}

}  // namespace anchorstream
