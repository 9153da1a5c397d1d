#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anchorstream/mlp.hpp"

namespace anchorstream {

// Optional label-preserving nonlinearity applied after sampling.
enum class Warp { none, tanh_warp };

// One class-conditional Gaussian component.
struct ClassGen {
  Vector mean;
  double cov_scale = 0.3;  // isotropic standard deviation
  Warp warp = Warp::none;
};

// A full synthetic domain: K components, per-class sample counts, one seed.
// Generated rows are shuffled (seeded) so classes interleave in stream
// order.
struct DomainSpec {
  int input_dim = 32;
  std::vector<ClassGen> classes;
  std::vector<int> counts;
  std::uint64_t seed = 0;

  int num_classes() const { return static_cast<int>(classes.size()); }
  // Throws ConfigError on ragged shapes, duplicate class means, or
  // non-positive counts.
  void validate() const;
};

// Canonical desk-scale domain: K seeded unit-norm mean directions scaled to
// `mean_radius`, shared isotropic spread.
DomainSpec default_domain(int num_classes, int input_dim, int count_per_class,
                          std::uint64_t seed, double mean_radius = 1.0,
                          double cov_scale = 0.3);

Dataset generate(const DomainSpec& spec);

enum class CorruptionFamily {
  gaussian_noise,  // additive N(0, (0.1 s)^2) per entry
  rotation_mix,    // orthogonal mix of seeded dimension pairs, angle s * 9 deg
  channel_scale,   // per-dimension log-uniform gain, exponent range 0.15 s
  dim_occlusion,   // zero out ceil(0.1 s jd) dimensions, nested across s
  impulse          // entries replaced by +/-3 with probability 0.02 s
};

struct CorruptionSpec {
  CorruptionFamily family = CorruptionFamily::rotation_mix;
  int severity = 3;  // 0..5; 0 is the identity for every family
  std::uint64_t seed = 0;
};

// Applies the corruption to every row; labels pass through untouched.
// Severity schedules are monotone and nested where the family allows it
// (same rotation planes, same occluded-dimension order, same gain
// directions across severities).
Dataset corrupt(const Dataset& clean, const CorruptionSpec& spec);

// The orthogonal matrix rotation_mix applies, exposed for direct inspection.
Matrix rotation_mix_matrix(int dim, int severity, std::uint64_t seed);

CorruptionFamily corruption_family_from_string(const std::string& name);
std::string to_string(CorruptionFamily family);

// Dataset files. CSV: header f0..f{d-1}[,label], values printed with
// round-trip precision. Binary: shape-prefixed little-endian float64 rows
// (row-major) plus int32 labels. load_dataset sniffs the format from the
// magic bytes.
void save_dataset_csv(const Dataset& data, const std::string& path);
void save_dataset_binary(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace anchorstream
