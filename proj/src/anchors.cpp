#include "anchorstream/anchors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace anchorstream {

void SourceAnchors::validate() const {
  const int k = num_classes();
  if (k < 2) throw ConfigError("SourceAnchors: need at least two classes");
  const int d = dim();
  for (int c = 0; c < k; ++c) {
    const auto& g = class_anchors[static_cast<std::size_t>(c)];
    if (g.dim() != d || g.cov.rows() != d || g.cov.cols() != d) {
      throw ConfigError("SourceAnchors: class " + std::to_string(c) +
                        " has inconsistent dimensions");
    }
  }
  if (global.dim() != d || global.cov.rows() != d || global.cov.cols() != d) {
    throw ConfigError("SourceAnchors: global anchor dimension mismatch");
  }
  if (priors.size() != k || (priors.array() < 0.0).any() ||
      std::abs(priors.sum() - 1.0) > 1e-8) {
    throw ConfigError("SourceAnchors: priors must be a length-K simplex");
  }
}

Gaussian mixture_moments(const std::vector<Gaussian>& components, const Vector& weights) {
  if (components.empty()) throw ConfigError("mixture_moments: no components");
  if (static_cast<std::size_t>(weights.size()) != components.size()) {
    throw ConfigError("mixture_moments: weight count does not match components");
  }
  const int d = components.front().dim();
  Vector mean = Vector::Zero(d);
  for (std::size_t c = 0; c < components.size(); ++c) {
    mean += weights[static_cast<Eigen::Index>(c)] * components[c].mean;
  }
  Matrix cov = Matrix::Zero(d, d);
  for (std::size_t c = 0; c < components.size(); ++c) {
    const Vector dev = components[c].mean - mean;
    cov += weights[static_cast<Eigen::Index>(c)] * (components[c].cov + dev * dev.transpose());
  }
  cov = 0.5 * (cov + cov.transpose()).eval();
  return Gaussian{mean, cov};
}

SourceAnchors compute_source_anchors(const Model& model, const Dataset& source) {
  if (static_cast<int>(source.labels.size()) != source.rows()) {
    throw ConfigError("compute_source_anchors: source data must be labelled");
  }
  const int k = model.num_classes();
  const ForwardCache cache = forward(model, source.inputs);

  SourceAnchors anchors;
  anchors.priors = Vector::Constant(k, 1.0 / static_cast<double>(k));
  for (int c = 0; c < k; ++c) {
    std::vector<Eigen::Index> rows;
    for (int i = 0; i < source.rows(); ++i) {
      if (source.labels[static_cast<std::size_t>(i)] == c) rows.push_back(i);
    }
    if (rows.empty()) {
      throw AnchorError("compute_source_anchors: class " + std::to_string(c) +
                        " has no source samples");
    }
    Matrix feats(static_cast<Eigen::Index>(rows.size()), cache.features.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      feats.row(static_cast<Eigen::Index>(r)) = cache.features.row(rows[r]);
    }
    auto [mean, cov] = batch_mle(feats);
    anchors.class_anchors.push_back(Gaussian{std::move(mean), std::move(cov)});
  }
  auto [gmean, gcov] = batch_mle(cache.features);
  anchors.global = Gaussian{std::move(gmean), std::move(gcov)};
  anchors.validate();
  return anchors;
}

SourceAnchors classifier_prototype_anchors(const LinearHead& head, const ClusterBank& bank,
                                           double cov_scale) {
  const int k = head.num_classes();
  const int d = static_cast<int>(head.weight.cols());
  if (bank.num_classes() != k || bank.dim() != d) {
    throw ConfigError("classifier_prototype_anchors: bank shape does not match head");
  }
  if (!(cov_scale > 0.0)) {
    throw ConfigError("classifier_prototype_anchors: cov_scale must be positive");
  }

  SourceAnchors anchors;
  anchors.priors = Vector::Constant(k, 1.0 / static_cast<double>(k));
  const Matrix iso = cov_scale * Matrix::Identity(d, d);
  for (int c = 0; c < k; ++c) {
    const Vector w = head.weight.row(c).transpose();
    const double w_norm = w.norm();
    if (w_norm == 0.0) {
      throw AnchorError("classifier_prototype_anchors: head row " + std::to_string(c) +
                        " has zero norm");
    }
    const double target_norm = bank.clusters[static_cast<std::size_t>(c)].mean.norm();
    const double scale = (target_norm > 0.0 ? target_norm : 1.0) / w_norm;
    anchors.class_anchors.push_back(Gaussian{scale * w, iso});
  }
  anchors.global = mixture_moments(anchors.class_anchors, anchors.priors);
  anchors.validate();
  return anchors;
}

ClusterBank ClusterBank::init_from(const SourceAnchors& anchors, std::int64_t clip_global,
                                   std::int64_t clip_cluster) {
  anchors.validate();
  ClusterBank bank;
  bank.priors = anchors.priors;
  for (const auto& g : anchors.class_anchors) {
    RunningGaussian rg;
    rg.mean = g.mean;
    rg.cov = g.cov;
    rg.count = 0.0;
    rg.clip = clip_cluster;
    bank.clusters.push_back(std::move(rg));
  }
  bank.global.mean = anchors.global.mean;
  bank.global.cov = anchors.global.cov;
  bank.global.count = 0.0;
  bank.global.clip = clip_global;
  return bank;
}

namespace {

constexpr char kAnchorMagic[4] = {'A', 'S', 'A', 'N'};
constexpr std::uint32_t kAnchorVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_doubles(std::ofstream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}
void write_gaussian(std::ofstream& out, const Gaussian& g) {
  write_doubles(out, g.mean.data(), static_cast<std::size_t>(g.mean.size()));
  // column-major is Eigen's native layout; symmetric payloads make the
  // distinction moot for covariances, but keep it documented.
  write_doubles(out, g.cov.data(), static_cast<std::size_t>(g.cov.size()));
}
std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw IoError("truncated file: " + path);
  return v;
}
void read_doubles(std::ifstream& in, double* data, std::size_t n, const std::string& path) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw IoError("truncated file: " + path);
  }
}
Gaussian read_gaussian(std::ifstream& in, int d, const std::string& path) {
  Gaussian g;
  g.mean = Vector(d);
  g.cov = Matrix(d, d);
  read_doubles(in, g.mean.data(), static_cast<std::size_t>(d), path);
  read_doubles(in, g.cov.data(), static_cast<std::size_t>(d) * static_cast<std::size_t>(d), path);
  return g;
}

}  // namespace

void save_anchors(const SourceAnchors& anchors, const std::string& path) {
  anchors.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kAnchorMagic, sizeof(kAnchorMagic));
  write_u32(out, kAnchorVersion);
  write_u32(out, static_cast<std::uint32_t>(anchors.num_classes()));
  write_u32(out, static_cast<std::uint32_t>(anchors.dim()));
  write_doubles(out, anchors.priors.data(), static_cast<std::size_t>(anchors.priors.size()));
  for (const auto& g : anchors.class_anchors) write_gaussian(out, g);
  write_gaussian(out, anchors.global);
  if (!out) throw IoError("write failed: " + path);
}

SourceAnchors load_anchors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4] = {};
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kAnchorMagic, 4) != 0) {
    throw IoError("not an anchor file: " + path);
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kAnchorVersion) {
    throw IoError("unsupported anchor file version " + std::to_string(version) + " in " + path);
  }
  const int k = static_cast<int>(read_u32(in, path));
  const int d = static_cast<int>(read_u32(in, path));
  if (k < 2 || k > (1 << 20) || d < 1 || d > (1 << 20)) {
    throw IoError("implausible anchor shape in " + path);
  }
  SourceAnchors anchors;
  anchors.priors = Vector(k);
  read_doubles(in, anchors.priors.data(), static_cast<std::size_t>(k), path);
  for (int c = 0; c < k; ++c) anchors.class_anchors.push_back(read_gaussian(in, d, path));
  anchors.global = read_gaussian(in, d, path);
  anchors.validate();
  return anchors;
}

}  // namespace anchorstream
