#include "anchorstream/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace anchorstream {

void DomainSpec::validate() const {
  if (input_dim <= 0) throw ConfigError("DomainSpec: input_dim must be positive");
  if (classes.size() < 2) throw ConfigError("DomainSpec: need at least two classes");
  if (counts.size() != classes.size()) {
    throw ConfigError("DomainSpec: counts/classes length mismatch");
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c].mean.size() != input_dim) {
      throw ConfigError("DomainSpec: class " + std::to_string(c) + " mean has wrong dimension");
    }
    if (!(classes[c].cov_scale > 0.0)) {
      throw ConfigError("DomainSpec: class " + std::to_string(c) + " cov_scale must be positive");
    }
    if (counts[c] <= 0) {
      throw ConfigError("DomainSpec: class " + std::to_string(c) + " count must be positive");
    }
    for (std::size_t other = 0; other < c; ++other) {
      if ((classes[c].mean - classes[other].mean).norm() == 0.0) {
        throw ConfigError("DomainSpec: classes " + std::to_string(other) + " and " +
                          std::to_string(c) + " share a mean");
      }
    }
  }
}

DomainSpec default_domain(int num_classes, int input_dim, int count_per_class,
                          std::uint64_t seed, double mean_radius, double cov_scale) {
  if (num_classes < 2) throw ConfigError("default_domain: need at least two classes");
  DomainSpec spec;
  spec.input_dim = input_dim;
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < num_classes; ++c) {
    Vector mean(input_dim);
    double norm = 0.0;
    // rejection-free: a zero draw has probability zero, but guard anyway
    do {
      for (int j = 0; j < input_dim; ++j) mean[j] = normal(rng);
      norm = mean.norm();
    } while (norm == 0.0);
    spec.classes.push_back({(mean_radius / norm) * mean, cov_scale, Warp::none});
    spec.counts.push_back(count_per_class);
  }
  spec.validate();
  return spec;
}

Dataset generate(const DomainSpec& spec) {
  spec.validate();
  const int total = std::accumulate(spec.counts.begin(), spec.counts.end(), 0);
  Dataset data;
  data.inputs = Matrix(total, spec.input_dim);
  data.labels.resize(static_cast<std::size_t>(total));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const auto& cls = spec.classes[c];
    for (int i = 0; i < spec.counts[c]; ++i, ++row) {
      for (int j = 0; j < spec.input_dim; ++j) {
        data.inputs(row, j) = cls.mean[j] + cls.cov_scale * normal(rng);
      }
      if (cls.warp == Warp::tanh_warp) {
        // mild odd nonlinearity; keeps scale, bends the class manifolds
        data.inputs.row(row) =
            data.inputs.row(row) + 0.25 * data.inputs.row(row).array().tanh().matrix();
      }
      data.labels[static_cast<std::size_t>(row)] = static_cast<int>(c);
    }
  }

  // interleave classes in stream order
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset shuffled;
  shuffled.inputs = Matrix(total, spec.input_dim);
  shuffled.labels.resize(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    shuffled.inputs.row(i) = data.inputs.row(order[static_cast<std::size_t>(i)]);
    shuffled.labels[static_cast<std::size_t>(i)] =
        data.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  return shuffled;
}

namespace {

void check_severity(int severity) {
  if (severity < 0 || severity > 5) {
    throw ConfigError("corrupt: severity must lie in [0, 5], got " + std::to_string(severity));
  }
}

}  // namespace

Matrix rotation_mix_matrix(int dim, int severity, std::uint64_t seed) {
  check_severity(severity);
  if (dim <= 0) throw ConfigError("rotation_mix_matrix: dim must be positive");
  Matrix q = Matrix::Identity(dim, dim);
  if (severity == 0) return q;

  // Seeded pairing of dimensions; the same planes serve every severity so
  // schedules nest. Each pair gets a Givens rotation by severity * 9 deg.
  std::mt19937_64 rng(seed);
  std::vector<int> perm(static_cast<std::size_t>(dim));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  const double theta = static_cast<double>(severity) * (std::numbers::pi / 20.0);
  const double c = std::cos(theta), s = std::sin(theta);
  for (int p = 0; p + 1 < dim; p += 2) {
    const int i = perm[static_cast<std::size_t>(p)];
    const int j = perm[static_cast<std::size_t>(p + 1)];
    // apply the plane rotation to q from the left
    for (int col = 0; col < dim; ++col) {
      const double qi = q(i, col), qj = q(j, col);
      q(i, col) = c * qi - s * qj;
      q(j, col) = s * qi + c * qj;
    }
  }
  return q;
}

Dataset corrupt(const Dataset& clean, const CorruptionSpec& spec) {
  check_severity(spec.severity);
  Dataset out = clean;
  if (spec.severity == 0) return out;

  const auto n = clean.inputs.rows();
  const auto d = clean.inputs.cols();
  const double s = static_cast<double>(spec.severity);
  std::mt19937_64 rng(spec.seed);

  switch (spec.family) {
    case CorruptionFamily::gaussian_noise: {
      std::normal_distribution<double> normal(0.0, 1.0);
      const double sigma = 0.1 * s;
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) out.inputs(i, j) += sigma * normal(rng);
      break;
    }
    case CorruptionFamily::rotation_mix: {
      const Matrix q = rotation_mix_matrix(static_cast<int>(d), spec.severity, spec.seed);
      out.inputs = clean.inputs * q.transpose();
      break;
    }
    case CorruptionFamily::channel_scale: {
      // gain directions drawn once from the seed; severity only widens the
      // exponent, so a dimension boosted at s=1 stays boosted at s=5
      std::uniform_real_distribution<double> uniform(-1.0, 1.0);
      Vector gains(d);
      for (Eigen::Index j = 0; j < d; ++j) gains[j] = std::exp(0.15 * s * uniform(rng));
      out.inputs = clean.inputs * gains.asDiagonal();
      break;
    }
    case CorruptionFamily::dim_occlusion: {
      std::vector<int> perm(static_cast<std::size_t>(d));
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const auto occluded = static_cast<std::size_t>(
          std::ceil(0.1 * s * static_cast<double>(d)));
      for (std::size_t p = 0; p < occluded && p < perm.size(); ++p) {
        out.inputs.col(perm[p]).setZero();
      }
      break;
    }
    case CorruptionFamily::impulse: {
      std::uniform_real_distribution<double> uniform(0.0, 1.0);
      std::bernoulli_distribution sign(0.5);
      const double rate = 0.02 * s;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
          if (uniform(rng) < rate) out.inputs(i, j) = sign(rng) ? 3.0 : -3.0;
        }
      }
      break;
    }
  }
  return out;
}

CorruptionFamily corruption_family_from_string(const std::string& name) {
  if (name == "gaussian_noise") return CorruptionFamily::gaussian_noise;
  if (name == "rotation_mix") return CorruptionFamily::rotation_mix;
  if (name == "channel_scale") return CorruptionFamily::channel_scale;
  if (name == "dim_occlusion") return CorruptionFamily::dim_occlusion;
  if (name == "impulse") return CorruptionFamily::impulse;
  throw ConfigError("unknown corruption family: " + name);
}

std::string to_string(CorruptionFamily family) {
  switch (family) {
    case CorruptionFamily::gaussian_noise: return "gaussian_noise";
    case CorruptionFamily::rotation_mix: return "rotation_mix";
    case CorruptionFamily::channel_scale: return "channel_scale";
    case CorruptionFamily::dim_occlusion: return "dim_occlusion";
    case CorruptionFamily::impulse: return "impulse";
  }
  throw ConfigError("unknown corruption family tag");
}

void save_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  const auto d = data.inputs.cols();
  const bool labelled = !data.labels.empty();
  if (labelled && static_cast<Eigen::Index>(data.labels.size()) != data.inputs.rows()) {
    throw ConfigError("save_dataset_csv: label count does not match rows");
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    out << 'f' << j;
    if (j + 1 < d || labelled) out << ',';
  }
  if (labelled) out << "label";
  out << '\n';
  char buf[64];
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.inputs(i, j));
      out << buf;
      if (j + 1 < d || labelled) out << ',';
    }
    if (labelled) out << data.labels[static_cast<std::size_t>(i)];
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {

constexpr char kTensorMagic[4] = {'A', 'S', 'T', 'N'};
constexpr std::uint32_t kTensorVersion = 1;

Dataset load_dataset_binary(std::ifstream& in, const std::string& path) {
  std::uint32_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), sizeof(version))) {
    throw IoError("truncated file: " + path);
  }
  if (version != kTensorVersion) {
    throw IoError("unsupported dataset version " + std::to_string(version) + " in " + path);
  }
  std::uint64_t rows = 0, cols = 0;
  std::uint8_t labelled = 0;
  if (!in.read(reinterpret_cast<char*>(&rows), sizeof(rows)) ||
      !in.read(reinterpret_cast<char*>(&cols), sizeof(cols)) ||
      !in.read(reinterpret_cast<char*>(&labelled), sizeof(labelled))) {
    throw IoError("truncated file: " + path);
  }
  if (rows > (1ull << 32) || cols > (1ull << 20)) {
    throw IoError("implausible dataset shape in " + path);
  }
  Dataset data;
  data.inputs = Matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::uint64_t i = 0; i < rows; ++i) {
    for (std::uint64_t j = 0; j < cols; ++j) {
      double v = 0.0;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw IoError("truncated file: " + path);
      }
      data.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  if (labelled) {
    data.labels.resize(rows);
    for (std::uint64_t i = 0; i < rows; ++i) {
      std::int32_t label = 0;
      if (!in.read(reinterpret_cast<char*>(&label), sizeof(label))) {
        throw IoError("truncated file: " + path);
      }
      data.labels[i] = label;
    }
  }
  return data;
}

Dataset load_dataset_csv(std::ifstream& in, const std::string& path) {
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty csv: " + path, 1);
  ++line_no;
  // header names the feature columns and an optional trailing label column
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.empty()) throw ParseError("csv header has no columns: " + path, 1);
  const bool labelled = header.back() == "label";
  const auto d = static_cast<Eigen::Index>(header.size() - (labelled ? 1 : 0));
  if (d < 1) throw ParseError("csv has no feature columns: " + path, 1);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (header[static_cast<std::size_t>(j)] != "f" + std::to_string(j)) {
      throw ParseError("unexpected csv column name '" + header[static_cast<std::size_t>(j)] +
                           "' in " + path,
                       1);
    }
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(d));
    const char* ptr = line.data();
    const char* end = line.data() + line.size();
    for (Eigen::Index j = 0; j < d + (labelled ? 1 : 0); ++j) {
      if (ptr > end) throw ParseError("too few columns in " + path, line_no);
      const char* cell_end = static_cast<const char*>(memchr(ptr, ',', static_cast<std::size_t>(end - ptr)));
      if (cell_end == nullptr) cell_end = end;
      if (j < d) {
        double v = 0.0;
        const auto [next, ec] = std::from_chars(ptr, cell_end, v);
        if (ec != std::errc{} || next != cell_end) {
          throw ParseError("bad numeric cell in " + path, line_no);
        }
        row.push_back(v);
      } else {
        int label = 0;
        const auto [next, ec] = std::from_chars(ptr, cell_end, label);
        if (ec != std::errc{} || next != cell_end) {
          throw ParseError("bad label cell in " + path, line_no);
        }
        labels.push_back(label);
      }
      ptr = cell_end + 1;
    }
    if (ptr <= end && ptr != end + 1) {
      throw ParseError("too many columns in " + path, line_no);
    }
    rows.push_back(std::move(row));
  }

  Dataset data;
  data.inputs = Matrix(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      data.inputs(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    }
  }
  data.labels = std::move(labels);
  return data;
}

}  // namespace

void save_dataset_binary(const Dataset& data, const std::string& path) {
  const bool labelled = !data.labels.empty();
  if (labelled && static_cast<Eigen::Index>(data.labels.size()) != data.inputs.rows()) {
    throw ConfigError("save_dataset_binary: label count does not match rows");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kTensorMagic, sizeof(kTensorMagic));
  out.write(reinterpret_cast<const char*>(&kTensorVersion), sizeof(kTensorVersion));
  const auto rows = static_cast<std::uint64_t>(data.inputs.rows());
  const auto cols = static_cast<std::uint64_t>(data.inputs.cols());
  const std::uint8_t labelled_flag = labelled ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  out.write(reinterpret_cast<const char*>(&labelled_flag), sizeof(labelled_flag));
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) {
      const double v = data.inputs(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (labelled) {
    for (int label : data.labels) {
      const auto v = static_cast<std::int32_t>(label);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4] = {};
  if (in.read(magic, sizeof(magic)) && std::memcmp(magic, kTensorMagic, 4) == 0) {
    return load_dataset_binary(in, path);
  }
  in.close();
  std::ifstream text(path);
  if (!text) throw IoError("cannot open: " + path);
  return load_dataset_csv(text, path);
}

}  // namespace anchorstream
