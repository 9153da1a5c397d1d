#pragma once

// Shared helpers for the test suites: brute-force reference computations
// kept deliberately independent of the library's incremental/Cholesky code
// paths, plus small random-input factories.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <random>
#include <utility>
#include <vector>

#include "anchorstream/running_stats.hpp"

namespace testsupport {

using anchorstream::Matrix;
using anchorstream::Vector;

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * normal(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * normal(rng);
  return v;
}

// Random symmetric positive-definite matrix: A A^T + eps I.
inline Matrix random_spd(std::mt19937_64& rng, int n, double eps = 0.5) {
  const Matrix a = random_matrix(rng, n, n);
  Matrix spd = a * a.transpose();
  spd.diagonal().array() += eps;
  return 0.5 * (spd + spd.transpose()).eval();
}

// Naive weighted population moments: mean = sum(w x)/sum(w), cov =
// sum(w (x-mean)(x-mean)^T)/sum(w). Plain loops on purpose.
inline std::pair<Vector, Matrix> weighted_mle(const Matrix& rows, const Vector& weights) {
  const auto n = rows.rows();
  const auto d = rows.cols();
  double mass = 0.0;
  Vector mean = Vector::Zero(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    mass += weights[i];
    mean += weights[i] * rows.row(i).transpose();
  }
  mean /= mass;
  Matrix cov = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector dev = rows.row(i).transpose() - mean;
    cov += weights[i] * dev * dev.transpose();
  }
  cov /= mass;
  return {mean, cov};
}

// Gaussian KL through an eigendecomposition — a completely different route
// from the library's Cholesky solves. Ridge applied to match.
inline double kl_eigen_oracle(const Vector& mean_p, const Matrix& cov_p, const Vector& mean_q,
                              const Matrix& cov_q, double ridge, bool halved_trace) {
  const auto d = mean_p.size();
  Matrix sp = cov_p, sq = cov_q;
  sp.diagonal().array() += ridge;
  sq.diagonal().array() += ridge;

  const Eigen::SelfAdjointEigenSolver<Matrix> ep(sp);
  const Eigen::SelfAdjointEigenSolver<Matrix> eq(sq);
  const Matrix sq_inv = eq.eigenvectors() *
                        eq.eigenvalues().cwiseInverse().asDiagonal() *
                        eq.eigenvectors().transpose();
  const double trace_term = (sq_inv * sp).trace();
  const Vector diff = mean_q - mean_p;
  const double quad = diff.dot(sq_inv * diff);
  const double log_det =
      eq.eigenvalues().array().log().sum() - ep.eigenvalues().array().log().sum();
  if (halved_trace) {
    return 0.5 * (trace_term + quad - static_cast<double>(d) + log_det);
  }
  return trace_term + 0.5 * (quad - static_cast<double>(d) + log_det);
}

}  // namespace testsupport
