#include "anchorstream/gaussian.hpp"

#include <cmath>
#include <string>

namespace anchorstream {

namespace {

void check_same_dim(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim() || p.cov.rows() != p.dim() || p.cov.cols() != p.dim() ||
      q.cov.rows() != q.dim() || q.cov.cols() != q.dim()) {
    throw ConfigError("kl_gaussian: mean/covariance dimensions disagree (p: " +
                      std::to_string(p.dim()) + ", q: " + std::to_string(q.dim()) + ")");
  }
}

double log_det_from_cholesky(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

}  // namespace

Matrix add_ridge(const Eigen::Ref<const Matrix>& cov, double ridge) {
  Matrix out = cov;
  out.diagonal().array() += ridge;
  return out;
}

Matrix cholesky_lower(const Eigen::Ref<const Matrix>& spd) {
  const auto n = spd.rows();
  if (spd.cols() != n) throw ConfigError("cholesky_lower: matrix is not square");
  Matrix lower = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = spd(j, j) - lower.row(j).head(j).squaredNorm();
    if (!std::isfinite(diag) || diag <= 0.0) {
      throw NumericalError("cholesky_lower: non-positive pivot " + std::to_string(diag) +
                               " at index " + std::to_string(j),
                           static_cast<int>(j));
    }
    diag = std::sqrt(diag);
    lower(j, j) = diag;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      lower(i, j) = (spd(i, j) - lower.row(i).head(j).dot(lower.row(j).head(j))) / diag;
    }
  }
  return lower;
}

double kl_gaussian(const Gaussian& p, const Gaussian& q, double ridge, KlForm form) {
  check_same_dim(p, q);
  const Matrix cov_p = add_ridge(p.cov, ridge);
  const Matrix cov_q = add_ridge(q.cov, ridge);
  const Matrix lp = cholesky_lower(cov_p);
  const Matrix lq = cholesky_lower(cov_q);

  // tr(cov_q^{-1} cov_p) = ||lq^{-1} lp||_F^2
  const Matrix half = lq.triangularView<Eigen::Lower>().solve(lp);
  const double trace_term = half.squaredNorm();

  const Vector diff = q.mean - p.mean;
  const Vector y = lq.triangularView<Eigen::Lower>().solve(diff);
  const double quad = y.squaredNorm();

  const double log_det = log_det_from_cholesky(lq) - log_det_from_cholesky(lp);
  const double d = static_cast<double>(p.dim());

  if (form == KlForm::standard) {
    return 0.5 * (trace_term + quad - d + log_det);
  }
  return trace_term + 0.5 * (quad - d + log_det);
}

KlWithGrad kl_gaussian_with_grad(const Gaussian& p, const Gaussian& q, double ridge,
                                 KlForm form) {
  check_same_dim(p, q);
  const int d = p.dim();
  const Matrix cov_p = add_ridge(p.cov, ridge);
  const Matrix cov_q = add_ridge(q.cov, ridge);
  const Matrix lp = cholesky_lower(cov_p);
  const Matrix lq = cholesky_lower(cov_q);

  const Matrix half = lq.triangularView<Eigen::Lower>().solve(lp);
  const double trace_term = half.squaredNorm();
  const Vector diff = q.mean - p.mean;
  const Vector y = lq.triangularView<Eigen::Lower>().solve(diff);
  const double quad = y.squaredNorm();
  const double log_det = log_det_from_cholesky(lq) - log_det_from_cholesky(lp);

  // precision = cov_q^{-1}, via two triangular solves against the identity.
  const Matrix eye = Matrix::Identity(d, d);
  const Matrix inv_l = lq.triangularView<Eigen::Lower>().solve(eye);
  Matrix precision = inv_l.transpose() * inv_l;
  precision = 0.5 * (precision + precision.transpose()).eval();

  const Vector pu = precision * diff;             // cov_q^{-1} (mu_q - mu_p)
  Matrix pcp = precision * cov_p * precision;     // cov_q^{-1} cov_p cov_q^{-1}
  pcp = 0.5 * (pcp + pcp.transpose()).eval();

  const double trace_coeff = (form == KlForm::standard) ? 0.5 : 1.0;

  KlWithGrad out;
  out.value = (form == KlForm::standard)
                  ? 0.5 * (trace_term + quad - d + log_det)
                  : trace_term + 0.5 * (quad - d + log_det);
  out.wrt_mean = pu;
  out.wrt_cov = 0.5 * precision - 0.5 * pu * pu.transpose() - trace_coeff * pcp;
  out.wrt_cov = 0.5 * (out.wrt_cov + out.wrt_cov.transpose()).eval();
  return out;
}

}  // namespace anchorstream
