#pragma once

#include <Eigen/Dense>

#include "anchorstream/errors.hpp"
#include "anchorstream/running_stats.hpp"

namespace anchorstream {

// Ridge added to every covariance diagonal before factorization.
inline constexpr double kDefaultRidge = 1e-5;

// Which trace coefficient the Gaussian KL uses. `standard` is the textbook
// divergence (trace term halved with everything else). `paper_printed`
// leaves the trace term unhalved — some published variants of the formula
// do — which equals standard + 0.5 * tr(cov_q^{-1} cov_p); it is not a
// divergence (can be nonzero for p == q) but is kept selectable so the two
// objectives can be compared.
enum class KlForm { standard, paper_printed };

struct Gaussian {
  Vector mean;
  Matrix cov;

  int dim() const { return static_cast<int>(mean.size()); }
};

// cov + ridge * I.
Matrix add_ridge(const Eigen::Ref<const Matrix>& cov, double ridge);

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
// Hand-rolled rather than delegated so a failure can name the offending
// pivot: throws NumericalError with pivot() = first index whose diagonal
// entry is not strictly positive (or not finite).
Matrix cholesky_lower(const Eigen::Ref<const Matrix>& spd);

// KL(p || q) between Gaussians, evaluated through Cholesky factors and
// triangular solves only — no explicit matrix inverse anywhere. Both
// covariances get `ridge` added to their diagonals first.
double kl_gaussian(const Gaussian& p, const Gaussian& q, double ridge = kDefaultRidge,
                   KlForm form = KlForm::standard);

// KL value plus its analytic gradients with respect to the *second*
// argument's parameters (the target-side mean and covariance — the side the
// streaming statistics move).
struct KlWithGrad {
  double value = 0.0;
  Vector wrt_mean;  // d
  Matrix wrt_cov;   // d x d, symmetric
};
KlWithGrad kl_gaussian_with_grad(const Gaussian& p, const Gaussian& q,
                                 double ridge = kDefaultRidge, KlForm form = KlForm::standard);

}  // namespace anchorstream
