#include <doctest.h>

#include <cmath>
#include <random>

#include "anchorstream/alignment.hpp"
#include "anchorstream/gaussian.hpp"
#include "support/test_support.hpp"

using namespace anchorstream;
using testsupport::kl_eigen_oracle;
using testsupport::random_matrix;
using testsupport::random_spd;
using testsupport::random_vector;

TEST_SUITE_BEGIN("gaussian");

namespace {

Gaussian scalar_gaussian(double mean, double variance) {
  Gaussian g;
  g.mean = Vector::Constant(1, mean);
  g.cov = Matrix::Constant(1, 1, variance);
  return g;
}

// textbook scalar KL on ridge-adjusted variances
double scalar_kl(double mp, double vp, double mq, double vq, double ridge) {
  const double sp = vp + ridge, sq = vq + ridge;
  return 0.5 * (sp / sq + (mq - mp) * (mq - mp) / sq - 1.0 + std::log(sq / sp));
}

}  // namespace

TEST_CASE("scalar case matches the closed form") {
  const Gaussian p = scalar_gaussian(0.0, 1.0);
  const Gaussian q = scalar_gaussian(1.0, 2.0);
  const double v = kl_gaussian(p, q);
  CHECK(v == doctest::Approx(scalar_kl(0, 1, 1, 2, kDefaultRidge)).epsilon(1e-14));
  CHECK(v == doctest::Approx(0.34657).epsilon(1e-4));  // 0.5*(0.5 + 0.5 - 1 + ln 2)
}

TEST_CASE("identical distributions give zero") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const int d = 1 + static_cast<int>(rng() % 6);
    Gaussian p{random_vector(rng, d), random_spd(rng, d)};
    CHECK(std::abs(kl_gaussian(p, p)) <= 1e-10);
  }
}

TEST_CASE("non-negative and positive for distinct inputs") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const int d = 1 + static_cast<int>(rng() % 8);
    Gaussian p{random_vector(rng, d), random_spd(rng, d)};
    Gaussian q{random_vector(rng, d), random_spd(rng, d)};
    const double v = kl_gaussian(p, q);
    CHECK(v >= -1e-10);
    CHECK(v > 0.0);  // mean draws collide with probability zero
  }
}

TEST_CASE("agrees with an eigendecomposition oracle") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const int d = 1 + static_cast<int>(rng() % 8);
    Gaussian p{random_vector(rng, d, 2.0), random_spd(rng, d)};
    Gaussian q{random_vector(rng, d, 2.0), random_spd(rng, d)};
    const double mine = kl_gaussian(p, q);
    const double oracle =
        kl_eigen_oracle(p.mean, p.cov, q.mean, q.cov, kDefaultRidge, /*halved_trace=*/true);
    CHECK(std::abs(mine - oracle) <= 1e-8 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("unhalved-trace form differs by exactly half the trace term") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const int d = 2 + static_cast<int>(rng() % 5);
    Gaussian p{random_vector(rng, d), random_spd(rng, d)};
    Gaussian q{random_vector(rng, d), random_spd(rng, d)};
    const double standard = kl_gaussian(p, q, kDefaultRidge, KlForm::standard);
    const double printed = kl_gaussian(p, q, kDefaultRidge, KlForm::paper_printed);

    Matrix sq = q.cov;
    sq.diagonal().array() += kDefaultRidge;
    Matrix sp = p.cov;
    sp.diagonal().array() += kDefaultRidge;
    const double trace = (sq.inverse() * sp).trace();
    CHECK(printed - standard == doctest::Approx(0.5 * trace).epsilon(1e-10));
  }
}

TEST_CASE("cholesky failure names the first bad pivot") {
  Matrix not_spd = Matrix::Identity(3, 3);
  not_spd(1, 1) = -2.0;
  try {
    cholesky_lower(not_spd);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.pivot() == 1);
  }

  // indefinite despite a positive diagonal: second pivot 1 - 4 < 0
  Matrix subtle(2, 2);
  subtle << 1.0, 2.0, 2.0, 1.0;
  try {
    cholesky_lower(subtle);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.pivot() == 1);
  }
}

TEST_CASE("cholesky factor reconstructs the input") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const int d = 1 + static_cast<int>(rng() % 10);
    const Matrix spd = random_spd(rng, d);
    const Matrix lower = cholesky_lower(spd);
    CHECK((lower * lower.transpose() - spd).lpNorm<Eigen::Infinity>() < 1e-10);
    for (int i = 0; i < d; ++i) {
      CHECK(lower(i, i) > 0.0);
      for (int j = i + 1; j < d; ++j) CHECK(lower(i, j) == 0.0);
    }
  }
}

TEST_CASE("dimension mismatch is rejected") {
  Gaussian p{Vector::Zero(2), Matrix::Identity(2, 2)};
  Gaussian q{Vector::Zero(3), Matrix::Identity(3, 3)};
  CHECK_THROWS_AS(kl_gaussian(p, q), ConfigError);
}

TEST_CASE("analytic mean/cov gradients match directional finite differences") {
  std::mt19937_64 rng(6);
  const double h = 1e-5;
  for (const KlForm form : {KlForm::standard, KlForm::paper_printed}) {
    for (int t = 0; t < 25; ++t) {
      const int d = 1 + static_cast<int>(rng() % 6);
      const Gaussian p{random_vector(rng, d), random_spd(rng, d)};
      const Gaussian q{random_vector(rng, d), random_spd(rng, d)};
      const KlWithGrad g = kl_gaussian_with_grad(p, q, kDefaultRidge, form);
      CHECK(g.value == doctest::Approx(kl_gaussian(p, q, kDefaultRidge, form)).epsilon(1e-14));

      // mean direction
      const Vector dir_m = random_vector(rng, d);
      Gaussian q_plus = q, q_minus = q;
      q_plus.mean += h * dir_m;
      q_minus.mean -= h * dir_m;
      const double fd_m = (kl_gaussian(p, q_plus, kDefaultRidge, form) -
                           kl_gaussian(p, q_minus, kDefaultRidge, form)) /
                          (2.0 * h);
      const double an_m = g.wrt_mean.dot(dir_m);
      CHECK(std::abs(fd_m - an_m) <= 1e-5 * std::max(1.0, std::abs(fd_m)));

      // symmetric covariance direction
      Matrix dir_c = random_matrix(rng, d, d);
      dir_c = 0.5 * (dir_c + dir_c.transpose()).eval();
      q_plus = q;
      q_minus = q;
      q_plus.cov += h * dir_c;
      q_minus.cov -= h * dir_c;
      const double fd_c = (kl_gaussian(p, q_plus, kDefaultRidge, form) -
                           kl_gaussian(p, q_minus, kDefaultRidge, form)) /
                          (2.0 * h);
      const double an_c = (g.wrt_cov.array() * dir_c.array()).sum();
      CHECK(std::abs(fd_c - an_c) <= 1e-5 * std::max(1.0, std::abs(fd_c)));
    }
  }
}

namespace {

// Rebuilds the combined objective from scratch so feature perturbations can
// be finite-differenced through the statistics recurrence.
double total_loss_of_features(const ClusterBank& bank, const SourceAnchors& anchors,
                              const Matrix& features, const Matrix& weights,
                              const AlignmentOptions& opts) {
  return align_minibatch(bank, anchors, features, weights, opts).loss.total;
}

SourceAnchors random_anchors(std::mt19937_64& rng, int k, int d) {
  SourceAnchors anchors;
  anchors.priors = Vector::Constant(k, 1.0 / k);
  for (int c = 0; c < k; ++c) {
    anchors.class_anchors.push_back({random_vector(rng, d), random_spd(rng, d)});
  }
  anchors.global = Gaussian{random_vector(rng, d), random_spd(rng, d)};
  return anchors;
}

ClusterBank random_bank(std::mt19937_64& rng, const SourceAnchors& anchors, int warm_rows) {
  ClusterBank bank = ClusterBank::init_from(anchors, 64, 16);
  // warm the statistics so counts are nonzero and covariances well-formed
  const int d = anchors.dim();
  for (int c = 0; c < bank.num_classes(); ++c) {
    update_global(bank.clusters[static_cast<std::size_t>(c)],
                  random_matrix(rng, warm_rows, d));
  }
  update_global(bank.global, random_matrix(rng, warm_rows * bank.num_classes(), d));
  return bank;
}

}  // namespace

TEST_CASE("minibatch feature gradient matches central finite differences") {
  std::mt19937_64 rng(7);
  const double h = 1e-5;
  for (int t = 0; t < 8; ++t) {
    const int d = 2 + static_cast<int>(rng() % 3);
    const int k = 2 + static_cast<int>(rng() % 2);
    const int n = 4 + static_cast<int>(rng() % 4);
    const SourceAnchors anchors = random_anchors(rng, k, d);
    const ClusterBank bank = random_bank(rng, anchors, 12);
    Matrix features = random_matrix(rng, n, d);

    // mixed hard/soft weights: some zero rows, some fractional
    Matrix weights = Matrix::Zero(n, k);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      if (unit(rng) < 0.25) continue;  // row contributes to no cluster
      if (unit(rng) < 0.5) {
        weights(i, static_cast<int>(rng() % static_cast<unsigned>(k))) = 1.0;
      } else {
        for (int c = 0; c < k; ++c) weights(i, c) = unit(rng);
        weights.row(i) /= weights.row(i).sum();
      }
    }

    AlignmentOptions opts;
    opts.lambda = 0.5 + unit(rng);
    opts.ga_form = (t % 2 == 0) ? GaForm::kld : GaForm::l2;

    const MinibatchAlignment align = align_minibatch(bank, anchors, features, weights, opts);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        Matrix plus = features, minus = features;
        plus(i, j) += h;
        minus(i, j) -= h;
        const double fd = (total_loss_of_features(bank, anchors, plus, weights, opts) -
                           total_loss_of_features(bank, anchors, minus, weights, opts)) /
                          (2.0 * h);
        const double an = align.feature_grad(i, j);
        CHECK(std::abs(fd - an) <= 2e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("zero lambda and an all-false mask give an exactly zero gradient") {
  std::mt19937_64 rng(8);
  const int d = 3, k = 2, n = 5;
  const SourceAnchors anchors = random_anchors(rng, k, d);
  const ClusterBank bank = ClusterBank::init_from(anchors, 0, 0);

  FilteredBatch batch;
  batch.features = random_matrix(rng, n, d);
  batch.pseudo_labels.assign(n, 0);
  batch.pass_mask.assign(n, 0);

  AlignmentOptions opts;
  const Matrix grad = loss_gradient_wrt_features(batch, bank, anchors, 0.0, opts);
  CHECK(grad.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("loss breakdown skips never-seen clusters and sums the rest") {
  std::mt19937_64 rng(9);
  const int d = 3, k = 4, n = 12;
  const SourceAnchors anchors = random_anchors(rng, k, d);
  ClusterBank bank = ClusterBank::init_from(anchors, 0, 0);

  // only classes 0 and 2 receive rows
  Matrix weights = Matrix::Zero(n, k);
  for (int i = 0; i < n; ++i) weights(i, i % 2 == 0 ? 0 : 2) = 1.0;
  const Matrix features = random_matrix(rng, n, d);

  AlignmentOptions opts;
  const MinibatchAlignment align = align_minibatch(bank, anchors, features, weights, opts);
  CHECK(align.loss.skipped_classes == std::vector<int>{1, 3});
  CHECK(align.loss.per_class_kl[1] == 0.0);
  CHECK(align.loss.per_class_kl[3] == 0.0);
  CHECK(align.loss.l_ac ==
        doctest::Approx(align.loss.per_class_kl.sum()).epsilon(1e-12));
  CHECK(align.loss.total ==
        doctest::Approx(align.loss.l_ac + opts.lambda * align.loss.l_ga).epsilon(1e-12));
  CHECK(align.loss.l_ac >= 0.0);
  CHECK(align.loss.l_ga >= -1e-10);

  // anchored_clustering_loss over the same updated moments agrees
  std::vector<Gaussian> targets;
  for (const auto& c : align.updated.clusters) targets.push_back({c.mean, c.cov});
  const auto [l_ac, per_class] =
      anchored_clustering_loss(anchors.class_anchors, targets, {0, 2});
  CHECK(l_ac == doctest::Approx(align.loss.l_ac).epsilon(1e-12));
  CHECK((per_class - align.loss.per_class_kl).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_SUITE_END();
