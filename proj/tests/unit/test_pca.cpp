#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "latentdrag/error.hpp"
#include "latentdrag/numerics/pca.hpp"
#include "latentdrag/numerics/symmetric_eigen.hpp"

using namespace latentdrag;
using namespace latentdrag::numerics;

namespace {

Matrix random_samples(std::size_t n, std::size_t p, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  // Correlated data: x = A z with a fixed random mixing matrix.
  Matrix mix(p, p);
  for (double& x : mix.data()) x = nd(rng);
  Matrix out(n, p);
  std::vector<double> z(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : z) v = nd(rng);
    for (std::size_t a = 0; a < p; ++a) out(i, a) = 0.5 + dot(mix.row(a), z);
  }
  return out;
}

// Independent oracle: sample covariance built with Eigen and solved densely.
Eigen::VectorXd oracle_eigenvalues_desc(const Matrix& samples) {
  Eigen::MatrixXd x(samples.rows(), samples.cols());
  for (std::size_t i = 0; i < samples.rows(); ++i)
    for (std::size_t j = 0; j < samples.cols(); ++j) x(i, j) = samples(i, j);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu;
  const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  return es.eigenvalues().reverse();
}

double max_gram_error(const Matrix& comps) {
  double err = 0.0;
  for (std::size_t a = 0; a < comps.rows(); ++a)
    for (std::size_t b = 0; b < comps.rows(); ++b)
      err = std::max(err, std::abs(dot(comps.row(a), comps.row(b)) - (a == b ? 1.0 : 0.0)));
  return err;
}

}  // namespace

TEST(SymmetricEigen, MatchesDenseOracle) {
  for (unsigned seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    const std::size_t n = 10 + 7 * seed;
    Matrix a(n, n);
    Eigen::MatrixXd e(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        a(i, j) = a(j, i) = nd(rng);
        e(i, j) = e(j, i) = a(i, j);
      }
    }
    const auto ours = symmetric_eigen(a);
    const Eigen::VectorXd ref = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e).eigenvalues().reverse();
    for (std::size_t k = 0; k < n; ++k) {
      EXPECT_NEAR(ours.values[k], ref(k), 1e-10);
      // A v = lambda v
      double resid = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        resid = std::max(resid, std::abs(dot(a.row(i), ours.vectors.row(k)) - ours.values[k] * ours.vectors(k, i)));
      }
      EXPECT_LT(resid, 1e-10);
    }
    EXPECT_LT(max_gram_error(ours.vectors), 1e-12);
  }
}

TEST(SymmetricEigen, SignConventionLargestEntryPositive) {
  Matrix a(2, 2);
  a(0, 0) = 2.0;
  a(1, 1) = 1.0;
  const auto eig = symmetric_eigen(a);
  EXPECT_DOUBLE_EQ(eig.values[0], 2.0);
  EXPECT_DOUBLE_EQ(eig.vectors(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(eig.vectors(1, 1), 1.0);
}

TEST(FitPca, TwoPointsOnAxis) {
  Matrix s(2, 2);
  s(0, 0) = 1.0;
  s(1, 0) = -1.0;
  const PcaBasis b = fit_pca(s, 2);
  EXPECT_NEAR(b.components(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(b.components(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(b.explained_variance_ratio[0], 1.0, 1e-15);
  EXPECT_NEAR(b.explained_variance_ratio[1], 0.0, 1e-15);
}

TEST(FitPca, FullRankRatiosSumToOne) {
  for (unsigned seed : {3u, 4u, 5u}) {
    const Matrix s = random_samples(50, 6, seed);
    const PcaBasis b = fit_pca(s, 6);
    double sum = 0.0;
    for (double r : b.explained_variance_ratio) sum += r;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(FitPca, EigenvaluesMatchIndependentOracle) {
  const Matrix s = random_samples(1000, 5, 2024);
  const PcaBasis b = fit_pca(s, 5);
  const Eigen::VectorXd ref = oracle_eigenvalues_desc(s);
  for (int k = 0; k < 5; ++k) {
    EXPECT_NEAR(b.explained_variance[k] / ref(k), 1.0, 1e-6) << "k=" << k;
  }
}

TEST(FitPca, GramRouteMatchesOracleWhenDimensionExceedsSamples) {
  const std::size_t n = 20, p = 45;
  const Matrix s = random_samples(n, p, 77);
  const PcaBasis b = fit_pca(s, n);
  const Eigen::VectorXd ref = oracle_eigenvalues_desc(s);
  for (std::size_t k = 0; k + 1 < n; ++k) EXPECT_NEAR(b.explained_variance[k] / ref(k), 1.0, 1e-9);
  // Centered data has rank n-1; the last row is a completion vector.
  EXPECT_NEAR(b.explained_variance_ratio[n - 1], 0.0, 1e-12);
  EXPECT_LT(max_gram_error(b.components), 1e-8);
}

// Property: basis invariants and projected variances, across random shapes.
TEST(FitPca, InvariantsHoldOnRandomProblems) {
  std::mt19937 shapes(9);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 5 + shapes() % 60;
    const std::size_t p = 2 + shapes() % 30;
    const std::size_t k = 1 + shapes() % std::min(n, p);
    const Matrix s = random_samples(n, p, 100 + trial);
    const PcaBasis b = fit_pca(s, k);
    ASSERT_EQ(b.size(), k);
    EXPECT_LT(max_gram_error(b.components), 1e-8);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      sum += b.explained_variance_ratio[i];
      EXPECT_GE(b.explained_variance_ratio[i], 0.0);
      if (i > 0) {
        EXPECT_LE(b.explained_variance_ratio[i], b.explained_variance_ratio[i - 1] + 1e-15);
      }
    }
    EXPECT_LE(sum, 1.0 + 1e-9);

    // Variance of the projected samples equals ratio * total variance.
    for (std::size_t c = 0; c < k; ++c) {
      if (b.explained_variance_ratio[c] < 1e-8) continue;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double coeff = pca_project(b, s.row(i))[c];
        acc += coeff * coeff;
      }
      const double var = acc / static_cast<double>(n - 1);
      EXPECT_NEAR(var / (b.explained_variance_ratio[c] * b.total_variance), 1.0, 1e-6);
    }
  }
}

TEST(FitPca, Errors) {
  Matrix same(10, 3, 1.5);
  try {
    fit_pca(same, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateData);
  }
  const Matrix s = random_samples(10, 3, 1);
  try {
    fit_pca(s, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadShape);
  }
  EXPECT_THROW(fit_pca(Matrix(1, 3, 0.0), 1), Error);
}

TEST(PcaProject, CenteringAndOrthonormality) {
  const Matrix s = random_samples(200, 8, 5);
  const PcaBasis b = fit_pca(s, 8);
  for (double c : pca_project(b, b.mean)) EXPECT_EQ(c, 0.0);
  Vector w = b.mean;
  axpy(1.0, b.components.row(0), w);
  const Vector c = pca_project(b, w);
  EXPECT_NEAR(c[0], 1.0, 1e-12);
  for (std::size_t k = 1; k < c.size(); ++k) EXPECT_NEAR(c[k], 0.0, 1e-12);
}

TEST(PcaProject, MatchesBruteForceDotProducts) {
  const Matrix s = random_samples(100, 7, 6);
  const PcaBasis b = fit_pca(s, 4);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 10; ++t) {
    Vector w(7);
    for (double& x : w) x = 3.0 * nd(rng);
    const Vector c = pca_project(b, w);
    for (std::size_t k = 0; k < 4; ++k) {
      double ref = 0.0;
      for (std::size_t j = 0; j < 7; ++j) ref += b.components(k, j) * (w[j] - b.mean[j]);
      EXPECT_NEAR(c[k], ref, 1e-10);
    }
  }
  EXPECT_THROW(pca_project(b, Vector(6)), Error);
}

TEST(PcaReconstruct, ZeroCoefficientsGiveMean) {
  const Matrix s = random_samples(30, 5, 8);
  const PcaBasis b = fit_pca(s, 3);
  EXPECT_EQ(pca_reconstruct(b, Vector(3, 0.0)), b.mean);
  EXPECT_THROW(pca_reconstruct(b, Vector(2)), Error);
}

TEST(PcaReconstruct, FullRankRoundTripIsIdentity) {
  const Matrix s = random_samples(300, 12, 10);
  const PcaBasis b = fit_pca(s, 12);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 20; ++t) {
    Vector w(12);
    for (double& x : w) x = 5.0 * nd(rng);
    const Vector back = pca_reconstruct(b, pca_project(b, w));
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(back[j], w[j], 1e-6);
  }
}

TEST(PcaReconstruct, TruncationErrorEqualsDiscardedEnergy) {
  const std::size_t p = 10;
  const Matrix s = random_samples(400, p, 12);
  const PcaBasis full = fit_pca(s, p);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Vector w(p);
  for (double& x : w) x = 2.0 * nd(rng);
  const Vector coeffs = pca_project(full, w);

  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t n = 1; n <= p; ++n) {
    const PcaBasis b = fit_pca(s, n);
    const Vector back = pca_reconstruct(b, pca_project(b, w));
    double err = 0.0;
    for (std::size_t j = 0; j < p; ++j) err += (back[j] - w[j]) * (back[j] - w[j]);
    // Residual oracle: energy of the coefficients on the discarded axes.
    double discarded = 0.0;
    for (std::size_t k = n; k < p; ++k) discarded += coeffs[k] * coeffs[k];
    EXPECT_NEAR(err, discarded, 1e-8 * (1.0 + discarded));
    EXPECT_LE(err, previous + 1e-12);
    previous = err;
  }
}

TEST(PcaBasis, TruncatedEqualsRefitWithFewerComponents) {
  const Matrix s = random_samples(100, 6, 21);
  const PcaBasis full = fit_pca(s, 6);
  const PcaBasis three = fit_pca(s, 3);
  const PcaBasis cut = full.truncated(3);
  EXPECT_EQ(cut.components, three.components);
  EXPECT_EQ(cut.explained_variance_ratio, three.explained_variance_ratio);
}
