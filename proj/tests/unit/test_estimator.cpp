#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bnnw/error.hpp"
#include "bnnw/estimator.hpp"
#include "grid_oracle.hpp"
#include "test_util.hpp"

using namespace bnnw;

namespace {

Dataset make(std::initializer_list<double> y, std::initializer_list<double> t, TreatmentKind kind) {
  const Index n = static_cast<Index>(y.size());
  Eigen::VectorXd yy(n), tt(n);
  Index i = 0;
  for (double v : y) yy[i++] = v;
  i = 0;
  for (double v : t) tt[i++] = v;
  return Dataset(yy, tt, RowMatrix::Zero(n, 1), kind);
}

Dataset small_instance(const LossSpec& spec, const DoseResponseModel& model, Index n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z;
  Eigen::VectorXd y(n), t(n);
  for (Index i = 0; i < n; ++i) {
    // Stratified doses keep kink lines of piecewise-linear losses from being near-parallel.
    t[i] = model.kind == ModelKind::BinaryArms ? static_cast<double>(i % 2)
                                               : (static_cast<double>(i) + 0.2 + 0.6 * u(rng)) / static_cast<double>(n);
    if (spec.kind == LossKind::CrossEntropy)
      y[i] = u(rng) < normal_cdf(-0.3 + 0.8 * t[i]) ? 1.0 : 0.0;
    else
      y[i] = 0.5 + t[i] + 0.7 * z(rng);
  }
  if (spec.kind == LossKind::CrossEntropy) {
    y[0] = 1.0;  // overlapping outcomes at both ends keep the likelihood bounded
    y[1] = 0.0;
    y[n - 1] = 0.0;
    y[n - 2] = 1.0;
  }
  return Dataset(y, t, RowMatrix::Zero(n, 1),
                 model.kind == ModelKind::BinaryArms ? TreatmentKind::Binary : TreatmentKind::Continuous);
}

// Grid search on [-4, 4]^2 at step 2e-2, refined twice around the incumbent down to step 1e-4.
}  // namespace

TEST(SolveBeta, ArmMeans) {
  const Dataset d = make({2, 4, 1, 1}, {1, 1, 0, 0}, TreatmentKind::Binary);
  const Eigen::VectorXd b =
      solve_beta(d, Eigen::VectorXd::Ones(4), LossSpec::squared(), DoseResponseModel::binary_arms());
  EXPECT_NEAR(b[0], 1.0, 1e-14);
  EXPECT_NEAR(b[1], 3.0, 1e-14);
}

TEST(SolveBeta, ArmMedian) {
  const Dataset d = make({3, 1, 2, 5}, {1, 1, 1, 0}, TreatmentKind::Binary);
  const Eigen::VectorXd b =
      solve_beta(d, Eigen::VectorXd::Ones(4), LossSpec::quantile(0.5), DoseResponseModel::binary_arms());
  EXPECT_EQ(b[1], 2.0);
  EXPECT_EQ(b[0], 5.0);
}

TEST(SolveBeta, WeightedArmMean) {
  const Dataset d = make({0, 3, 7}, {1, 1, 0}, TreatmentKind::Binary);
  Eigen::VectorXd w(3);
  w << 2, 1, 1;
  const Eigen::VectorXd b = solve_beta(d, w, LossSpec::squared(), DoseResponseModel::binary_arms());
  EXPECT_NEAR(b[1], 1.0, 1e-14);
}

TEST(SolveBeta, Errors) {
  const Dataset one_arm = make({1, 2, 3}, {1, 1, 1}, TreatmentKind::Binary);
  try {
    solve_beta(one_arm, Eigen::VectorXd::Ones(3), LossSpec::squared(), DoseResponseModel::binary_arms());
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyArm);
  }
  const Dataset same_t = make({1, 2, 3}, {0.5, 0.5, 0.5}, TreatmentKind::Continuous);
  try {
    solve_beta(same_t, Eigen::VectorXd::Ones(3), LossSpec::squared(), DoseResponseModel::polynomial(1));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularDesign);
  }
  const Dataset ok = make({1, 2, 3}, {0, 1, 1}, TreatmentKind::Binary);
  EXPECT_THROW(solve_beta(ok, Eigen::VectorXd::Constant(3, -1.0), LossSpec::squared(),
                          DoseResponseModel::binary_arms()),
               Error);
}

TEST(WeightedQuantile, SmallestValueReachingTau) {
  const std::vector<double> v{3, 1, 2, 4};
  const std::vector<double> w{1, 1, 1, 1};
  EXPECT_EQ(weighted_quantile(v, w, 0.5), 2.0);
  EXPECT_EQ(weighted_quantile(v, w, 0.51), 3.0);
  EXPECT_EQ(weighted_quantile(v, w, 0.25), 1.0);
  EXPECT_EQ(weighted_quantile(v, w, 0.99), 4.0);
  EXPECT_THROW(weighted_quantile(v, w, 1.0), Error);
  const std::vector<double> w2{0, 0, 0, 5};
  EXPECT_EQ(weighted_quantile(v, w2, 0.1), 4.0);
}

TEST(NearZero, WlsIsExact) {
  Rng rng(1);
  const Dataset d = testutil::random_continuous(50, 1, rng);
  const Eigen::VectorXd w = testutil::uniform_vector(50, 0.2, 3.0, rng);
  const auto model = DoseResponseModel::polynomial(2);
  const Eigen::VectorXd b = solve_beta(d, w, LossSpec::squared(), model);
  EXPECT_LE(near_zero_check(d, w, LossSpec::squared(), model, b), 1e-10 * d.y().cwiseAbs().maxCoeff());
}

TEST(NearZero, WeightedMedianSlack) {
  Rng rng(2);
  const Index n = 41;
  std::normal_distribution<double> z;
  Eigen::VectorXd y(n), t(n);
  for (Index i = 0; i < n; ++i) {
    t[i] = i < 2 ? 0.0 : 1.0;
    y[i] = i < 2 ? static_cast<double>(i) : z(rng);
  }
  const Dataset d(y, t, RowMatrix::Zero(n, 1), TreatmentKind::Binary);
  Eigen::VectorXd w = testutil::uniform_vector(n, 0.5, 2.0, rng);
  w[0] = w[1] = 1.0;  // arm 0 balances exactly at its lower median
  const auto spec = LossSpec::quantile(0.5);
  const auto model = DoseResponseModel::binary_arms();
  const Eigen::VectorXd b = solve_beta(d, w, spec, model);
  EXPECT_LE(near_zero_check(d, w, spec, model, b), w.maxCoeff() * 0.5 / static_cast<double>(n));
}

TEST(NearZero, LargerAwayFromOptimum) {
  Rng rng(3);
  const auto model = DoseResponseModel::polynomial(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Dataset d = testutil::random_continuous(30, 1, rng);
    const Eigen::VectorXd w = testutil::uniform_vector(30, 0.5, 2.0, rng);
    const Eigen::VectorXd b = solve_beta(d, w, LossSpec::squared(), model);
    const Eigen::VectorXd off = b + testutil::normal_matrix(2, 1, rng).col(0).normalized();
    EXPECT_GT(near_zero_check(d, w, LossSpec::squared(), model, off),
              near_zero_check(d, w, LossSpec::squared(), model, b));
  }
}

TEST(Bic, PenaltyArithmetic) {
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index n = 60;
  Eigen::VectorXd y(n), t(n);
  for (Index i = 0; i < n; ++i) {
    t[i] = u(rng);
    y[i] = u(rng) < 0.4 ? 1.0 : 0.0;
  }
  const Dataset d(y, t, RowMatrix::Zero(n, 1), TreatmentKind::Continuous);
  const Eigen::VectorXd w = testutil::uniform_vector(n, 0.5, 1.5, rng);
  const auto spec = LossSpec::cross_entropy();
  // Same fitted curve under nested models: padding beta with zeros leaves g unchanged.
  Eigen::VectorXd b1(2), b2(3);
  b1 << -0.25, 0.1;
  b2 << -0.25, 0.1, 0.0;
  const double s1 = bic_score(d, w, spec, DoseResponseModel::probit_polynomial(1), b1);
  const double s2 = bic_score(d, w, spec, DoseResponseModel::probit_polynomial(2), b2);
  EXPECT_NEAR(s2 - s1, std::log(w.sum()), 1e-10);
  double nll = 0;
  for (Index i = 0; i < n; ++i) nll += loss_value(spec, y[i], g_value(DoseResponseModel::probit_polynomial(1), t[i], b1));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  EXPECT_NEAR(bic_score(d, ones, spec, DoseResponseModel::probit_polynomial(1), b1), 2 * std::log(60.0) + 2 * nll,
              1e-9);
}

TEST(SolveBetaProperties, PositiveScalingInvariance) {
  Rng rng(5);
  struct Path {
    LossSpec spec;
    DoseResponseModel model;
    double tol;
  };
  const std::vector<Path> paths{{LossSpec::squared(), DoseResponseModel::binary_arms(), 1e-10},
                                {LossSpec::squared(), DoseResponseModel::polynomial(2), 1e-10},
                                {LossSpec::quantile(0.3), DoseResponseModel::binary_arms(), 1e-10},
                                {LossSpec::quantile(0.6), DoseResponseModel::polynomial(1), 1e-6},
                                {LossSpec::asymmetric_ls(0.3), DoseResponseModel::polynomial(1), 1e-6},
                                {LossSpec::cross_entropy(), DoseResponseModel::probit_polynomial(1), 1e-6}};
  std::uniform_real_distribution<double> c(0.01, 100.0);
  for (const auto& path : paths) {
    for (int trial = 0; trial < 10; ++trial) {
      const Dataset d = small_instance(path.spec, path.model, 40, rng);
      const Eigen::VectorXd w = testutil::uniform_vector(40, 0.3, 3.0, rng);
      const Eigen::VectorXd a = solve_beta(d, w, path.spec, path.model);
      const Eigen::VectorXd b = solve_beta(d, w * c(rng), path.spec, path.model);
      EXPECT_LE((a - b).lpNorm<Eigen::Infinity>(), path.tol * std::max(1.0, a.lpNorm<Eigen::Infinity>()))
          << path.spec.name() << "/" << path.model.name();
    }
  }
}

TEST(SolveBetaProperties, WlsNormalEquations) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Dataset d = testutil::random_continuous(25, 1, rng);
    const Eigen::VectorXd w = testutil::uniform_vector(25, 0.1, 5.0, rng);
    const auto model = DoseResponseModel::polynomial(3);
    const Eigen::VectorXd b = solve_beta(d, w, LossSpec::squared(), model);
    Eigen::VectorXd ne = Eigen::VectorXd::Zero(4);
    double scale = 0;
    for (Index i = 0; i < d.size(); ++i) {
      const Eigen::VectorXd phi = basis(model, d.t(i));
      ne += w[i] * (d.y(i) - phi.dot(b)) * phi;
      scale += w[i] * std::abs(d.y(i));
    }
    EXPECT_LE(ne.lpNorm<Eigen::Infinity>(), 1e-12 * scale);
  }
}

TEST(SolveBetaProperties, QuantileMonotoneInTau) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Dataset d = testutil::random_binary(60, 1, rng);
    const Eigen::VectorXd w = testutil::uniform_vector(60, 0.2, 2.0, rng);
    Eigen::VectorXd prev = Eigen::VectorXd::Constant(2, -std::numeric_limits<double>::infinity());
    for (double tau = 0.05; tau < 1.0; tau += 0.05) {
      const Eigen::VectorXd b = solve_beta(d, w, LossSpec::quantile(tau), DoseResponseModel::binary_arms());
      EXPECT_GE(b[0], prev[0]);
      EXPECT_GE(b[1], prev[1]);
      prev = b;
    }
  }
}

TEST(SolveBetaProperties, MatchesGridOracle) {
  Rng rng(8);
  struct Path {
    LossSpec spec;
    DoseResponseModel model;
  };
  const std::vector<Path> paths{{LossSpec::squared(), DoseResponseModel::binary_arms()},
                                {LossSpec::squared(), DoseResponseModel::polynomial(1)},
                                {LossSpec::quantile(0.4), DoseResponseModel::binary_arms()},
                                {LossSpec::quantile(0.5), DoseResponseModel::polynomial(1)},
                                {LossSpec::asymmetric_ls(0.7), DoseResponseModel::polynomial(1)},
                                {LossSpec::cross_entropy(), DoseResponseModel::probit_polynomial(1)}};
  for (const auto& path : paths) {
    for (int trial = 0; trial < 3; ++trial) {
      const Dataset d = small_instance(path.spec, path.model, 12, rng);
      const Eigen::VectorXd w = testutil::uniform_vector(12, 0.5, 2.0, rng);
      const Eigen::VectorXd b = solve_beta(d, w, path.spec, path.model);
      const Eigen::Vector2d oracle = testutil::grid_argmin(d, w, path.spec, path.model);
      EXPECT_LE((b - oracle).lpNorm<Eigen::Infinity>(), 2e-3)
          << path.spec.name() << "/" << path.model.name() << " solver " << b.transpose() << " oracle "
          << oracle.transpose() << " objectives " << weighted_objective(d, w, path.spec, path.model, b) << " "
          << weighted_objective(d, w, path.spec, path.model, oracle);
      EXPECT_LE(weighted_objective(d, w, path.spec, path.model, b),
                weighted_objective(d, w, path.spec, path.model, oracle) + 1e-9);
    }
  }
}
