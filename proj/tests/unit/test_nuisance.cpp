#include <gtest/gtest.h>

#include <cmath>

#include "bnnw/error.hpp"
#include "bnnw/nuisance.hpp"
#include "bnnw/simlab.hpp"
#include "test_util.hpp"

using namespace bnnw;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

Dataset dgpb_sample(Index n, std::uint64_t seed) {
  DgpBParams params;
  params.d = 2;
  params.gamma = Eigen::Vector2d(0.7, 0.5);
  return dgpb_generate(n, params, seed).data;
}

}  // namespace

TEST(FitMu, ConstantTargetsGiveConstantPrediction) {
  Rng rng(1);
  const Dataset base = testutil::random_continuous(120, 2, rng);
  Eigen::VectorXd y(base.size());
  for (Index i = 0; i < base.size(); ++i) y[i] = 1.0 + 2.0 * base.t(i);  // zero residual at beta = (1, 2)
  const Dataset d(y, base.t(), base.x(), TreatmentKind::Continuous);
  const MuModel mu = fit_mu(d, Eigen::Vector2d(1, 2), LossSpec::squared(), DoseResponseModel::polynomial(1), {});
  const Eigen::MatrixXd pred = mu.predict(treatment_features(d));
  EXPECT_LE(pred.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitMu, SingleLeafPredictsTargetMeans) {
  Rng rng(2);
  const Dataset d = testutil::random_binary(80, 2, rng);
  BoostedTreesConfig cfg;
  cfg.trees = 1;
  cfg.max_leaves = 1;
  const Eigen::Vector2d beta(0.3, -0.2);
  const MuModel mu = fit_mu(d, beta, LossSpec::squared(), DoseResponseModel::binary_arms(), cfg);
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (Index i = 0; i < d.size(); ++i)
    mean += score_h(LossSpec::squared(), DoseResponseModel::binary_arms(), d.y(i), d.t(i), beta);
  mean /= static_cast<double>(d.size());
  const Eigen::VectorXd p = mu.predict(0.0, Eigen::Vector2d(0.5, 0.5));
  EXPECT_NEAR(p[0], mean[0], 1e-12);
  EXPECT_NEAR(p[1], mean[1], 1e-12);
}

TEST(FitMu, LearnsDgpBConditionalMeans) {
  const Dataset train = dgpb_sample(4000, 3), test = dgpb_sample(4000, 4);
  const auto spec = LossSpec::squared();
  const auto model = DoseResponseModel::binary_arms();
  const Eigen::Vector2d beta = Eigen::Vector2d::Zero();
  const MuModel mu = fit_mu(train, beta, spec, model, {});
  const Eigen::MatrixXd pred = mu.predict(treatment_features(test));
  for (Index j = 0; j < 2; ++j) {
    Eigen::VectorXd target(test.size());
    for (Index i = 0; i < test.size(); ++i) target[i] = score_h(spec, model, test.y(i), test.t(i), beta)[j];
    const double var = (target.array() - target.mean()).square().mean();
    const double mse = (pred.col(j) - target).squaredNorm() / static_cast<double>(test.size());
    EXPECT_LE(mse, 0.7 * var) << "component " << j;
  }
}

TEST(FitMu, QuantileComponentsStayBounded) {
  const Dataset train = dgpb_sample(1500, 5);
  const MuModel mu =
      fit_mu(train, Eigen::Vector2d(0.4, 0.9), LossSpec::quantile(0.3), DoseResponseModel::binary_arms(), {});
  const Eigen::MatrixXd pred = mu.predict(treatment_features(dgpb_sample(1500, 6)));
  EXPECT_LE(pred.cwiseAbs().maxCoeff(), 1.2);
}

TEST(FitMu, Deterministic) {
  const Dataset train = dgpb_sample(300, 7);
  BoostedTreesConfig cfg;
  cfg.subsample = 0.8;
  cfg.seed = 3;
  const auto f = treatment_features(train);
  const MuModel a = fit_mu(train, Eigen::Vector2d(0, 0), LossSpec::squared(), DoseResponseModel::binary_arms(), cfg);
  const MuModel b = fit_mu(train, Eigen::Vector2d(0, 0), LossSpec::squared(), DoseResponseModel::binary_arms(), cfg);
  EXPECT_EQ(a.predict(f), b.predict(f));
}

TEST(FitMu, RejectsBadInputs) {
  const Dataset train = dgpb_sample(50, 8);
  EXPECT_THROW(fit_mu(train, Eigen::Vector3d::Zero(), LossSpec::squared(), DoseResponseModel::binary_arms(), {}),
               Error);
  Eigen::VectorXd y = train.y();
  y[0] = 0.5;  // cross-entropy needs 0/1 outcomes: the score targets are undefined
  const Dataset bad(y, train.t(), train.x(), TreatmentKind::Binary);
  EXPECT_THROW(fit_mu(bad, Eigen::Vector2d(0.5, 0.5), LossSpec::cross_entropy(), DoseResponseModel::binary_arms(), {}),
               Error);
}

TEST(FitDmu, AnalyticBinaryAteIsArmIndicator) {
  const Dataset train = dgpb_sample(50, 9);
  const DmuModel dmu = fit_dmu(train, Eigen::Vector2d::Zero(), LossSpec::squared(), DoseResponseModel::binary_arms(),
                               {}, DmuMode::AnalyticBinaryATE);
  const Eigen::Vector2d x(0.4, 0.6);
  EXPECT_EQ(dmu.predict(1.0, x), (Eigen::Matrix2d() << 0, 0, 0, 1).finished());
  EXPECT_EQ(dmu.predict(0.0, x), (Eigen::Matrix2d() << 1, 0, 0, 0).finished());
  const Eigen::MatrixXd all = dmu.predict(treatment_features(train));
  for (Index i = 0; i < all.size(); ++i) EXPECT_TRUE(all(i) == 0.0 || all(i) == 1.0);
}

TEST(FitDmu, AnalyticModesRejectOtherModels) {
  const Dataset train = dgpb_sample(50, 10);
  EXPECT_EQ(code_of([&] {
              fit_dmu(train, Eigen::Vector2d::Zero(), LossSpec::quantile(0.5), DoseResponseModel::binary_arms(), {},
                      DmuMode::AnalyticBinaryATE);
            }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] {
              fit_dmu(train, Eigen::Vector3d::Zero(), LossSpec::squared(), DoseResponseModel::probit_polynomial(2),
                      {}, DmuMode::AnalyticLinearSquared);
            }),
            ErrorCode::InvalidArgument);
}

TEST(FitDmu, AnalyticLinearSquaredIsOuterProductOfBasis) {
  Rng rng(11);
  const Dataset train = testutil::random_continuous(40, 2, rng);
  const auto model = DoseResponseModel::polynomial(2);
  const DmuModel dmu =
      fit_dmu(train, Eigen::Vector3d::Zero(), LossSpec::squared(), model, {}, DmuMode::AnalyticLinearSquared);
  const Eigen::VectorXd b = basis(model, 0.3);
  EXPECT_TRUE(dmu.predict(0.3, Eigen::Vector2d(0.1, 0.2)).isApprox(b * b.transpose()));
}

TEST(FitDmu, NumericAgreesWithAnalyticForBinaryAte) {
  const Dataset train = dgpb_sample(4000, 12);
  const DmuModel dmu = fit_dmu(train, Eigen::Vector2d::Zero(), LossSpec::squared(), DoseResponseModel::binary_arms(),
                               {}, DmuMode::NumericBeta);
  EXPECT_DOUBLE_EQ(dmu.step(), 1e-2);
  Eigen::Matrix2d err = Eigen::Matrix2d::Zero();
  int count = 0;
  for (double t : {0.0, 1.0})
    for (double a = 0.325; a < 0.7; a += 0.05)
      for (double b = 0.325; b < 0.7; b += 0.05) {
        Eigen::Matrix2d exact = Eigen::Matrix2d::Zero();
        exact(0, 0) = 1.0 - t;
        exact(1, 1) = t;
        err += (dmu.predict(t, Eigen::Vector2d(a, b)) - exact).cwiseAbs();
        ++count;
      }
  err /= count;
  EXPECT_LE(err.maxCoeff(), 0.15) << err;
}

TEST(BuildInstrument, BinaryAtePrunesOffDiagonalZeros) {
  const Dataset train = dgpb_sample(400, 13), fold = dgpb_sample(100, 14);
  const auto spec = LossSpec::squared();
  const auto model = DoseResponseModel::binary_arms();
  auto mu = std::make_shared<const MuModel>(fit_mu(train, Eigen::Vector2d::Zero(), spec, model, {}));
  auto dmu = std::make_shared<const DmuModel>(
      fit_dmu(train, Eigen::Vector2d::Zero(), spec, model, {}, DmuMode::AnalyticBinaryATE));
  const InstrumentFn xi = build_instrument(mu, dmu, fold);
  EXPECT_EQ(xi.full_dim(), 6);
  EXPECT_EQ(xi.dim(), 4);
  EXPECT_EQ(xi.labels(), (std::vector<std::string>{"mu[0]", "mu[1]", "dmu[0,0]", "dmu[1,1]"}));
}

TEST(BuildInstrument, DuplicateColumnIsPruned) {
  Rng rng(15);
  const Dataset d = testutil::random_continuous(60, 2, rng);
  const FeatureMap mu = [](const RowMatrix& f) {
    Eigen::MatrixXd out(f.rows(), 1);
    out.col(0) = (f.col(0).array() + f.col(1).array()).sin();
    return out;
  };
  const FeatureMap dmu = mu;  // p = 1: the derivative column duplicates mu
  const InstrumentFn xi = build_instrument(mu, dmu, 1, treatment_features(d));
  EXPECT_EQ(xi.dim(), 1);
  EXPECT_EQ(xi.full_dim(), 2);
}

TEST(BuildInstrument, GenericColumnsAreKept) {
  Rng rng(16);
  const Dataset d = testutil::random_continuous(60, 2, rng);
  const FeatureMap mu = [](const RowMatrix& f) {
    Eigen::MatrixXd out(f.rows(), 2);
    out.col(0) = (f.col(0).array() + f.col(1).array()).sin();
    out.col(1) = (3.0 * f.col(2).array()).cos();
    return out;
  };
  const FeatureMap dmu = [](const RowMatrix& f) {
    Eigen::MatrixXd out(f.rows(), 4);
    out.col(0) = f.col(0).array().square();
    out.col(1) = (f.col(1).array() * f.col(2).array()).exp();
    out.col(2) = f.col(0).array() * f.col(2).array();
    out.col(3) = Eigen::VectorXd::Ones(f.rows());
    return out;
  };
  const InstrumentFn xi = build_instrument(mu, dmu, 2, treatment_features(d));
  EXPECT_EQ(xi.dim(), 6);
  for (bool keep : xi.mask()) EXPECT_TRUE(keep);
  EXPECT_EQ(xi(0.5, Eigen::Vector2d(0.1, 0.2)).size(), 6);
}

TEST(BuildInstrument, Errors) {
  Rng rng(17);
  const Dataset d = testutil::random_continuous(60, 2, rng);
  const FeatureMap zero1 = [](const RowMatrix& f) { return Eigen::MatrixXd::Zero(f.rows(), 1); };
  EXPECT_EQ(code_of([&] { build_instrument(zero1, zero1, 1, treatment_features(d)); }), ErrorCode::ZeroInstrument);
  const Dataset tiny = testutil::random_continuous(5, 2, rng);
  const FeatureMap zero2 = [](const RowMatrix& f) { return Eigen::MatrixXd::Ones(f.rows(), 2); };
  const FeatureMap zero4 = [](const RowMatrix& f) { return Eigen::MatrixXd::Ones(f.rows(), 4); };
  EXPECT_EQ(code_of([&] { build_instrument(zero2, zero4, 2, treatment_features(tiny)); }),
            ErrorCode::TooFewObservations);
}

TEST(IndependentColumns, NeverDropsAColumnWithLargeResidual) {
  Rng rng(18);
  std::uniform_int_distribution<int> cols(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const Index m = cols(rng);
    Eigen::MatrixXd v = testutil::normal_matrix(40, m, rng);
    // Plant exact and near dependencies plus scale differences.
    if (m >= 3) v.col(2) = 2.0 * v.col(0) - v.col(1);
    if (m >= 5) v.col(4) = v.col(3) * 1e6;
    if (m >= 6) v.col(5) = v.col(0) + 1e-12 * v.col(1);
    if (m >= 7) v.col(6) *= 1e-5;
    const std::vector<bool> mask = independent_columns(v);
    std::vector<Index> kept;
    for (Index j = 0; j < m; ++j)
      if (mask[j]) kept.push_back(j);
    ASSERT_FALSE(kept.empty());
    Eigen::MatrixXd basis_cols(v.rows(), static_cast<Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c) basis_cols.col(static_cast<Index>(c)) = v.col(kept[c]);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(basis_cols);
    EXPECT_EQ(qr.rank(), static_cast<Index>(kept.size())) << "retained columns must be independent";
    for (Index j = 0; j < m; ++j) {
      if (mask[j]) continue;
      const Eigen::VectorXd fit = basis_cols * qr.solve(v.col(j));
      EXPECT_LE((v.col(j) - fit).norm(), kPruneTolerance * v.col(j).norm() * (1.0 + 1e-6)) << "column " << j;
    }
    if (m >= 3) EXPECT_FALSE(mask[0] && mask[1] && mask[2]);
  }
}
