#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bnnw/error.hpp"
#include "bnnw/simlab.hpp"
#include "bnnw/weightnet.hpp"
#include "test_util.hpp"

using namespace bnnw;
using bnnw::testutil::random_binary;
using bnnw::testutil::random_continuous;

namespace {

WeightNet random_net(Index d, int width, int depth, double scale, std::uint64_t seed, const Dataset* data) {
  WeightNet net(d, width, depth, 20.0);
  if (data) net.fit_standardization(*data);
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, scale);
  Eigen::VectorXd p(net.num_parameters());
  for (Index i = 0; i < p.size(); ++i) p[i] = z(rng);
  net.set_parameters(p);
  return net;
}

IndexList iota_list(Index n) {
  IndexList v(n);
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

}  // namespace

TEST(EmpiricalRisk, ConstantFunction) {
  Rng rng(1);
  const Dataset d = random_binary(30, 3, rng);
  for (double c : {0.5, 1.0, 2.0}) {
    const WeightFunction pi = [c](double, const Eigen::Ref<const Eigen::VectorXd>&) { return c; };
    EXPECT_NEAR(empirical_risk(pi, d), c * c - 2.0 * c, 1e-12);
  }
}

TEST(EmpiricalRisk, TwoObservationHandComputation) {
  Eigen::VectorXd y(2), t(2);
  y << 0, 0;
  t << 0, 1;
  RowMatrix x(2, 1);
  x << 10, 20;
  const Dataset d(y, t, x, TreatmentKind::Binary);
  const WeightFunction pi = [](double tt, const Eigen::Ref<const Eigen::VectorXd>& xx) {
    const bool first_t = tt == 0.0, first_x = xx[0] == 10.0;
    if (first_t && first_x) return 1.0;
    if (!first_t && !first_x) return 3.0;
    if (first_t) return 2.0;
    return 0.0;
  };
  EXPECT_DOUBLE_EQ(empirical_risk(pi, d), 3.0);
}

TEST(EmpiricalRisk, NetworkPathMatchesFunctionPath) {
  Rng rng(2);
  const Dataset d = random_continuous(40, 3, rng);
  const WeightNet net = random_net(3, 8, 2, 0.4, 5, &d);
  const WeightFunction f = [&](double t, const Eigen::Ref<const Eigen::VectorXd>& x) { return net.predict(t, x); };
  EXPECT_NEAR(empirical_risk(net, d), empirical_risk(f, d), 1e-12);
}

TEST(EmpiricalRisk, TruePi0BeatsPerturbations) {
  DgpBParams params;
  params.d = 2;
  params.gamma = Eigen::Vector2d(0.7, 0.5);
  const Dataset d = dgpb_generate(1500, params, 9).data;
  const WeightFunction pi0 = [&](double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return dgpb_true_pi0(params, t, x);
  };
  const double r0 = empirical_risk(pi0, d);
  for (double delta : {-0.3, 0.3}) {
    const WeightFunction shifted = [&](double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
      return dgpb_true_pi0(params, t, x) + delta;
    };
    EXPECT_LT(r0, empirical_risk(shifted, d));
  }
  const WeightFunction tilted = [&](double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return dgpb_true_pi0(params, t, x) * (t == 1.0 ? 1.3 : 0.8);
  };
  EXPECT_LT(r0, empirical_risk(tilted, d));
}

TEST(WeightNet, ZeroParametersPredictOne) {
  WeightNet net(4, 16, 3, 20.0);
  EXPECT_EQ(net.predict(0.3, Eigen::VectorXd::Constant(4, 7.0)), 1.0);
  net.initialize(3);  // zero output layer: still exactly one
  EXPECT_EQ(net.predict(-2.0, Eigen::VectorXd::Constant(4, -1.0)), 1.0);
}

TEST(WeightNet, PredictionsStayInsideClampBand) {
  const WeightNet net = random_net(3, 16, 3, 5.0, 8, nullptr);
  Rng rng(4);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  int saw_top = 0, saw_bottom = 0;
  for (int k = 0; k < 2000; ++k) {
    Eigen::VectorXd x(3);
    for (Index j = 0; j < 3; ++j) x[j] = u(rng);
    const double v = net.predict(u(rng), x);
    EXPECT_GE(v, 1.0 / 20.0 * (1 - 1e-12));
    EXPECT_LE(v, 20.0 * (1 + 1e-12));
    saw_top += v > 19.99;
    saw_bottom += v < 0.0501;
  }
  EXPECT_GT(saw_top + saw_bottom, 0);  // the extreme inputs do reach the clamp
}

TEST(WeightNet, PredictionIsPure) {
  const WeightNet net = random_net(2, 8, 2, 0.5, 9, nullptr);
  const Eigen::Vector2d x(0.2, -0.4);
  EXPECT_EQ(net.predict(0.7, x), net.predict(0.7, x));
  EXPECT_THROW(net.predict(0.7, Eigen::VectorXd::Zero(3)), Error);
}

TEST(WeightNet, JsonRoundTrip) {
  Rng rng(3);
  const Dataset d = random_continuous(20, 3, rng);
  const WeightNet net = random_net(3, 5, 2, 0.5, 10, &d);
  const WeightNet back = WeightNet::from_json(net.to_json());
  EXPECT_EQ(back.parameters(), net.parameters());
  EXPECT_EQ(back.input_shift(), net.input_shift());
  EXPECT_EQ(back.predict(d), net.predict(d));
  const auto doc = net.to_json();
  ASSERT_EQ(doc.at("layers").size(), 3u);
  EXPECT_EQ(doc["layers"][0]["rows"].get<int>(), 5);
  EXPECT_EQ(doc["layers"][0]["cols"].get<int>(), 4);
}

TEST(RiskGradient, ConstantOutputReduction) {
  Rng rng(5);
  const Dataset d = random_binary(20, 2, rng);
  const IndexList batch = iota_list(10);
  for (double c : {0.5, 1.0, 3.0}) {
    WeightNet net(2, 6, 2, 20.0);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(net.num_parameters());
    p[p.size() - 1] = std::log(c);  // output bias
    net.set_parameters(p);
    const RiskGradient g = risk_gradient(net, d, batch);
    EXPECT_NEAR(g.risk, c * c - 2.0 * c, 1e-12);
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(p.size());
    expected[p.size() - 1] = (2.0 * c - 2.0) * c;
    EXPECT_LE((g.gradient - expected).lpNorm<Eigen::Infinity>(), 1e-12) << "c=" << c;
  }
}

TEST(RiskGradient, MatchesFiniteDifferences) {
  Rng rng(6);
  std::uniform_int_distribution<int> bsize(2, 12);
  for (int draw = 0; draw < 20; ++draw) {
    const Dataset d = random_continuous(40, 3, rng);
    WeightNet net = random_net(3, 7, 1 + draw % 3, 0.4, 100 + draw, &d);
    IndexList all = iota_list(40);
    std::shuffle(all.begin(), all.end(), rng);
    const IndexList batch(all.begin(), all.begin() + bsize(rng));

    const RiskGradient g = risk_gradient(net, d, batch);
    EXPECT_NEAR(g.risk, minibatch_risk(net, d, batch), 1e-12);
    const Eigen::VectorXd base = net.parameters();
    Eigen::VectorXd fd(base.size());
    for (Index i = 0; i < base.size(); ++i) {
      const double h = 1e-6;
      Eigen::VectorXd p = base;
      p[i] += h;
      net.set_parameters(p);
      const double up = minibatch_risk(net, d, batch);
      p[i] -= 2.0 * h;
      net.set_parameters(p);
      const double dn = minibatch_risk(net, d, batch);
      fd[i] = (up - dn) / (2.0 * h);
    }
    net.set_parameters(base);
    EXPECT_LE((fd - g.gradient).norm() / std::max(1e-8, g.gradient.norm()), 1e-4) << "draw " << draw;
  }
}

TEST(RiskGradient, PairPathMatchesDenseBackward) {
  Rng rng(7);
  const Dataset d = random_continuous(12, 4, rng);
  const WeightNet net = random_net(4, 9, 3, 0.5, 77, &d);
  const IndexList batch{3, 7, 1, 10, 4};
  const Index b = 5;
  Eigen::MatrixXd raw(5, b * b);
  Index c = 0;
  for (Index i = 0; i < b; ++i, ++c) {
    raw(0, c) = d.t(batch[i]);
    raw.col(c).tail(4) = d.x(batch[i]).transpose();
  }
  for (Index j = 0; j < b; ++j)
    for (Index l = 0; l < b; ++l)
      if (j != l) {
        raw(0, c) = d.t(batch[j]);
        raw.col(c).tail(4) = d.x(batch[l]).transpose();
        ++c;
      }
  const double bd = static_cast<double>(b);
  const Eigen::VectorXd dense = net.backward(raw, [&](const Eigen::VectorXd& pi) {
    Eigen::VectorXd w(pi.size());
    w.head(b) = 2.0 * pi.head(b) / bd;
    w.tail(pi.size() - b).setConstant(-2.0 / (bd * (bd - 1.0)));
    return w;
  });
  const RiskGradient g = risk_gradient(net, d, batch);
  EXPECT_LE((dense - g.gradient).lpNorm<Eigen::Infinity>(), 1e-12 * std::max(1.0, dense.lpNorm<Eigen::Infinity>()));
}

TEST(RiskGradient, BatchOfTwoUsesTwoCrossPairs) {
  Rng rng(8);
  const Dataset d = random_continuous(6, 2, rng);
  const WeightNet net = random_net(2, 5, 2, 0.5, 12, &d);
  const IndexList batch{1, 4};
  const double p11 = net.predict(d.t(1), d.x(1).transpose());
  const double p44 = net.predict(d.t(4), d.x(4).transpose());
  const double p14 = net.predict(d.t(1), d.x(4).transpose());
  const double p41 = net.predict(d.t(4), d.x(1).transpose());
  EXPECT_NEAR(minibatch_risk(net, d, batch), (p11 * p11 + p44 * p44) / 2.0 - (p14 + p41), 1e-12);
  EXPECT_THROW(minibatch_risk(net, d, IndexList{1}), Error);
}

TEST(RiskGradient, MinibatchCrossTermIsUnbiased) {
  Rng rng(9);
  const Index n = 50, b = 6;
  const Dataset d = random_continuous(n, 3, rng);
  const WeightNet net = random_net(3, 8, 2, 0.6, 13, &d);
  const Eigen::VectorXd diag_all = net.predict(d);
  const double full_cross = (diag_all.squaredNorm() / n - empirical_risk(net, d)) / 2.0;

  IndexList all = iota_list(n);
  const int reps = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    std::shuffle(all.begin(), all.end(), rng);
    const IndexList batch(all.begin(), all.begin() + b);
    double diag = 0.0;
    for (Index i : batch) diag += diag_all[i] * diag_all[i];
    const double cross = (diag / b - minibatch_risk(net, d, batch)) / 2.0;
    sum += cross;
    sum2 += cross * cross;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / (reps - 1));
  EXPECT_LE(std::abs(mean - full_cross), 3.0 * se) << "mean " << mean << " full " << full_cross;
}

TEST(TrainWeightNet, IndependentTreatmentGivesUnitWeights) {
  Rng rng(21);
  const Dataset d = random_continuous(2000, 3, rng);  // t drawn independently of x
  WeightNetConfig cfg;
  cfg.width = 32;
  cfg.epochs = 25;
  cfg.seed = 4;
  const WeightNetFit fit = train_weight_net(d, cfg);
  const Eigen::VectorXd pred = fit.net.predict(d);
  const double mean = pred.mean();
  const double sd = std::sqrt((pred.array() - mean).square().sum() / (pred.size() - 1));
  EXPECT_GE(mean, 0.8);
  EXPECT_LE(mean, 1.25);
  EXPECT_LE(sd, 0.25);
  EXPECT_EQ(fit.validation_risk.size(), 26u);
  EXPECT_GE(fit.best_epoch, 0);
}

TEST(TrainWeightNet, LearnsDgpBWeights) {
  DgpBParams params;
  params.d = 5;
  const Dataset d = dgpb_generate(4000, params, 31).data;
  WeightNetConfig cfg;
  cfg.width = 32;
  cfg.epochs = 40;
  cfg.seed = 8;
  const WeightNetFit fit = train_weight_net(d, cfg);
  const Dataset test = dgpb_generate(4000, params, 32).data;
  const Eigen::VectorXd pred = fit.net.predict(test);
  double mse_fit = 0.0, mse_flat = 0.0;
  for (Index i = 0; i < test.size(); ++i) {
    const double truth = dgpb_true_pi0(params, test.t(i), test.x(i).transpose());
    mse_fit += std::pow(pred[i] - truth, 2);
    mse_flat += std::pow(1.0 - truth, 2);
  }
  EXPECT_LE(mse_fit, 0.75 * mse_flat) << "fit " << mse_fit / test.size() << " flat " << mse_flat / test.size();
}

TEST(TrainWeightNet, DeterministicGivenSeed) {
  Rng rng(22);
  const Dataset d = random_binary(200, 3, rng);
  WeightNetConfig cfg;
  cfg.width = 8;
  cfg.epochs = 5;
  cfg.batch = 16;
  cfg.seed = 99;
  const WeightNetFit a = train_weight_net(d, cfg), b = train_weight_net(d, cfg);
  EXPECT_EQ(a.net.parameters(), b.net.parameters());
  EXPECT_EQ(a.validation_risk, b.validation_risk);
  cfg.seed = 100;
  EXPECT_NE(train_weight_net(d, cfg).net.parameters(), a.net.parameters());
}

TEST(TrainWeightNet, CheckpointIsBestValidationEpoch) {
  Rng rng(23);
  const Dataset d = random_binary(200, 3, rng);
  WeightNetConfig cfg;
  cfg.width = 8;
  cfg.epochs = 12;
  cfg.batch = 16;
  cfg.step_size = 0.05;
  cfg.seed = 5;
  const WeightNetFit fit = train_weight_net(d, cfg);
  const auto best = std::min_element(fit.validation_risk.begin(), fit.validation_risk.end());
  EXPECT_EQ(fit.best_epoch, best - fit.validation_risk.begin());
}

TEST(TrainWeightNet, ConfigValidation) {
  Rng rng(24);
  const Dataset d = random_binary(40, 2, rng);
  WeightNetConfig cfg;
  cfg.batch = 1;
  EXPECT_THROW(train_weight_net(d, cfg), Error);
  cfg = WeightNetConfig{};
  cfg.clip = 1.0;
  EXPECT_THROW(train_weight_net(d, cfg), Error);
  cfg = WeightNetConfig{};  // batch 64 needs N >= 128
  EXPECT_THROW(train_weight_net(d, cfg), Error);
}
