#include "bnnw/simlab.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>

#include "bnnw/error.hpp"
#include "bnnw/nuisance.hpp"
#include "bnnw/parallel.hpp"
#include "bnnw/random.hpp"

namespace bnnw {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string memo_key(std::initializer_list<double> parts, const Eigen::VectorXd& extra) {
  std::ostringstream os;
  for (double p : parts) os << format_real(p) << '|';
  for (Index j = 0; j < extra.size(); ++j) os << format_real(extra[j]) << ',';
  return os.str();
}

}  // namespace

// ---- DGP-B ----

Eigen::VectorXd DgpBParams::resolved_gamma() const {
  if (gamma.size() == 0) return Eigen::VectorXd::Constant(d, 1.0 / static_cast<double>(d));
  return gamma;
}

void DgpBParams::validate() const {
  require(d >= 1, ErrorCode::InvalidArgument, "covariate dimension must be positive");
  const Eigen::VectorXd g = resolved_gamma();
  require(g.size() == d, ErrorCode::DimensionMismatch, "gamma must have length d");
  double lo = 0.0, hi = 0.0;
  for (Index j = 0; j < d; ++j) {
    lo += g[j] * (g[j] >= 0.0 ? 0.3 : 0.7);
    hi += g[j] * (g[j] >= 0.0 ? 0.7 : 0.3);
  }
  require(lo >= 0.0 && hi <= 1.0 && lo < hi + 1e-300 && g.allFinite(), ErrorCode::DomainError,
          "gamma must keep x'gamma inside (0, 1) on the covariate support");
}

double DgpBParams::propensity(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return x.dot(resolved_gamma());
}

double DgpBParams::treated_share() const { return 0.5 * resolved_gamma().sum(); }

double dgpb_y0(double p, double u) { return u <= p ? u * u / p : u; }
double dgpb_y1(double p, double u) { return u <= 1.0 - p ? 2.0 * u * u / (1.0 - p) : 2.0 * u; }
double dgpb_mean_y0(double p) { return 0.5 - p * p / 6.0; }
double dgpb_mean_y1(double p) { return 1.0 - (1.0 - p) * (1.0 - p) / 3.0; }

double dgpb_cdf_y0(double p, double y) {
  if (y <= 0.0) return 0.0;
  if (y >= 1.0) return 1.0;
  return y <= p ? std::sqrt(p * y) : y;
}

double dgpb_cdf_y1(double p, double y) {
  if (y <= 0.0) return 0.0;
  if (y >= 2.0) return 1.0;
  return y <= 2.0 * (1.0 - p) ? std::sqrt(y * (1.0 - p) / 2.0) : y / 2.0;
}

DgpBSample dgpb_generate(Index N, const DgpBParams& params, std::uint64_t seed) {
  require(N >= 1, ErrorCode::InvalidArgument, "N must be positive");
  params.validate();
  const Index d = params.d;
  const Eigen::VectorXd gamma = params.resolved_gamma();
  Rng rng = make_rng(seed, "dgpb");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  RowMatrix x(N, d);
  Eigen::VectorXd y(N), t(N), y0(N), y1(N);
  for (Index i = 0; i < N; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = 0.3 + 0.4 * unif(rng);
    const double p = x.row(i).dot(gamma.transpose());
    const double ut = unif(rng), u0 = unif(rng), u1 = unif(rng);
    t[i] = ut < p ? 1.0 : 0.0;
    y0[i] = dgpb_y0(p, u0);
    y1[i] = dgpb_y1(p, u1);
    y[i] = t[i] == 1.0 ? y1[i] : y0[i];
  }
  return {Dataset(std::move(y), std::move(t), std::move(x), TreatmentKind::Binary), std::move(y0), std::move(y1)};
}

double dgpb_true_pi0(const DgpBParams& params, double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double p = params.propensity(x), share = params.treated_share();
  return t == 1.0 ? share / p : (1.0 - share) / (1.0 - p);
}

double dgpb_analytic_ate(const DgpBParams& params) {
  params.validate();
  const Eigen::VectorXd g = params.resolved_gamma();
  const double m = 0.5 * g.sum();
  const double v = g.squaredNorm() * 0.16 / 12.0;
  const double ep2 = m * m + v;
  const double e1p2 = (1.0 - m) * (1.0 - m) + v;
  return 0.5 - e1p2 / 3.0 + ep2 / 6.0;
}

DgpBEffects dgpb_true_effects(const DgpBParams& params, const std::vector<double>& taus, Index draws,
                              std::uint64_t seed) {
  params.validate();
  require(draws >= 2, ErrorCode::InvalidArgument, "oracle needs at least two draws");
  static std::mutex mu;
  static std::map<std::string, DgpBEffects> cache;
  Eigen::VectorXd key_tail(params.d + static_cast<Index>(taus.size()));
  key_tail << params.resolved_gamma(), Eigen::Map<const Eigen::VectorXd>(taus.data(), taus.size());
  const std::string key = memo_key({static_cast<double>(draws), static_cast<double>(seed)}, key_tail);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }

  const Eigen::VectorXd gamma = params.resolved_gamma();
  Rng rng = make_rng(seed, "dgpb-oracle");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> y0(draws), y1(draws);
  double sum = 0.0, sumsq = 0.0;
  for (Index i = 0; i < draws; ++i) {
    double p = 0.0;
    for (Index j = 0; j < params.d; ++j) p += gamma[j] * (0.3 + 0.4 * unif(rng));
    y0[i] = dgpb_y0(p, unif(rng));
    y1[i] = dgpb_y1(p, unif(rng));
    const double diff = y1[i] - y0[i];
    sum += diff;
    sumsq += diff * diff;
  }
  DgpBEffects out;
  const double n = static_cast<double>(draws);
  out.draws = draws;
  out.ate = sum / n;
  out.ate_se = std::sqrt(std::max(0.0, (sumsq - n * out.ate * out.ate) / (n - 1.0)) / n);
  out.taus = taus;
  for (double tau : taus) {
    require(tau > 0.0 && tau < 1.0, ErrorCode::InvalidArgument, "tau must lie in (0, 1)");
    const auto k = static_cast<std::size_t>(std::ceil(tau * n - 1e-9)) - 1;
    std::nth_element(y0.begin(), y0.begin() + k, y0.end());
    std::nth_element(y1.begin(), y1.begin() + k, y1.end());
    out.qte.push_back(y1[k] - y0[k]);
  }
  std::lock_guard lock(mu);
  cache.emplace(key, out);
  return out;
}

// ---- IHDP-style continuous design ----

double ihdp_dose_factor(double t) { return -0.8 + 3.2 * t - 3.2 * t * t; }

double ihdp_treatment_index(const Eigen::Ref<const Eigen::VectorXd>& x) {
  require(x.size() == kIhdpCovariates, ErrorCode::DimensionMismatch, "expected 25 covariates");
  static constexpr int J1[] = {2, 5, 6, 7, 8, 9, 10, 11, 12, 13};
  double m = 0.0;
  for (int j : J1) m += x[j];
  m /= 10.0;
  const double hi = std::max({x[2], x[3], x[4]}), lo = std::min({x[2], x[3], x[4]});
  return 3.0 * x[0] / (1.0 + x[1]) + 3.0 * hi / (0.2 + lo) + 3.0 * std::tanh(5.0 * m) - 6.0;
}

double ihdp_covariate_effect(const Eigen::Ref<const Eigen::VectorXd>& x) {
  require(x.size() == kIhdpCovariates, ErrorCode::DimensionMismatch, "expected 25 covariates");
  const double m = x.segment(14, 10).mean();
  const double lo = std::min({x[1], x[2], x[3]});
  return std::tanh(5.0 * m) + 3.0 * std::exp(0.2 * (x[0] - x[4]) / (0.1 + lo));
}

double ihdp_synthetic_effect_mean(Index draws, std::uint64_t seed) {
  require(draws >= 1, ErrorCode::InvalidArgument, "need at least one draw");
  static std::mutex mu;
  static std::map<std::pair<Index, std::uint64_t>, double> cache;
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find({draws, seed}); it != cache.end()) return it->second;
  }
  Rng rng = make_rng(seed, "ihdp-truth");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd x(kIhdpCovariates);
  double sum = 0.0;
  for (Index i = 0; i < draws; ++i) {
    for (Index j = 0; j < kIhdpCovariates; ++j) x[j] = unif(rng);
    sum += ihdp_covariate_effect(x);
  }
  const double mean = sum / static_cast<double>(draws);
  std::lock_guard lock(mu);
  cache.emplace(std::make_pair(draws, seed), mean);
  return mean;
}

IhdpSample ihdp_continuous_generate(const std::optional<RowMatrix>& covariates, Index N, std::uint64_t seed,
                                    Index curve_draws) {
  Rng rng = make_rng(seed, "ihdp");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix x;
  bool synthetic = true;
  double effect_mean = 0.0;
  if (covariates) {
    require(covariates->cols() == kIhdpCovariates, ErrorCode::DimensionMismatch,
            "covariate matrix must have 25 columns");
    x = *covariates;
    synthetic = false;
    double sum = 0.0;
    for (Index i = 0; i < x.rows(); ++i) sum += ihdp_covariate_effect(x.row(i).transpose());
    effect_mean = sum / static_cast<double>(x.rows());
  } else {
    require(N >= 1, ErrorCode::InvalidArgument, "N must be positive");
    x.resize(N, kIhdpCovariates);
    for (Index i = 0; i < N; ++i)
      for (Index j = 0; j < kIhdpCovariates; ++j) x(i, j) = unif(rng);
    effect_mean = ihdp_synthetic_effect_mean(curve_draws);
  }
  const Index n = x.rows();
  Eigen::VectorXd t(n), y(n);
  for (Index i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = x.row(i).transpose();
    t[i] = 1.0 / (1.0 + std::exp(ihdp_treatment_index(xi) + normal(rng)));
    y[i] = ihdp_h(t[i], xi) + normal(rng);
  }
  IhdpSample out{Dataset(std::move(y), std::move(t), std::move(x), TreatmentKind::Continuous), synthetic,
                 effect_mean, Eigen::VectorXd(), {}, Eigen::VectorXd()};
  out.true_beta = Eigen::Vector3d(-0.8, 3.2, -3.2) * out.effect_mean;
  out.grid = dose_grid();
  out.true_curve.resize(static_cast<Index>(out.grid.size()));
  for (std::size_t g = 0; g < out.grid.size(); ++g)
    out.true_curve[static_cast<Index>(g)] = ihdp_dose_factor(out.grid[g]) * out.effect_mean;
  return out;
}

// ---- Comparators ----

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, ErrorCode::InvalidArgument, "probability must lie in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

BaselineEstimate summarize(const Eigen::VectorXd& contrib, double alpha) {
  BaselineEstimate b;
  const double n = static_cast<double>(contrib.size());
  b.estimate = contrib.mean();
  const double var = (contrib.array() - b.estimate).square().sum() / (n - 1.0);
  b.se = std::sqrt(var / n);
  const double z = normal_quantile(1.0 - alpha / 2.0);
  b.lower = b.estimate - z * b.se;
  b.upper = b.estimate + z * b.se;
  return b;
}

}  // namespace

Baselines run_baselines(const Dataset& data, const BaselineConfig& cfg, const std::optional<BaselineNuisances>& known) {
  require(data.treatment_kind() == TreatmentKind::Binary, ErrorCode::NonBinaryTreatment,
          "comparators need a binary treatment");
  require(cfg.clip_low > 0.0 && cfg.clip_low < cfg.clip_high && cfg.clip_high < 1.0, ErrorCode::InvalidArgument,
          "invalid propensity clipping bounds");
  const Index N = data.size();
  const FoldPlan plan = make_folds(N, cfg.K, cfg.seed);
  Eigen::VectorXd ipw(N), aipw(N), pbnnw(N);
  Baselines out;
  for (int k = 0; k < cfg.K; ++k) {
    const auto kk = static_cast<std::uint64_t>(k);
    std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)> e_fn, m0_fn, m1_fn;
    if (known) {
      e_fn = known->e;
      m0_fn = known->m0;
      m1_fn = known->m1;
    } else {
      const Dataset train = data.subset(plan.complements[k]);
      IndexList treated, control;
      for (Index i = 0; i < train.size(); ++i) (train.t(i) == 1.0 ? treated : control).push_back(i);
      require(!treated.empty() && !control.empty(), ErrorCode::EmptyArm, "a training fold lacks one arm");
      BoostedTreesConfig tc = cfg.trees;
      tc.seed = derive_seed(cfg.seed, "baseline-e", {kk});
      auto e = std::make_shared<BoostedTrees>(BoostedTrees::fit(train.x(), train.t(), tc, BoostLoss::Logistic));
      const Dataset t1 = train.subset(treated), t0 = train.subset(control);
      tc.seed = derive_seed(cfg.seed, "baseline-m1", {kk});
      auto m1 = std::make_shared<BoostedTrees>(BoostedTrees::fit(t1.x(), t1.y(), tc));
      tc.seed = derive_seed(cfg.seed, "baseline-m0", {kk});
      auto m0 = std::make_shared<BoostedTrees>(BoostedTrees::fit(t0.x(), t0.y(), tc));
      e_fn = [e](const Eigen::Ref<const Eigen::VectorXd>& x) { return e->predict(x.data()); };
      m1_fn = [m1](const Eigen::Ref<const Eigen::VectorXd>& x) { return m1->predict(x.data()); };
      m0_fn = [m0](const Eigen::Ref<const Eigen::VectorXd>& x) { return m0->predict(x.data()); };
    }

    const IndexList& fold = plan.folds[k];
    const Index n = static_cast<Index>(fold.size());
    Eigen::VectorXd e(n), m0(n), m1(n), ht(n);
    Eigen::MatrixXd xi(n, 2);
    for (Index r = 0; r < n; ++r) {
      const Index i = fold[r];
      const Eigen::VectorXd x = data.x(i).transpose();
      const double raw = e_fn(x);
      e[r] = std::clamp(raw, cfg.clip_low, cfg.clip_high);
      if (e[r] != raw) ++out.clipped;
      m0[r] = m0_fn(x);
      m1[r] = m1_fn(x);
      const double t = data.t(i), y = data.y(i);
      ht[r] = t * y / e[r] - (1.0 - t) * y / (1.0 - e[r]);
      ipw[i] = ht[r];
      aipw[i] = m1[r] - m0[r] + t * (y - m1[r]) / e[r] - (1.0 - t) * (y - m0[r]) / (1.0 - e[r]);
      xi(r, 0) = t * m1[r] / e[r];
      xi(r, 1) = (1.0 - t) * m0[r] / (1.0 - e[r]);
    }

    Eigen::VectorXd omega = Eigen::VectorXd::Ones(n);
    try {
      const std::vector<bool> mask = independent_columns(xi);
      std::vector<Index> keep;
      for (Index c = 0; c < 2; ++c)
        if (mask[c]) keep.push_back(c);
      Eigen::MatrixXd xk(n, static_cast<Index>(keep.size()));
      Eigen::VectorXd target(static_cast<Index>(keep.size()));
      for (std::size_t c = 0; c < keep.size(); ++c) {
        xk.col(static_cast<Index>(c)) = xi.col(keep[c]);
        target[static_cast<Index>(c)] = keep[c] == 0 ? m1.mean() : m0.mean();
      }
      const CalibrationResult cal = solve_dual(Eigen::VectorXd::Ones(n), xk, target, cfg.calibration);
      if (cal.converged) {
        omega = cal.weights;
      } else {
        out.pbnnw.calibrated = false;
      }
    } catch (const Error& err) {
      if (err.code() != ErrorCode::ZeroInstrument && err.code() != ErrorCode::SingularHessian) throw;
      out.pbnnw.calibrated = err.code() == ErrorCode::ZeroInstrument;
    }
    for (Index r = 0; r < n; ++r) pbnnw[fold[r]] = omega[r] * ht[r];
  }
  if (out.clipped > 0) spdlog::debug("comparators: {} propensities clipped", out.clipped);
  const bool calibrated = out.pbnnw.calibrated;
  out.ipw = summarize(ipw, cfg.alpha);
  out.aipw = summarize(aipw, cfg.alpha);
  out.pbnnw = summarize(pbnnw, cfg.alpha);
  out.pbnnw.calibrated = calibrated;
  return out;
}

BaselineEstimate baseline_ipw(const Dataset& data, const BaselineConfig& cfg) { return run_baselines(data, cfg).ipw; }
BaselineEstimate baseline_aipw(const Dataset& data, const BaselineConfig& cfg) { return run_baselines(data, cfg).aipw; }
BaselineEstimate baseline_pbnnw(const Dataset& data, const BaselineConfig& cfg) {
  return run_baselines(data, cfg).pbnnw;
}

// ---- Metrics ----

PointMetrics point_metrics(std::span<const double> est, double truth) {
  require(est.size() >= 2, ErrorCode::InvalidArgument, "metrics need at least two replications");
  const double S = static_cast<double>(est.size());
  const double mean = std::accumulate(est.begin(), est.end(), 0.0) / S;
  double ss = 0.0, se2 = 0.0;
  for (double v : est) {
    ss += (v - mean) * (v - mean);
    se2 += (v - truth) * (v - truth);
  }
  PointMetrics m;
  m.signed_bias = mean - truth;
  m.bias = std::abs(m.signed_bias);
  m.se = std::sqrt(ss / (S - 1.0));
  m.rmse = std::sqrt(se2 / S);
  return m;
}

IntervalMetrics interval_metrics(std::span<const double> lower, std::span<const double> upper, double truth) {
  require(lower.size() == upper.size() && !lower.empty(), ErrorCode::InvalidArgument,
          "interval metrics need matching nonempty bounds");
  IntervalMetrics m;
  for (std::size_t s = 0; s < lower.size(); ++s) {
    m.cp += (lower[s] <= truth && truth <= upper[s]) ? 1.0 : 0.0;
    m.aw += upper[s] - lower[s];
  }
  m.cp /= static_cast<double>(lower.size());
  m.aw /= static_cast<double>(lower.size());
  return m;
}

CurveMetrics curve_metrics(const std::vector<Eigen::VectorXd>& curves, const Eigen::VectorXd& truth) {
  require(curves.size() >= 2, ErrorCode::InvalidArgument, "metrics need at least two replications");
  CurveMetrics m;
  std::vector<double> at(curves.size());
  for (Index g = 0; g < truth.size(); ++g) {
    for (std::size_t s = 0; s < curves.size(); ++s) at[s] = curves[s][g];
    const PointMetrics pm = point_metrics(at, truth[g]);
    m.abias += pm.bias;
    m.ase += pm.se;
    m.armse += pm.rmse;
  }
  const double G = static_cast<double>(truth.size());
  m.abias /= G;
  m.ase /= G;
  m.armse /= G;
  return m;
}

// ---- Studies ----

const MetricsRow* MetricsTable::find(const std::string& estimator, Index N) const {
  for (const auto& r : rows)
    if (r.estimator == estimator && r.N == N) return &r;
  return nullptr;
}

void StudyConfig::validate() const {
  require(design == "dgpb" || design == "ihdp-continuous", ErrorCode::Config, "unknown design '" + design + "'");
  require(S >= 2, ErrorCode::InvalidArgument, "a study needs S >= 2");
  require(!sizes.empty(), ErrorCode::InvalidArgument, "a study needs at least one sample size");
  require(!estimators.empty(), ErrorCode::InvalidArgument, "a study needs at least one estimator");
  for (const auto& e : estimators) {
    const bool known = e == "bnnw" || e == "dnnw" || e == "ipw" || e == "aipw" || e == "pbnnw";
    require(known, ErrorCode::Config, "unknown estimator '" + e + "'");
    if (design != "dgpb")
      require(e == "bnnw" || e == "dnnw", ErrorCode::Config, "comparator '" + e + "' needs a binary design");
  }
  if (design == "dgpb") dgpb.validate();
  run.validate();
}

namespace {

struct Outcome {
  bool ok = false;
  double estimate = kNaN, lower = kNaN, upper = kNaN;
  Eigen::VectorXd curve;
};

const Interval* find_interval(const std::vector<Interval>& ivs, const std::string& name) {
  for (const auto& iv : ivs)
    if (iv.name == name) return &iv;
  return nullptr;
}

}  // namespace

MetricsTable run_study(const StudyConfig& cfg) {
  cfg.validate();
  const bool binary = cfg.design == "dgpb";
  const bool want_fit = std::any_of(cfg.estimators.begin(), cfg.estimators.end(),
                                    [](const auto& e) { return e == "bnnw" || e == "dnnw"; });
  const bool want_base = std::any_of(cfg.estimators.begin(), cfg.estimators.end(),
                                     [](const auto& e) { return e == "ipw" || e == "aipw" || e == "pbnnw"; });
  if (want_base)
    require(cfg.run.loss.kind == LossKind::Squared, ErrorCode::Config, "comparators estimate the ATE only");
  const auto functionals = cfg.run.resolved_functionals();
  if (binary) require(!functionals.empty(), ErrorCode::Config, "binary studies need a target functional");

  MetricsTable table;
  for (Index N : cfg.sizes) {
    double truth = 0.0;
    Eigen::VectorXd true_curve;
    if (binary) {
      truth = cfg.run.loss.kind == LossKind::Squared
                  ? dgpb_analytic_ate(cfg.dgpb)
                  : dgpb_true_effects(cfg.dgpb, {cfg.run.loss.tau}, cfg.oracle_draws).qte.front();
    }
    const std::size_t E = cfg.estimators.size();
    std::vector<std::vector<Outcome>> results(cfg.S, std::vector<Outcome>(E));

    parallel_for(static_cast<std::size_t>(cfg.S), cfg.workers, [&](std::size_t s) {
      const std::uint64_t data_seed = derive_seed(cfg.seed, "data", {static_cast<std::uint64_t>(N), s});
      const std::uint64_t run_seed = derive_seed(cfg.seed, "run", {static_cast<std::uint64_t>(N), s});
      std::optional<Dataset> data;
      Eigen::VectorXd curve_truth;
      if (binary) {
        data = dgpb_generate(N, cfg.dgpb, data_seed).data;
      } else {
        IhdpSample smp = ihdp_continuous_generate(cfg.ihdp_covariates, N, data_seed, cfg.curve_draws);
        data = std::move(smp.data);
      }
      std::optional<EstimateReport> report;
      if (want_fit) {
        RunConfig rc = cfg.run;
        rc.seed = run_seed;
        rc.workers = 1;
        if (cfg.inject_true_pi && binary) {
          const DgpBParams params = cfg.dgpb;
          rc.known_pi = [params](double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
            return dgpb_true_pi0(params, t, x);
          };
        }
        try {
          report = estimate(*data, rc);
        } catch (const Error& e) {
          spdlog::warn("study replicate {} (N={}): fit failed: {}", s, N, e.what());
        }
      }
      std::optional<Baselines> base;
      if (want_base) {
        BaselineConfig bc = cfg.baseline;
        bc.seed = run_seed;
        try {
          base = run_baselines(*data, bc);
        } catch (const Error& e) {
          spdlog::warn("study replicate {} (N={}): comparators failed: {}", s, N, e.what());
        }
      }
      for (std::size_t k = 0; k < E; ++k) {
        const std::string& name = cfg.estimators[k];
        Outcome& o = results[s][k];
        if (name == "bnnw" || name == "dnnw") {
          if (!report) continue;
          const bool b = name == "bnnw";
          const Eigen::VectorXd& beta = b ? report->beta : report->beta_dnnw;
          o.ok = true;
          if (binary) {
            const Functional& f = functionals.front();
            o.estimate = beta.dot(f.nu);
            if (report->bootstrap) {
              const auto* iv = find_interval(b ? report->bootstrap->intervals : report->bootstrap->dnnw_intervals, f.name);
              if (iv) o.lower = iv->lower, o.upper = iv->upper;
            }
          } else {
            const auto grid = dose_grid();
            o.curve.resize(static_cast<Index>(grid.size()));
            for (std::size_t g = 0; g < grid.size(); ++g) o.curve[static_cast<Index>(g)] = g_value(cfg.run.model, grid[g], beta);
          }
        } else {
          if (!base) continue;
          const BaselineEstimate& be = name == "ipw" ? base->ipw : name == "aipw" ? base->aipw : base->pbnnw;
          o = {true, be.estimate, be.lower, be.upper, {}};
        }
      }
    });

    if (!binary) {
      const auto grid = dose_grid();
      const double mean = cfg.ihdp_covariates ? [&] {
        double sum = 0.0;
        for (Index i = 0; i < cfg.ihdp_covariates->rows(); ++i)
          sum += ihdp_covariate_effect(cfg.ihdp_covariates->row(i).transpose());
        return sum / static_cast<double>(cfg.ihdp_covariates->rows());
      }() : ihdp_synthetic_effect_mean(cfg.curve_draws);
      true_curve.resize(static_cast<Index>(grid.size()));
      for (std::size_t g = 0; g < grid.size(); ++g) true_curve[static_cast<Index>(g)] = ihdp_dose_factor(grid[g]) * mean;
    }

    for (std::size_t k = 0; k < cfg.estimators.size(); ++k) {
      MetricsRow row;
      row.design = cfg.design;
      row.N = binary || !cfg.ihdp_covariates ? N : cfg.ihdp_covariates->rows();
      row.estimator = cfg.estimators[k];
      std::vector<double> est, lo, hi;
      std::vector<Eigen::VectorXd> curves;
      for (int s = 0; s < cfg.S; ++s) {
        const Outcome& o = results[s][k];
        if (!o.ok) {
          ++row.failures;
          continue;
        }
        ++row.replications;
        est.push_back(o.estimate);
        if (std::isfinite(o.lower) && std::isfinite(o.upper)) {
          lo.push_back(o.lower);
          hi.push_back(o.upper);
        }
        if (o.curve.size()) curves.push_back(o.curve);
      }
      row.bias = row.se = row.rmse = row.cp = row.aw = row.signed_bias = kNaN;
      row.abias = row.ase = row.armse = kNaN;
      if (binary && est.size() >= 2) {
        const PointMetrics pm = point_metrics(est, truth);
        row.bias = pm.bias;
        row.se = pm.se;
        row.rmse = pm.rmse;
        row.signed_bias = pm.signed_bias;
        if (!lo.empty() && lo.size() == est.size()) {
          const IntervalMetrics im = interval_metrics(lo, hi, truth);
          row.cp = im.cp;
          row.aw = im.aw;
        }
      }
      if (!binary && curves.size() >= 2) {
        const CurveMetrics cm = curve_metrics(curves, true_curve);
        row.abias = cm.abias;
        row.ase = cm.ase;
        row.armse = cm.armse;
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

void write_study_csv(const std::filesystem::path& path, const MetricsTable& table) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  auto num = [](double v) { return std::isfinite(v) ? format_real(v) : std::string("NA"); };
  out << "design,N,estimator,Bias,SE,RMSE,CP,AW,SignedBias,ABias,ASE,ARMSE,replications,failures\n";
  for (const auto& r : table.rows) {
    out << csv_field(r.design) << ',' << r.N << ',' << csv_field(r.estimator) << ',' << num(r.bias) << ','
        << num(r.se) << ',' << num(r.rmse) << ',' << num(r.cp) << ',' << num(r.aw) << ',' << num(r.signed_bias)
        << ',' << num(r.abias) << ',' << num(r.ase) << ',' << num(r.armse) << ',' << r.replications << ','
        << r.failures << '\n';
  }
}

}  // namespace bnnw
