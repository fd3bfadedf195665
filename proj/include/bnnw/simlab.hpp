#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "boosting.hpp"
#include "calibration.hpp"
#include "data.hpp"
#include "pipeline.hpp"

namespace bnnw {

// ---- Binary-treatment design -------------------------------------------------------------

struct DgpBParams {
  Index d = 50;
  Eigen::VectorXd gamma;  // empty: (1/d, ..., 1/d)

  Eigen::VectorXd resolved_gamma() const;
  /// Throws unless x'gamma lies in (0, 1) for every x in [0.3, 0.7]^d.
  void validate() const;
  double propensity(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// P(T = 1) = E[X'gamma].
  double treated_share() const;
};

struct DgpBSample {
  Dataset data;
  Eigen::VectorXd y0, y1;  // potential outcomes, for oracle use only
};

DgpBSample dgpb_generate(Index N, const DgpBParams& params, std::uint64_t seed);

/// Y(0), Y(1) from uniforms given the propensity p.
double dgpb_y0(double p, double u);
double dgpb_y1(double p, double u);
double dgpb_mean_y0(double p);  // 1/2 - p^2/6
double dgpb_mean_y1(double p);  // 1 - (1-p)^2/3
/// Conditional CDFs of the potential outcomes given p.
double dgpb_cdf_y0(double p, double y);
double dgpb_cdf_y1(double p, double y);

double dgpb_true_pi0(const DgpBParams& params, double t, const Eigen::Ref<const Eigen::VectorXd>& x);
/// E[Y(1)] - E[Y(0)] from the first two moments of p = X'gamma.
double dgpb_analytic_ate(const DgpBParams& params);

struct DgpBEffects {
  double ate = 0.0;
  double ate_se = 0.0;
  std::vector<double> taus;
  std::vector<double> qte;
  Index draws = 0;
};

/// Monte Carlo oracle over the potential-outcome marginals (memoized per argument set).
DgpBEffects dgpb_true_effects(const DgpBParams& params, const std::vector<double>& taus,
                              Index draws = 10'000'000, std::uint64_t seed = 0x5eed);

// ---- Continuous-treatment semi-synthetic design ----------------------------------------------

inline constexpr Index kIhdpCovariates = 25;

double ihdp_dose_factor(double t);  // -0.8 + 3.2 t - 3.2 t^2
double ihdp_treatment_index(const Eigen::Ref<const Eigen::VectorXd>& x);
double ihdp_covariate_effect(const Eigen::Ref<const Eigen::VectorXd>& x);
inline double ihdp_h(double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return ihdp_dose_factor(t) * ihdp_covariate_effect(x);
}
/// E[covariate effect] under i.i.d. uniform(0, 1) covariates (memoized).
double ihdp_synthetic_effect_mean(Index draws = 1'000'000, std::uint64_t seed = 0x1d4d);

struct IhdpSample {
  Dataset data;
  bool synthetic = true;
  double effect_mean = 0.0;       // E[covariate effect] under the covariate law
  Eigen::VectorXd true_beta;      // quadratic coefficients of the true curve
  std::vector<double> grid;       // 0.01 .. 0.99
  Eigen::VectorXd true_curve;     // true average dose response on the grid
};

/// Supplied covariates (N x 25) are used as-is with their empirical law; otherwise N synthetic rows.
IhdpSample ihdp_continuous_generate(const std::optional<RowMatrix>& covariates, Index N, std::uint64_t seed,
                                    Index curve_draws = 1'000'000);

// ---- Propensity-based comparators ---------------------------------------------------------

struct BaselineConfig {
  int K = 5;
  BoostedTreesConfig trees;
  double clip_low = 0.01, clip_high = 0.99;
  CalibrationOptions calibration;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

/// Known nuisances, replacing the cross-fitted learners.
struct BaselineNuisances {
  std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)> e, m0, m1;
};

struct BaselineEstimate {
  double estimate = 0.0;
  double se = 0.0;  // sd of the per-observation contributions over sqrt(N)
  double lower = 0.0, upper = 0.0;
  bool calibrated = true;  // p-BNNW: every fold's dual converged
};

struct Baselines {
  BaselineEstimate ipw, aipw, pbnnw;
  int clipped = 0;  // propensities moved by clipping
};

Baselines run_baselines(const Dataset& data, const BaselineConfig& cfg,
                        const std::optional<BaselineNuisances>& known = std::nullopt);
BaselineEstimate baseline_ipw(const Dataset& data, const BaselineConfig& cfg);
BaselineEstimate baseline_aipw(const Dataset& data, const BaselineConfig& cfg);
BaselineEstimate baseline_pbnnw(const Dataset& data, const BaselineConfig& cfg);

double normal_quantile(double p);

// ---- Metrics and studies -----------------------------------------------------------------------

struct PointMetrics {
  double bias = 0.0;  // |mean - truth|
  double signed_bias = 0.0;
  double se = 0.0;  // sample sd (S - 1 denominator)
  double rmse = 0.0;
};
PointMetrics point_metrics(std::span<const double> estimates, double truth);

struct IntervalMetrics {
  double cp = 0.0;
  double aw = 0.0;
};
IntervalMetrics interval_metrics(std::span<const double> lower, std::span<const double> upper, double truth);

struct CurveMetrics {
  double abias = 0.0, ase = 0.0, armse = 0.0;
};
/// Pointwise bias/SE/RMSE averaged over the grid.
CurveMetrics curve_metrics(const std::vector<Eigen::VectorXd>& curves, const Eigen::VectorXd& truth);

struct MetricsRow {
  std::string design;
  Index N = 0;
  std::string estimator;
  double bias = 0.0, se = 0.0, rmse = 0.0, cp = 0.0, aw = 0.0, signed_bias = 0.0;
  double abias = 0.0, ase = 0.0, armse = 0.0;
  int replications = 0;
  int failures = 0;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  const MetricsRow* find(const std::string& estimator, Index N) const;
};

struct StudyConfig {
  std::string design = "dgpb";  // dgpb | ihdp-continuous
  std::vector<Index> sizes{300};
  int S = 100;
  std::vector<std::string> estimators{"bnnw", "dnnw", "ipw", "aipw", "pbnnw"};
  RunConfig run;  // per-replicate seeds are derived from `seed`
  BaselineConfig baseline;
  DgpBParams dgpb;
  bool inject_true_pi = false;
  std::optional<RowMatrix> ihdp_covariates;
  Index curve_draws = 1'000'000;
  Index oracle_draws = 10'000'000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

MetricsTable run_study(const StudyConfig& cfg);
void write_study_csv(const std::filesystem::path& path, const MetricsTable& table);

}  // namespace bnnw
