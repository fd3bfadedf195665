#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "boosting.hpp"
#include "calibration.hpp"
#include "data.hpp"
#include "estimator.hpp"
#include "models.hpp"
#include "nuisance.hpp"
#include "random.hpp"
#include "weightnet.hpp"

namespace bnnw {

enum class MultiplierLaw { Bernoulli2, Exponential, Ones };

std::string to_string(MultiplierLaw law);
MultiplierLaw parse_multiplier_law(const std::string& name);
/// i.i.d. non-negative multipliers with mean 1 (variance 1 except for Ones).
Eigen::VectorXd draw_multipliers(Index n, MultiplierLaw law, Rng& rng);

struct Functional {
  std::string name;
  Eigen::VectorXd nu;
};

/// ATE/QTE contrast (-1, 1) for binary arms; nothing for curve models.
std::vector<Functional> default_functionals(const LossSpec& spec, const DoseResponseModel& model);

struct RunConfig {
  int K = 5;
  WeightNetConfig net;
  BoostedTreesConfig trees;
  CalibrationOptions calibration;
  LossSpec loss = LossSpec::squared();
  DoseResponseModel model = DoseResponseModel::binary_arms();
  std::optional<DmuMode> dmu_mode;  // default chosen from (loss, model)
  int B = 599;
  MultiplierLaw multiplier = MultiplierLaw::Bernoulli2;
  double alpha = 0.05;
  std::vector<Functional> functionals;  // empty: default_functionals
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Known weighting function used instead of training the network.
  WeightFunction known_pi;
  /// Binary-ATE runs start the nuisance fit at beta = 0 unless this is set.
  bool fit_beta_init_for_binary_ate = false;
  int solver_starts = 5;

  void validate() const;
  std::vector<Functional> resolved_functionals() const;
};

/// Everything the resampling step needs from a fold, and nothing that could be refit.
struct FoldArtifacts {
  explicit FoldArtifacts(Dataset fold_sample) : sample(std::move(fold_sample)) {}

  int k = 0;
  IndexList indices;
  Dataset sample;
  Eigen::VectorXd pi_dnn;  // initial weights on the fold
  PairInstrument pairs;    // xi(T_j, X_l) over the fold
  Eigen::MatrixXd xi;      // xi(T_i, X_i)
  bool fallback = false;   // calibration failed; unit calibration weights are used
  std::uint64_t solver_seed = 0;
};

struct FoldDiagnostics {
  Index n = 0;
  Eigen::VectorXd beta_init;
  Eigen::VectorXd beta_bnnw;
  Eigen::VectorXd beta_dnnw;
  Index instrument_dim = 0;
  std::vector<std::string> instrument_labels;
  Eigen::VectorXd lambda;
  Eigen::VectorXd balance_residual;
  int iterations = 0;
  bool converged = false;
  bool fallback = false;
  bool regularized = false;
  double near_zero = 0.0;
  int net_best_epoch = -1;  // -1 when the weighting function was supplied
  double pi_min = 0.0, pi_max = 0.0;
  double weight_min = 0.0, weight_max = 0.0;
};

struct Interval {
  std::string name;
  Eigen::VectorXd nu;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapSummary {
  int B = 0;
  MultiplierLaw law = MultiplierLaw::Bernoulli2;
  double alpha = 0.05;
  RowMatrix draws;       // B x p, NaN rows for invalid replicates
  RowMatrix dnnw_draws;  // B x p
  std::vector<char> valid;
  int invalid = 0;
  std::vector<Interval> intervals;
  std::vector<Interval> dnnw_intervals;
};

struct EstimateReport {
  LossSpec loss;
  DoseResponseModel model;
  int K = 0;
  Index N = 0;
  std::uint64_t seed = 0;
  std::vector<FoldDiagnostics> folds;
  Eigen::VectorXd beta;       // fold average of calibrated estimates
  Eigen::VectorXd beta_dnnw;  // fold average with the initial weights only
  std::vector<Functional> functionals;
  std::optional<BootstrapSummary> bootstrap;
  std::vector<std::string> warnings;
  double wall_clock_seconds = 0.0;

  bool all_converged() const;
};

struct BnnwRun {
  EstimateReport report;
  FoldPlan plan;
  std::vector<FoldArtifacts> artifacts;
};

/// Cross-fitted calibrated estimator.
BnnwRun run_bnnw(const Dataset& data, const RunConfig& cfg);

struct Replicate {
  Eigen::VectorXd beta;
  Eigen::VectorXd beta_dnnw;
  bool valid = false;
};

/// One resampling replicate with multipliers `u` indexed over the full sample.
Replicate bootstrap_replicate(const RunConfig& cfg, const std::vector<FoldArtifacts>& artifacts,
                              const Eigen::VectorXd& u, Index N);

/// Multiplier bootstrap over the fitted artifacts; fills run.report.bootstrap.
void run_bootstrap(const RunConfig& cfg, BnnwRun& run);

/// run_bnnw followed by run_bootstrap when B > 0.
EstimateReport estimate(const Dataset& data, const RunConfig& cfg);

/// Sorted-order-statistic interval at ranks ceil(B alpha/2) and ceil(B (1 - alpha/2)).
std::pair<double, double> equitailed_interval(std::vector<double> draws, double alpha);
std::pair<Index, Index> equitailed_ranks(Index B, double alpha);

struct CurveBand {
  std::vector<double> t;
  std::vector<double> g, lower, upper;
};
std::vector<double> dose_grid();  // 0.01, 0.02, ..., 0.99
/// Point curve plus pointwise quantile band over the point estimate and the valid draws.
CurveBand curve_band(const EstimateReport& report, const std::vector<double>& grid);

nlohmann::json to_json(const EstimateReport& report);
void write_report(const std::filesystem::path& path, const EstimateReport& report);
void write_draws_csv(const std::filesystem::path& path, const EstimateReport& report);
void write_curve_csv(const std::filesystem::path& path, const CurveBand& band);

}  // namespace bnnw
