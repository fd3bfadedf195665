#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "boosting.hpp"
#include "data.hpp"
#include "models.hpp"

namespace bnnw {

/// Rows of `features` are (t, x). Returns one row of outputs per input row.
using FeatureMap = std::function<Eigen::MatrixXd(const RowMatrix& features)>;

/// Rows (T_i, X_i) of a dataset.
RowMatrix treatment_features(const Dataset& data);

/// Rows (T_j, X_l) for j in [j0, j1) and every l, ordered j-major.
RowMatrix pair_features(const Dataset& data, Index j0, Index j1);

/// Componentwise boosted regression of h(Y, T; beta) on (T, X).
class MuModel {
 public:
  MuModel() = default;
  explicit MuModel(std::vector<BoostedTrees> components) : components_(std::move(components)) {}

  Index p() const { return static_cast<Index>(components_.size()); }
  Eigen::VectorXd predict(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd predict(const RowMatrix& features) const;  // rows x p

 private:
  std::vector<BoostedTrees> components_;
};

MuModel fit_mu(const Dataset& train, const Eigen::VectorXd& beta_init, const LossSpec& spec,
               const DoseResponseModel& model, const BoostedTreesConfig& cfg);

enum class DmuMode {
  AnalyticBinaryATE,      // diag{1-t, t}
  AnalyticLinearSquared,  // grad g grad g^T, squared loss with g linear in beta
  NumericBeta,            // regression of central differences of h in beta
};

DmuMode default_dmu_mode(const LossSpec& spec, const DoseResponseModel& model);
std::string to_string(DmuMode mode);
DmuMode parse_dmu_mode(const std::string& name);

/// d/dbeta mu(t, x; beta), vectorized column-major (entry (r, c) at r + p c).
class DmuModel {
 public:
  Index p() const { return model_.p(); }
  DmuMode mode() const { return mode_; }
  double step() const { return delta_; }

  Eigen::MatrixXd predict(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd predict(const RowMatrix& features) const;  // rows x p^2

 private:
  friend DmuModel fit_dmu(const Dataset&, const Eigen::VectorXd&, const LossSpec&,
                          const DoseResponseModel&, const BoostedTreesConfig&, DmuMode);
  DmuMode mode_ = DmuMode::AnalyticBinaryATE;
  DoseResponseModel model_;
  double delta_ = 0.0;
  std::vector<MuModel> columns_;  // column c regresses the central difference of h in beta_c
};

DmuModel fit_dmu(const Dataset& train, const Eigen::VectorXd& beta_init, const LossSpec& spec,
                 const DoseResponseModel& model, const BoostedTreesConfig& cfg, DmuMode mode);

/// Stacked instrument (mu, vec(dmu)) restricted to a linearly independent set of columns.
class InstrumentFn {
 public:
  InstrumentFn(FeatureMap stack, std::vector<std::string> labels, std::vector<bool> mask);

  Index dim() const { return static_cast<Index>(retained_.size()); }
  Index full_dim() const { return static_cast<Index>(mask_.size()); }
  const std::vector<bool>& mask() const { return mask_; }
  /// Labels of the retained columns.
  std::vector<std::string> labels() const;
  const std::vector<std::string>& all_labels() const { return labels_; }

  Eigen::VectorXd operator()(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd operator()(const RowMatrix& features) const;
  FeatureMap as_map() const;

 private:
  FeatureMap stack_;
  std::vector<std::string> labels_;
  std::vector<bool> mask_;
  std::vector<Index> retained_;
};

inline constexpr double kPruneTolerance = 1e-8;

/// Column mask keeping a numerically independent subset of columns (pivoted QR on unit-norm
/// columns, pivots below tol times the largest dropped). Throws ZeroInstrument if nothing survives.
std::vector<bool> independent_columns(const Eigen::MatrixXd& values, double tol = kPruneTolerance);

/// Assembles (mu, vec(dmu)) and prunes on `eval_features` (rows (t, x)).
InstrumentFn build_instrument(FeatureMap mu, FeatureMap dmu, Index p, const RowMatrix& eval_features);
InstrumentFn build_instrument(std::shared_ptr<const MuModel> mu, std::shared_ptr<const DmuModel> dmu,
                              const Dataset& eval_sample);

}  // namespace bnnw
