#include "bnnw/nuisance.hpp"

#include <algorithm>
#include <cmath>

#include "bnnw/counters.hpp"
#include "bnnw/error.hpp"

namespace bnnw {

RowMatrix treatment_features(const Dataset& data) {
  RowMatrix f(data.size(), data.dim() + 1);
  f.col(0) = data.t();
  f.rightCols(data.dim()) = data.x();
  return f;
}

RowMatrix pair_features(const Dataset& data, Index j0, Index j1) {
  const Index n = data.size();
  require(0 <= j0 && j0 <= j1 && j1 <= n, ErrorCode::InvalidArgument, "pair range out of bounds");
  RowMatrix f((j1 - j0) * n, data.dim() + 1);
  for (Index j = j0; j < j1; ++j) {
    auto block = f.middleRows((j - j0) * n, n);
    block.col(0).setConstant(data.t(j));
    block.rightCols(data.dim()) = data.x();
  }
  return f;
}

Eigen::VectorXd MuModel::predict(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd row(x.size() + 1);
  row[0] = t;
  row.tail(x.size()) = x;
  Eigen::VectorXd out(p());
  for (Index j = 0; j < p(); ++j) out[j] = components_[j].predict(row.data());
  return out;
}

Eigen::MatrixXd MuModel::predict(const RowMatrix& features) const {
  Eigen::MatrixXd out(features.rows(), p());
  for (Index j = 0; j < p(); ++j) out.col(j) = components_[j].predict(features);
  return out;
}

MuModel fit_mu(const Dataset& train, const Eigen::VectorXd& beta_init, const LossSpec& spec,
               const DoseResponseModel& model, const BoostedTreesConfig& cfg) {
  const Index p = model.p();
  require(beta_init.size() == p, ErrorCode::DimensionMismatch, "beta_init has the wrong length");
  require(train.size() >= 1, ErrorCode::EmptyData, "empty training set for mu");
  counters::record_mu_fit();

  Eigen::MatrixXd targets(train.size(), p);
  for (Index i = 0; i < train.size(); ++i)
    targets.row(i) = score_h(spec, model, train.y(i), train.t(i), beta_init).transpose();
  require(targets.allFinite(), ErrorCode::DomainError, "non-finite score targets for mu");

  const RowMatrix features = treatment_features(train);
  std::vector<BoostedTrees> components;
  components.reserve(p);
  for (Index j = 0; j < p; ++j)
    components.push_back(BoostedTrees::fit(features, targets.col(j), cfg, BoostLoss::Squared));
  return MuModel(std::move(components));
}

DmuMode default_dmu_mode(const LossSpec& spec, const DoseResponseModel& model) {
  if (spec.kind == LossKind::Squared && model.kind == ModelKind::BinaryArms)
    return DmuMode::AnalyticBinaryATE;
  if (spec.kind == LossKind::Squared && model.linear_in_beta()) return DmuMode::AnalyticLinearSquared;
  return DmuMode::NumericBeta;
}

std::string to_string(DmuMode mode) {
  switch (mode) {
    case DmuMode::AnalyticBinaryATE: return "analytic_binary_ate";
    case DmuMode::AnalyticLinearSquared: return "analytic_linear_squared";
    case DmuMode::NumericBeta: return "numeric_beta";
  }
  return "unknown";
}

DmuMode parse_dmu_mode(const std::string& name) {
  for (auto m : {DmuMode::AnalyticBinaryATE, DmuMode::AnalyticLinearSquared, DmuMode::NumericBeta})
    if (to_string(m) == name) return m;
  fail(ErrorCode::Config, "unknown dmu mode '" + name + "'");
}

DmuModel fit_dmu(const Dataset& train, const Eigen::VectorXd& beta_init, const LossSpec& spec,
                 const DoseResponseModel& model, const BoostedTreesConfig& cfg, DmuMode mode) {
  require(beta_init.size() == model.p(), ErrorCode::DimensionMismatch, "beta_init has the wrong length");
  if (mode == DmuMode::AnalyticBinaryATE)
    require(spec.kind == LossKind::Squared && model.kind == ModelKind::BinaryArms,
            ErrorCode::InvalidArgument, "analytic binary-ATE derivative needs squared loss with binary arms");
  if (mode == DmuMode::AnalyticLinearSquared)
    require(spec.kind == LossKind::Squared && model.linear_in_beta(), ErrorCode::InvalidArgument,
            "analytic linear derivative needs squared loss with a model linear in beta");
  counters::record_dmu_fit();

  DmuModel out;
  out.mode_ = mode;
  out.model_ = model;
  if (mode != DmuMode::NumericBeta) return out;

  out.delta_ = std::max(1e-2, 1e-2 * beta_init.norm());
  const Index p = model.p();
  const RowMatrix features = treatment_features(train);
  for (Index c = 0; c < p; ++c) {
    Eigen::VectorXd plus = beta_init, minus = beta_init;
    plus[c] += out.delta_;
    minus[c] -= out.delta_;
    Eigen::MatrixXd targets(train.size(), p);
    for (Index i = 0; i < train.size(); ++i)
      targets.row(i) = ((score_h(spec, model, train.y(i), train.t(i), plus) -
                         score_h(spec, model, train.y(i), train.t(i), minus)) /
                        (2.0 * out.delta_))
                           .transpose();
    require(targets.allFinite(), ErrorCode::DomainError, "non-finite difference targets for dmu");
    std::vector<BoostedTrees> components;
    components.reserve(p);
    for (Index r = 0; r < p; ++r)
      components.push_back(BoostedTrees::fit(features, targets.col(r), cfg, BoostLoss::Squared));
    out.columns_.emplace_back(std::move(components));
  }
  return out;
}

Eigen::MatrixXd DmuModel::predict(const RowMatrix& features) const {
  const Index n = features.rows(), p = this->p();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, p * p);
  switch (mode_) {
    case DmuMode::AnalyticBinaryATE:
      out.col(0) = 1.0 - features.col(0).array();
      out.col(3) = features.col(0);
      break;
    case DmuMode::AnalyticLinearSquared:
      for (Index i = 0; i < n; ++i) {
        const Eigen::VectorXd b = basis(model_, features(i, 0));
        for (Index c = 0; c < p; ++c)
          for (Index r = 0; r < p; ++r) out(i, r + p * c) = b[r] * b[c];
      }
      break;
    case DmuMode::NumericBeta:
      for (Index c = 0; c < p; ++c)
        out.middleCols(c * p, p) = columns_[c].predict(features);
      break;
  }
  return out;
}

Eigen::MatrixXd DmuModel::predict(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const {
  RowMatrix row(1, x.size() + 1);
  row(0, 0) = t;
  row.rightCols(x.size()) = x.transpose();
  const Eigen::VectorXd flat = predict(row).row(0).transpose();
  return Eigen::Map<const Eigen::MatrixXd>(flat.data(), p(), p());
}

InstrumentFn::InstrumentFn(FeatureMap stack, std::vector<std::string> labels, std::vector<bool> mask)
    : stack_(std::move(stack)), labels_(std::move(labels)), mask_(std::move(mask)) {
  require(labels_.size() == mask_.size(), ErrorCode::DimensionMismatch, "label/mask length mismatch");
  for (std::size_t j = 0; j < mask_.size(); ++j)
    if (mask_[j]) retained_.push_back(static_cast<Index>(j));
  require(!retained_.empty(), ErrorCode::ZeroInstrument, "instrument has no retained columns");
}

std::vector<std::string> InstrumentFn::labels() const {
  std::vector<std::string> out;
  for (Index j : retained_) out.push_back(labels_[j]);
  return out;
}

Eigen::MatrixXd InstrumentFn::operator()(const RowMatrix& features) const {
  const Eigen::MatrixXd full = stack_(features);
  require(full.cols() == full_dim(), ErrorCode::DimensionMismatch, "instrument stack width changed");
  Eigen::MatrixXd out(full.rows(), dim());
  for (Index c = 0; c < dim(); ++c) out.col(c) = full.col(retained_[c]);
  return out;
}

Eigen::VectorXd InstrumentFn::operator()(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const {
  RowMatrix row(1, x.size() + 1);
  row(0, 0) = t;
  row.rightCols(x.size()) = x.transpose();
  return (*this)(row).row(0).transpose();
}

FeatureMap InstrumentFn::as_map() const {
  return [self = *this](const RowMatrix& f) { return self(f); };
}

std::vector<bool> independent_columns(const Eigen::MatrixXd& values, double tol) {
  const Index m = values.cols();
  std::vector<bool> mask(m, false);
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  std::vector<Index> nonzero;
  for (Index j = 0; j < m; ++j)
    if (values.col(j).cwiseAbs().maxCoeff() > 1e-12 * scale) nonzero.push_back(j);
  require(!nonzero.empty(), ErrorCode::ZeroInstrument, "all instrument columns are numerically zero");

  Eigen::MatrixXd unit(values.rows(), static_cast<Index>(nonzero.size()));
  for (std::size_t c = 0; c < nonzero.size(); ++c) {
    const auto col = values.col(nonzero[c]);
    unit.col(static_cast<Index>(c)) = col / col.norm();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(unit);
  const auto& R = qr.matrixR();
  const Index steps = std::min(unit.rows(), unit.cols());
  const double lead = std::abs(R(0, 0));
  for (Index k = 0; k < steps; ++k) {
    if (std::abs(R(k, k)) <= tol * lead) break;
    mask[nonzero[qr.colsPermutation().indices()[k]]] = true;
  }
  return mask;
}

InstrumentFn build_instrument(FeatureMap mu, FeatureMap dmu, Index p, const RowMatrix& eval_features) {
  const Index m = p + p * p;
  require(eval_features.rows() >= m, ErrorCode::TooFewObservations,
          "instrument evaluation sample must have at least p + p^2 rows");
  FeatureMap stack = [mu = std::move(mu), dmu = std::move(dmu), p](const RowMatrix& f) {
    const Eigen::MatrixXd a = mu(f), b = dmu(f);
    require(a.cols() == p && b.cols() == p * p, ErrorCode::DimensionMismatch,
            "mu / dmu output widths do not match p");
    Eigen::MatrixXd out(f.rows(), p + p * p);
    out << a, b;
    return out;
  };
  std::vector<std::string> labels;
  for (Index j = 0; j < p; ++j) labels.push_back("mu[" + std::to_string(j) + "]");
  for (Index c = 0; c < p; ++c)
    for (Index r = 0; r < p; ++r)
      labels.push_back("dmu[" + std::to_string(r) + "," + std::to_string(c) + "]");
  auto mask = independent_columns(stack(eval_features));
  return InstrumentFn(std::move(stack), std::move(labels), std::move(mask));
}

InstrumentFn build_instrument(std::shared_ptr<const MuModel> mu, std::shared_ptr<const DmuModel> dmu,
                              const Dataset& eval_sample) {
  require(mu && dmu && mu->p() == dmu->p(), ErrorCode::DimensionMismatch, "mu / dmu dimension mismatch");
  const Index p = mu->p();
  return build_instrument([mu](const RowMatrix& f) { return mu->predict(f); },
                          [dmu](const RowMatrix& f) { return dmu->predict(f); }, p,
                          treatment_features(eval_sample));
}

}  // namespace bnnw
