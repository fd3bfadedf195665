#include "bnnw/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bnnw/error.hpp"

namespace bnnw {

namespace {

void check_tau(double tau) {
  require(tau > 0.0 && tau < 1.0, ErrorCode::InvalidArgument, "tau must lie strictly inside (0, 1)");
}

void check_beta(const DoseResponseModel& model, const Eigen::VectorXd& beta) {
  require(beta.size() == model.p(), ErrorCode::DimensionMismatch,
          "beta has length " + std::to_string(beta.size()) + ", model expects " +
              std::to_string(model.p()));
}

void check_cross_entropy(double y, double z) {
  require(y == 0.0 || y == 1.0, ErrorCode::DomainError, "cross-entropy needs y in {0, 1}");
  require(z > 0.0 && z < 1.0, ErrorCode::DomainError, "cross-entropy needs z in (0, 1)");
}

// 1(y - z <= 0); the kink belongs to the upper branch.
double below(double y, double z) { return y - z <= 0.0 ? 1.0 : 0.0; }

}  // namespace

LossSpec LossSpec::quantile(double tau) {
  check_tau(tau);
  return {LossKind::Quantile, tau};
}

LossSpec LossSpec::asymmetric_ls(double tau) {
  check_tau(tau);
  return {LossKind::AsymmetricLS, tau};
}

std::string LossSpec::name() const {
  switch (kind) {
    case LossKind::Squared: return "squared";
    case LossKind::Quantile: return "quantile";
    case LossKind::AsymmetricLS: return "asymmetric_ls";
    case LossKind::CrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

DoseResponseModel DoseResponseModel::polynomial(int degree) {
  require(degree >= 0, ErrorCode::InvalidArgument, "polynomial degree must be non-negative");
  return {ModelKind::Polynomial, degree};
}

DoseResponseModel DoseResponseModel::probit_polynomial(int degree) {
  require(degree >= 0, ErrorCode::InvalidArgument, "polynomial degree must be non-negative");
  return {ModelKind::ProbitPolynomial, degree};
}

std::string DoseResponseModel::name() const {
  switch (kind) {
    case ModelKind::BinaryArms: return "binary_arms";
    case ModelKind::Polynomial: return "polynomial";
    case ModelKind::ProbitPolynomial: return "probit_polynomial";
  }
  return "unknown";
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

Eigen::VectorXd basis(const DoseResponseModel& model, double t) {
  if (model.kind == ModelKind::BinaryArms) return Eigen::Vector2d(1.0 - t, t);
  Eigen::VectorXd b(model.p());
  double power = 1.0;
  for (Index j = 0; j < b.size(); ++j, power *= t) b[j] = power;
  return b;
}

double g_value(const DoseResponseModel& model, double t, const Eigen::VectorXd& beta) {
  check_beta(model, beta);
  const double index = basis(model, t).dot(beta);
  if (model.kind != ModelKind::ProbitPolynomial) return index;
  return normal_cdf(std::clamp(index, -kProbitIndexClamp, kProbitIndexClamp));
}

Eigen::VectorXd g_grad(const DoseResponseModel& model, double t, const Eigen::VectorXd& beta) {
  check_beta(model, beta);
  Eigen::VectorXd b = basis(model, t);
  if (model.kind == ModelKind::ProbitPolynomial) b *= normal_pdf(b.dot(beta));
  return b;
}

double loss_value(const LossSpec& spec, double y, double z) {
  const double r = y - z;
  switch (spec.kind) {
    case LossKind::Squared: return 0.5 * r * r;
    case LossKind::Quantile: return r * (spec.tau - below(y, z));
    case LossKind::AsymmetricLS: return r * r * std::abs(spec.tau - below(y, z));
    case LossKind::CrossEntropy:
      check_cross_entropy(y, z);
      return y == 1.0 ? -std::log(z) : -std::log1p(-z);
  }
  return 0.0;
}

double loss_deriv(const LossSpec& spec, double y, double z) {
  const double r = y - z;
  switch (spec.kind) {
    case LossKind::Squared: return -r;
    case LossKind::Quantile: return below(y, z) - spec.tau;
    case LossKind::AsymmetricLS: return -2.0 * r * std::abs(spec.tau - below(y, z));
    case LossKind::CrossEntropy:
      check_cross_entropy(y, z);
      return -y / z + (1.0 - y) / (1.0 - z);
  }
  return 0.0;
}

Eigen::VectorXd score_h(const LossSpec& spec, const DoseResponseModel& model, double y, double t,
                        const Eigen::VectorXd& beta) {
  return loss_deriv(spec, y, g_value(model, t, beta)) * g_grad(model, t, beta);
}

void check_compatible(const LossSpec& spec, const DoseResponseModel& model, TreatmentKind kind) {
  if (spec.has_tau()) check_tau(spec.tau);
  require(model.kind != ModelKind::BinaryArms || kind == TreatmentKind::Binary,
          ErrorCode::InvalidArgument, "binary-arms model needs a binary treatment");
}

}  // namespace bnnw
