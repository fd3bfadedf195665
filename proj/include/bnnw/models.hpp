#pragma once

#include <Eigen/Dense>
#include <string>

#include "data.hpp"

namespace bnnw {

enum class LossKind { Squared, Quantile, AsymmetricLS, CrossEntropy };

/// Loss L(y, z). Quantile and AsymmetricLS carry a level tau in (0, 1).
struct LossSpec {
  LossKind kind = LossKind::Squared;
  double tau = 0.5;

  static LossSpec squared() { return {LossKind::Squared, 0.5}; }
  static LossSpec quantile(double tau);
  static LossSpec asymmetric_ls(double tau);
  static LossSpec cross_entropy() { return {LossKind::CrossEntropy, 0.5}; }

  bool has_tau() const { return kind == LossKind::Quantile || kind == LossKind::AsymmetricLS; }
  std::string name() const;
};

enum class ModelKind { BinaryArms, Polynomial, ProbitPolynomial };

/// Dose-response family g(t; beta).
struct DoseResponseModel {
  ModelKind kind = ModelKind::BinaryArms;
  int degree = 1;

  static DoseResponseModel binary_arms() { return {ModelKind::BinaryArms, 1}; }
  static DoseResponseModel polynomial(int degree);
  static DoseResponseModel probit_polynomial(int degree);

  Index p() const { return kind == ModelKind::BinaryArms ? 2 : degree + 1; }
  /// True when g is linear in beta, so the Hessian of g vanishes.
  bool linear_in_beta() const { return kind != ModelKind::ProbitPolynomial; }
  std::string name() const;
};

/// The linear index of the probit family is clamped to this band before the normal CDF.
inline constexpr double kProbitIndexClamp = 8.0;

double normal_cdf(double z);
double normal_pdf(double z);

/// (1, t, ..., t^q) for polynomial families, (1 - t, t) for binary arms.
Eigen::VectorXd basis(const DoseResponseModel& model, double t);

double g_value(const DoseResponseModel& model, double t, const Eigen::VectorXd& beta);
Eigen::VectorXd g_grad(const DoseResponseModel& model, double t, const Eigen::VectorXd& beta);

double loss_value(const LossSpec& spec, double y, double z);
/// dL/dz; quantile-type kinks use 1(y - z <= 0) = 1.
double loss_deriv(const LossSpec& spec, double y, double z);

/// h(y, t; beta) = L'(y, g(t; beta)) * dg/dbeta.
Eigen::VectorXd score_h(const LossSpec& spec, const DoseResponseModel& model, double y, double t,
                        const Eigen::VectorXd& beta);

/// Validates that (spec, model) can be used with data of the given treatment kind.
void check_compatible(const LossSpec& spec, const DoseResponseModel& model, TreatmentKind kind);

}  // namespace bnnw
