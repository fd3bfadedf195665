#pragma once

#include <Eigen/Dense>
#include <vector>

#include "data.hpp"
#include "nuisance.hpp"

namespace bnnw {

/// Generator of the calibration dual. Only the entropy-like choice D(v) = v log v - v ships.
struct Divergence {
  enum class Kind { EntropyLike };
  Kind kind = Kind::EntropyLike;

  double D(double v) const;
  double D_prime(double v) const;
  double rho(double v) const;
  double rho_prime(double v) const;
  double rho_second(double v) const;
};

double rho(double v);
double rho_prime(double v);
double rho_second(double v);

/// G(lambda) = (1/n) sum_i rho(pi_i lambda' xi_i) - lambda' target.
double dual_objective(const Eigen::VectorXd& lambda, const Eigen::VectorXd& pi_hat,
                      const Eigen::MatrixXd& xi, const Eigen::VectorXd& target);
Eigen::VectorXd dual_gradient(const Eigen::VectorXd& lambda, const Eigen::VectorXd& pi_hat,
                              const Eigen::MatrixXd& xi, const Eigen::VectorXd& target);
Eigen::MatrixXd dual_hessian(const Eigen::VectorXd& lambda, const Eigen::VectorXd& pi_hat,
                             const Eigen::MatrixXd& xi);

/// xi(T_j, X_l) for every ordered pair in a sample, one n x n matrix per instrument column.
class PairInstrument {
 public:
  PairInstrument() = default;
  explicit PairInstrument(std::vector<Eigen::MatrixXd> values);

  Index size() const { return values_.empty() ? 0 : values_[0].rows(); }
  Index dim() const { return static_cast<Index>(values_.size()); }
  const Eigen::MatrixXd& component(Index c) const { return values_[c]; }

  /// xi(T_i, X_i), n x dim.
  Eigen::MatrixXd diagonal() const;
  /// (1/(n(n-1))) sum_{j != l} u_j u_l xi(T_j, X_l).
  Eigen::VectorXd weighted_target(const Eigen::VectorXd& u) const;
  Eigen::VectorXd target() const { return weighted_target(Eigen::VectorXd::Ones(size())); }

 private:
  std::vector<Eigen::MatrixXd> values_;
};

PairInstrument evaluate_pairs(const FeatureMap& xi, const Dataset& sample);

/// Leave-one-out double average of xi over ordered pairs j != l of `sample`.
Eigen::VectorXd compute_target(const FeatureMap& xi, const Dataset& sample);
Eigen::VectorXd compute_target(const InstrumentFn& xi, const Dataset& sample);

struct CalibrationOptions {
  double tol = 1e-9;
  int max_iter = 100;
};

struct CalibrationResult {
  Eigen::VectorXd lambda;
  Eigen::VectorXd weights;
  Eigen::VectorXd pi_bnn;
  Eigen::VectorXd balance_residual;
  int iterations = 0;
  bool converged = false;
  bool regularized = false;
  std::vector<double> objective_trace;  // G at each accepted iterate, starting at lambda = 0
};

/// Damped Newton ascent on the dual from lambda = 0.
CalibrationResult solve_dual(const Eigen::VectorXd& pi_hat, const Eigen::MatrixXd& xi,
                             const Eigen::VectorXd& target, const CalibrationOptions& opts = {});

}  // namespace bnnw
