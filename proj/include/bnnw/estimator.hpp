#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>

#include "data.hpp"
#include "models.hpp"

namespace bnnw {

struct SolveOptions {
  int starts = 5;  // simplex starts: zero plus (starts - 1) perturbations of a least-squares fit
  std::uint64_t seed = 0;
  int max_newton = 200;
};

struct MEstimate {
  Eigen::VectorXd beta;
  double objective = 0.0;  // normalized weighted loss
  bool converged = true;
  int iterations = 0;
  std::string method;
};

/// argmin_beta sum_i w_i L(Y_i, g(T_i; beta)), dispatched on (loss, model).
MEstimate solve_beta_detailed(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                              const DoseResponseModel& model, const SolveOptions& opts = {});
Eigen::VectorXd solve_beta(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                           const DoseResponseModel& model, const SolveOptions& opts = {});

/// (sum_i w_i L_i) / (sum_i w_i); +inf where the loss is undefined.
double weighted_objective(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                          const DoseResponseModel& model, const Eigen::VectorXd& beta);

/// || (1/n) sum_i w_i h(Y_i, T_i; beta) ||_2
double near_zero_check(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                       const DoseResponseModel& model, const Eigen::VectorXd& beta);

/// p log(sum w) + 2 sum_i w_i L(Y_i, g(T_i; beta)); lower is better.
double bic_score(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                 const DoseResponseModel& model, const Eigen::VectorXd& beta);

/// Smallest value whose normalized cumulative weight reaches tau.
double weighted_quantile(std::span<const double> values, std::span<const double> weights, double tau);

}  // namespace bnnw
