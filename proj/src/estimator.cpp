#include "bnnw/estimator.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include "bnnw/error.hpp"
#include "bnnw/random.hpp"

namespace bnnw {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd design(const Dataset& data, const DoseResponseModel& model) {
  Eigen::MatrixXd X(data.size(), model.p());
  for (Index i = 0; i < data.size(); ++i) X.row(i) = basis(model, data.t(i)).transpose();
  return X;
}

void check_weights(const Dataset& data, const Eigen::VectorXd& w) {
  require(w.size() == data.size(), ErrorCode::DimensionMismatch, "weights must match the sample");
  require(w.allFinite() && (w.array() >= 0.0).all(), ErrorCode::DomainError,
          "weights must be finite and non-negative");
  require(w.sum() > 0.0, ErrorCode::DomainError, "weights sum to zero");
}

void check_arms(const Dataset& data, const Eigen::VectorXd& w) {
  double w0 = 0.0, w1 = 0.0;
  for (Index i = 0; i < data.size(); ++i) (data.t(i) == 1.0 ? w1 : w0) += w[i];
  require(w0 > 0.0 && w1 > 0.0, ErrorCode::EmptyArm, "a treatment arm carries no weight");
}

Eigen::VectorXd weighted_least_squares(const Dataset& data, const Eigen::VectorXd& w,
                                       const DoseResponseModel& model) {
  const Eigen::MatrixXd X = design(data, model);
  const Eigen::VectorXd s = w.cwiseSqrt();
  const Eigen::MatrixXd A = X.array().colwise() * s.array();
  const Eigen::VectorXd b = data.y().cwiseProduct(s);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  require(qr.rank() == model.p(), ErrorCode::SingularDesign, "weighted design matrix is rank deficient");
  return qr.solve(b);
}

struct SimplexResult {
  Eigen::VectorXd x;
  double f = kInf;
  int evals = 0;
  bool converged = false;
};

SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x0,
                          double step, int max_evals) {
  const Index p = x0.size();
  std::vector<Eigen::VectorXd> pts(p + 1, x0);
  std::vector<double> fv(p + 1);
  SimplexResult res;
  for (Index j = 0; j < p; ++j) pts[j + 1][j] += step * std::max(1.0, std::abs(x0[j]));
  for (Index j = 0; j <= p; ++j) fv[j] = f(pts[j]);
  res.evals = static_cast<int>(p + 1);

  std::vector<Index> order(p + 1);
  while (res.evals < max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return fv[a] < fv[b]; });
    const Index best = order.front(), worst = order.back(), second = order[p - 1];
    double spread = 0.0;
    for (Index j = 0; j <= p; ++j) spread = std::max(spread, (pts[j] - pts[best]).lpNorm<Eigen::Infinity>());
    const bool flat = std::isfinite(fv[worst]) && fv[worst] - fv[best] <= 1e-15 * (1.0 + std::abs(fv[best]));
    if (spread <= 1e-11 * (1.0 + pts[best].lpNorm<Eigen::Infinity>()) || (flat && spread <= 1e-8)) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(p);
    for (Index j = 0; j <= p; ++j)
      if (j != worst) centroid += pts[j];
    centroid /= static_cast<double>(p);

    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = f(xr);
    ++res.evals;
    if (fr < fv[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(xe);
      ++res.evals;
      if (fe < fr) {
        pts[worst] = xe, fv[worst] = fe;
      } else {
        pts[worst] = xr, fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      pts[worst] = xr, fv[worst] = fr;
      continue;
    }
    const bool outside = fr < fv[worst];
    const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                       : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = f(xc);
    ++res.evals;
    if (fc < (outside ? fr : fv[worst])) {
      pts[worst] = xc, fv[worst] = fc;
      continue;
    }
    for (Index j = 0; j <= p; ++j) {
      if (j == best) continue;
      pts[j] = pts[best] + 0.5 * (pts[j] - pts[best]);
      fv[j] = f(pts[j]);
      ++res.evals;
    }
  }
  const auto it = std::min_element(fv.begin(), fv.end());
  res.x = pts[it - fv.begin()];
  res.f = *it;
  return res;
}

MEstimate simplex_search(const Dataset& data, const Eigen::VectorXd& w, const LossSpec& spec,
                         const DoseResponseModel& model, const SolveOptions& opts) {
  const Index p = model.p();
  auto objective = [&](const Eigen::VectorXd& beta) { return weighted_objective(data, w, spec, model, beta); };

  Eigen::VectorXd surrogate = Eigen::VectorXd::Zero(p);
  try {
    if (model.kind != ModelKind::ProbitPolynomial) surrogate = weighted_least_squares(data, w, model);
  } catch (const Error&) {
  }
  std::vector<Eigen::VectorXd> starts{Eigen::VectorXd::Zero(p), surrogate};
  Rng rng(derive_seed(opts.seed, "simplex-starts"));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 0.25 * std::max(1.0, surrogate.lpNorm<Eigen::Infinity>());
  for (int s = 1; s < opts.starts; ++s) {
    Eigen::VectorXd x = surrogate;
    for (Index j = 0; j < p; ++j) x[j] += scale * normal(rng);
    starts.push_back(std::move(x));
  }

  MEstimate best;
  best.objective = kInf;
  best.beta = Eigen::VectorXd::Zero(p);
  best.method = "simplex";
  const int budget = 2000 * static_cast<int>(p + 1);
  for (const auto& x0 : starts) {
    if (!std::isfinite(objective(x0))) continue;
    SimplexResult r = nelder_mead(objective, x0, 0.1, budget);
    best.iterations += r.evals;
    // Restart from the incumbent with shrinking simplices until the kinks stop trapping it.
    for (double step : {0.05, 0.01, 1e-3, 1e-4}) {
      SimplexResult again = nelder_mead(objective, r.x, step, budget);
      best.iterations += again.evals;
      if (again.f < r.f) r = again;
    }
    if (r.f < best.objective) {
      best.objective = r.f;
      best.beta = r.x;
      best.converged = r.converged;
    }
  }
  require(std::isfinite(best.objective), ErrorCode::Divergence, "no simplex start has a finite objective");
  return best;
}

MEstimate probit_newton(const Dataset& data, const Eigen::VectorXd& w, const DoseResponseModel& model,
                        const SolveOptions& opts) {
  const Index p = model.p();
  const LossSpec spec = LossSpec::cross_entropy();
  const Eigen::MatrixXd X = design(data, model);
  MEstimate res;
  res.method = "newton";
  res.beta = Eigen::VectorXd::Zero(p);
  res.converged = false;
  double f = weighted_objective(data, w, spec, model, res.beta);
  for (int it = 0; it < opts.max_newton; ++it) {
    res.iterations = it + 1;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p, p);
    const Eigen::VectorXd eta = X * res.beta;
    for (Index i = 0; i < data.size(); ++i) {
      if (std::abs(eta[i]) >= kProbitIndexClamp || w[i] == 0.0) continue;
      const double P = normal_cdf(eta[i]), Q = 1.0 - P, phi = normal_pdf(eta[i]), y = data.y(i);
      const double d1 = -y * phi / P + (1.0 - y) * phi / Q;
      const double d2 = y * phi * (eta[i] * P + phi) / (P * P) + (1.0 - y) * phi * (phi - eta[i] * Q) / (Q * Q);
      grad += w[i] * d1 * X.row(i).transpose();
      hess += w[i] * d2 * X.row(i).transpose() * X.row(i);
    }
    const double wsum = w.sum();
    grad /= wsum;
    hess /= wsum;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess + 1e-12 * Eigen::MatrixXd::Identity(p, p));
    if (ldlt.info() != Eigen::Success) break;
    const Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) break;
    double alpha = 1.0;
    bool moved = false;
    for (int h = 0; h < 50; ++h, alpha *= 0.5) {
      const Eigen::VectorXd cand = res.beta - alpha * step;
      const double fc = weighted_objective(data, w, spec, model, cand);
      if (fc <= f) {
        moved = fc < f || (cand - res.beta).norm() > 0.0;
        res.beta = cand;
        f = fc;
        break;
      }
    }
    if (!moved || step.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + res.beta.lpNorm<Eigen::Infinity>())) {
      res.converged = grad.lpNorm<Eigen::Infinity>() <= 1e-8 || step.lpNorm<Eigen::Infinity>() <= 1e-10;
      break;
    }
  }
  res.objective = f;
  return res;
}

}  // namespace

double weighted_quantile(std::span<const double> values, std::span<const double> weights, double tau) {
  require(values.size() == weights.size(), ErrorCode::DimensionMismatch, "quantile weights mismatch");
  require(!values.empty(), ErrorCode::EmptyData, "quantile of an empty set");
  require(tau > 0.0 && tau < 1.0, ErrorCode::InvalidArgument, "tau must lie in (0, 1)");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(total > 0.0, ErrorCode::EmptyArm, "quantile weights sum to zero");
  double cum = 0.0;
  for (auto i : order) {
    cum += weights[i];
    if (weights[i] > 0.0 && cum >= tau * total * (1.0 - 1e-14)) return values[i];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (weights[*it] > 0.0) return values[*it];
  return values[order.back()];
}

double weighted_objective(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                          const DoseResponseModel& model, const Eigen::VectorXd& beta) {
  double total = 0.0, wsum = 0.0;
  for (Index i = 0; i < data.size(); ++i) {
    wsum += weights[i];
    if (weights[i] == 0.0) continue;
    const double z = g_value(model, data.t(i), beta);
    if (spec.kind == LossKind::CrossEntropy && !(z > 0.0 && z < 1.0)) return kInf;
    total += weights[i] * loss_value(spec, data.y(i), z);
  }
  return total / wsum;
}

double near_zero_check(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                       const DoseResponseModel& model, const Eigen::VectorXd& beta) {
  require(weights.size() == data.size(), ErrorCode::DimensionMismatch, "weights must match the sample");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(model.p());
  for (Index i = 0; i < data.size(); ++i)
    if (weights[i] != 0.0) s += weights[i] * score_h(spec, model, data.y(i), data.t(i), beta);
  return s.norm() / static_cast<double>(data.size());
}

double bic_score(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                 const DoseResponseModel& model, const Eigen::VectorXd& beta) {
  require(weights.size() == data.size(), ErrorCode::DimensionMismatch, "weights must match the sample");
  const double wsum = weights.sum();
  return static_cast<double>(model.p()) * std::log(wsum) +
         2.0 * wsum * weighted_objective(data, weights, spec, model, beta);
}

MEstimate solve_beta_detailed(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                              const DoseResponseModel& model, const SolveOptions& opts) {
  check_compatible(spec, model, data.treatment_kind());
  check_weights(data, weights);
  require(data.size() >= model.p(), ErrorCode::TooFewObservations, "fewer observations than parameters");
  if (model.kind == ModelKind::BinaryArms) check_arms(data, weights);

  MEstimate res;
  const bool closed_form_mean =
      model.linear_in_beta() && (spec.kind == LossKind::Squared ||
                                 (spec.kind == LossKind::CrossEntropy && model.kind == ModelKind::BinaryArms));
  if (closed_form_mean) {
    res.beta = weighted_least_squares(data, weights, model);
    res.method = "wls";
  } else if (spec.kind == LossKind::Quantile && model.kind == ModelKind::BinaryArms) {
    std::vector<double> v[2], w[2];
    for (Index i = 0; i < data.size(); ++i) {
      const int arm = data.t(i) == 1.0 ? 1 : 0;
      v[arm].push_back(data.y(i));
      w[arm].push_back(weights[i]);
    }
    res.beta.resize(2);
    for (int a = 0; a < 2; ++a) res.beta[a] = weighted_quantile(v[a], w[a], spec.tau);
    res.method = "weighted-quantile";
  } else if (spec.kind == LossKind::CrossEntropy && model.kind == ModelKind::ProbitPolynomial) {
    res = probit_newton(data, weights, model, opts);
    if (!res.converged) {
      MEstimate alt = simplex_search(data, weights, spec, model, opts);
      if (alt.objective < res.objective) res = alt;
    }
  } else {
    res = simplex_search(data, weights, spec, model, opts);
  }
  if (res.method != "simplex" && res.method != "newton")
    res.objective = weighted_objective(data, weights, spec, model, res.beta);
  if (!res.converged) spdlog::warn("solve_beta: {} did not converge; returning the best point", res.method);
  if (res.beta.norm() > 1e3) spdlog::warn("solve_beta: large coefficient norm {:.3g}", res.beta.norm());
  return res;
}

Eigen::VectorXd solve_beta(const Dataset& data, const Eigen::VectorXd& weights, const LossSpec& spec,
                           const DoseResponseModel& model, const SolveOptions& opts) {
  return solve_beta_detailed(data, weights, spec, model, opts).beta;
}

}  // namespace bnnw
