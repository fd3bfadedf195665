#include "bnnw/calibration.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "bnnw/error.hpp"

namespace bnnw {

double Divergence::D(double v) const {
  require(v >= 0.0, ErrorCode::DomainError, "D is defined on v >= 0");
  return v == 0.0 ? 0.0 : v * std::log(v) - v;
}
double Divergence::D_prime(double v) const {
  require(v > 0.0, ErrorCode::DomainError, "D' is defined on v > 0");
  return std::log(v);
}
double Divergence::rho(double v) const { return bnnw::rho(v); }
double Divergence::rho_prime(double v) const { return bnnw::rho_prime(v); }
double Divergence::rho_second(double v) const { return bnnw::rho_second(v); }

double rho(double v) { return -std::exp(-v); }
double rho_prime(double v) { return std::exp(-v); }
double rho_second(double v) { return -std::exp(-v); }

namespace {

void check_dims(const Eigen::VectorXd& lambda, const Eigen::VectorXd& pi_hat, const Eigen::MatrixXd& xi) {
  require(xi.rows() == pi_hat.size(), ErrorCode::DimensionMismatch, "xi rows must match pi_hat");
  require(xi.cols() == lambda.size(), ErrorCode::DimensionMismatch, "xi columns must match lambda");
  require(pi_hat.size() > 0, ErrorCode::EmptyData, "calibration needs observations");
}

}  // namespace

double dual_objective(const Eigen::VectorXd& lambda, const Eigen::VectorXd& pi_hat,
                      const Eigen::MatrixXd& xi, const Eigen::VectorXd& target) {
  check_dims(lambda, pi_hat, xi);
  require(target.size() == lambda.size(), ErrorCode::DimensionMismatch, "target length mismatch");
  const Eigen::ArrayXd v = pi_hat.array() * (xi * lambda).array();
  return (-(-v).exp()).mean() - lambda.dot(target);
}

Eigen::VectorXd dual_gradient(const Eigen::VectorXd& lambda, const Eigen::VectorXd& pi_hat,
                              const Eigen::MatrixXd& xi, const Eigen::VectorXd& target) {
  check_dims(lambda, pi_hat, xi);
  require(target.size() == lambda.size(), ErrorCode::DimensionMismatch, "target length mismatch");
  const Eigen::ArrayXd v = pi_hat.array() * (xi * lambda).array();
  const Eigen::VectorXd c = ((-v).exp() * pi_hat.array()).matrix();
  return xi.transpose() * c / static_cast<double>(pi_hat.size()) - target;
}

Eigen::MatrixXd dual_hessian(const Eigen::VectorXd& lambda, const Eigen::VectorXd& pi_hat,
                             const Eigen::MatrixXd& xi) {
  check_dims(lambda, pi_hat, xi);
  const Eigen::ArrayXd v = pi_hat.array() * (xi * lambda).array();
  const Eigen::ArrayXd c = (-v).exp() * pi_hat.array().square();
  const Eigen::MatrixXd scaled = xi.array().colwise() * c.sqrt();
  return -(scaled.transpose() * scaled) / static_cast<double>(pi_hat.size());
}

PairInstrument::PairInstrument(std::vector<Eigen::MatrixXd> values) : values_(std::move(values)) {
  for (const auto& v : values_)
    require(v.rows() == v.cols() && v.rows() == values_[0].rows(), ErrorCode::DimensionMismatch,
            "pair instrument components must be equal-size square matrices");
}

Eigen::MatrixXd PairInstrument::diagonal() const {
  Eigen::MatrixXd out(size(), dim());
  for (Index c = 0; c < dim(); ++c) out.col(c) = values_[c].diagonal();
  return out;
}

Eigen::VectorXd PairInstrument::weighted_target(const Eigen::VectorXd& u) const {
  const Index n = size();
  require(n >= 2, ErrorCode::TooFewObservations, "pair target needs n >= 2");
  require(u.size() == n, ErrorCode::DimensionMismatch, "multiplier length mismatch");
  const double denom = static_cast<double>(n) * static_cast<double>(n - 1);
  const Eigen::VectorXd u2 = u.cwiseProduct(u);
  Eigen::VectorXd out(dim());
  for (Index c = 0; c < dim(); ++c) {
    const auto& V = values_[c];
    out[c] = (u.dot(V * u) - u2.dot(V.diagonal())) / denom;
  }
  return out;
}

PairInstrument evaluate_pairs(const FeatureMap& xi, const Dataset& sample) {
  const Index n = sample.size();
  const Index d = sample.dim();
  require(n >= 2, ErrorCode::TooFewObservations, "pair evaluation needs n >= 2");
  // xi(T_j, X_l) depends on j only through T_j, so evaluate once per distinct treatment value.
  std::vector<double> levels(sample.t().data(), sample.t().data() + n);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  std::vector<Index> level_of(n);
  for (Index j = 0; j < n; ++j)
    level_of[j] = std::lower_bound(levels.begin(), levels.end(), sample.t(j)) - levels.begin();

  const Index L = static_cast<Index>(levels.size());
  std::vector<Eigen::MatrixXd> by_level;
  const Index block = std::max<Index>(1, 20000 / n);
  for (Index a0 = 0; a0 < L; a0 += block) {
    const Index a1 = std::min(L, a0 + block);
    RowMatrix features((a1 - a0) * n, d + 1);
    for (Index a = a0; a < a1; ++a) {
      auto rows = features.middleRows((a - a0) * n, n);
      rows.col(0).setConstant(levels[a]);
      rows.rightCols(d) = sample.x();
    }
    const Eigen::MatrixXd out = xi(features);
    if (by_level.empty()) by_level.assign(out.cols(), Eigen::MatrixXd(L, n));
    require(static_cast<std::size_t>(out.cols()) == by_level.size(), ErrorCode::DimensionMismatch,
            "instrument width changed between blocks");
    for (std::size_t c = 0; c < by_level.size(); ++c)
      for (Index a = a0; a < a1; ++a)
        by_level[c].row(a) = out.col(static_cast<Index>(c)).segment((a - a0) * n, n).transpose();
  }
  std::vector<Eigen::MatrixXd> values(by_level.size(), Eigen::MatrixXd(n, n));
  for (std::size_t c = 0; c < values.size(); ++c)
    for (Index j = 0; j < n; ++j) values[c].row(j) = by_level[c].row(level_of[j]);
  return PairInstrument(std::move(values));
}

Eigen::VectorXd compute_target(const FeatureMap& xi, const Dataset& sample) {
  return evaluate_pairs(xi, sample).target();
}

Eigen::VectorXd compute_target(const InstrumentFn& xi, const Dataset& sample) {
  return compute_target(xi.as_map(), sample);
}

CalibrationResult solve_dual(const Eigen::VectorXd& pi_hat, const Eigen::MatrixXd& xi,
                             const Eigen::VectorXd& target, const CalibrationOptions& opts) {
  const Index m = xi.cols();
  require(target.size() == m, ErrorCode::DimensionMismatch, "target length mismatch");
  require(pi_hat.size() == xi.rows(), ErrorCode::DimensionMismatch, "pi_hat length mismatch");
  require((pi_hat.array() >= 0.0).all() && pi_hat.allFinite(), ErrorCode::DomainError,
          "initial weights must be finite and non-negative");
  require(xi.allFinite() && target.allFinite(), ErrorCode::DomainError, "non-finite instrument");

  CalibrationResult res;
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
  double G = dual_objective(lambda, pi_hat, xi, target);
  Eigen::VectorXd g = dual_gradient(lambda, pi_hat, xi, target);
  res.objective_trace.push_back(G);
  constexpr double eps = std::numeric_limits<double>::epsilon();

  while (g.lpNorm<Eigen::Infinity>() > opts.tol && res.iterations < opts.max_iter) {
    const Eigen::MatrixXd negH = -dual_hessian(lambda, pi_hat, xi);
    Eigen::LLT<Eigen::MatrixXd> llt(negH);
    if (llt.info() != Eigen::Success) {
      res.regularized = true;
      spdlog::debug("calibration: regularizing dual Hessian at iteration {}", res.iterations);
      llt.compute(negH + 1e-12 * Eigen::MatrixXd::Identity(m, m));
      require(llt.info() == Eigen::Success, ErrorCode::SingularHessian,
              "dual Hessian is singular; instrument columns are collinear");
    }
    const Eigen::VectorXd step = llt.solve(g);
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    bool accepted = false;
    double alpha = 1.0;
    for (int halving = 0; halving < 60; ++halving, alpha *= 0.5) {
      const Eigen::VectorXd cand = lambda + alpha * step;
      const double Gc = dual_objective(cand, pi_hat, xi, target);
      if (!std::isfinite(Gc)) continue;
      const Eigen::VectorXd gc = dual_gradient(cand, pi_hat, xi, target);
      // Near the optimum G is flat to rounding; a shrinking gradient is then the progress signal.
      const bool ascent = Gc > G;
      const bool flat = Gc >= G - 4.0 * eps * std::max(1.0, std::abs(G)) && gc.lpNorm<Eigen::Infinity>() < gnorm;
      if (ascent || flat) {
        lambda = cand;
        G = Gc;
        g = gc;
        accepted = true;
        break;
      }
    }
    ++res.iterations;
    if (!accepted) break;
    res.objective_trace.push_back(G);
  }

  const Eigen::VectorXd v = pi_hat.cwiseProduct(xi * lambda);
  res.lambda = lambda;
  res.weights = v.unaryExpr([](double a) { return rho_prime(a); });
  res.pi_bnn = res.weights.cwiseProduct(pi_hat);
  res.balance_residual = g;
  res.converged = g.lpNorm<Eigen::Infinity>() <= opts.tol;
  return res;
}

}  // namespace bnnw
