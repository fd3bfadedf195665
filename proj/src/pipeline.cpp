#include "bnnw/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <random>

#include "bnnw/error.hpp"
#include "bnnw/parallel.hpp"

namespace bnnw {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_binary_ate(const RunConfig& cfg) {
  return cfg.loss.kind == LossKind::Squared && cfg.model.kind == ModelKind::BinaryArms;
}

Eigen::VectorXd fold_average(const std::vector<Eigen::VectorXd>& betas) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(betas.front().size());
  for (const auto& b : betas) sum += b;
  return sum / static_cast<double>(betas.size());
}

SolveOptions solver_options(const RunConfig& cfg, std::uint64_t seed) {
  SolveOptions o;
  o.starts = cfg.solver_starts;
  o.seed = seed;
  return o;
}

/// Calibration weights for multipliers u, or nothing if the dual cannot be solved.
std::optional<Eigen::VectorXd> calibration_weights(const FoldArtifacts& art, const Eigen::VectorXd& u,
                                                   const Eigen::VectorXd& pi, const RunConfig& cfg,
                                                   CalibrationResult* out) {
  try {
    CalibrationResult r = solve_dual(pi, art.xi, art.pairs.weighted_target(u), cfg.calibration);
    const bool ok = r.converged;
    Eigen::VectorXd w = r.weights;
    if (out) *out = std::move(r);
    if (!ok) return std::nullopt;
    return w;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularHessian) throw;
    return std::nullopt;
  }
}

double vector_min(const Eigen::VectorXd& v) { return v.size() ? v.minCoeff() : 0.0; }
double vector_max(const Eigen::VectorXd& v) { return v.size() ? v.maxCoeff() : 0.0; }

}  // namespace

std::string to_string(MultiplierLaw law) {
  switch (law) {
    case MultiplierLaw::Bernoulli2: return "bernoulli2";
    case MultiplierLaw::Exponential: return "exponential";
    case MultiplierLaw::Ones: return "ones";
  }
  return "unknown";
}

MultiplierLaw parse_multiplier_law(const std::string& name) {
  for (auto law : {MultiplierLaw::Bernoulli2, MultiplierLaw::Exponential, MultiplierLaw::Ones})
    if (to_string(law) == name) return law;
  fail(ErrorCode::Config, "unknown multiplier law '" + name + "'");
}

Eigen::VectorXd draw_multipliers(Index n, MultiplierLaw law, Rng& rng) {
  Eigen::VectorXd u(n);
  std::bernoulli_distribution coin(0.5);
  std::exponential_distribution<double> expo(1.0);
  for (Index i = 0; i < n; ++i) {
    switch (law) {
      case MultiplierLaw::Bernoulli2: u[i] = coin(rng) ? 2.0 : 0.0; break;
      case MultiplierLaw::Exponential: u[i] = expo(rng); break;
      case MultiplierLaw::Ones: u[i] = 1.0; break;
    }
  }
  return u;
}

std::vector<Functional> default_functionals(const LossSpec& spec, const DoseResponseModel& model) {
  if (model.kind != ModelKind::BinaryArms) return {};
  Eigen::VectorXd nu(2);
  nu << -1.0, 1.0;
  const std::string name = spec.kind == LossKind::Quantile ? "qte" : spec.kind == LossKind::Squared ? "ate" : "contrast";
  return {{name, nu}};
}

void RunConfig::validate() const {
  require(K >= 2, ErrorCode::InvalidArgument, "K must be at least 2");
  require(B >= 0, ErrorCode::InvalidArgument, "B must be non-negative");
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  require(workers >= 1, ErrorCode::InvalidArgument, "workers must be positive");
  require(solver_starts >= 1, ErrorCode::InvalidArgument, "solver_starts must be positive");
  net.validate();
  trees.validate();
  for (const auto& f : functionals)
    require(f.nu.size() == model.p(), ErrorCode::DimensionMismatch, "functional '" + f.name + "' has wrong length");
}

std::vector<Functional> RunConfig::resolved_functionals() const {
  return functionals.empty() ? default_functionals(loss, model) : functionals;
}

bool EstimateReport::all_converged() const {
  return std::none_of(folds.begin(), folds.end(), [](const auto& f) { return f.fallback; });
}

BnnwRun run_bnnw(const Dataset& data, const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  check_compatible(cfg.loss, cfg.model, data.treatment_kind());
  const Index N = data.size(), p = cfg.model.p();
  require(N >= 2 * cfg.K * std::max<Index>(p, 10), ErrorCode::TooFewObservations,
          "need N >= 2 K max(p, 10) observations");
  const DmuMode mode = cfg.dmu_mode.value_or(default_dmu_mode(cfg.loss, cfg.model));
  const bool zero_init = is_binary_ate(cfg) && !cfg.fit_beta_init_for_binary_ate;

  BnnwRun run;
  run.plan = make_folds(N, cfg.K, cfg.seed);
  std::vector<std::optional<FoldArtifacts>> slots(cfg.K);
  std::vector<FoldDiagnostics> diags(cfg.K);

  parallel_for(static_cast<std::size_t>(cfg.K), cfg.workers, [&](std::size_t kk) {
    const int k = static_cast<int>(kk);
    FoldArtifacts& art = slots[k].emplace(data.subset(run.plan.folds[k]));
    FoldDiagnostics& diag = diags[k];
    const Dataset train = data.subset(run.plan.complements[k]);
    art.k = k;
    art.indices = run.plan.folds[k];
    art.solver_seed = derive_seed(cfg.seed, "solver", {static_cast<std::uint64_t>(k)});
    auto lap = std::chrono::steady_clock::now();
    auto stage = [&](const char* name) {
      const auto now = std::chrono::steady_clock::now();
      spdlog::debug("fold {}: {} took {:.3f}s", k, name, std::chrono::duration<double>(now - lap).count());
      lap = now;
    };

    std::shared_ptr<const WeightNet> net;
    if (!cfg.known_pi) {
      WeightNetConfig nc = cfg.net;
      nc.seed = derive_seed(cfg.seed, "net", {static_cast<std::uint64_t>(k)});
      WeightNetFit fit = train_weight_net(train, nc);
      diag.net_best_epoch = fit.best_epoch;
      net = std::make_shared<const WeightNet>(std::move(fit.net));
      stage("weight net");
    }
    auto initial_weights = [&](const Dataset& d) -> Eigen::VectorXd {
      if (net) return net->predict(d);
      Eigen::VectorXd out(d.size());
      for (Index i = 0; i < d.size(); ++i) out[i] = cfg.known_pi(d.t(i), d.x(i).transpose());
      return out;
    };

    const Dataset half1 = data.subset(run.plan.first_half[k]);
    const Dataset half2 = data.subset(run.plan.second_half[k]);
    if (zero_init) {
      diag.beta_init = Eigen::VectorXd::Zero(p);
    } else {
      diag.beta_init = solve_beta(half1, initial_weights(half1), cfg.loss, cfg.model,
                                  solver_options(cfg, derive_seed(cfg.seed, "init", {static_cast<std::uint64_t>(k)})));
    }
    stage("initial beta");
    const Dataset& mu_train = is_binary_ate(cfg) ? train : half2;
    BoostedTreesConfig tc = cfg.trees;
    tc.seed = derive_seed(cfg.seed, "trees", {static_cast<std::uint64_t>(k)});
    auto mu = std::make_shared<const MuModel>(fit_mu(mu_train, diag.beta_init, cfg.loss, cfg.model, tc));
    stage("mu");
    auto dmu = std::make_shared<const DmuModel>(fit_dmu(mu_train, diag.beta_init, cfg.loss, cfg.model, tc, mode));
    stage("dmu");
    const InstrumentFn instrument = build_instrument(mu, dmu, art.sample);
    diag.instrument_dim = instrument.dim();
    diag.instrument_labels = instrument.labels();

    art.pairs = evaluate_pairs(instrument.as_map(), art.sample);
    art.xi = art.pairs.diagonal();
    art.pi_dnn = initial_weights(art.sample);
    stage("instrument");

    const Index n = art.sample.size();
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd pi = ones.cwiseProduct(art.pi_dnn);
    CalibrationResult cal;
    auto w = calibration_weights(art, ones, pi, cfg, &cal);
    if (!w) {
      art.fallback = true;
      spdlog::warn("fold {}: calibration did not converge; using unit calibration weights", k);
      w = Eigen::VectorXd::Ones(n);
    }
    const Eigen::VectorXd weights = w->cwiseProduct(pi);
    const SolveOptions so = solver_options(cfg, art.solver_seed);
    diag.beta_bnnw = solve_beta(art.sample, weights, cfg.loss, cfg.model, so);
    diag.beta_dnnw = solve_beta(art.sample, pi, cfg.loss, cfg.model, so);
    stage("calibration and solve");

    diag.n = n;
    diag.lambda = cal.lambda;
    diag.balance_residual = cal.balance_residual;
    diag.iterations = cal.iterations;
    diag.converged = cal.converged;
    diag.regularized = cal.regularized;
    diag.fallback = art.fallback;
    diag.near_zero = near_zero_check(art.sample, weights, cfg.loss, cfg.model, diag.beta_bnnw);
    diag.pi_min = vector_min(art.pi_dnn);
    diag.pi_max = vector_max(art.pi_dnn);
    diag.weight_min = vector_min(*w);
    diag.weight_max = vector_max(*w);
  });

  for (auto& slot : slots) run.artifacts.push_back(std::move(*slot));
  EstimateReport& rep = run.report;
  rep.loss = cfg.loss;
  rep.model = cfg.model;
  rep.K = cfg.K;
  rep.N = N;
  rep.seed = cfg.seed;
  rep.functionals = cfg.resolved_functionals();
  std::vector<Eigen::VectorXd> b, bd;
  for (const auto& d : diags) {
    b.push_back(d.beta_bnnw);
    bd.push_back(d.beta_dnnw);
    if (d.fallback) rep.warnings.push_back("calibration fallback in a fold");
  }
  rep.beta = fold_average(b);
  rep.beta_dnnw = fold_average(bd);
  rep.folds = std::move(diags);
  rep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  spdlog::info("run_bnnw: N={} K={} finished in {:.2f}s", N, cfg.K, rep.wall_clock_seconds);
  return run;
}

Replicate bootstrap_replicate(const RunConfig& cfg, const std::vector<FoldArtifacts>& artifacts,
                              const Eigen::VectorXd& u, Index N) {
  require(u.size() == N, ErrorCode::DimensionMismatch, "multiplier vector must cover the sample");
  Replicate rep;
  std::vector<Eigen::VectorXd> b, bd;
  for (const auto& art : artifacts) {
    const Index n = art.sample.size();
    Eigen::VectorXd uk(n);
    for (Index i = 0; i < n; ++i) uk[i] = u[art.indices[i]];
    if (!(uk.array() > 0.0).any()) return rep;
    const Eigen::VectorXd pi = uk.cwiseProduct(art.pi_dnn);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    if (!art.fallback) {
      auto cw = calibration_weights(art, uk, pi, cfg, nullptr);
      if (!cw) return rep;
      w = *cw;
    }
    const SolveOptions so = solver_options(cfg, art.solver_seed);
    try {
      b.push_back(solve_beta(art.sample, w.cwiseProduct(pi), cfg.loss, cfg.model, so));
      bd.push_back(solve_beta(art.sample, pi, cfg.loss, cfg.model, so));
    } catch (const Error&) {
      return rep;
    }
  }
  rep.beta = fold_average(b);
  rep.beta_dnnw = fold_average(bd);
  rep.valid = true;
  return rep;
}

std::pair<Index, Index> equitailed_ranks(Index B, double alpha) {
  require(B >= 1, ErrorCode::InvalidArgument, "need at least one draw");
  const double b = static_cast<double>(B);
  auto rank = [&](double x) { return std::clamp<Index>(static_cast<Index>(std::ceil(x - 1e-9)), 1, B); };
  return {rank(b * alpha / 2.0), rank(b * (1.0 - alpha / 2.0))};
}

std::pair<double, double> equitailed_interval(std::vector<double> draws, double alpha) {
  const auto [lo, hi] = equitailed_ranks(static_cast<Index>(draws.size()), alpha);
  std::sort(draws.begin(), draws.end());
  return {draws[lo - 1], draws[hi - 1]};
}

namespace {

std::vector<Interval> intervals_for(const Eigen::VectorXd& point, const RowMatrix& draws,
                                    const std::vector<char>& valid, const std::vector<Functional>& fs,
                                    double alpha, std::vector<std::string>& warnings, const std::string& tag) {
  std::vector<Functional> all;
  for (Index j = 0; j < point.size(); ++j)
    all.push_back({"beta[" + std::to_string(j) + "]", Eigen::VectorXd::Unit(point.size(), j)});
  all.insert(all.end(), fs.begin(), fs.end());
  std::vector<Interval> out;
  for (const auto& f : all) {
    std::vector<double> v;
    for (Index b = 0; b < draws.rows(); ++b)
      if (valid[b]) v.push_back(draws.row(b).dot(f.nu));
    Interval iv{f.name, f.nu, point.dot(f.nu), kNaN, kNaN};
    if (!v.empty()) std::tie(iv.lower, iv.upper) = equitailed_interval(std::move(v), alpha);
    if (!(iv.lower <= iv.estimate && iv.estimate <= iv.upper)) {
      warnings.push_back(tag + " interval for " + f.name + " does not contain the point estimate");
      spdlog::warn("{}", warnings.back());
    }
    out.push_back(std::move(iv));
  }
  return out;
}

}  // namespace

void run_bootstrap(const RunConfig& cfg, BnnwRun& run) {
  require(cfg.B >= 1, ErrorCode::InvalidArgument, "bootstrap needs B >= 1");
  const Index N = run.report.N, p = cfg.model.p();
  BootstrapSummary s;
  s.B = cfg.B;
  s.law = cfg.multiplier;
  s.alpha = cfg.alpha;
  s.draws = RowMatrix::Constant(cfg.B, p, kNaN);
  s.dnnw_draws = RowMatrix::Constant(cfg.B, p, kNaN);
  s.valid.assign(cfg.B, 0);
  parallel_for(static_cast<std::size_t>(cfg.B), cfg.workers, [&](std::size_t b) {
    Rng rng = make_rng(cfg.seed, "bootstrap", {static_cast<std::uint64_t>(b)});
    const Eigen::VectorXd u = draw_multipliers(N, cfg.multiplier, rng);
    const Replicate r = bootstrap_replicate(cfg, run.artifacts, u, N);
    if (!r.valid) return;
    s.draws.row(b) = r.beta.transpose();
    s.dnnw_draws.row(b) = r.beta_dnnw.transpose();
    s.valid[b] = 1;
  });
  s.invalid = static_cast<int>(std::count(s.valid.begin(), s.valid.end(), 0));
  if (s.invalid > 0) {
    run.report.warnings.push_back(std::to_string(s.invalid) + " bootstrap replicates were invalid");
    spdlog::warn("{}", run.report.warnings.back());
  }
  s.intervals = intervals_for(run.report.beta, s.draws, s.valid, run.report.functionals, cfg.alpha,
                              run.report.warnings, "bnnw");
  s.dnnw_intervals = intervals_for(run.report.beta_dnnw, s.dnnw_draws, s.valid, run.report.functionals,
                                   cfg.alpha, run.report.warnings, "dnnw");
  run.report.bootstrap = std::move(s);
}

EstimateReport estimate(const Dataset& data, const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  BnnwRun run = run_bnnw(data, cfg);
  if (cfg.B > 0) run_bootstrap(cfg, run);
  run.report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  spdlog::info("estimate: finished in {:.2f}s", run.report.wall_clock_seconds);
  return std::move(run.report);
}

std::vector<double> dose_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  return g;
}

CurveBand curve_band(const EstimateReport& report, const std::vector<double>& grid) {
  require(report.model.kind != ModelKind::BinaryArms, ErrorCode::InvalidArgument,
          "dose-response curves need a continuous-treatment model");
  CurveBand band;
  band.t = grid;
  for (double t : grid) {
    const double g = g_value(report.model, t, report.beta);
    std::vector<double> v{g};
    double alpha = 0.05;
    if (report.bootstrap) {
      alpha = report.bootstrap->alpha;
      for (Index b = 0; b < report.bootstrap->draws.rows(); ++b)
        if (report.bootstrap->valid[b])
          v.push_back(g_value(report.model, t, report.bootstrap->draws.row(b).transpose()));
    }
    auto [lo, hi] = equitailed_interval(std::move(v), alpha);
    band.g.push_back(g);
    band.lower.push_back(std::min(lo, g));
    band.upper.push_back(std::max(hi, g));
  }
  return band;
}

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json intervals_json(const std::vector<Interval>& ivs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& iv : ivs)
    out.push_back({{"name", iv.name}, {"nu", vec_json(iv.nu)}, {"estimate", iv.estimate},
                   {"lower", iv.lower}, {"upper", iv.upper}});
  return out;
}

}  // namespace

nlohmann::json to_json(const EstimateReport& r) {
  nlohmann::json doc;
  doc["loss"] = r.loss.name();
  if (r.loss.has_tau()) doc["tau"] = r.loss.tau;
  doc["model"] = r.model.name();
  doc["p"] = r.model.p();
  doc["K"] = r.K;
  doc["N"] = r.N;
  doc["seed"] = r.seed;
  doc["beta"] = vec_json(r.beta);
  doc["beta_dnnw"] = vec_json(r.beta_dnnw);
  doc["functionals"] = nlohmann::json::array();
  for (const auto& f : r.functionals)
    doc["functionals"].push_back({{"name", f.name}, {"nu", vec_json(f.nu)}, {"estimate", r.beta.dot(f.nu)},
                                  {"estimate_dnnw", r.beta_dnnw.dot(f.nu)}});
  doc["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds) {
    doc["folds"].push_back({{"n", f.n},
                            {"beta_init", vec_json(f.beta_init)},
                            {"beta", vec_json(f.beta_bnnw)},
                            {"beta_dnnw", vec_json(f.beta_dnnw)},
                            {"instrument_dim", f.instrument_dim},
                            {"instrument_labels", f.instrument_labels},
                            {"lambda", vec_json(f.lambda)},
                            {"balance_residual", vec_json(f.balance_residual)},
                            {"iterations", f.iterations},
                            {"converged", f.converged},
                            {"fallback", f.fallback},
                            {"regularized", f.regularized},
                            {"near_zero", f.near_zero},
                            {"net_best_epoch", f.net_best_epoch},
                            {"pi_range", {f.pi_min, f.pi_max}},
                            {"weight_range", {f.weight_min, f.weight_max}}});
  }
  doc["all_converged"] = r.all_converged();
  if (r.bootstrap) {
    const auto& b = *r.bootstrap;
    doc["bootstrap"] = {{"B", b.B},
                        {"multiplier", to_string(b.law)},
                        {"alpha", b.alpha},
                        {"invalid", b.invalid},
                        {"intervals", intervals_json(b.intervals)},
                        {"dnnw_intervals", intervals_json(b.dnnw_intervals)}};
  }
  doc["warnings"] = r.warnings;
  return doc;
}

void write_report(const std::filesystem::path& path, const EstimateReport& report) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
}

void write_draws_csv(const std::filesystem::path& path, const EstimateReport& report) {
  require(report.bootstrap.has_value(), ErrorCode::InvalidArgument, "report has no bootstrap draws");
  const auto& b = *report.bootstrap;
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  const Index p = b.draws.cols();
  for (Index j = 0; j < p; ++j) out << "beta" << j << ',';
  for (Index j = 0; j < p; ++j) out << "dnnw_beta" << j << ',';
  out << "valid\n";
  for (Index r = 0; r < b.draws.rows(); ++r) {
    for (Index j = 0; j < p; ++j) out << (b.valid[r] ? format_real(b.draws(r, j)) : "NA") << ',';
    for (Index j = 0; j < p; ++j) out << (b.valid[r] ? format_real(b.dnnw_draws(r, j)) : "NA") << ',';
    out << (b.valid[r] ? 1 : 0) << '\n';
  }
}

void write_curve_csv(const std::filesystem::path& path, const CurveBand& band) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << "t,g,ci_lower,ci_upper\n";
  for (std::size_t i = 0; i < band.t.size(); ++i)
    out << format_real(band.t[i]) << ',' << format_real(band.g[i]) << ',' << format_real(band.lower[i]) << ','
        << format_real(band.upper[i]) << '\n';
}

}  // namespace bnnw
