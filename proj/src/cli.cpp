#include "bnnw/cli.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bnnw/error.hpp"
#include "bnnw/parallel.hpp"
#include "bnnw/random.hpp"

namespace bnnw {
namespace {

const std::vector<std::string> kKnownKeys = {
    "schema_version", "seed", "design", "N", "d", "gamma", "covariates_csv", "curve_draws", "oracle_draws", "taus",
    "outcome", "treatment", "covariates", "treatment_kind", "folds", "loss", "tau", "model", "degree", "dmu_mode",
    "allow_fallback", "fit_beta_init", "bootstrap", "alpha", "multiplier", "nn.width", "nn.depth", "nn.clip",
    "nn.epochs", "nn.batch", "nn.step", "nn.validation_fraction", "trees.count", "trees.max_leaves",
    "trees.learning_rate", "trees.min_samples_leaf", "trees.subsample", "calib.tol", "calib.max_iter",
    "solver.starts", "estimators", "replications", "sizes", "inject_true_pi", "clip_low", "clip_high"};

std::size_t workers_of(const CliOptions& opts) { return opts.workers.value_or(default_workers()); }

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

RowMatrix load_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::EmptyData, "empty covariate file");
  const std::size_t cols = split_csv_line(line).size();
  std::vector<double> values;
  Index rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    require(cells.size() == cols, ErrorCode::DimensionMismatch, "ragged covariate row " + std::to_string(rows + 2));
    for (const auto& c : cells) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      require(ec == std::errc() && ptr == c.data() + c.size(), ErrorCode::UnparseableCell,
              "cannot parse covariate cell '" + c + "'");
      values.push_back(v);
    }
    ++rows;
  }
  require(rows > 0, ErrorCode::EmptyData, "covariate file has no rows");
  return Eigen::Map<RowMatrix>(values.data(), rows, static_cast<Index>(cols));
}

std::optional<RowMatrix> ihdp_covariates_from(const Config& cfg) {
  if (!cfg.has("covariates_csv")) return std::nullopt;
  return load_matrix_csv(cfg.get_string("covariates_csv"));
}

DgpBParams dgpb_from(const Config& cfg) {
  DgpBParams p;
  p.d = cfg.get_int("d", 50);
  if (cfg.has("gamma")) {
    const auto g = cfg.get_doubles("gamma");
    p.gamma = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Index>(g.size()));
  }
  p.validate();
  return p;
}

LossSpec loss_from(const Config& cfg) {
  const std::string name = cfg.get_string("loss", "squared");
  const double tau = cfg.get_double("tau", 0.5);
  if (name == "squared") return LossSpec::squared();
  if (name == "quantile") return LossSpec::quantile(tau);
  if (name == "asymmetric_ls") return LossSpec::asymmetric_ls(tau);
  if (name == "cross_entropy") return LossSpec::cross_entropy();
  fail(ErrorCode::Config, "unknown loss '" + name + "'");
}

DoseResponseModel model_from(const Config& cfg) {
  const std::string name = cfg.get_string("model", "binary_arms");
  const int degree = static_cast<int>(cfg.get_int("degree", 2));
  if (name == "binary_arms") return DoseResponseModel::binary_arms();
  if (name == "polynomial") return DoseResponseModel::polynomial(degree);
  if (name == "probit_polynomial") return DoseResponseModel::probit_polynomial(degree);
  fail(ErrorCode::Config, "unknown model '" + name + "'");
}

nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

int fit_exit_status(const Config& cfg, const EstimateReport& report) {
  if (report.all_converged() || cfg.get_bool("allow_fallback", false)) return 0;
  spdlog::error("calibration fell back in at least one fold; set allow_fallback = true to accept");
  return kExitFallback;
}

EstimateReport fit_from(const CliOptions& opts, const Config& cfg) {
  require(!opts.data.empty(), ErrorCode::Config, "--data is required");
  RunConfig rc = run_config_from(cfg);
  rc.workers = workers_of(opts);
  const Dataset data = load_csv(opts.data, csv_schema_from(cfg));
  spdlog::info("fit: {} rows, {} covariates, loss {}, model {}", data.size(), data.dim(), rc.loss.name(),
               rc.model.name());
  return estimate(data, rc);
}

}  // namespace

void check_known_keys(const Config& cfg) {
  for (const auto& k : cfg.keys()) {
    const bool known = std::find(kKnownKeys.begin(), kKnownKeys.end(), k) != kKnownKeys.end() ||
                       (k.rfind("functional.", 0) == 0 && k.size() > 11);
    require(known, ErrorCode::Config, "unknown key '" + k + "'");
  }
}

RunConfig run_config_from(const Config& cfg) {
  check_known_keys(cfg);
  RunConfig rc;
  rc.seed = cfg.get_u64("seed");
  rc.K = static_cast<int>(cfg.get_int("folds", 5));
  rc.loss = loss_from(cfg);
  rc.model = model_from(cfg);
  if (cfg.has("dmu_mode")) rc.dmu_mode = parse_dmu_mode(cfg.get_string("dmu_mode"));
  rc.fit_beta_init_for_binary_ate = cfg.get_bool("fit_beta_init", false);
  rc.B = static_cast<int>(cfg.get_int("bootstrap", 599));
  rc.alpha = cfg.get_double("alpha", 0.05);
  rc.multiplier = parse_multiplier_law(cfg.get_string("multiplier", "bernoulli2"));
  for (const auto& key : cfg.keys_with_prefix("functional.")) {
    const auto nu = cfg.get_doubles(key);
    rc.functionals.push_back({key.substr(11), Eigen::Map<const Eigen::VectorXd>(nu.data(), static_cast<Index>(nu.size()))});
  }
  if (!rc.functionals.empty()) {
    auto defaults = default_functionals(rc.loss, rc.model);
    rc.functionals.insert(rc.functionals.begin(), defaults.begin(), defaults.end());
  }
  rc.net.width = static_cast<int>(cfg.get_int("nn.width", rc.net.width));
  rc.net.depth = static_cast<int>(cfg.get_int("nn.depth", rc.net.depth));
  rc.net.clip = cfg.get_double("nn.clip", rc.net.clip);
  rc.net.epochs = static_cast<int>(cfg.get_int("nn.epochs", rc.net.epochs));
  rc.net.batch = static_cast<int>(cfg.get_int("nn.batch", rc.net.batch));
  rc.net.step_size = cfg.get_double("nn.step", rc.net.step_size);
  rc.net.validation_fraction = cfg.get_double("nn.validation_fraction", rc.net.validation_fraction);
  rc.trees.trees = static_cast<int>(cfg.get_int("trees.count", rc.trees.trees));
  rc.trees.max_leaves = static_cast<int>(cfg.get_int("trees.max_leaves", rc.trees.max_leaves));
  rc.trees.learning_rate = cfg.get_double("trees.learning_rate", rc.trees.learning_rate);
  rc.trees.min_samples_leaf = static_cast<int>(cfg.get_int("trees.min_samples_leaf", rc.trees.min_samples_leaf));
  rc.trees.subsample = cfg.get_double("trees.subsample", rc.trees.subsample);
  rc.calibration.tol = cfg.get_double("calib.tol", rc.calibration.tol);
  rc.calibration.max_iter = static_cast<int>(cfg.get_int("calib.max_iter", rc.calibration.max_iter));
  rc.solver_starts = static_cast<int>(cfg.get_int("solver.starts", rc.solver_starts));
  rc.validate();
  return rc;
}

CsvSchema csv_schema_from(const Config& cfg) {
  CsvSchema s;
  s.outcome = cfg.get_string("outcome", "y");
  s.treatment = cfg.get_string("treatment", "t");
  if (cfg.has("covariates")) s.covariates = cfg.get_strings("covariates");
  const DoseResponseModel model = model_from(cfg);
  const std::string kind =
      cfg.get_string("treatment_kind", model.kind == ModelKind::BinaryArms ? "binary" : "continuous");
  require(kind == "binary" || kind == "continuous", ErrorCode::Config, "treatment_kind must be binary or continuous");
  s.kind = kind == "binary" ? TreatmentKind::Binary : TreatmentKind::Continuous;
  return s;
}

StudyConfig study_config_from(const Config& cfg) {
  StudyConfig sc;
  sc.run = run_config_from(cfg);
  sc.seed = sc.run.seed;
  sc.design = cfg.get_string("design", "dgpb");
  sc.S = static_cast<int>(cfg.get_int("replications", 100));
  if (cfg.has("sizes")) {
    sc.sizes.clear();
    for (double v : cfg.get_doubles("sizes")) sc.sizes.push_back(static_cast<Index>(v));
  } else if (cfg.has("N")) {
    sc.sizes = {static_cast<Index>(cfg.get_int("N"))};
  }
  if (cfg.has("estimators")) sc.estimators = cfg.get_strings("estimators");
  if (sc.design == "dgpb") sc.dgpb = dgpb_from(cfg);
  else sc.ihdp_covariates = ihdp_covariates_from(cfg);
  sc.inject_true_pi = cfg.get_bool("inject_true_pi", false);
  sc.curve_draws = cfg.get_int("curve_draws", sc.curve_draws);
  sc.oracle_draws = cfg.get_int("oracle_draws", sc.oracle_draws);
  sc.baseline.K = sc.run.K;
  sc.baseline.trees = sc.run.trees;
  sc.baseline.calibration = sc.run.calibration;
  sc.baseline.alpha = sc.run.alpha;
  sc.baseline.clip_low = cfg.get_double("clip_low", sc.baseline.clip_low);
  sc.baseline.clip_high = cfg.get_double("clip_high", sc.baseline.clip_high);
  sc.validate();
  return sc;
}

int cmd_simulate(const CliOptions& opts) {
  const Config cfg = Config::load(opts.config);
  check_known_keys(cfg);
  const std::uint64_t seed = cfg.get_u64("seed");
  const std::string design = cfg.get_string("design");
  std::filesystem::create_directories(opts.out);
  nlohmann::json truth;
  truth["design"] = design;
  truth["seed"] = seed;
  if (design == "dgpb") {
    const Index N = cfg.get_int("N");
    const DgpBParams params = dgpb_from(cfg);
    const DgpBSample smp = dgpb_generate(N, params, seed);
    write_csv(opts.out / "data.csv", smp.data);
    std::vector<double> taus{0.25, 0.5, 0.75};
    if (cfg.has("taus")) taus = cfg.get_doubles("taus");
    const Index draws = cfg.get_int("oracle_draws", 10'000'000);
    const DgpBEffects fx = dgpb_true_effects(params, taus, draws);
    truth["N"] = N;
    truth["d"] = params.d;
    truth["gamma"] = vec_json(params.resolved_gamma());
    truth["treated_share"] = params.treated_share();
    truth["ate"] = dgpb_analytic_ate(params);
    truth["ate_oracle"] = fx.ate;
    truth["ate_oracle_se"] = fx.ate_se;
    truth["oracle_draws"] = fx.draws;
    truth["taus"] = fx.taus;
    truth["qte"] = fx.qte;
  } else if (design == "ihdp-continuous") {
    const auto covariates = ihdp_covariates_from(cfg);
    const Index draws = cfg.get_int("curve_draws", 1'000'000);
    const IhdpSample smp = ihdp_continuous_generate(covariates, cfg.get_int("N", 747), seed, draws);
    write_csv(opts.out / "data.csv", smp.data);
    truth["N"] = smp.data.size();
    truth["synthetic_covariates"] = smp.synthetic;
    if (smp.synthetic) truth["curve_draws"] = draws;
    truth["effect_mean"] = smp.effect_mean;
    truth["true_beta"] = vec_json(smp.true_beta);
    truth["grid"] = smp.grid;
    truth["true_curve"] = vec_json(smp.true_curve);
  } else {
    fail(ErrorCode::Config, "unknown design '" + design + "'");
  }
  write_json(opts.out / "truth.json", truth);
  spdlog::info("simulate: wrote {}", (opts.out / "data.csv").string());
  return 0;
}

int cmd_fit(const CliOptions& opts) {
  const Config cfg = Config::load(opts.config);
  const EstimateReport report = fit_from(opts, cfg);
  std::filesystem::create_directories(opts.out);
  write_report(opts.out / "report.json", report);
  if (report.bootstrap) write_draws_csv(opts.out / "bootstrap_draws.csv", report);
  return fit_exit_status(cfg, report);
}

int cmd_curve(const CliOptions& opts) {
  const Config cfg = Config::load(opts.config);
  require(model_from(cfg).kind != ModelKind::BinaryArms, ErrorCode::Config,
          "curve needs a polynomial or probit_polynomial model");
  const EstimateReport report = fit_from(opts, cfg);
  std::filesystem::create_directories(opts.out);
  write_curve_csv(opts.out / "curve.csv", curve_band(report, dose_grid()));
  write_report(opts.out / "report.json", report);
  return fit_exit_status(cfg, report);
}

int cmd_study(const CliOptions& opts) {
  const Config cfg = Config::load(opts.config);
  StudyConfig sc = study_config_from(cfg);
  sc.workers = workers_of(opts);
  const MetricsTable table = run_study(sc);
  std::filesystem::create_directories(opts.out);
  write_study_csv(opts.out / "study.csv", table);
  nlohmann::json manifest;
  manifest["schema_version"] = kConfigSchemaVersion;
  manifest["seed"] = sc.seed;
  manifest["config_hash"] = hex64(hash_tag(cfg.canonical()));
  manifest["design"] = sc.design;
  manifest["sizes"] = sc.sizes;
  manifest["replications"] = sc.S;
  manifest["estimators"] = sc.estimators;
  manifest["bootstrap"] = sc.run.B;
  manifest["inject_true_pi"] = sc.inject_true_pi;
  if (sc.design == "ihdp-continuous") manifest["synthetic_covariates"] = !sc.ihdp_covariates.has_value();
  write_json(opts.out / "manifest.json", manifest);
  return 0;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Calibrated neural-weighted causal effect estimation"};
  app.require_subcommand(1);
  CliOptions opts;
  std::size_t workers = 0;
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  auto add_common = [&](CLI::App* sub, bool needs_data) {
    sub->add_option("--config", opts.config, "Configuration file")->required()->check(CLI::ExistingFile);
    auto* data = sub->add_option("--data", opts.data, "Input CSV");
    if (needs_data) data->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory");
    sub->add_option("--workers", workers, "Worker threads (default: logical processors)")->check(CLI::PositiveNumber);
  };
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset and its truth manifest");
  auto* fit = app.add_subcommand("fit", "Estimate coefficients with bootstrap intervals");
  auto* curve = app.add_subcommand("curve", "Estimate a dose-response curve with pointwise bands");
  auto* study = app.add_subcommand("study", "Run a Monte Carlo comparison");
  add_common(simulate, false);
  add_common(fit, true);
  add_common(curve, true);
  add_common(study, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  if (workers > 0) opts.workers = workers;
  try {
    if (*simulate) return cmd_simulate(opts);
    if (*fit) return cmd_fit(opts);
    if (*curve) return cmd_curve(opts);
    return cmd_study(opts);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

}  // namespace bnnw
