#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>

#include "record.hpp"
#include "vbmis/diagnostics.hpp"
#include "vbmis/errors.hpp"

namespace vbmis::cli {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "na";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string timestamp() {
  Record r;
  r.stamp_created();
  return r.get("created");
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Configuration file")->required();
  sub->add_option("--seed", c.seed, "Overrides experiment.base_seed and population.seed");
  sub->add_option("--jobs", c.jobs, "Worker threads for replications")->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "Output directory (overrides output.dir)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) {
    cfg.experiment.base_seed = *c.seed;
    cfg.experiment.population.seed = *c.seed;
  }
  if (c.jobs) cfg.experiment.jobs = *c.jobs;
  if (c.out) cfg.output_dir = *c.out;
  return cfg;
}

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw std::runtime_error("cannot create output directory '" + dir + "'");
  return p;
}

void save_manifest(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  write_manifest(out, cfg, command);
}

ThetaStarConfig population_config(const RunConfig& cfg) {
  ThetaStarConfig p = cfg.experiment.population;
  if (cfg.scenario.name == ScenarioName::PoissonGLMM) p.mc_draws = cfg.experiment.unit_pool_draws;
  return p;
}

Dataset command_data(const RunConfig& cfg) {
  return generate_data(cfg.scenario, cfg.data_n, derive_seed(cfg.experiment.base_seed, {1}));
}

FitResult command_fit(const RunConfig& cfg, const Dataset& rows) {
  const auto model = vb_target_model(cfg.scenario, cfg.experiment.inner);
  FitConfig fc = cfg.experiment.vb;
  fc.seed = derive_seed(cfg.experiment.base_seed, {2});
  fc.init = vb_init(cfg.scenario, rows);
  FitResult fit = fit_vb(*model, to_units(cfg.scenario, rows), fc);
  fit.q = fit.q.canonicalized(*model);
  return fit;
}

int cmd_theta_star(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_dir(cfg.output_dir);
  const ScenarioPopulation pop =
      scenario_population(cfg.scenario, cfg.data_n, population_config(cfg), cfg.experiment.inner);
  Record r = population_record(pop.summary);
  r.set("scenario", std::string(to_string(cfg.scenario.name)));
  r.set("lan_n", std::to_string(pop.lan_n));
  r.stamp_created();
  r.save((dir / "population.record").string());
  save_manifest(dir, cfg, "theta-star");
  if (pop.summary.multimodal) err << "warning: theta* restarts disagree\n";
  out << "theta_star:";
  for (Eigen::Index i = 0; i < pop.summary.theta_star.size(); ++i) {
    out << ' ' << num(pop.summary.theta_star[i]) << " (se " << num(pop.summary.theta_star_se[i]) << ')';
  }
  out << "\nwrote " << (dir / "population.record").string() << '\n';
  return 0;
}

int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_dir(cfg.output_dir);
  const FitResult fit = command_fit(cfg, command_data(cfg));
  Record r = fit_record(fit.q, fit.report);
  r.set("scenario", std::string(to_string(cfg.scenario.name)));
  r.set("n", std::to_string(cfg.data_n));
  r.stamp_created();
  r.save((dir / "fit.record").string());
  std::ofstream trace(dir / "elbo_trace.csv");
  trace << "step,elbo\n";
  for (std::size_t i = 0; i < fit.report.elbo_trace.size(); ++i) {
    trace << i * static_cast<std::size_t>(fit.report.trace_thin) << ',' << num(fit.report.elbo_trace[i]) << '\n';
  }
  save_manifest(dir, cfg, "fit");
  if (!fit.report.converged) err << "warning: VB did not meet the convergence criterion\n";
  out << "mu:";
  for (Eigen::Index i = 0; i < fit.q.mu.size(); ++i) out << ' ' << num(fit.q.mu[i]);
  out << "\nsigma:";
  for (Eigen::Index i = 0; i < fit.q.mu.size(); ++i) out << ' ' << num(std::exp(fit.q.log_sigma[i]));
  out << "\nelbo: " << num(fit.report.final_elbo) << " (se " << num(fit.report.final_elbo_se) << ")\n";
  return 0;
}

int cmd_mcmc(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_dir(cfg.output_dir);
  const Dataset rows = command_data(cfg);
  const FitResult fit = command_fit(cfg, rows);
  McmcConfig mc = prepare_mcmc(cfg.scenario, cfg.experiment.mcmc, fit.q, fit.q.mu);
  mc.seed = derive_seed(cfg.experiment.base_seed, {5});
  const McmcResult res = metropolis_sample(*exact_model(cfg.scenario), to_units(cfg.scenario, rows), mc);
  {
    std::ofstream draws(dir / "draws.csv");
    write_draws_csv(draws, res);
  }
  Record r("mcmc");
  r.set("scenario", std::string(to_string(cfg.scenario.name)));
  r.set("n", std::to_string(cfg.data_n));
  r.set("mean", res.mean());
  if (res.r_hat.size() > 0) r.set("r_hat", res.r_hat);
  Vec acc(static_cast<Eigen::Index>(res.chains.size()));
  for (std::size_t c = 0; c < res.chains.size(); ++c) acc[static_cast<Eigen::Index>(c)] = res.chains[c].acceptance_rate;
  r.set("acceptance_rate", acc);
  r.set("rhat_warning", res.rhat_warning ? "true" : "false");
  r.stamp_created();
  r.save((dir / "mcmc.record").string());
  save_manifest(dir, cfg, "mcmc");
  if (res.rhat_warning) err << "warning: R-hat at or above " << cfg.experiment.mcmc.rhat_threshold << '\n';
  out << "posterior mean:";
  const Vec m = res.mean();
  for (Eigen::Index i = 0; i < m.size(); ++i) out << ' ' << num(m[i]);
  out << "\nwrote " << (dir / "draws.csv").string() << '\n';
  return 0;
}

int cmd_diagnose(const std::string& pop_path, const std::string& fit_path, std::size_t n, const std::string& out_dir,
                 std::ostream& out) {
  const PopulationSummary pop = population_from_record(Record::load(pop_path));
  const MeanFieldGaussian q = fit_from_record(Record::load(fit_path));
  if (q.dim() != pop.dim()) {
    throw ShapeError("diagnose: fit has dimension " + std::to_string(q.dim()) + " but the population has " +
                     std::to_string(pop.dim()));
  }
  const LimitingNormal mf = mean_field_limit(pop.V, pop.theta_star, n);
  const LimitingNormal ex = exact_limit(pop.V, pop.theta_star, n);
  const Mat q_cov = q.sigma().array().square().matrix().asDiagonal();
  const int points = 2001;
  std::vector<std::tuple<std::string, int, double>> rows;
  rows.emplace_back("tv_meanfield_limit", -1, tv_gaussians(q.mu, q_cov, mf.center, mf.covariance, points));
  rows.emplace_back("tv_exact_limit", -1, tv_gaussians(q.mu, q_cov, ex.center, ex.covariance, points));
  rows.emplace_back("kl_meanfield_limit", -1, kl_mvn(q.mu, q_cov, mf.center, mf.covariance));
  rows.emplace_back("entropy_gap", -1, entropy_gap(pop.V));
  const double z = 1.959963984540054;
  for (int i = 0; i < q.dim(); ++i) {
    const double half = z * std::sqrt(pop.sandwich(i, i) / static_cast<double>(n));
    rows.emplace_back("mu", i, q.mu[i]);
    rows.emplace_back("sandwich_ci_lo", i, q.mu[i] - half);
    rows.emplace_back("sandwich_ci_hi", i, q.mu[i] + half);
    rows.emplace_back("z_theta_star", i, (q.mu[i] - pop.theta_star[i]) / (half / z));
  }

  out << "BvM diagnostics at n = " << n << "\n";
  for (const auto& [name, idx, value] : rows) {
    out << "  " << name;
    if (idx >= 0) out << '[' << idx << ']';
    out << " = " << num(value) << '\n';
  }
  if (!out_dir.empty()) {
    const fs::path dir = prepare_dir(out_dir);
    std::ofstream csv(dir / "diagnose.csv");
    csv << "quantity,coordinate,value\n";
    for (const auto& [name, idx, value] : rows) csv << name << ',' << (idx >= 0 ? std::to_string(idx) : "na") << ',' << num(value) << '\n';
  }
  return 0;
}

int cmd_experiment(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_dir(cfg.output_dir);
  const ExperimentTable table = run_replications(cfg.scenario, cfg.experiment);
  {
    std::ofstream res(dir / "results.csv");
    write_results_csv(res, table);
    std::ofstream sum(dir / "summary.csv");
    write_summary_csv(sum, summarize(table));
  }
  const bool per_n = population_depends_on_n(cfg.scenario);
  for (const auto& [n, pop] : table.populations) {
    Record r = population_record(pop.summary);
    r.set("scenario", std::string(to_string(cfg.scenario.name)));
    r.set("lan_n", std::to_string(pop.lan_n));
    r.stamp_created();
    r.save((dir / (per_n ? "population_n" + std::to_string(n) + ".record" : "population.record")).string());
    if (!per_n) break;
  }
  save_manifest(dir, cfg, "experiment");
  for (const auto& w : table.warnings) err << "warning: " << w << '\n';
  try {
    check_failures(table, cfg.experiment.max_failure_rate);
  } catch (const ScenarioError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  out << "wrote " << table.rows.size() << " rows to " << (dir / "results.csv").string() << '\n';
  return 0;
}

}  // namespace

void write_results_csv(std::ostream& out, const ExperimentTable& table) {
  out << "scenario,n,rep,method,metric,value,se,failed\n";
  for (const ExperimentRow& r : table.rows) {
    out << r.scenario << ',' << r.n << ',' << r.rep << ',' << r.method << ',' << r.metric << ',' << num(r.value) << ','
        << num(r.se) << ',' << (r.failed ? 1 : 0) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "scenario,n,method,metric,mean,sd,count,failed\n";
  for (const SummaryRow& r : rows) {
    out << r.scenario << ',' << r.n << ',' << r.method << ',' << r.metric << ',' << num(r.mean) << ',' << num(r.sd)
        << ',' << r.count << ',' << r.failed << '\n';
  }
}

void write_manifest(std::ostream& out, const RunConfig& cfg, const std::string& command) {
  const std::string resolved = dump_config(cfg);
  out << resolved;
  out << "manifest.command = " << command << '\n';
  out << "manifest.tool_version = " << kToolVersion << '\n';
  out << "manifest.results_schema = " << kResultsSchema << '\n';
  out << "manifest.config_hash = " << fnv1a_hex(resolved) << '\n';
  out << "manifest.created = " << timestamp() << '\n';
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mean-field variational Bayes under model misspecification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common c_theta, c_fit, c_mcmc, c_exp;
  add_common(app.add_subcommand("theta-star", "Pseudo-true parameter, curvature and sandwich"), c_theta);
  add_common(app.add_subcommand("fit", "Mean-field VB fit on one seeded dataset"), c_fit);
  add_common(app.add_subcommand("mcmc", "Random-walk Metropolis on one seeded dataset"), c_mcmc);
  add_common(app.add_subcommand("experiment", "Replicated experiment over the n grid"), c_exp);

  std::string pop_path, fit_path, diag_out;
  std::size_t diag_n = 0;
  CLI::App* diag = app.add_subcommand("diagnose", "BvM report for one fit against a population record");
  diag->add_option("--population", pop_path, "Population record")->required();
  diag->add_option("--fit", fit_path, "Fit record")->required();
  diag->add_option("--n", diag_n, "Sample size of the fit")->required()->check(CLI::PositiveNumber);
  diag->add_option("--out", diag_out, "Directory for diagnose.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("theta-star")) return cmd_theta_star(resolve(c_theta), out, err);
    if (app.got_subcommand("fit")) return cmd_fit(resolve(c_fit), out, err);
    if (app.got_subcommand("mcmc")) return cmd_mcmc(resolve(c_mcmc), out, err);
    if (app.got_subcommand("experiment")) return cmd_experiment(resolve(c_exp), out, err);
    if (app.got_subcommand("diagnose")) return cmd_diagnose(pop_path, fit_path, diag_n, diag_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"vbmis"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace vbmis::cli
