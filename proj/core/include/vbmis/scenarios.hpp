#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vbmis/diagnostics.hpp"
#include "vbmis/exact_posterior.hpp"
#include "vbmis/models.hpp"
#include "vbmis/population.hpp"
#include "vbmis/vb.hpp"

namespace vbmis {

enum class ScenarioName { CountRegression, MixtureT, PoissonGLMM, WellSpecifiedControl };
std::string_view to_string(ScenarioName s);
std::optional<ScenarioName> parse_scenario_name(std::string_view s);

/// Truth and fitted-model constants for one scenario. Defaults are the
/// repository's declared choices.
struct ScenarioSpec {
  ScenarioName name = ScenarioName::CountRegression;

  // Count regression: Y | X ~ NB(r, logistic(X'β0)) with X = (1, Z), Z ~ N(0, 1),
  // fitted by Poisson(exp(X'β)). The well-specified control draws Y | X from
  // Poisson(exp(X'β0)) instead.
  double nb_r = 5.0;
  std::vector<double> beta0 = {0.3, -0.5};
  /// X = (1) only, with the intercept chosen so that E[Y] = intercept_mean.
  bool intercept_only = false;
  double intercept_mean = 2.0;

  // Mixture: truth (1/K) Σ N(center_k, sigma²); fit (1/K) Σ f(x; θ_k) with f
  // a unit-scale t(fit_dof) (or Gaussian).
  std::vector<double> centers = {-4.0, 0.0, 4.0};
  double mixture_sigma = 1.0;
  ComponentFamily fit_family = ComponentFamily::StudentT;
  double fit_dof = 4.0;
  double fit_scale = 1.0;
  int mixture_grid_points = 1201;
  double mixture_grid_half_width = 14.0;

  // GLMM: u_g ~ N(0, sigma_u²), Y | g ~ NB(glmm_r, mean exp(glmm_beta0 + u_g)),
  // fitted by a Poisson random-intercept model, θ = (β, log σ_u).
  int groups = 10;
  double sigma_u = 0.5;
  double glmm_r = 5.0;
  double glmm_beta0 = 0.5;
  /// Holds log σ_u fixed in the fit (θ = β only).
  std::optional<double> glmm_fixed_log_sigma_u;

  double prior_sd = 10.0;
  /// Covariate draws used to average predictive TV over X.
  int covariate_pool = 20;

  static ScenarioSpec defaults(ScenarioName name);
  int dim() const;
  bool is_latent() const { return name == ScenarioName::MixtureT || name == ScenarioName::PoissonGLMM; }
  /// Truth regression coefficients, resolving the intercept-only variant.
  std::vector<double> truth_beta() const;
};

/// Latent model of a latent scenario, nullptr otherwise.
std::shared_ptr<const LatentVarModel> latent_model(const ScenarioSpec& spec);
/// Model whose posterior VB approximates: the parametric fit, or the
/// variational model over units for latent scenarios.
std::shared_ptr<const ParametricModel> vb_target_model(const ScenarioSpec& spec, const InnerConfig& inner = {});
/// Model whose exact posterior MCMC samples: the parametric fit, or the
/// exact marginal over units for latent scenarios.
std::shared_ptr<const ParametricModel> exact_model(const ScenarioSpec& spec);
/// Rows to the units the fitted model scores (groups for the GLMM).
Dataset to_units(const ScenarioSpec& spec, const Dataset& rows);

/// Per-datum truth. For the GLMM, per_group > 0 selects the unit-level law of
/// one group with that many rows (units as produced by to_units), and
/// per_group = 0 the marginal law of a single row from a fresh group.
TrueGenerator truth_generator(const ScenarioSpec& spec, int per_group = 0);

/// Seeded draw of n rows from the truth. GLMM rows are assigned to groups
/// round-robin, so every group gets n / groups rows when divisible.
Dataset generate_data(const ScenarioSpec& spec, std::size_t n, std::uint64_t seed);

struct MomentResidual {
  Vec value;
  Vec se;
};
/// E[(Y - exp(X'β)) X] by Monte Carlo (count regression and control).
MomentResidual moment_residual(const ScenarioSpec& spec, const Vec& beta, std::size_t mc_draws, std::uint64_t seed);

struct MixtureAB {
  MatrixEstimate A;    // E[∇² m(θ; x)]
  MatrixEstimate B;    // E[∇m ∇m']
  MatrixEstimate gap;  // B + A from per-draw sums
  Vec mean_grad;
  Vec mean_grad_se;
  Mat sandwich;  // A⁻¹ B A⁻¹
};
MixtureAB mixture_AB(const ScenarioSpec& spec, const Vec& theta_star, std::size_t mc_draws, std::uint64_t seed);

/// Population quantities that apply at sample size n, with the LAN sample
/// size (units) they refer to.
struct ScenarioPopulation {
  PopulationSummary summary;
  std::size_t lan_n = 0;
};
/// Whether the population quantities change with n (GLMM: θ* is defined per
/// group size).
bool population_depends_on_n(const ScenarioSpec& spec);
ScenarioPopulation scenario_population(const ScenarioSpec& spec, std::size_t n, const ThetaStarConfig& cfg,
                                       const InnerConfig& inner = {});

/// Response-space grid for predictive TV: points in the form the exact model
/// scores, quadrature weights, and the truth density at each point.
struct ResponseGrid {
  std::vector<Datum> points;
  std::vector<double> weights;
  std::vector<double> p0;
};
ResponseGrid response_grid(const ScenarioSpec& spec, std::uint64_t seed);

/// Held-out truth draws in scored form (GLMM: single rows of fresh groups).
std::vector<Datum> test_set(const ScenarioSpec& spec, std::size_t size, std::uint64_t seed);

/// VB starting point for a dataset (mixture: quantiles of the data).
std::optional<MeanFieldGaussian> vb_init(const ScenarioSpec& spec, const Dataset& rows);

/// Sampler settings for a dataset given an optional VB fit: proposal scale
/// 2.38/√d times the VB sd, and for latent scenarios a jittered start at the
/// VB mean (or fallback). Settings already present in base are kept.
McmcConfig prepare_mcmc(const ScenarioSpec& spec, McmcConfig base, const std::optional<MeanFieldGaussian>& q,
                        const Vec& fallback);

/// Key-value dump of every constant.
std::vector<std::pair<std::string, std::string>> describe(const ScenarioSpec& spec);

// ---------------------------------------------------------------------------
// Replication runner

struct ExperimentConfig {
  std::vector<std::size_t> n_grid = {100};
  int reps = 1;
  std::uint64_t base_seed = 1;
  bool run_vb = true;
  bool run_mcmc = true;
  FitConfig vb;
  InnerConfig inner;
  McmcConfig mcmc;
  ThetaStarConfig population;
  /// Pool size for the GLMM, whose pool entries are whole groups.
  std::size_t unit_pool_draws = 5000;
  int test_size = 2000;
  /// Posterior draws per method for predictive densities.
  int pred_draws = 1000;
  /// Grid points per axis for Gaussian TV.
  int tv_points = 2001;
  /// Draws from the exact-flavor limit for the sample-based MCMC TV.
  int tv_limit_draws = 20000;
  int tv_bins = 50;
  int tv_bins_2d = 10;
  double ratio_floor = 1e-3;
  int jobs = 1;
  double max_failure_rate = 0.2;
};

inline constexpr std::string_view kMetricNames[] = {"rmse_theta_star", "tv_to_limit", "pred_ll",
                                                    "ratio_num",       "ratio_den",   "ratio"};
inline constexpr std::string_view kMethodNames[] = {"vb", "mcmc"};

struct ExperimentRow {
  std::string scenario;
  std::size_t n = 0;
  int rep = 0;
  std::string method;
  std::string metric;
  double value = 0.0;  // NaN is written as na
  double se = 0.0;     // NaN is written as na
  bool failed = false;
};

struct ExperimentTable {
  std::vector<ExperimentRow> rows;
  std::map<std::size_t, ScenarioPopulation> populations;
  std::vector<std::string> warnings;
};

struct SummaryRow {
  std::string scenario;
  std::size_t n = 0;
  std::string method;
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;
  int count = 0;
  int failed = 0;
};

/// Every (n, rep) of the grid; failed replications produce rows with
/// failed = true. Rows come out sorted by (n, rep, method, metric position).
ExperimentTable run_replications(const ScenarioSpec& spec, const ExperimentConfig& cfg);
/// ScenarioError when more than max_rate of the replications at some n failed.
void check_failures(const ExperimentTable& table, double max_rate);
/// run_replications followed by check_failures.
ExperimentTable run_scenario(const ScenarioSpec& spec, const ExperimentConfig& cfg);

/// Mean and sd per (n, method, metric) over non-failed finite values.
std::vector<SummaryRow> summarize(const ExperimentTable& table);

}  // namespace vbmis
