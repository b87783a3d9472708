#include "vbmis/scenarios.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "vbmis/distributions.hpp"
#include "vbmis/errors.hpp"
#include "vbmis/quadrature.hpp"
#include "vbmis/special.hpp"

namespace vbmis {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// NB success probability for a given mean: r q / (1 - q) = mean.
double nb_q_for_mean(double mean, double r) { return mean / (r + mean); }

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
  return s;
}

bool is_count(const ScenarioSpec& spec) {
  return spec.name == ScenarioName::CountRegression || spec.name == ScenarioName::WellSpecifiedControl;
}

std::vector<double> draw_covariates(const ScenarioSpec& spec, Rng& rng) {
  if (spec.intercept_only) return {1.0};
  std::vector<double> x{1.0};
  for (std::size_t j = 1; j < spec.beta0.size(); ++j) x.push_back(rng.normal());
  return x;
}

double linear(const std::vector<double>& x, const std::vector<double>& b) {
  double eta = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) eta += x[j] * b[j];
  return eta;
}

// Count truth at covariates x: mean and the NB q (q unused for the control).
struct CountLaw {
  double mean;
  double q;
};
CountLaw count_law(const ScenarioSpec& spec, const std::vector<double>& x) {
  const double eta = linear(x, spec.truth_beta());
  if (spec.name == ScenarioName::WellSpecifiedControl) return {std::exp(eta), 0.0};
  const double q = logistic(eta);
  return {spec.nb_r * q / (1.0 - q), q};
}

// log ∫ NB(y; r, mean exp(β0 + u)) N(u; 0, σ_u²) du with a fixed 61-point rule.
double glmm_row_logpdf0(const ScenarioSpec& spec, double y) {
  if (spec.sigma_u == 0.0) return neg_binomial_logpmf(y, spec.glmm_r, nb_q_for_mean(std::exp(spec.glmm_beta0), spec.glmm_r));
  const GaussHermite& gh = gauss_hermite(61);
  std::vector<double> terms(gh.nodes.size());
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    const double mean = std::exp(spec.glmm_beta0 + spec.sigma_u * gh.nodes[i]);
    terms[i] = std::log(gh.weights[i]) + neg_binomial_logpmf(y, spec.glmm_r, nb_q_for_mean(mean, spec.glmm_r));
  }
  return log_sum_exp(terms);
}

double glmm_sample_row(const ScenarioSpec& spec, double u, Rng& rng) {
  return sample_neg_binomial(rng, spec.glmm_r, nb_q_for_mean(std::exp(spec.glmm_beta0 + u), spec.glmm_r));
}

double rmse(const Vec& a, const Vec& b) { return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size())); }

}  // namespace

std::string_view to_string(ScenarioName s) {
  switch (s) {
    case ScenarioName::CountRegression: return "count_regression";
    case ScenarioName::MixtureT: return "mixture_t";
    case ScenarioName::PoissonGLMM: return "poisson_glmm";
    case ScenarioName::WellSpecifiedControl: return "well_specified";
  }
  return "unknown";
}

std::optional<ScenarioName> parse_scenario_name(std::string_view s) {
  for (ScenarioName n : {ScenarioName::CountRegression, ScenarioName::MixtureT, ScenarioName::PoissonGLMM,
                         ScenarioName::WellSpecifiedControl}) {
    if (s == to_string(n)) return n;
  }
  return std::nullopt;
}

ScenarioSpec ScenarioSpec::defaults(ScenarioName name) {
  ScenarioSpec s;
  s.name = name;
  return s;
}

int ScenarioSpec::dim() const {
  switch (name) {
    case ScenarioName::CountRegression:
    case ScenarioName::WellSpecifiedControl: return intercept_only ? 1 : static_cast<int>(beta0.size());
    case ScenarioName::MixtureT: return static_cast<int>(centers.size());
    case ScenarioName::PoissonGLMM: return glmm_fixed_log_sigma_u ? 1 : 2;
  }
  return 0;
}

std::vector<double> ScenarioSpec::truth_beta() const {
  if (!intercept_only) return beta0;
  if (name == ScenarioName::WellSpecifiedControl) return {std::log(intercept_mean)};
  return {std::log(intercept_mean / nb_r)};
}

std::shared_ptr<const LatentVarModel> latent_model(const ScenarioSpec& spec) {
  const DiagonalGaussianPrior prior = DiagonalGaussianPrior::standard(spec.dim(), spec.prior_sd);
  switch (spec.name) {
    case ScenarioName::MixtureT:
      return std::make_shared<LocationMixture>(static_cast<int>(spec.centers.size()), spec.fit_family, spec.fit_dof,
                                               spec.fit_scale, prior);
    case ScenarioName::PoissonGLMM: return std::make_shared<PoissonLmm>(prior, spec.glmm_fixed_log_sigma_u);
    default: return nullptr;
  }
}

std::shared_ptr<const ParametricModel> vb_target_model(const ScenarioSpec& spec, const InnerConfig& inner) {
  if (auto lat = latent_model(spec)) return std::make_shared<VariationalModel>(lat, inner);
  return std::make_shared<PoissonRegression>(spec.dim(), DiagonalGaussianPrior::standard(spec.dim(), spec.prior_sd));
}

std::shared_ptr<const ParametricModel> exact_model(const ScenarioSpec& spec) {
  if (auto lat = latent_model(spec)) return std::make_shared<MarginalModel>(lat);
  return std::make_shared<PoissonRegression>(spec.dim(), DiagonalGaussianPrior::standard(spec.dim(), spec.prior_sd));
}

Dataset to_units(const ScenarioSpec& spec, const Dataset& rows) {
  if (auto lat = latent_model(spec)) return lat->make_units(rows);
  return rows;
}

TrueGenerator truth_generator(const ScenarioSpec& spec, int per_group) {
  TrueGenerator g;
  switch (spec.name) {
    case ScenarioName::CountRegression:
    case ScenarioName::WellSpecifiedControl: {
      g.covariate_law = [spec](Rng& rng) { return draw_covariates(spec, rng); };
      g.sampler = [spec](Rng& rng) {
        Datum d;
        d.x = draw_covariates(spec, rng);
        const CountLaw law = count_law(spec, d.x);
        d.y = spec.name == ScenarioName::WellSpecifiedControl ? sample_poisson(rng, law.mean)
                                                            : sample_neg_binomial(rng, spec.nb_r, law.q);
        return d;
      };
      g.logpdf0 = [spec](const Datum& d) {
        const CountLaw law = count_law(spec, d.x);
        return spec.name == ScenarioName::WellSpecifiedControl ? poisson_logpmf(d.y, law.mean)
                                                             : neg_binomial_logpmf(d.y, spec.nb_r, law.q);
      };
      break;
    }
    case ScenarioName::MixtureT: {
      g.sampler = [spec](Rng& rng) {
        Datum d;
        const auto k = rng.below(spec.centers.size());
        d.y = spec.centers[k] + spec.mixture_sigma * rng.normal();
        return d;
      };
      g.logpdf0 = [spec](const Datum& d) {
        std::vector<double> t;
        for (double c : spec.centers) t.push_back(gaussian_logpdf(d.y, c, spec.mixture_sigma));
        return log_sum_exp(t) - std::log(static_cast<double>(spec.centers.size()));
      };
      break;
    }
    case ScenarioName::PoissonGLMM: {
      if (per_group > 0) {
        g.sampler = [spec, per_group](Rng& rng) {
          const double u = spec.sigma_u * rng.normal();
          Datum unit;
          unit.x = {0.0, static_cast<double>(per_group), 0.0};
          for (int j = 0; j < per_group; ++j) {
            const double y = glmm_sample_row(spec, u, rng);
            unit.x[0] += y;
            unit.x[2] += log_factorial(y);
          }
          return unit;
        };
      } else {
        const auto lat = latent_model(spec);
        g.sampler = [spec, lat](Rng& rng) {
          Datum row;
          row.y = glmm_sample_row(spec, spec.sigma_u * rng.normal(), rng);
          return lat->unit_for_new(row);
        };
        g.logpdf0 = [spec](const Datum& unit) { return glmm_row_logpdf0(spec, unit.y); };
      }
      break;
    }
  }
  return g;
}

Dataset generate_data(const ScenarioSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_data: n must be at least 1");
  Rng rng(seed);
  std::vector<Datum> rows;
  rows.reserve(n);
  if (spec.name == ScenarioName::PoissonGLMM) {
    const auto groups = static_cast<std::size_t>(spec.groups);
    if (n < groups) throw ScenarioError("generate_data: the GLMM needs at least one row per group");
    std::vector<double> u(groups);
    for (double& v : u) v = spec.sigma_u * rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      Datum d;
      d.group = static_cast<int>(i % groups);
      d.y = glmm_sample_row(spec, u[static_cast<std::size_t>(d.group)], rng);
      rows.push_back(std::move(d));
    }
    return Dataset(std::move(rows));
  }
  const TrueGenerator gen = truth_generator(spec);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(gen.draw(rng));
  return Dataset(std::move(rows));
}

MomentResidual moment_residual(const ScenarioSpec& spec, const Vec& beta, std::size_t mc_draws, std::uint64_t seed) {
  if (!is_count(spec)) throw ScenarioError("moment_residual: count-regression scenarios only");
  if (mc_draws < 100000) throw InsufficientDraws("moment_residual: mc_draws must be at least 1e5");
  if (beta.size() != spec.dim()) throw ShapeError("moment_residual: beta has the wrong length");
  const TrueGenerator gen = truth_generator(spec);
  Rng rng(seed);
  const Eigen::Index d = beta.size();
  Vec sum = Vec::Zero(d), sum_sq = Vec::Zero(d);
  for (std::size_t m = 0; m < mc_draws; ++m) {
    const Datum x = gen.draw(rng);
    double eta = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) eta += x.x[static_cast<std::size_t>(j)] * beta[j];
    const double r = x.y - std::exp(eta);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double v = r * x.x[static_cast<std::size_t>(j)];
      sum[j] += v;
      sum_sq[j] += v * v;
    }
  }
  const double m = static_cast<double>(mc_draws);
  MomentResidual out;
  out.value = sum / m;
  out.se = ((sum_sq / m - out.value.cwiseAbs2()) / (m - 1.0)).cwiseMax(0.0).cwiseSqrt();
  return out;
}

MixtureAB mixture_AB(const ScenarioSpec& spec, const Vec& theta_star, std::size_t mc_draws, std::uint64_t seed) {
  if (spec.name != ScenarioName::MixtureT) throw ScenarioError("mixture_AB: mixture scenario only");
  const auto model = exact_model(spec);
  const PopulationPool pool = draw_pool(truth_generator(spec), mc_draws, seed);
  MixtureAB out;
  const MatrixEstimate v = lan_curvature(*model, theta_star, pool);
  out.A = {-v.value, v.se};
  out.B = score_outer(*model, theta_star, pool);
  out.gap = information_gap(*model, theta_star, pool);
  const Eigen::Index d = theta_star.size();
  Vec sum = Vec::Zero(d), sum_sq = Vec::Zero(d);
  for (const Datum& x : pool.draws) {
    const Vec g = model->loglik_grad(theta_star, x);
    sum += g;
    sum_sq += g.cwiseAbs2();
  }
  const double m = static_cast<double>(pool.draws.n());
  out.mean_grad = sum / m;
  out.mean_grad_se = ((sum_sq / m - out.mean_grad.cwiseAbs2()) / (m - 1.0)).cwiseMax(0.0).cwiseSqrt();
  out.sandwich = sandwich(out.A.value, out.B.value);
  return out;
}

bool population_depends_on_n(const ScenarioSpec& spec) { return spec.name == ScenarioName::PoissonGLMM; }

ScenarioPopulation scenario_population(const ScenarioSpec& spec, std::size_t n, const ThetaStarConfig& cfg,
                                       const InnerConfig& inner) {
  ThetaStarConfig c = cfg;
  ScenarioPopulation out;
  if (spec.name == ScenarioName::PoissonGLMM) {
    const auto groups = static_cast<std::size_t>(spec.groups);
    const int per_group = static_cast<int>(n / groups);
    if (per_group < 1) throw ScenarioError("scenario_population: n is smaller than the number of groups");
    if (!c.initial) {
      Vec init(spec.dim());
      init[0] = spec.glmm_beta0;
      if (!spec.glmm_fixed_log_sigma_u) init[1] = std::log(std::max(spec.sigma_u, 0.05));
      c.initial = init;
    }
    const auto vm = vb_target_model(spec, inner);
    out.summary = summarize_population(truth_generator(spec, per_group), *vm, c);
    out.lan_n = groups;
    return out;
  }
  if (!c.initial) {
    if (spec.name == ScenarioName::MixtureT) {
      std::vector<double> sorted = spec.centers;
      std::sort(sorted.begin(), sorted.end());
      c.initial = Eigen::Map<const Vec>(sorted.data(), static_cast<Eigen::Index>(sorted.size()));
    }
  }
  out.summary = summarize_population(truth_generator(spec), *exact_model(spec), c);
  out.lan_n = n;
  return out;
}

ResponseGrid response_grid(const ScenarioSpec& spec, std::uint64_t seed) {
  ResponseGrid g;
  switch (spec.name) {
    case ScenarioName::CountRegression:
    case ScenarioName::WellSpecifiedControl: {
      const TrueGenerator gen = truth_generator(spec);
      Rng rng(seed);
      const int k = spec.intercept_only ? 1 : spec.covariate_pool;
      for (int c = 0; c < k; ++c) {
        const std::vector<double> x = gen.covariate_law(rng);
        const CountLaw law = count_law(spec, x);
        const double var = spec.name == ScenarioName::WellSpecifiedControl ? law.mean
                                                                         : law.mean + law.mean * law.mean / spec.nb_r;
        const int y_max = static_cast<int>(std::ceil(law.mean + 12.0 * std::sqrt(var) + 15.0));
        for (int y = 0; y <= y_max; ++y) {
          Datum d;
          d.x = x;
          d.y = y;
          g.p0.push_back(std::exp(gen.logpdf0(d)));
          g.points.push_back(std::move(d));
          g.weights.push_back(1.0 / k);
        }
      }
      break;
    }
    case ScenarioName::MixtureT: {
      const TrueGenerator gen = truth_generator(spec);
      const auto [lo_it, hi_it] = std::minmax_element(spec.centers.begin(), spec.centers.end());
      const GridAxis axis{*lo_it - spec.mixture_grid_half_width, *hi_it + spec.mixture_grid_half_width,
                          spec.mixture_grid_points};
      for (int i = 0; i < axis.points; ++i) {
        Datum d;
        d.y = axis.at(i);
        g.p0.push_back(std::exp(gen.logpdf0(d)));
        g.points.push_back(std::move(d));
        g.weights.push_back(axis.step());
      }
      break;
    }
    case ScenarioName::PoissonGLMM: {
      const auto lat = latent_model(spec);
      const double mean_hi = std::exp(spec.glmm_beta0 + 3.0 * spec.sigma_u);
      const int y_max = static_cast<int>(std::ceil(mean_hi + 12.0 * std::sqrt(mean_hi + mean_hi * mean_hi / spec.glmm_r) + 15.0));
      for (int y = 0; y <= y_max; ++y) {
        Datum row;
        row.y = y;
        g.p0.push_back(std::exp(glmm_row_logpdf0(spec, y)));
        g.points.push_back(lat->unit_for_new(row));
        g.weights.push_back(1.0);
      }
      break;
    }
  }
  return g;
}

std::vector<Datum> test_set(const ScenarioSpec& spec, std::size_t size, std::uint64_t seed) {
  const TrueGenerator gen = truth_generator(spec, 0);
  Rng rng(seed);
  std::vector<Datum> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) out.push_back(gen.draw(rng));
  return out;
}

std::optional<MeanFieldGaussian> vb_init(const ScenarioSpec& spec, const Dataset& rows) {
  if (spec.name != ScenarioName::MixtureT || rows.empty()) return std::nullopt;
  std::vector<double> y;
  for (const Datum& d : rows) y.push_back(d.y);
  std::sort(y.begin(), y.end());
  const auto k = static_cast<Eigen::Index>(spec.centers.size());
  Vec mu(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const double p = (static_cast<double>(c) + 0.5) / static_cast<double>(k);
    mu[c] = y[std::min(y.size() - 1, static_cast<std::size_t>(p * static_cast<double>(y.size())))];
  }
  return MeanFieldGaussian(mu, Vec::Zero(k));
}

McmcConfig prepare_mcmc(const ScenarioSpec& spec, McmcConfig base, const std::optional<MeanFieldGaussian>& q,
                        const Vec& fallback) {
  const int d = spec.dim();
  if (!base.proposal_sd) {
    base.proposal_sd = q ? Vec(q->sigma() * (2.38 / std::sqrt(static_cast<double>(d)))) : Vec(Vec::Constant(d, 0.1));
  }
  if (spec.is_latent() && !base.init) {
    base.init = q ? q->mu : fallback;
    if (base.init_jitter == 0.0) base.init_jitter = 2.0;
  }
  return base;
}

std::vector<std::pair<std::string, std::string>> describe(const ScenarioSpec& spec) {
  std::vector<std::pair<std::string, std::string>> d;
  d.emplace_back("name", std::string(to_string(spec.name)));
  d.emplace_back("prior_sd", fmt(spec.prior_sd));
  switch (spec.name) {
    case ScenarioName::CountRegression:
    case ScenarioName::WellSpecifiedControl:
      if (spec.name == ScenarioName::CountRegression) d.emplace_back("nb_r", fmt(spec.nb_r));
      d.emplace_back("beta0", fmt_list(spec.beta0));
      d.emplace_back("intercept_only", spec.intercept_only ? "true" : "false");
      d.emplace_back("intercept_mean", fmt(spec.intercept_mean));
      d.emplace_back("covariate_pool", std::to_string(spec.covariate_pool));
      break;
    case ScenarioName::MixtureT:
      d.emplace_back("centers", fmt_list(spec.centers));
      d.emplace_back("mixture_sigma", fmt(spec.mixture_sigma));
      d.emplace_back("fit_family", spec.fit_family == ComponentFamily::StudentT ? "student_t" : "gaussian");
      d.emplace_back("fit_dof", fmt(spec.fit_dof));
      d.emplace_back("fit_scale", fmt(spec.fit_scale));
      d.emplace_back("mixture_grid_points", std::to_string(spec.mixture_grid_points));
      d.emplace_back("mixture_grid_half_width", fmt(spec.mixture_grid_half_width));
      break;
    case ScenarioName::PoissonGLMM:
      d.emplace_back("groups", std::to_string(spec.groups));
      d.emplace_back("sigma_u", fmt(spec.sigma_u));
      d.emplace_back("glmm_r", fmt(spec.glmm_r));
      d.emplace_back("glmm_beta0", fmt(spec.glmm_beta0));
      if (spec.glmm_fixed_log_sigma_u) d.emplace_back("glmm_fixed_log_sigma_u", fmt(*spec.glmm_fixed_log_sigma_u));
      break;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Replications

namespace {

struct Context {
  const ScenarioSpec& spec;
  const ExperimentConfig& cfg;
  const ResponseGrid& grid;
  std::shared_ptr<const ParametricModel> vb_model;
  std::shared_ptr<const ParametricModel> mcmc_model;
};

Mat thin_rows(const Mat& m, int max_rows) {
  if (m.rows() <= max_rows) return m;
  Mat out(max_rows, m.cols());
  for (int i = 0; i < max_rows; ++i) {
    out.row(i) = m.row(static_cast<Eigen::Index>(static_cast<double>(i) * static_cast<double>(m.rows()) / max_rows));
  }
  return out;
}

std::vector<double> grid_density(const ParametricModel& model, const Mat& draws, const ResponseGrid& grid) {
  const PredictiveEstimate pe = predictive_density(model, draws, grid.points);
  std::vector<double> p;
  p.reserve(pe.log_density.size());
  for (double lv : pe.log_density) p.push_back(std::exp(lv));
  return p;
}

struct PredLl {
  double mean;
  double se;
};
PredLl pred_ll(const ParametricModel& model, const Mat& draws, const std::vector<Datum>& test) {
  const PredictiveEstimate pe = predictive_density(model, draws, test);
  double s = 0.0, s2 = 0.0;
  for (double v : pe.log_density) {
    s += v;
    s2 += v * v;
  }
  const double t = static_cast<double>(test.size());
  const double mean = s / t;
  const double var = std::max(0.0, (s2 / t - mean * mean) * t / (t - 1.0));
  return {mean, std::sqrt(var / t)};
}

Mat gaussian_draws(const Vec& mean, const Mat& cov, int count, std::uint64_t seed) {
  Rng rng(seed);
  const Mat l = Eigen::LLT<Mat>(cov).matrixL();
  Mat out(count, mean.size());
  Vec z(mean.size());
  for (int i = 0; i < count; ++i) {
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
    out.row(i) = (mean + l * z).transpose();
  }
  return out;
}

std::vector<ExperimentRow> run_one(const Context& ctx, const ScenarioPopulation& pop, std::size_t n, int rep,
                                   std::vector<std::string>& warnings) {
  const ScenarioSpec& spec = ctx.spec;
  const ExperimentConfig& cfg = ctx.cfg;
  const std::uint64_t seed = derive_seed(cfg.base_seed, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(rep)});
  const Dataset rows = generate_data(spec, n, derive_seed(seed, {1}));
  const Dataset units = to_units(spec, rows);
  const std::vector<Datum> test = test_set(spec, static_cast<std::size_t>(cfg.test_size), derive_seed(seed, {3}));
  const PopulationSummary& ps = pop.summary;
  const Vec delta = lan_shift(units, *ctx.vb_model, ps.theta_star, ps.V);
  const int d = spec.dim();

  std::vector<ExperimentRow> out;
  auto add = [&](const char* method, std::string_view metric, double value, double se) {
    out.push_back({std::string(to_string(spec.name)), n, rep, method, std::string(metric), value, se, false});
  };

  std::optional<MeanFieldGaussian> q;
  Mat vb_draws;
  if (cfg.run_vb) {
    FitConfig fc = cfg.vb;
    fc.seed = derive_seed(seed, {2});
    if (!fc.init) fc.init = vb_init(spec, rows);
    const FitResult fit = fit_vb(*ctx.vb_model, units, fc);
    if (!fit.report.converged) warnings.push_back("n=" + std::to_string(n) + " rep=" + std::to_string(rep) + ": VB did not converge");
    q = fit.q.canonicalized(*ctx.vb_model);
    Rng rng(derive_seed(seed, {4}));
    vb_draws.resize(cfg.pred_draws, d);
    for (int i = 0; i < cfg.pred_draws; ++i) vb_draws.row(i) = ctx.vb_model->canonicalize(q->draw(rng)).transpose();
  }

  std::optional<McmcResult> mc;
  if (cfg.run_mcmc) {
    McmcConfig mcfg = prepare_mcmc(spec, cfg.mcmc, q, ps.theta_star);
    mcfg.seed = derive_seed(seed, {5});
    if (cfg.jobs > 1) mcfg.parallel = false;
    mc = metropolis_sample(*ctx.mcmc_model, units, mcfg);
    if (mc->rhat_warning) {
      char buf[64];
      std::snprintf(buf, sizeof buf, " (max %.4f)", mc->r_hat.maxCoeff());
      warnings.push_back("n=" + std::to_string(n) + " rep=" + std::to_string(rep) + ": MCMC R-hat above threshold" + buf);
    }
  }

  const LimitingNormal mf = mean_field_limit(ps.V, ps.theta_star, pop.lan_n, delta);
  const LimitingNormal ex = exact_limit(ps.V, ps.theta_star, pop.lan_n, delta);

  std::vector<double> mc_pred, half_a, half_b;
  Mat mc_draws;
  if (mc) {
    mc_draws = thin_rows(mc->pooled(), cfg.pred_draws);
    mc_pred = grid_density(*ctx.mcmc_model, mc_draws, ctx.grid);
    const std::size_t h = mc->chains.size() / 2;
    if (h >= 1) {
      McmcResult a, b;
      a.chains.assign(mc->chains.begin(), mc->chains.begin() + static_cast<std::ptrdiff_t>(h));
      b.chains.assign(mc->chains.begin() + static_cast<std::ptrdiff_t>(h), mc->chains.end());
      half_a = grid_density(*ctx.mcmc_model, thin_rows(a.pooled(), cfg.pred_draws / 2), ctx.grid);
      half_b = grid_density(*ctx.mcmc_model, thin_rows(b.pooled(), cfg.pred_draws / 2), ctx.grid);
    }
  }

  if (q) {
    add("vb", "rmse_theta_star", rmse(q->mu, ps.theta_star), kNaN);
    const Mat q_cov = q->sigma().array().square().matrix().asDiagonal();
    add("vb", "tv_to_limit", tv_gaussians(q->mu, q_cov, mf.center, mf.covariance, cfg.tv_points), kNaN);
    const PredLl pl = pred_ll(*ctx.mcmc_model, vb_draws, test);
    add("vb", "pred_ll", pl.mean, pl.se);
    if (mc) {
      const std::vector<double> vb_pred = grid_density(*ctx.mcmc_model, vb_draws, ctx.grid);
      const MisspecRatio r = misspec_ratio(vb_pred, mc_pred, ctx.grid.p0, ctx.grid.weights, cfg.ratio_floor);
      add("vb", "ratio_num", r.numerator, kNaN);
      add("vb", "ratio_den", r.denominator, kNaN);
      add("vb", "ratio", r.ratio, kNaN);
    } else {
      for (const char* m : {"ratio_num", "ratio_den", "ratio"}) add("vb", m, kNaN, kNaN);
    }
  }
  if (mc) {
    add("mcmc", "rmse_theta_star", rmse(mc->mean(), ps.theta_star), kNaN);
    const Mat limit_draws = gaussian_draws(ex.center, ex.covariance, cfg.tv_limit_draws, derive_seed(seed, {6}));
    const int bins = d == 2 ? cfg.tv_bins_2d : cfg.tv_bins;
    add("mcmc", "tv_to_limit", tv_samples(mc->pooled(), limit_draws, bins).value, kNaN);
    const PredLl pl = pred_ll(*ctx.mcmc_model, mc_draws, test);
    add("mcmc", "pred_ll", pl.mean, pl.se);
    if (!half_a.empty()) {
      const MisspecRatio r = misspec_ratio(half_a, half_b, ctx.grid.p0, ctx.grid.weights, cfg.ratio_floor);
      // The denominator always refers to the pooled exact predictive.
      const double den = tv_weighted(ctx.grid.p0, mc_pred, ctx.grid.weights);
      add("mcmc", "ratio_num", r.numerator, kNaN);
      add("mcmc", "ratio_den", den, kNaN);
      add("mcmc", "ratio", den < cfg.ratio_floor ? kNaN : r.numerator / den, kNaN);
    } else {
      for (const char* m : {"ratio_num", "ratio_den", "ratio"}) add("mcmc", m, kNaN, kNaN);
    }
  }
  return out;
}

std::vector<ExperimentRow> failed_rows(const ScenarioSpec& spec, const ExperimentConfig& cfg, std::size_t n, int rep) {
  std::vector<ExperimentRow> out;
  for (std::string_view method : kMethodNames) {
    if ((method == "vb" && !cfg.run_vb) || (method == "mcmc" && !cfg.run_mcmc)) continue;
    for (std::string_view metric : kMetricNames) {
      out.push_back({std::string(to_string(spec.name)), n, rep, std::string(method), std::string(metric), kNaN, kNaN, true});
    }
  }
  return out;
}

}  // namespace

ExperimentTable run_replications(const ScenarioSpec& spec, const ExperimentConfig& cfg) {
  if (cfg.n_grid.empty() || cfg.reps < 1) throw std::invalid_argument("run_replications: empty n grid or no reps");
  if (!cfg.run_vb && !cfg.run_mcmc) throw std::invalid_argument("run_replications: no method selected");
  ExperimentTable table;

  ThetaStarConfig pcfg = cfg.population;
  if (spec.name == ScenarioName::PoissonGLMM) pcfg.mc_draws = cfg.unit_pool_draws;
  if (population_depends_on_n(spec)) {
    for (std::size_t n : cfg.n_grid) table.populations[n] = scenario_population(spec, n, pcfg, cfg.inner);
  } else {
    const ScenarioPopulation base = scenario_population(spec, cfg.n_grid.front(), pcfg, cfg.inner);
    for (std::size_t n : cfg.n_grid) {
      table.populations[n] = base;
      table.populations[n].lan_n = n;
    }
  }
  for (const auto& [n, p] : table.populations) {
    if (p.summary.multimodal) table.warnings.push_back("n=" + std::to_string(n) + ": theta* restarts disagree");
  }

  const ResponseGrid grid = response_grid(spec, derive_seed(cfg.base_seed, {0x9e1dULL}));
  const Context ctx{spec, cfg, grid, vb_target_model(spec, cfg.inner), exact_model(spec)};

  const std::size_t tasks = cfg.n_grid.size() * static_cast<std::size_t>(cfg.reps);
  std::vector<std::vector<ExperimentRow>> slots(tasks);
  std::vector<std::vector<std::string>> notes(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      const std::size_t n = cfg.n_grid[t / static_cast<std::size_t>(cfg.reps)];
      const int rep = static_cast<int>(t % static_cast<std::size_t>(cfg.reps));
      try {
        slots[t] = run_one(ctx, table.populations.at(n), n, rep, notes[t]);
      } catch (const std::exception& e) {
        slots[t] = failed_rows(spec, cfg, n, rep);
        notes[t].push_back("n=" + std::to_string(n) + " rep=" + std::to_string(rep) + " failed: " + e.what());
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(tasks)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t t = 0; t < tasks; ++t) {
    table.rows.insert(table.rows.end(), slots[t].begin(), slots[t].end());
    table.warnings.insert(table.warnings.end(), notes[t].begin(), notes[t].end());
  }
  return table;
}

void check_failures(const ExperimentTable& table, double max_rate) {
  std::map<std::size_t, std::pair<std::set<int>, std::set<int>>> per_n;  // all reps, failed reps
  for (const ExperimentRow& r : table.rows) {
    per_n[r.n].first.insert(r.rep);
    if (r.failed) per_n[r.n].second.insert(r.rep);
  }
  for (const auto& [n, s] : per_n) {
    const double rate = static_cast<double>(s.second.size()) / static_cast<double>(s.first.size());
    if (rate > max_rate) {
      throw ScenarioError("replication failure rate " + std::to_string(rate) + " at n=" + std::to_string(n) +
                          " exceeds " + std::to_string(max_rate));
    }
  }
}

ExperimentTable run_scenario(const ScenarioSpec& spec, const ExperimentConfig& cfg) {
  ExperimentTable t = run_replications(spec, cfg);
  check_failures(t, cfg.max_failure_rate);
  return t;
}

std::vector<SummaryRow> summarize(const ExperimentTable& table) {
  struct Acc {
    double sum = 0.0, sum_sq = 0.0;
    int count = 0, failed = 0;
  };
  std::vector<std::tuple<std::size_t, std::string, std::string>> order;
  std::map<std::tuple<std::size_t, std::string, std::string>, Acc> acc;
  std::string scenario;
  for (const ExperimentRow& r : table.rows) {
    scenario = r.scenario;
    const auto key = std::make_tuple(r.n, r.method, r.metric);
    if (!acc.count(key)) order.push_back(key);
    Acc& a = acc[key];
    if (r.failed) {
      ++a.failed;
    } else if (std::isfinite(r.value)) {
      a.sum += r.value;
      a.sum_sq += r.value * r.value;
      ++a.count;
    }
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const Acc& a = acc[key];
    SummaryRow s;
    s.scenario = scenario;
    s.n = std::get<0>(key);
    s.method = std::get<1>(key);
    s.metric = std::get<2>(key);
    s.count = a.count;
    s.failed = a.failed;
    s.mean = a.count > 0 ? a.sum / a.count : kNaN;
    s.sd = a.count > 1 ? std::sqrt(std::max(0.0, (a.sum_sq - a.sum * a.sum / a.count) / (a.count - 1))) : kNaN;
    out.push_back(s);
  }
  return out;
}

}  // namespace vbmis
