#include "config.hpp"

#include <cerrno>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vbmis::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::string t = s;
  for (char& c : t) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(t);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double to_double(const std::string& s) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || errno == ERANGE) throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

long long to_int(const std::string& s) {
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno == ERANGE) throw std::invalid_argument("expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  char* end = nullptr;
  errno = 0;
  if (s.empty() || s[0] == '-') throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

int positive_int(const std::string& s) {
  const long long v = to_int(s);
  if (v < 1 || v > 1000000000) throw std::invalid_argument("expected a positive integer, got '" + s + "'");
  return static_cast<int>(v);
}

int nonneg_int(const std::string& s) {
  const long long v = to_int(s);
  if (v < 0 || v > 1000000000) throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  return static_cast<int>(v);
}

double positive(const std::string& s) {
  const double v = to_double(s);
  if (!(v > 0.0)) throw std::invalid_argument("expected a positive number, got '" + s + "'");
  return v;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string nums(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + num(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using DRef = double& (*)(RunConfig&);
using IRef = int& (*)(RunConfig&);
using URef = std::uint64_t& (*)(RunConfig&);
using SRef = std::size_t& (*)(RunConfig&);

Field real(std::string key, DRef r, double (*check)(const std::string&) = to_double) {
  return {std::move(key), [r, check](RunConfig& c, const std::string& v) { r(c) = check(v); },
          [r](const RunConfig& c) { return num(r(const_cast<RunConfig&>(c))); }};
}
Field integer(std::string key, IRef r, int (*check)(const std::string&) = positive_int) {
  return {std::move(key), [r, check](RunConfig& c, const std::string& v) { r(c) = check(v); },
          [r](const RunConfig& c) { return std::to_string(r(const_cast<RunConfig&>(c))); }};
}
Field count(std::string key, SRef r) {
  return {std::move(key),
          [r](RunConfig& c, const std::string& v) { r(c) = static_cast<std::size_t>(positive_int(v)); },
          [r](const RunConfig& c) { return std::to_string(r(const_cast<RunConfig&>(c))); }};
}
Field seed(std::string key, URef r) {
  return {std::move(key), [r](RunConfig& c, const std::string& v) { r(c) = to_u64(v); },
          [r](const RunConfig& c) { return std::to_string(r(const_cast<RunConfig&>(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({"scenario.name",
                 [](RunConfig& c, const std::string& s) {
                   const auto n = parse_scenario_name(s);
                   if (!n) {
                     throw std::invalid_argument(
                         "unknown scenario '" + s + "' (count_regression, mixture_t, poisson_glmm, well_specified)");
                   }
                   c.scenario.name = *n;
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.scenario.name)); }});
    v.push_back(real("scenario.nb_r", [](RunConfig& c) -> double& { return c.scenario.nb_r; }, positive));
    v.push_back({"scenario.beta0",
                 [](RunConfig& c, const std::string& s) {
                   std::vector<double> b;
                   for (const auto& w : split_list(s)) b.push_back(to_double(w));
                   if (b.empty()) throw std::invalid_argument("expected at least one coefficient");
                   c.scenario.beta0 = b;
                 },
                 [](const RunConfig& c) { return nums(c.scenario.beta0); }});
    v.push_back({"scenario.intercept_only",
                 [](RunConfig& c, const std::string& s) { c.scenario.intercept_only = to_bool(s); },
                 [](const RunConfig& c) { return std::string(c.scenario.intercept_only ? "true" : "false"); }});
    v.push_back(real("scenario.intercept_mean", [](RunConfig& c) -> double& { return c.scenario.intercept_mean; }, positive));
    v.push_back({"scenario.centers",
                 [](RunConfig& c, const std::string& s) {
                   std::vector<double> b;
                   for (const auto& w : split_list(s)) b.push_back(to_double(w));
                   if (b.size() < 2) throw std::invalid_argument("expected at least two centers");
                   c.scenario.centers = b;
                 },
                 [](const RunConfig& c) { return nums(c.scenario.centers); }});
    v.push_back(real("scenario.mixture_sigma", [](RunConfig& c) -> double& { return c.scenario.mixture_sigma; }, positive));
    v.push_back({"scenario.fit_family",
                 [](RunConfig& c, const std::string& s) {
                   if (s == "student_t") {
                     c.scenario.fit_family = ComponentFamily::StudentT;
                   } else if (s == "gaussian") {
                     c.scenario.fit_family = ComponentFamily::Gaussian;
                   } else {
                     throw std::invalid_argument("expected student_t or gaussian, got '" + s + "'");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.scenario.fit_family == ComponentFamily::StudentT ? "student_t" : "gaussian");
                 }});
    v.push_back(real("scenario.fit_dof", [](RunConfig& c) -> double& { return c.scenario.fit_dof; }, positive));
    v.push_back(real("scenario.fit_scale", [](RunConfig& c) -> double& { return c.scenario.fit_scale; }, positive));
    v.push_back(integer("scenario.mixture_grid_points", [](RunConfig& c) -> int& { return c.scenario.mixture_grid_points; }));
    v.push_back(real("scenario.mixture_grid_half_width",
                     [](RunConfig& c) -> double& { return c.scenario.mixture_grid_half_width; }, positive));
    v.push_back(integer("scenario.groups", [](RunConfig& c) -> int& { return c.scenario.groups; }));
    v.push_back(real("scenario.sigma_u", [](RunConfig& c) -> double& { return c.scenario.sigma_u; }));
    v.push_back(real("scenario.glmm_r", [](RunConfig& c) -> double& { return c.scenario.glmm_r; }, positive));
    v.push_back(real("scenario.glmm_beta0", [](RunConfig& c) -> double& { return c.scenario.glmm_beta0; }));
    v.push_back({"scenario.glmm_fixed_log_sigma_u",
                 [](RunConfig& c, const std::string& s) {
                   if (s == "none") {
                     c.scenario.glmm_fixed_log_sigma_u.reset();
                   } else {
                     c.scenario.glmm_fixed_log_sigma_u = to_double(s);
                   }
                 },
                 [](const RunConfig& c) {
                   return c.scenario.glmm_fixed_log_sigma_u ? num(*c.scenario.glmm_fixed_log_sigma_u) : std::string("none");
                 }});
    v.push_back(real("scenario.prior_sd", [](RunConfig& c) -> double& { return c.scenario.prior_sd; }, positive));
    v.push_back(integer("scenario.covariate_pool", [](RunConfig& c) -> int& { return c.scenario.covariate_pool; }));

    v.push_back({"experiment.n_grid",
                 [](RunConfig& c, const std::string& s) {
                   std::vector<std::size_t> g;
                   for (const auto& w : split_list(s)) g.push_back(static_cast<std::size_t>(positive_int(w)));
                   if (g.empty()) throw std::invalid_argument("expected at least one sample size");
                   c.experiment.n_grid = g;
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.experiment.n_grid.size(); ++i) {
                     s += (i ? " " : "") + std::to_string(c.experiment.n_grid[i]);
                   }
                   return s;
                 }});
    v.push_back(integer("experiment.reps", [](RunConfig& c) -> int& { return c.experiment.reps; }));
    v.push_back(seed("experiment.base_seed", [](RunConfig& c) -> std::uint64_t& { return c.experiment.base_seed; }));
    v.push_back({"experiment.methods",
                 [](RunConfig& c, const std::string& s) {
                   bool vb = false, mc = false;
                   for (const auto& w : split_list(s)) {
                     if (w == "vb") {
                       vb = true;
                     } else if (w == "mcmc") {
                       mc = true;
                     } else {
                       throw std::invalid_argument("unknown method '" + w + "' (vb, mcmc)");
                     }
                   }
                   if (!vb && !mc) throw std::invalid_argument("expected at least one method");
                   c.experiment.run_vb = vb;
                   c.experiment.run_mcmc = mc;
                 },
                 [](const RunConfig& c) {
                   std::string s = c.experiment.run_vb ? "vb" : "";
                   if (c.experiment.run_mcmc) s += s.empty() ? "mcmc" : " mcmc";
                   return s;
                 }});
    v.push_back(integer("experiment.test_size", [](RunConfig& c) -> int& { return c.experiment.test_size; }));
    v.push_back(integer("experiment.pred_draws", [](RunConfig& c) -> int& { return c.experiment.pred_draws; }));
    v.push_back(real("experiment.ratio_floor", [](RunConfig& c) -> double& { return c.experiment.ratio_floor; }));
    v.push_back(integer("experiment.jobs", [](RunConfig& c) -> int& { return c.experiment.jobs; }));
    v.push_back(real("experiment.max_failure_rate", [](RunConfig& c) -> double& { return c.experiment.max_failure_rate; }));

    v.push_back(count("population.mc_draws", [](RunConfig& c) -> std::size_t& { return c.experiment.population.mc_draws; }));
    v.push_back(count("population.unit_pool_draws", [](RunConfig& c) -> std::size_t& { return c.experiment.unit_pool_draws; }));
    v.push_back(seed("population.seed", [](RunConfig& c) -> std::uint64_t& { return c.experiment.population.seed; }));
    v.push_back(integer("population.restarts", [](RunConfig& c) -> int& { return c.experiment.population.restarts; }, nonneg_int));
    v.push_back(integer("population.max_iter", [](RunConfig& c) -> int& { return c.experiment.population.max_iter; }));
    v.push_back(real("population.grad_tol", [](RunConfig& c) -> double& { return c.experiment.population.grad_tol; }));

    v.push_back(integer("vb.mc_samples", [](RunConfig& c) -> int& { return c.experiment.vb.mc_samples_per_step; }));
    v.push_back(integer("vb.max_steps", [](RunConfig& c) -> int& { return c.experiment.vb.max_steps; }));
    v.push_back(real("vb.step_size", [](RunConfig& c) -> double& { return c.experiment.vb.step_base; }, positive));
    v.push_back(real("vb.step_decay", [](RunConfig& c) -> double& { return c.experiment.vb.step_decay; }));
    v.push_back(real("vb.clip", [](RunConfig& c) -> double& { return c.experiment.vb.clip; }, positive));
    v.push_back(integer("vb.window", [](RunConfig& c) -> int& { return c.experiment.vb.window; }));
    v.push_back(real("vb.slope_tol", [](RunConfig& c) -> double& { return c.experiment.vb.slope_tol; }, positive));
    v.push_back(integer("vb.average_window", [](RunConfig& c) -> int& { return c.experiment.vb.average_window; }));
    v.push_back(integer("vb.final_elbo_samples", [](RunConfig& c) -> int& { return c.experiment.vb.final_elbo_samples; }));

    v.push_back(integer("inner.quadrature_nodes", [](RunConfig& c) -> int& { return c.experiment.inner.quadrature_nodes; }));
    v.push_back(real("inner.ftol", [](RunConfig& c) -> double& { return c.experiment.inner.ftol; }, positive));
    v.push_back(real("inner.xtol", [](RunConfig& c) -> double& { return c.experiment.inner.xtol; }, positive));
    v.push_back(integer("inner.max_iter", [](RunConfig& c) -> int& { return c.experiment.inner.max_iter; }));

    v.push_back(integer("mcmc.chains", [](RunConfig& c) -> int& { return c.experiment.mcmc.chains; }));
    v.push_back(integer("mcmc.burn_in", [](RunConfig& c) -> int& { return c.experiment.mcmc.burn_in; }, nonneg_int));
    v.push_back(integer("mcmc.kept", [](RunConfig& c) -> int& { return c.experiment.mcmc.kept; }));
    v.push_back(integer("mcmc.thin", [](RunConfig& c) -> int& { return c.experiment.mcmc.thin; }));
    v.push_back(real("mcmc.target_accept", [](RunConfig& c) -> double& { return c.experiment.mcmc.target_accept; }, positive));
    v.push_back(real("mcmc.adapt_rate", [](RunConfig& c) -> double& { return c.experiment.mcmc.adapt_rate; }));
    v.push_back(real("mcmc.init_jitter", [](RunConfig& c) -> double& { return c.experiment.mcmc.init_jitter; }));
    v.push_back(real("mcmc.rhat_threshold", [](RunConfig& c) -> double& { return c.experiment.mcmc.rhat_threshold; }, positive));

    v.push_back(integer("grid.tv_points", [](RunConfig& c) -> int& { return c.experiment.tv_points; }));
    v.push_back(integer("grid.tv_limit_draws", [](RunConfig& c) -> int& { return c.experiment.tv_limit_draws; }));
    v.push_back(integer("grid.tv_bins", [](RunConfig& c) -> int& { return c.experiment.tv_bins; }));
    v.push_back(integer("grid.tv_bins_2d", [](RunConfig& c) -> int& { return c.experiment.tv_bins_2d; }));

    v.push_back(count("data.n", [](RunConfig& c) -> std::size_t& { return c.data_n; }));
    v.push_back({"output.dir", [](RunConfig& c, const std::string& s) { c.output_dir = s; },
                 [](const RunConfig& c) { return c.output_dir; }});
    return v;
  }();
  return f;
}

}  // namespace

RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  std::map<std::string, const Field*> index;
  for (const Field& f : fields()) index[f.key] = &f;
  std::map<std::string, int> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'", "", lineno);
    }
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key.rfind("manifest.", 0) == 0) continue;
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'", key, lineno);
    if (seen.count(key)) {
      throw ConfigError("line " + std::to_string(lineno) + ": '" + key + "' already set on line " +
                            std::to_string(seen[key]),
                        key, lineno);
    }
    seen[key] = lineno;
    try {
      it->second->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + key + ": " + e.what(), key, lineno);
    }
  }
  if (!seen.count("scenario.name")) throw ConfigError("missing required field 'scenario.name'", "scenario.name", 0);
  if (!(cfg.experiment.max_failure_rate >= 0.0 && cfg.experiment.max_failure_rate <= 1.0)) {
    throw ConfigError("experiment.max_failure_rate must lie in [0, 1]", "experiment.max_failure_rate",
                      seen["experiment.max_failure_rate"]);
  }
  if (!(cfg.experiment.mcmc.target_accept < 1.0)) {
    throw ConfigError("mcmc.target_accept must lie in (0, 1)", "mcmc.target_accept", seen["mcmc.target_accept"]);
  }
  if (cfg.scenario.sigma_u < 0.0) throw ConfigError("scenario.sigma_u must be non-negative", "scenario.sigma_u", seen["scenario.sigma_u"]);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'", "", 0);
  return parse_config(in);
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace vbmis::cli
