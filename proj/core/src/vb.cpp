#include "vbmis/vb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vbmis/errors.hpp"
#include "vbmis/optimize.hpp"
#include "vbmis/quadrature.hpp"
#include "vbmis/special.hpp"

namespace vbmis {

namespace {

constexpr double kHalfLog2PiE = 1.41893853320467274178;  // ½ log(2πe)

double clip(double v, double c) { return std::clamp(v, -c, c); }

// Least-squares slope of v against 0..m-1 and the residual standard deviation.
void window_slope(const std::vector<double>& v, std::size_t first, std::size_t m, double& slope, double& resid_sd) {
  const double xm = 0.5 * static_cast<double>(m - 1);
  double ym = 0.0;
  for (std::size_t i = 0; i < m; ++i) ym += v[first + i];
  ym /= static_cast<double>(m);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double dx = static_cast<double>(i) - xm;
    sxy += dx * (v[first + i] - ym);
    sxx += dx * dx;
  }
  slope = sxy / sxx;
  double ss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = v[first + i] - ym - slope * (static_cast<double>(i) - xm);
    ss += r * r;
  }
  resid_sd = std::sqrt(ss / static_cast<double>(m - 2));
}

void check_dims(const ParametricModel& model, const MeanFieldGaussian& q) {
  if (q.dim() != model.dim()) throw ShapeError("variational family dimension does not match the model");
}

}  // namespace

MeanFieldGaussian::MeanFieldGaussian(Vec mean, Vec log_sd) : mu(std::move(mean)), log_sigma(std::move(log_sd)) {
  if (mu.size() != log_sigma.size()) throw ShapeError("MeanFieldGaussian: mu and log_sigma differ in length");
  if (!mu.allFinite() || !log_sigma.allFinite()) throw ParameterDomainError("MeanFieldGaussian: non-finite entries");
}

double MeanFieldGaussian::entropy() const { return log_sigma.sum() + kHalfLog2PiE * static_cast<double>(dim()); }

double MeanFieldGaussian::logpdf(const Vec& theta) const {
  double lp = 0.0;
  for (int i = 0; i < dim(); ++i) {
    const double z = (theta[i] - mu[i]) * std::exp(-log_sigma[i]);
    lp += -0.5 * z * z - log_sigma[i] - kLogSqrt2Pi;
  }
  return lp;
}

Vec MeanFieldGaussian::draw(Rng& rng) const {
  Vec t(dim());
  for (int i = 0; i < dim(); ++i) t[i] = mu[i] + std::exp(log_sigma[i]) * rng.normal();
  return t;
}

MeanFieldGaussian MeanFieldGaussian::canonicalized(const ParametricModel& model) const {
  const std::vector<int> perm = model.canonical_permutation(mu);
  MeanFieldGaussian out = *this;
  for (int i = 0; i < dim(); ++i) {
    out.mu[i] = mu[perm[static_cast<std::size_t>(i)]];
    out.log_sigma[i] = log_sigma[perm[static_cast<std::size_t>(i)]];
  }
  return out;
}

ElboEstimate elbo(const ParametricModel& model, const Dataset& data, const MeanFieldGaussian& q, int n_samples,
                  std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("elbo: n_samples must be at least 1");
  check_dims(model, q);
  Rng rng(seed);
  double sum = 0.0, sum_sq = 0.0;
  ElboEstimate out;
  for (int s = 0; s < n_samples; ++s) {
    const Vec theta = q.draw(rng);
    const double v = log_posterior_unnorm(model, theta, data);
    if (!std::isfinite(v)) {
      ++out.rejected;
      continue;
    }
    sum += v;
    sum_sq += v * v;
    ++out.samples;
  }
  if (2 * out.rejected > n_samples) {
    throw InstabilityError("elbo: more than half of the sampled log joints were not finite");
  }
  const double m = static_cast<double>(out.samples);
  const double mean = sum / m;
  out.value = mean + q.entropy();
  out.se = out.samples > 1 ? std::sqrt(std::max(0.0, sum_sq / m - mean * mean) / (m - 1.0)) : 0.0;
  return out;
}

ElboGradient elbo_gradient(const ParametricModel& model, const Dataset& data, const MeanFieldGaussian& q,
                           const Mat& eps) {
  check_dims(model, q);
  if (eps.rows() != q.dim() || eps.cols() < 1) throw ShapeError("elbo_gradient: eps must be d x S");
  const int d = q.dim();
  const Vec sigma = q.sigma();
  ElboGradient out;
  out.d_mu = Vec::Zero(d);
  out.d_log_sigma = Vec::Zero(d);
  Vec g(d);
  double sum = 0.0;
  for (Eigen::Index s = 0; s < eps.cols(); ++s) {
    const Vec theta = q.mu + sigma.cwiseProduct(eps.col(s));
    sum += log_posterior_unnorm_grad(model, theta, data, g);
    out.d_mu += g;
    out.d_log_sigma += g.cwiseProduct(eps.col(s)).cwiseProduct(sigma);
  }
  const double m = static_cast<double>(eps.cols());
  out.value = sum / m + q.entropy();
  out.d_mu /= m;
  out.d_log_sigma = out.d_log_sigma / m + Vec::Ones(d);
  return out;
}

FitResult fit_vb(const ParametricModel& model, const Dataset& data, const FitConfig& cfg) {
  if (cfg.mc_samples_per_step < 1 || cfg.max_steps < 1 || cfg.window < 3 || cfg.average_window < 1 ||
      cfg.trace_thin < 1 || !(cfg.step_base > 0.0) || !(cfg.step_decay >= 0.0) || !(cfg.clip > 0.0) ||
      !(cfg.slope_tol > 0.0)) {
    throw std::invalid_argument("fit_vb: invalid FitConfig");
  }
  const int d = model.dim();
  MeanFieldGaussian q = cfg.init ? *cfg.init : MeanFieldGaussian::standard_at(model.prior_mean());
  check_dims(model, q);

  const int pairs = (cfg.mc_samples_per_step + 1) / 2;
  Rng rng(cfg.seed);
  Mat eps(d, pairs);
  Vec g(d);
  // Control-variate coefficients for the log-sigma gradient, stored as
  // curvature estimates H_ij and rescaled by the current sigma at use.
  Mat h_est = Mat::Zero(d, d);
  bool have_h = false;

  FitResult result;
  FitReport& report = result.report;
  report.trace_thin = cfg.trace_thin;
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(std::min(cfg.max_steps, 100000)));

  long long total_samples = 0;
  int converged_at = -1;
  Vec mu_avg = Vec::Zero(d), ls_avg = Vec::Zero(d);
  int averaged = 0;

  int t = 0;
  for (; t < cfg.max_steps; ++t) {
    const Vec sigma = q.sigma();
    for (int p = 0; p < pairs; ++p)
      for (int i = 0; i < d; ++i) eps(i, p) = rng.normal();

    Vec g_mu = Vec::Zero(d);
    Mat t_mat = Mat::Zero(d, d);  // σ_i mean(∂_i f · ε_j)
    Mat ee = Mat::Zero(d, d);     // mean(ε_i ε_j)
    double f_sum = 0.0;
    int used = 0;
    for (int p = 0; p < pairs; ++p) {
      for (int sign = 1; sign >= -1; sign -= 2) {
        const Vec e = static_cast<double>(sign) * eps.col(p);
        const Vec theta = q.mu + sigma.cwiseProduct(e);
        const double f = log_posterior_unnorm_grad(model, theta, data, g);
        ++total_samples;
        if (!std::isfinite(f) || !g.allFinite()) {
          ++report.rejected_samples;
          continue;
        }
        f_sum += f;
        g_mu += g;
        t_mat += sigma.cwiseProduct(g) * e.transpose();
        ee += e * e.transpose();
        ++used;
      }
    }
    if (2 * static_cast<long long>(report.rejected_samples) > total_samples && total_samples >= 20) {
      throw InstabilityError("fit_vb: more than half of the sampled log joints were not finite");
    }
    if (used == 0) continue;
    const double m = static_cast<double>(used);
    g_mu /= m;
    t_mat /= m;
    ee /= m;
    const double elbo_t = f_sum / m + q.entropy();
    trace.push_back(elbo_t);

    Vec g_ls(d);
    for (int i = 0; i < d; ++i) {
      double cv = 0.0;
      if (have_h) {
        for (int j = 0; j < d; ++j) cv += sigma[i] * sigma[j] * h_est(i, j) * (ee(i, j) - (i == j ? 1.0 : 0.0));
      }
      g_ls[i] = 1.0 + t_mat(i, i) - cv;
    }
    // Stein's identity: E[σ_i ∂_i f ε_j] = σ_i σ_j E[∂_ij f].
    Mat h_now(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) h_now(i, j) = t_mat(i, j) / (sigma[i] * sigma[j]);
    h_now = 0.5 * (h_now + h_now.transpose());
    h_est = have_h ? Mat(0.9 * h_est + 0.1 * h_now) : h_now;
    have_h = true;

    const double rho = cfg.step_base / (1.0 + cfg.step_decay * static_cast<double>(t));
    for (int i = 0; i < d; ++i) {
      q.mu[i] += rho * clip(sigma[i] * sigma[i] * g_mu[i], cfg.clip);
      q.log_sigma[i] += rho * clip(0.5 * g_ls[i], cfg.clip);
    }
    if (!q.mu.allFinite() || !q.log_sigma.allFinite()) throw InstabilityError("fit_vb: iterate became non-finite");
    if (q.mu.norm() > cfg.divergence_norm) throw DivergenceError("fit_vb: variational mean diverged");

    if (converged_at < 0) {
      const auto w = static_cast<std::size_t>(cfg.window);
      if (trace.size() >= 2 * w) {
        double slope = 0.0, sd = 0.0;
        window_slope(trace, trace.size() - w, w, slope, sd);
        if (std::abs(slope) < cfg.slope_tol * sd) converged_at = t;
      }
    } else if (t - converged_at > cfg.average_window) {
      mu_avg += q.mu;
      ls_avg += q.log_sigma;
      if (++averaged == cfg.average_window) {
        ++t;
        break;
      }
    }
  }
  report.steps = t;
  report.converged = averaged == cfg.average_window;
  if (averaged > 0) {
    q.mu = mu_avg / static_cast<double>(averaged);
    q.log_sigma = ls_avg / static_cast<double>(averaged);
  }
  for (std::size_t i = 0; i < trace.size(); i += static_cast<std::size_t>(cfg.trace_thin))
    report.elbo_trace.push_back(trace[i]);

  const ElboEstimate fin = elbo(model, data, q, cfg.final_elbo_samples, derive_seed(cfg.seed, {0xe1b0ULL}));
  report.final_elbo = fin.value;
  report.final_elbo_se = fin.se;
  result.q = q;
  return result;
}

// ---------------------------------------------------------------------------

LocalFit inner_local_fit(const LatentVarModel& model, const Vec& theta, const Datum& unit, const InnerConfig& cfg) {
  if (!theta.allFinite()) throw ParameterDomainError("inner_local_fit: theta must be finite");
  LocalFit out;
  if (model.local_kind() == LocalKind::CategoricalK) {
    const int k = model.num_categories();
    std::vector<double> lj(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) lj[static_cast<std::size_t>(c)] = model.joint(theta, static_cast<double>(c), unit);
    out.bound = log_sum_exp(lj);
    out.factor.kind = LocalKind::CategoricalK;
    out.factor.probs.resize(lj.size());
    double total = 0.0;
    for (std::size_t c = 0; c < lj.size(); ++c) {
      out.factor.probs[c] = std::isfinite(out.bound) ? std::exp(lj[c] - out.bound) : 1.0 / k;
      total += out.factor.probs[c];
    }
    for (double& p : out.factor.probs) p /= total;
    return out;
  }

  const GaussHermite& gh = gauss_hermite(cfg.quadrature_nodes);
  auto log_joint = [&](double z) { return model.joint(theta, z, unit); };
  const LaplacePoint lp = laplace_point(log_joint, model.local_start(theta, unit));
  auto inner_elbo = [&](const Vec& p) {
    const double s = std::exp(p[1]);
    double e = 0.0;
    for (std::size_t i = 0; i < gh.nodes.size(); ++i) e += gh.weights[i] * log_joint(p[0] + s * gh.nodes[i]);
    return e + p[1] + kHalfLog2PiE;
  };
  Vec start(2), step(2);
  start << lp.mode, std::log(lp.sd);
  step << 0.1 * lp.sd, 0.1;
  const NelderMeadResult nm = nelder_mead_max(inner_elbo, start, step, cfg.ftol, cfg.xtol, cfg.max_iter);
  if (!nm.converged || !std::isfinite(nm.value)) {
    throw InnerFailure("inner_local_fit: local search did not converge", nm.x[0], nm.x[1]);
  }
  out.factor.kind = LocalKind::ContinuousScalar;
  out.factor.mean = nm.x[0];
  out.factor.log_sd = nm.x[1];
  out.bound = nm.value;
  return out;
}

double variational_loglik(const LatentVarModel& model, const Vec& theta, const Dataset& units,
                          const InnerConfig& cfg) {
  double total = 0.0;
  for (const Datum& u : units) total += inner_local_fit(model, theta, u, cfg).bound;
  return total;
}

VariationalModel::VariationalModel(std::shared_ptr<const LatentVarModel> latent, InnerConfig cfg)
    : ParametricModel(latent->prior()), latent_(std::move(latent)), cfg_(cfg) {}

double VariationalModel::loglik(const Vec& theta, const Datum& unit) const {
  return inner_local_fit(*latent_, theta, unit, cfg_).bound;
}

double VariationalModel::loglik_accumulate(const Vec& theta, const Datum& unit, Vec& grad) const {
  const LocalFit fit = inner_local_fit(*latent_, theta, unit, cfg_);
  // Envelope theorem: the bound's θ-gradient is E_{q*(z)}[∇_θ log p(x, z | θ)].
  if (fit.factor.kind == LocalKind::CategoricalK) {
    Vec g = Vec::Zero(theta.size());
    for (std::size_t c = 0; c < fit.factor.probs.size(); ++c) {
      if (fit.factor.probs[c] < 1e-300) continue;
      g.setZero();
      latent_->joint_grad(theta, static_cast<double>(c), unit, g);
      grad += fit.factor.probs[c] * g;
    }
  } else {
    const GaussHermite& gh = gauss_hermite(cfg_.quadrature_nodes);
    const double s = std::exp(fit.factor.log_sd);
    Vec g = Vec::Zero(theta.size());
    for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
      g.setZero();
      latent_->joint_grad(theta, fit.factor.mean + s * gh.nodes[i], unit, g);
      grad += gh.weights[i] * g;
    }
  }
  return fit.bound;
}

LatentFitResult fit_vb_latent(std::shared_ptr<const LatentVarModel> model, const Dataset& rows, const FitConfig& cfg,
                              const InnerConfig& inner) {
  const Dataset units = model->make_units(rows);
  const VariationalModel vm(model, inner);
  FitResult fit = fit_vb(vm, units, cfg);
  LatentFitResult out;
  out.q = fit.q;
  out.report = std::move(fit.report);
  out.local.reserve(units.n());
  for (const Datum& u : units) out.local.push_back(inner_local_fit(*model, out.q.mu, u, inner).factor);
  return out;
}

}  // namespace vbmis
