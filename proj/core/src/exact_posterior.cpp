#include "vbmis/exact_posterior.hpp"

#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <ostream>

#include "vbmis/errors.hpp"
#include "vbmis/special.hpp"

namespace vbmis {

// ---------------------------------------------------------------------------
// Grids

Vec GridDensity::point(std::size_t flat) const {
  Vec p(dim());
  for (int a = dim() - 1; a >= 0; --a) {
    const auto n = static_cast<std::size_t>(axes[a].points);
    p[a] = axes[a].at(static_cast<int>(flat % n));
    flat /= n;
  }
  return p;
}

double GridDensity::total_mass() const {
  double m = 0.0;
  for (double lv : log_values) m += std::exp(lv);
  return m * cell_volume;
}

Vec GridDensity::mean() const {
  Vec m = Vec::Zero(dim());
  double w_total = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    const double w = std::exp(log_values[i]);
    m += w * point(i);
    w_total += w;
  }
  return m / w_total;
}

Mat GridDensity::covariance() const {
  const Vec m = mean();
  Mat c = Mat::Zero(dim(), dim());
  double w_total = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    const double w = std::exp(log_values[i]);
    const Vec d = point(i) - m;
    c += w * d * d.transpose();
    w_total += w;
  }
  return c / w_total;
}

void GridDensity::normalize() {
  const double log_z = log_sum_exp(log_values) + std::log(cell_volume);
  if (!std::isfinite(log_z)) throw InstabilityError("GridDensity::normalize: density vanishes on the grid");
  for (double& lv : log_values) lv -= log_z;
  normalized = true;

  boundary_mass = 0.0;
  for (std::size_t flat = 0; flat < size(); ++flat) {
    std::size_t rest = flat;
    bool edge = false;
    for (int a = dim() - 1; a >= 0; --a) {
      const auto n = static_cast<std::size_t>(axes[a].points);
      const std::size_t idx = rest % n;
      rest /= n;
      if (idx == 0 || idx + 1 == n) edge = true;
    }
    if (edge) boundary_mass += std::exp(log_values[flat]) * cell_volume;
  }
}

GridDensity make_grid(std::vector<GridAxis> axes) {
  GridDensity g;
  std::size_t total = 1;
  g.cell_volume = 1.0;
  for (const GridAxis& a : axes) {
    if (a.points < 2 || !(a.hi > a.lo)) throw std::invalid_argument("make_grid: each axis needs hi > lo and ≥ 2 points");
    total *= static_cast<std::size_t>(a.points);
    g.cell_volume *= a.step();
  }
  g.axes = std::move(axes);
  g.log_values.assign(total, -std::numeric_limits<double>::infinity());
  return g;
}

std::vector<std::pair<double, double>> auto_bounds(const MeanFieldGaussian& q, double half_width) {
  std::vector<std::pair<double, double>> b;
  const Vec s = q.sigma();
  for (int i = 0; i < q.dim(); ++i) b.emplace_back(q.mu[i] - half_width * s[i], q.mu[i] + half_width * s[i]);
  return b;
}

GridDensity grid_posterior(const ParametricModel& model, const Dataset& data,
                           const std::vector<std::pair<double, double>>& bounds, int resolution) {
  const int d = model.dim();
  if (d > 2) throw UnsupportedOperation("grid_posterior: only d ≤ 2 is supported");
  if (static_cast<int>(bounds.size()) != d) throw ShapeError("grid_posterior: one (lo, hi) pair per dimension");
  std::vector<GridAxis> axes;
  for (const auto& [lo, hi] : bounds) axes.push_back({lo, hi, resolution});
  GridDensity g = make_grid(std::move(axes));
  for (std::size_t i = 0; i < g.size(); ++i) g.log_values[i] = log_posterior_unnorm(model, g.point(i), data);
  g.normalize();
  if (g.boundary_mass > 1e-4) {
    throw BoundsTooTight("grid_posterior: " + std::to_string(g.boundary_mass) + " of the mass is on the boundary",
                         g.boundary_mass, g.boundary_mass > 1e-2 ? 2.0 : 1.5);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Metropolis

namespace {

McmcChain run_chain(const ParametricModel& model, const Dataset& data, const McmcConfig& cfg, int chain) {
  const int d = model.dim();
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(chain)}));
  const Vec prop = cfg.proposal_sd.value_or(Vec::Constant(d, 0.5));
  if (prop.size() != d) throw ShapeError("metropolis_sample: proposal_sd has the wrong length");
  if (cfg.init && cfg.init->size() != d) throw ShapeError("metropolis_sample: init has the wrong length");

  Vec theta(d);
  double lp = -std::numeric_limits<double>::infinity();
  const Vec pm = model.prior_mean(), ps = model.prior_sd();
  for (int attempt = 0; attempt < 100 && !std::isfinite(lp); ++attempt) {
    for (int i = 0; i < d; ++i) {
      theta[i] = cfg.init ? (*cfg.init)[i] + cfg.init_jitter * prop[i] * rng.normal() : pm[i] + ps[i] * rng.normal();
    }
    lp = log_posterior_unnorm(model, theta, data);
  }
  if (!std::isfinite(lp)) throw InstabilityError("metropolis_sample: no finite starting point found");

  double log_scale = 0.0;
  const double up = cfg.adapt_rate * (1.0 - cfg.target_accept);
  const double down = cfg.adapt_rate * cfg.target_accept;
  McmcChain out;
  out.draws.resize(cfg.kept, d);
  long long accepted = 0;
  const long long sampling_steps = static_cast<long long>(cfg.kept) * cfg.thin;
  const long long total = cfg.burn_in + sampling_steps;
  Vec proposal(d);
  for (long long it = 0; it < total; ++it) {
    const double scale = std::exp(log_scale);
    for (int i = 0; i < d; ++i) proposal[i] = theta[i] + scale * prop[i] * rng.normal();
    const double lp_new = log_posterior_unnorm(model, proposal, data);
    const bool accept = std::isfinite(lp_new) && std::log(rng.uniform()) < lp_new - lp;
    if (accept) {
      theta = proposal;
      lp = lp_new;
    }
    if (it < cfg.burn_in) {
      log_scale += accept ? up : -down;
    } else {
      accepted += accept ? 1 : 0;
      const long long k = it - cfg.burn_in;
      if ((k + 1) % cfg.thin == 0) out.draws.row(static_cast<Eigen::Index>(k / cfg.thin)) = model.canonicalize(theta).transpose();
    }
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(sampling_steps);
  out.final_scale = std::exp(log_scale);
  return out;
}

}  // namespace

Mat McmcResult::pooled() const {
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.draws.rows();
  Mat all(rows, dim());
  Eigen::Index r = 0;
  for (const auto& c : chains) {
    all.middleRows(r, c.draws.rows()) = c.draws;
    r += c.draws.rows();
  }
  return all;
}

Vec McmcResult::mean() const { return pooled().colwise().mean().transpose(); }

McmcResult metropolis_sample(const ParametricModel& model, const Dataset& data, const McmcConfig& cfg) {
  if (cfg.chains < 1 || cfg.kept < 1 || cfg.burn_in < 0 || cfg.thin < 1 || !(cfg.target_accept > 0.0) ||
      !(cfg.target_accept < 1.0) || !(cfg.adapt_rate >= 0.0)) {
    throw std::invalid_argument("metropolis_sample: invalid McmcConfig");
  }
  McmcResult res;
  if (cfg.parallel && cfg.chains > 1) {
    std::vector<std::future<McmcChain>> futures;
    for (int c = 0; c < cfg.chains; ++c) {
      futures.push_back(std::async(std::launch::async, [&, c] { return run_chain(model, data, cfg, c); }));
    }
    for (auto& f : futures) res.chains.push_back(f.get());
  } else {
    for (int c = 0; c < cfg.chains; ++c) res.chains.push_back(run_chain(model, data, cfg, c));
  }
  if (cfg.chains >= 2 && cfg.kept >= 100) {
    std::vector<Mat> draws;
    for (const auto& c : res.chains) draws.push_back(c.draws);
    try {
      res.r_hat = r_hat(draws);
      res.rhat_warning = (res.r_hat.array() >= cfg.rhat_threshold).any() || !res.r_hat.allFinite();
    } catch (const UndefinedStatistic&) {
      res.r_hat = Vec::Constant(model.dim(), std::numeric_limits<double>::quiet_NaN());
      res.rhat_warning = true;
    }
  }
  return res;
}

Vec r_hat(const std::vector<Mat>& chains) {
  if (chains.size() < 2) throw InsufficientDraws("r_hat: need at least two chains");
  const Eigen::Index len = chains.front().rows(), d = chains.front().cols();
  for (const Mat& c : chains) {
    if (c.rows() != len || c.cols() != d) throw ShapeError("r_hat: chains must have equal shapes");
  }
  if (len < 100) throw InsufficientDraws("r_hat: chains must have at least 100 draws");
  const Eigen::Index half = len / 2;
  std::vector<Mat> parts;
  for (const Mat& c : chains) {
    parts.push_back(c.topRows(half));
    parts.push_back(c.bottomRows(half));
  }
  const double m = static_cast<double>(parts.size()), n = static_cast<double>(half);
  Vec out(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Vec means(parts.size());
    double w = 0.0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto col = parts[k].col(j);
      means[static_cast<Eigen::Index>(k)] = col.mean();
      w += (col.array() - col.mean()).square().sum() / (n - 1.0);
    }
    w /= m;
    const double b = n * (means.array() - means.mean()).square().sum() / (m - 1.0);
    if (!(w > 0.0)) throw UndefinedStatistic("r_hat: zero within-chain variance");
    const double var_plus = (n - 1.0) / n * w + b / n;
    out[j] = std::sqrt(var_plus / w);
  }
  return out;
}

void write_draws_csv(std::ostream& out, const McmcResult& result) {
  out << "chain,iter";
  for (int j = 0; j < result.dim(); ++j) out << ",theta_" << j;
  out << '\n';
  char buf[32];
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    const Mat& dr = result.chains[c].draws;
    for (Eigen::Index i = 0; i < dr.rows(); ++i) {
      out << c << ',' << i;
      for (Eigen::Index j = 0; j < dr.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", dr(i, j));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace vbmis
