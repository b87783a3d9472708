#include "vbmis/population.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vbmis/errors.hpp"
#include "vbmis/optimize.hpp"

namespace vbmis {

namespace {

/// Running mean and entrywise second moment of per-draw matrices.
class MatrixAccumulator {
 public:
  explicit MatrixAccumulator(Eigen::Index d) : sum_(Mat::Zero(d, d)), sum_sq_(Mat::Zero(d, d)) {}
  void add(const Mat& m) {
    sum_ += m;
    sum_sq_.array() += m.array().square();
    ++count_;
  }
  MatrixEstimate finish() const {
    const double m = static_cast<double>(count_);
    MatrixEstimate out;
    out.value = sum_ / m;
    const Mat var = (sum_sq_ / m).array() - out.value.array().square();
    out.se = (var.array().max(0.0) * (m / std::max(1.0, m - 1.0)) / m).sqrt().matrix();
    return out;
  }

 private:
  Mat sum_;
  Mat sum_sq_;
  std::size_t count_ = 0;
};

Mat per_draw_hessian(const ParametricModel& model, const Vec& theta, const Datum& x) {
  return fd_hessian([&](const Vec& t, Vec& g) { g = model.loglik_grad(t, x); }, theta);
}

void require_pool(const PopulationPool& pool) {
  if (pool.draws.empty()) throw InsufficientDraws("population pool is empty");
}

struct PoolMoments {
  MatrixEstimate curvature;
  MatrixEstimate score_outer;
  MatrixEstimate gap;
};

// One pass over the pool: per-draw Hessians are the expensive part.
PoolMoments pool_moments(const ParametricModel& model, const Vec& theta, const PopulationPool& pool) {
  MatrixAccumulator v(theta.size()), s(theta.size()), gap(theta.size());
  for (const Datum& x : pool.draws) {
    const Mat h = per_draw_hessian(model, theta, x);
    const Vec g = model.loglik_grad(theta, x);
    const Mat ss = g * g.transpose();
    v.add(-h);
    s.add(ss);
    gap.add(ss + h);
  }
  PoolMoments out{v.finish(), s.finish(), gap.finish()};
  out.curvature.value = 0.5 * (out.curvature.value + out.curvature.value.transpose());
  return out;
}

}  // namespace

PopulationPool draw_pool(const TrueGenerator& gen, std::size_t mc_draws, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Datum> rows;
  rows.reserve(mc_draws);
  for (std::size_t i = 0; i < mc_draws; ++i) rows.push_back(gen.draw(rng));
  return {Dataset(std::move(rows)), seed};
}

ThetaStarEstimate estimate_theta_star(const ParametricModel& model, const PopulationPool& pool,
                                      const ThetaStarConfig& cfg) {
  require_pool(pool);
  const int d = model.dim();
  const double m = static_cast<double>(pool.draws.n());
  // Average log-likelihood, on the same pool at every iterate.
  ValueGradFn objective = [&](const Vec& theta, Vec& grad) {
    const double v = loglik_sum_grad(model, theta, pool.draws, grad);
    grad /= m;
    return v / m;
  };
  NewtonOptions opts;
  opts.grad_tol = cfg.grad_tol > 0.0 ? cfg.grad_tol : 1e-6 * std::sqrt(static_cast<double>(d));
  opts.max_iter = cfg.max_iter;

  const Vec initial = cfg.initial.value_or(model.prior_mean());
  Rng rng(derive_seed(cfg.seed, {0x7e57a7ULL}));
  ThetaStarEstimate out;
  std::optional<MaximizeResult> best;
  std::optional<MaximizeResult> best_any;
  const int starts = std::max(1, cfg.restarts);
  for (int k = 0; k < starts; ++k) {
    Vec start = initial;
    if (k > 0) {
      for (int j = 0; j < d; ++j) start[j] += cfg.restart_spread * rng.normal();
    }
    MaximizeResult r = maximize_newton(objective, start, opts);
    if (!best_any || r.value > best_any->value) best_any = r;
    if (r.converged) {
      out.restart_iterates.push_back(model.canonicalize(r.x));
      if (!best || r.value > best->value) best = r;
    }
  }
  if (!best) {
    throw ConvergenceFailure("estimate_theta_star: no restart reached the gradient tolerance", best_any->x);
  }
  for (std::size_t a = 0; a < out.restart_iterates.size(); ++a) {
    for (std::size_t b = a + 1; b < out.restart_iterates.size(); ++b) {
      if ((out.restart_iterates[a] - out.restart_iterates[b]).cwiseAbs().maxCoeff() > cfg.agreement_tol) {
        out.multimodal = true;
      }
    }
  }
  out.theta_star = model.canonicalize(best->x);
  out.objective = best->value;
  out.grad = best->grad;
  return out;
}

ThetaStarEstimate estimate_theta_star(const TrueGenerator& gen, const ParametricModel& model,
                                      const ThetaStarConfig& cfg) {
  if (cfg.mc_draws < 10000) throw InsufficientDraws("estimate_theta_star: mc_draws must be at least 1e4");
  return estimate_theta_star(model, draw_pool(gen, cfg.mc_draws, cfg.seed), cfg);
}

MatrixEstimate lan_curvature(const ParametricModel& model, const Vec& theta, const PopulationPool& pool,
                             double min_eigenvalue) {
  require_pool(pool);
  MatrixAccumulator acc(theta.size());
  for (const Datum& x : pool.draws) acc.add(-per_draw_hessian(model, theta, x));
  MatrixEstimate v = acc.finish();
  v.value = 0.5 * (v.value + v.value.transpose());
  const double min_eig = Eigen::SelfAdjointEigenSolver<Mat>(v.value).eigenvalues().minCoeff();
  if (min_eig <= min_eigenvalue) {
    throw SingularCurvatureError("lan_curvature: curvature is singular (min eigenvalue " + std::to_string(min_eig) +
                                     ")",
                                 min_eig);
  }
  return v;
}

MatrixEstimate lan_curvature(const TrueGenerator& gen, const ParametricModel& model, const Vec& theta,
                             std::size_t mc_draws, std::uint64_t seed) {
  return lan_curvature(model, theta, draw_pool(gen, mc_draws, seed));
}

MatrixEstimate score_outer(const ParametricModel& model, const Vec& theta, const PopulationPool& pool) {
  require_pool(pool);
  MatrixAccumulator acc(theta.size());
  for (const Datum& x : pool.draws) {
    const Vec s = model.loglik_grad(theta, x);
    acc.add(s * s.transpose());
  }
  return acc.finish();
}

MatrixEstimate score_outer(const TrueGenerator& gen, const ParametricModel& model, const Vec& theta,
                           std::size_t mc_draws, std::uint64_t seed) {
  return score_outer(model, theta, draw_pool(gen, mc_draws, seed));
}

MatrixEstimate information_gap(const ParametricModel& model, const Vec& theta, const PopulationPool& pool) {
  require_pool(pool);
  MatrixAccumulator acc(theta.size());
  for (const Datum& x : pool.draws) {
    const Vec s = model.loglik_grad(theta, x);
    acc.add(s * s.transpose() + per_draw_hessian(model, theta, x));
  }
  return acc.finish();
}

Mat sandwich(const Mat& V, const Mat& S) {
  Eigen::FullPivLU<Mat> lu(V);
  if (!lu.isInvertible()) throw SingularMatrixError("sandwich: V is singular");
  const Mat v_inv = lu.inverse();
  return v_inv * S * v_inv;
}

Vec lan_shift(const Dataset& data, const ParametricModel& model, const Vec& theta_star, const Mat& V) {
  Eigen::FullPivLU<Mat> lu(V);
  if (!lu.isInvertible()) throw SingularMatrixError("lan_shift: V is singular");
  if (data.empty()) return Vec::Zero(theta_star.size());
  Vec score_sum;
  loglik_sum_grad(model, theta_star, data, score_sum);
  return lu.solve(score_sum) / std::sqrt(static_cast<double>(data.n()));
}

PopulationSummary summarize_population(const TrueGenerator& gen, const ParametricModel& model,
                                       const ThetaStarConfig& cfg) {
  const PopulationPool pool = draw_pool(gen, cfg.mc_draws, cfg.seed);
  const ThetaStarEstimate ts = estimate_theta_star(model, pool, cfg);
  PopulationSummary s;
  s.theta_star = ts.theta_star;
  s.multimodal = ts.multimodal;
  s.mc_draws = cfg.mc_draws;
  s.seed = cfg.seed;
  const PoolMoments mom = pool_moments(model, s.theta_star, pool);
  const double min_eig = Eigen::SelfAdjointEigenSolver<Mat>(mom.curvature.value).eigenvalues().minCoeff();
  if (min_eig <= 1e-8) {
    throw SingularCurvatureError("summarize_population: curvature is singular", min_eig);
  }
  s.V = mom.curvature.value;
  s.V_se = mom.curvature.se;
  s.S = mom.score_outer.value;
  s.S_se = mom.score_outer.se;
  s.gap_se = mom.gap.se;
  s.sandwich = sandwich(s.V, s.S);
  s.theta_star_se = (s.sandwich.diagonal() / static_cast<double>(cfg.mc_draws)).cwiseSqrt();

  double kl = 0.0;
  s.kl_exact = static_cast<bool>(gen.logpdf0);
  for (const Datum& x : pool.draws) {
    kl += (s.kl_exact ? gen.logpdf0(x) : 0.0) - model.loglik(s.theta_star, x);
  }
  s.kl_at_star = kl / static_cast<double>(pool.draws.n());
  return s;
}

}  // namespace vbmis
