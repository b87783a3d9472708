#include "vbmis/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "vbmis/errors.hpp"

namespace vbmis {

Mat fd_hessian(const GradFn& grad, const Vec& x) {
  const Eigen::Index d = x.size();
  Mat h(d, d);
  Vec gp(d), gm(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double step = 1e-4 * (1.0 + std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    grad(xp, gp);
    grad(xm, gm);
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

MaximizeResult maximize_newton(const ValueGradFn& f, Vec start, const NewtonOptions& opts) {
  const Eigen::Index d = start.size();
  MaximizeResult res;
  res.x = std::move(start);
  res.grad = Vec::Zero(d);
  res.value = f(res.x, res.grad);
  if (!std::isfinite(res.value)) throw DivergenceError("maximize_newton: objective not finite at start");
  GradFn grad_only = [&](const Vec& x, Vec& g) { f(x, g); };
  double damping = 0.0;
  Vec g_trial(d);
  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    if (res.grad.norm() <= opts.grad_tol) {
      res.converged = true;
      return res;
    }
    const Mat neg_h = -fd_hessian(grad_only, res.x);
    Eigen::SelfAdjointEigenSolver<Mat> eig(neg_h);
    const double min_eig = eig.eigenvalues().minCoeff();
    const double scale = std::max(1e-8, neg_h.diagonal().cwiseAbs().maxCoeff());
    double lambda = min_eig > 1e-10 * scale ? damping : std::max(damping, 1e-10 * scale - min_eig + 1e-3 * scale);
    bool improved = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      const Mat system = neg_h + lambda * Mat::Identity(d, d);
      const Vec step = system.ldlt().solve(res.grad);
      const Vec trial = res.x + step;
      if (trial.norm() > opts.divergence_norm) {
        throw DivergenceError("maximize_newton: iterate diverged (objective appears unbounded)");
      }
      const double v = f(trial, g_trial);
      if (std::isfinite(v) && v >= res.value - 1e-14 * std::abs(res.value)) {
        res.x = trial;
        res.value = v;
        res.grad = g_trial;
        improved = true;
        damping = lambda * 0.1;
        if (damping < 1e-12 * scale) damping = 0.0;
        break;
      }
      lambda = lambda == 0.0 ? 1e-4 * scale : lambda * 10.0;
    }
    if (!improved) break;
  }
  res.converged = res.grad.norm() <= opts.grad_tol;
  return res;
}

NelderMeadResult nelder_mead_max(const std::function<double(const Vec&)>& f, Vec start, const Vec& initial_step,
                                 double ftol, double xtol, int max_iter) {
  const Eigen::Index d = start.size();
  const auto n = static_cast<std::size_t>(d + 1);
  std::vector<Vec> pts(n, start);
  std::vector<double> vals(n);
  for (Eigen::Index j = 0; j < d; ++j) pts[static_cast<std::size_t>(j) + 1][j] += initial_step[j];
  auto eval = [&](const Vec& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 0; i < n; ++i) vals[i] = eval(pts[i]);

  NelderMeadResult res;
  std::vector<std::size_t> order(n);
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 2];
    double diameter = 0.0;
    for (std::size_t i = 1; i < n; ++i) diameter = std::max(diameter, (pts[order[i]] - pts[best]).cwiseAbs().maxCoeff());
    if (std::abs(vals[best] - vals[worst]) <= ftol * (1.0 + std::abs(vals[best])) && diameter <= xtol) {
      res.converged = true;
      break;
    }
    Vec centroid = Vec::Zero(d);
    for (std::size_t i = 0; i + 1 < n; ++i) centroid += pts[order[i]];
    centroid /= static_cast<double>(d);

    const Vec reflected = centroid + (centroid - pts[worst]);
    const double fr = eval(reflected);
    if (fr > vals[best]) {
      const Vec expanded = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(expanded);
      if (fe > fr) {
        pts[worst] = expanded;
        vals[worst] = fe;
      } else {
        pts[worst] = reflected;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr > vals[second]) {
      pts[worst] = reflected;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr > vals[worst];
    const Vec contracted = outside ? Vec(centroid + 0.5 * (reflected - centroid))
                                   : Vec(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(contracted);
    if (fc > (outside ? fr : vals[worst])) {
      pts[worst] = contracted;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      vals[i] = eval(pts[i]);
    }
  }
  const auto best_it = std::max_element(vals.begin(), vals.end());
  res.x = pts[static_cast<std::size_t>(best_it - vals.begin())];
  res.value = *best_it;
  return res;
}

}  // namespace vbmis
