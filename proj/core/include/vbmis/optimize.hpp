#pragma once

#include <functional>

#include "vbmis/models.hpp"

namespace vbmis {

using ValueGradFn = std::function<double(const Vec&, Vec&)>;
using GradFn = std::function<void(const Vec&, Vec&)>;

/// Central finite differences of a gradient, step 1e-4·(1 + |x_j|),
/// symmetrized.
Mat fd_hessian(const GradFn& grad, const Vec& x);

struct MaximizeResult {
  Vec x;
  double value = 0.0;
  Vec grad;
  int iterations = 0;
  bool converged = false;
};

struct NewtonOptions {
  double grad_tol = 1e-6;
  int max_iter = 200;
  /// ‖x‖ beyond this is treated as an unbounded objective.
  double divergence_norm = 1e6;
};

/// Levenberg-damped Newton ascent with finite-difference Hessians. Throws
/// DivergenceError when the iterate runs away.
MaximizeResult maximize_newton(const ValueGradFn& f, Vec start, const NewtonOptions& opts);

struct NelderMeadResult {
  Vec x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Derivative-free maximization. Stops when the simplex value spread drops
/// below ftol·(1 + |best|) and its diameter below xtol.
NelderMeadResult nelder_mead_max(const std::function<double(const Vec&)>& f, Vec start, const Vec& initial_step,
                                 double ftol, double xtol, int max_iter);

}  // namespace vbmis
