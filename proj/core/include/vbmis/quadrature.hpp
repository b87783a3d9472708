#pragma once

#include <functional>
#include <vector>

namespace vbmis {

/// Gauss–Hermite rule rescaled for standard-normal expectations:
/// E[f(Z)] ≈ Σ weights[i] · f(nodes[i]), Z ~ N(0, 1). Weights sum to 1.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Cached rule with n points (Golub–Welsch). Thread-safe.
const GaussHermite& gauss_hermite(int n);

struct LaplacePoint {
  double mode = 0.0;
  double sd = 1.0;  // (-g''(mode))^{-1/2}
};

/// Mode and curvature scale of a univariate log-integrand by safeguarded
/// Newton with finite-difference derivatives.
LaplacePoint laplace_point(const std::function<double(double)>& log_f, double start);

/// log ∫ exp(log_f(z)) dz by Gauss–Hermite with nodes placed on the Laplace
/// approximation of the integrand.
double log_integral_adaptive(const std::function<double(double)>& log_f, double start, int n_nodes);

}  // namespace vbmis
