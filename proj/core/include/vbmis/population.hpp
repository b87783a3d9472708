#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "vbmis/models.hpp"
#include "vbmis/rng.hpp"

namespace vbmis {

/// The data-generating side p_0.
struct TrueGenerator {
  std::function<Datum(Rng&)> sampler;
  /// Exact log p_0(datum) when available (conditional on covariates for
  /// regression truths).
  std::function<double(const Datum&)> logpdf0;
  std::function<std::vector<double>(Rng&)> covariate_law;

  Datum draw(Rng& rng) const { return sampler(rng); }
};

/// Fixed Monte Carlo pool x_1..x_M ~ p_0 shared by the θ*, V and S estimates.
struct PopulationPool {
  Dataset draws;
  std::uint64_t seed = 0;
};

PopulationPool draw_pool(const TrueGenerator& gen, std::size_t mc_draws, std::uint64_t seed);

struct ThetaStarConfig {
  std::size_t mc_draws = 200000;
  std::uint64_t seed = 20240501;
  /// Gradient-norm tolerance of the pool-average objective; 0 means 1e-6·√d.
  double grad_tol = 0.0;
  int max_iter = 200;
  int restarts = 3;
  /// Random restarts are drawn as initial + spread·N(0, I).
  double restart_spread = 0.5;
  /// Defaults to the model's prior mean.
  std::optional<Vec> initial;
  /// Restarts disagreeing by more than this (after canonicalization) flag
  /// multimodality.
  double agreement_tol = 1e-4;
};

struct ThetaStarEstimate {
  Vec theta_star;
  double objective = 0.0;  // pool-average log-likelihood at theta_star
  Vec grad;                // pool-average gradient at theta_star
  std::vector<Vec> restart_iterates;
  bool multimodal = false;
};

/// argmax_θ (1/M) Σ_m log p(x_m | θ) over the pool. Throws ConvergenceFailure
/// (carrying the best iterate) when no restart reaches the tolerance, and
/// DivergenceError when θ runs away.
ThetaStarEstimate estimate_theta_star(const ParametricModel& model, const PopulationPool& pool,
                                      const ThetaStarConfig& cfg);
ThetaStarEstimate estimate_theta_star(const TrueGenerator& gen, const ParametricModel& model,
                                      const ThetaStarConfig& cfg);

/// A pool-average matrix with the Monte Carlo standard error of each entry.
struct MatrixEstimate {
  Mat value;
  Mat se;
};

/// V = -E_{p0}[∇² log p(x | θ)], from central differences of the supplied
/// gradients, symmetrized. Throws SingularCurvatureError if its smallest
/// eigenvalue is ≤ min_eigenvalue.
MatrixEstimate lan_curvature(const ParametricModel& model, const Vec& theta, const PopulationPool& pool,
                             double min_eigenvalue = 1e-8);
MatrixEstimate lan_curvature(const TrueGenerator& gen, const ParametricModel& model, const Vec& theta,
                             std::size_t mc_draws, std::uint64_t seed);

/// S = E_{p0}[s s'] with s = ∇ log p(x | θ).
MatrixEstimate score_outer(const ParametricModel& model, const Vec& theta, const PopulationPool& pool);
MatrixEstimate score_outer(const TrueGenerator& gen, const ParametricModel& model, const Vec& theta,
                           std::size_t mc_draws, std::uint64_t seed);

/// S - V estimated from per-draw differences, so its standard error accounts
/// for the correlation between the two.
MatrixEstimate information_gap(const ParametricModel& model, const Vec& theta, const PopulationPool& pool);

/// V^{-1} S V^{-1}. SingularMatrixError if V is not invertible.
Mat sandwich(const Mat& V, const Mat& S);

/// Δ_n = V^{-1} n^{-1/2} Σ_i ∇ log p(x_i | θ*). The finite-n limiting normal
/// is centered at θ* + n^{-1/2} Δ_n.
Vec lan_shift(const Dataset& data, const ParametricModel& model, const Vec& theta_star, const Mat& V);

/// n^{-1/2} for every coordinate.
inline double lan_rate(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

struct PopulationSummary {
  Vec theta_star;
  Mat V;
  Mat S;
  Mat sandwich;
  std::size_t mc_draws = 0;
  std::uint64_t seed = 0;
  /// E_{p0}[log p0 - log p_{θ*}], or -E_{p0}[log p_{θ*}] without logpdf0.
  double kl_at_star = 0.0;
  bool kl_exact = false;  // true when logpdf0 was available

  Vec theta_star_se;  // sqrt(diag(sandwich) / M)
  Mat V_se;
  Mat S_se;
  Mat gap_se;  // standard error of the entries of S - V
  bool multimodal = false;

  int dim() const { return static_cast<int>(theta_star.size()); }
};

/// θ*, V, S and the sandwich from one common pool.
PopulationSummary summarize_population(const TrueGenerator& gen, const ParametricModel& model,
                                       const ThetaStarConfig& cfg);

}  // namespace vbmis
