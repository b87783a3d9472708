#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "vbmis/models.hpp"
#include "vbmis/vb.hpp"

namespace vbmis {

/// Uniform cell-centred axis: points x_i = lo + (i + ½)·step, step = (hi - lo) / points.
struct GridAxis {
  double lo = 0.0;
  double hi = 1.0;
  int points = 1;

  double step() const { return (hi - lo) / points; }
  double at(int i) const { return lo + (i + 0.5) * step(); }
  bool operator==(const GridAxis& o) const { return lo == o.lo && hi == o.hi && points == o.points; }
};

/// Log density values on the product of the axes, last axis fastest.
struct GridDensity {
  std::vector<GridAxis> axes;
  std::vector<double> log_values;
  bool normalized = false;
  double cell_volume = 1.0;
  /// Probability mass of the outermost cells (after normalization).
  double boundary_mass = 0.0;

  int dim() const { return static_cast<int>(axes.size()); }
  std::size_t size() const { return log_values.size(); }
  Vec point(std::size_t flat) const;
  /// Σ exp(log_values)·cell_volume.
  double total_mass() const;
  Vec mean() const;
  Mat covariance() const;
  /// Subtracts log(total mass); recomputes boundary_mass.
  void normalize();
};

GridDensity make_grid(std::vector<GridAxis> axes);

/// Bounds at mu ± half_width·σ for each coordinate of a VB fit.
std::vector<std::pair<double, double>> auto_bounds(const MeanFieldGaussian& q, double half_width = 8.0);

/// p(θ | data) on a grid over the bounds, resolution points per axis, for
/// d ≤ 2. Throws BoundsTooTight when more than 1e-4 of the mass sits in the
/// outermost cells.
GridDensity grid_posterior(const ParametricModel& model, const Dataset& data,
                           const std::vector<std::pair<double, double>>& bounds, int resolution);

struct McmcConfig {
  int chains = 4;
  int burn_in = 2000;
  int kept = 1000;
  int thin = 1;
  double target_accept = 0.3;
  /// Proposal scale is multiplied by exp(adapt_rate·(1 - target)) after each
  /// accepted and by exp(-adapt_rate·target) after each rejected burn-in step.
  double adapt_rate = 0.01;
  /// Per-coordinate proposal standard deviations before adaptation.
  std::optional<Vec> proposal_sd;
  /// Starting point for all chains (jittered per chain). Without it each
  /// chain starts from a prior draw.
  std::optional<Vec> init;
  double init_jitter = 0.0;
  std::uint64_t seed = 1;
  bool parallel = true;
  double rhat_threshold = 1.01;
};

struct McmcChain {
  Mat draws;  // kept × d, canonicalized
  double acceptance_rate = 0.0;  // after burn-in
  double final_scale = 1.0;
};

struct McmcResult {
  std::vector<McmcChain> chains;
  Vec r_hat;
  /// Set when some coordinate has R-hat at or above the threshold.
  bool rhat_warning = false;

  int dim() const { return chains.empty() ? 0 : static_cast<int>(chains.front().draws.cols()); }
  Mat pooled() const;
  Vec mean() const;
};

/// Adaptive Gaussian random-walk Metropolis, one independent stream per chain
/// seeded by derive_seed(seed, chain). Adaptation is frozen after burn-in.
McmcResult metropolis_sample(const ParametricModel& model, const Dataset& data, const McmcConfig& cfg);

/// Split-chain potential scale reduction per coordinate. Needs ≥ 2 chains of
/// equal length ≥ 100; UndefinedStatistic when the within-chain variance is zero.
Vec r_hat(const std::vector<Mat>& chains);

/// CSV with columns chain,iter,theta_0..theta_{d-1}.
void write_draws_csv(std::ostream& out, const McmcResult& result);

}  // namespace vbmis
