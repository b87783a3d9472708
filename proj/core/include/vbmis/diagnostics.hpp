#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "vbmis/exact_posterior.hpp"
#include "vbmis/models.hpp"
#include "vbmis/vb.hpp"

namespace vbmis {

enum class LimitFlavor { Exact, MeanField };
std::string_view to_string(LimitFlavor f);

/// N(center, covariance) with covariance V⁻¹/n (exact) or diag(diag V)⁻¹/n
/// (mean-field).
struct LimitingNormal {
  Vec center;
  Mat covariance;
  LimitFlavor flavor = LimitFlavor::MeanField;
  std::size_t n = 1;
};

/// Centered at θ* + n^{-1/2}Δ_n when delta is given, else at θ*. Throws
/// ParameterDomainError unless V is symmetric positive definite.
LimitingNormal mean_field_limit(const Mat& V, const Vec& theta_star, std::size_t n,
                                const std::optional<Vec>& delta = std::nullopt);
LimitingNormal exact_limit(const Mat& V, const Vec& theta_star, std::size_t n,
                           const std::optional<Vec>& delta = std::nullopt);

// ---------------------------------------------------------------------------
// Distances

/// ½ Σ |p - q| · cell_volume on a common grid. GridMismatch otherwise.
double tv_grid(const GridDensity& p, const GridDensity& q);

/// Normalized N(mean, cov) evaluated on the given axes.
GridDensity gaussian_on_grid(const Vec& mean, const Mat& cov, const std::vector<GridAxis>& axes);
GridDensity gaussian_on_grid(const MeanFieldGaussian& q, const std::vector<GridAxis>& axes);

/// Axes covering every listed Gaussian to ±half_width sd, `points` per axis.
std::vector<GridAxis> covering_axes(const std::vector<std::pair<Vec, Mat>>& gaussians, int points,
                                    double half_width = 8.0);

/// TV between two Gaussians on a shared grid: 1-D and 2-D directly, d > 2 as
/// the average of per-coordinate marginal TVs.
double tv_gaussians(const Vec& mean_a, const Mat& cov_a, const Vec& mean_b, const Mat& cov_b, int points);

struct SampleTv {
  /// For d ≤ 2 the binned TV; for d > 2 the average of per_coordinate.
  double value = 0.0;
  std::vector<double> per_coordinate;
};

/// Binned TV between two draw sets (rows are draws). Bins have equal mass
/// under the pooled sample: bins_per_dim per axis, product bins for d = 2,
/// per-coordinate marginals for d > 2. Needs ≥ 1000 draws on each side.
SampleTv tv_samples(const Mat& draws_p, const Mat& draws_q, int bins_per_dim = 50);

/// KL(a ‖ b) between multivariate normals.
double kl_mvn(const Vec& mean_a, const Mat& cov_a, const Vec& mean_b, const Mat& cov_b);

/// ½(Σ log V_ii - log det V).
double entropy_gap(const Mat& V);

/// Gaussian kernel density estimate of 1-D draws on an axis (Silverman
/// bandwidth when bandwidth ≤ 0), normalized on the grid.
GridDensity kde_on_grid(const std::vector<double>& draws, const GridAxis& axis, double bandwidth = 0.0);

// ---------------------------------------------------------------------------
// Predictive densities

struct PredictiveEstimate {
  std::vector<Datum> points;
  std::vector<double> log_density;
  /// Delta-method standard error of each log density, treating draws as iid.
  std::vector<double> se;
  std::size_t draws_used = 0;
  /// True when some point had zero likelihood under every draw.
  bool has_zero = false;
};

/// log( (1/S) Σ_s p(x_new | θ_s) ) for each point; rows of draws are θ_s.
PredictiveEstimate predictive_density(const ParametricModel& model, const Mat& draws,
                                      const std::vector<Datum>& x_new);

struct MisspecRatio {
  double numerator = 0.0;    // TV(vb, exact)
  double denominator = 0.0;  // TV(p0, exact)
  double ratio = 0.0;        // NaN when flagged
  bool near_well_specified = false;
};

/// Densities (not logs) on a shared response grid with quadrature weights.
MisspecRatio misspec_ratio(const std::vector<double>& vb_pred, const std::vector<double>& exact_pred,
                           const std::vector<double>& p0, const std::vector<double>& weights, double floor = 1e-3);

/// ½ Σ w |a - b| on a shared response grid.
double tv_weighted(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& weights);

}  // namespace vbmis
