#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "vbmis/models.hpp"
#include "vbmis/rng.hpp"

namespace vbmis {

/// q(θ) = Π_i N(θ_i | mu_i, exp(log_sigma_i)^2). The VB posterior mean is mu.
struct MeanFieldGaussian {
  Vec mu;
  Vec log_sigma;

  MeanFieldGaussian() = default;
  MeanFieldGaussian(Vec mean, Vec log_sd);
  static MeanFieldGaussian standard_at(const Vec& mean) { return {mean, Vec::Zero(mean.size())}; }

  int dim() const noexcept { return static_cast<int>(mu.size()); }
  Vec sigma() const { return log_sigma.array().exp().matrix(); }
  /// Σ_i (log σ_i + ½ log 2πe).
  double entropy() const;
  double logpdf(const Vec& theta) const;
  Vec draw(Rng& rng) const;
  /// Applies the model's canonical relabelling to mu and log_sigma together.
  MeanFieldGaussian canonicalized(const ParametricModel& model) const;
};

struct FitConfig {
  /// Rounded up to an even count: draws come in antithetic pairs (ε, -ε).
  int mc_samples_per_step = 10;
  int max_steps = 20000;
  /// Step size base / (1 + decay · step).
  double step_base = 0.05;
  double step_decay = 1e-3;
  /// Per-coordinate clipping of the preconditioned update direction.
  double clip = 10.0;
  /// Converged once the least-squares slope of the last `window` ELBO values
  /// is below slope_tol times their residual standard deviation.
  int window = 200;
  double slope_tol = 0.01;
  /// After convergence, `average_window` steps are run to settle and the
  /// following `average_window` iterates are averaged into the result.
  int average_window = 200;
  int trace_thin = 10;
  std::uint64_t seed = 1;
  /// Samples for the final ELBO estimate in the report.
  int final_elbo_samples = 200;
  double divergence_norm = 1e6;
  /// Defaults to mu = prior mean, log_sigma = 0.
  std::optional<MeanFieldGaussian> init;
};

struct FitReport {
  double final_elbo = 0.0;
  double final_elbo_se = 0.0;
  int steps = 0;
  bool converged = false;
  int rejected_samples = 0;
  /// Every trace_thin-th per-step ELBO estimate.
  std::vector<double> elbo_trace;
  int trace_thin = 1;
};

struct FitResult {
  MeanFieldGaussian q;
  FitReport report;
};

struct ElboEstimate {
  double value = 0.0;
  double se = 0.0;
  int samples = 0;
  int rejected = 0;
};

/// E_q[log p(θ) + Σ log p(x_i | θ)] + H(q), with the entropy in closed form
/// and the expectation by independent draws from q. Rejects draws
/// whose log joint is not finite; InstabilityError above 50% rejections.
ElboEstimate elbo(const ParametricModel& model, const Dataset& data, const MeanFieldGaussian& q, int n_samples,
                  std::uint64_t seed);

/// ELBO estimate for fixed standard-normal draws (columns of eps) and its
/// exact derivatives with respect to (mu, log_sigma).
struct ElboGradient {
  double value = 0.0;
  Vec d_mu;
  Vec d_log_sigma;
};
ElboGradient elbo_gradient(const ParametricModel& model, const Dataset& data, const MeanFieldGaussian& q,
                           const Mat& eps);

/// Mean-field Gaussian VB by preconditioned stochastic gradient ascent on
/// (mu, log_sigma). Throws DivergenceError if ‖mu‖ exceeds cfg.divergence_norm.
FitResult fit_vb(const ParametricModel& model, const Dataset& data, const FitConfig& cfg);

// ---------------------------------------------------------------------------
// Local latents and the variational log-likelihood.

struct InnerConfig {
  int quadrature_nodes = 21;
  double ftol = 1e-12;
  double xtol = 1e-7;
  int max_iter = 2000;
};

/// Variational factor for one unit's local latent.
struct LocalFactor {
  LocalKind kind = LocalKind::CategoricalK;
  double mean = 0.0;    // ContinuousScalar
  double log_sd = 0.0;  // ContinuousScalar
  std::vector<double> probs;  // CategoricalK, sums to 1
};

struct LocalFit {
  LocalFactor factor;
  double bound = 0.0;
};

/// max_{q(z)} E_q[log p(x, z | θ) - log q(z)] for one unit. Categorical
/// latents: closed form (tight). Scalar latents: Gaussian q optimized over
/// (mean, log sd) by Nelder–Mead with Gauss–Hermite expectations. Throws
/// InnerFailure if the search does not converge.
LocalFit inner_local_fit(const LatentVarModel& model, const Vec& theta, const Datum& unit,
                         const InnerConfig& cfg = {});

/// Σ over units of the inner bound.
double variational_loglik(const LatentVarModel& model, const Vec& theta, const Dataset& units,
                          const InnerConfig& cfg = {});

/// The latent model reduced to a parametric one: per-unit likelihood
/// m(θ; x) = inner bound, gradient by the envelope theorem.
class VariationalModel final : public ParametricModel {
 public:
  explicit VariationalModel(std::shared_ptr<const LatentVarModel> latent, InnerConfig cfg = {});

  int dim() const override { return latent_->global_dim(); }
  std::string name() const override { return latent_->name() + "/variational"; }
  double loglik(const Vec& theta, const Datum& unit) const override;
  double loglik_accumulate(const Vec& theta, const Datum& unit, Vec& grad) const override;
  double prior_logpdf(const Vec& theta) const override { return latent_->prior_logpdf(theta); }
  Vec prior_grad(const Vec& theta) const override { return latent_->prior_grad(theta); }
  std::vector<int> canonical_permutation(const Vec& theta) const override {
    return latent_->canonical_permutation(theta);
  }
  const LatentVarModel& latent() const noexcept { return *latent_; }

 private:
  std::shared_ptr<const LatentVarModel> latent_;
  InnerConfig cfg_;
};

struct LatentFitResult {
  MeanFieldGaussian q;
  /// Local factors refreshed at θ = q.mu, one per unit.
  std::vector<LocalFactor> local;
  FitReport report;
};

/// VB for a latent-variable model: fit_vb on the variational model over the
/// units built from rows.
LatentFitResult fit_vb_latent(std::shared_ptr<const LatentVarModel> model, const Dataset& rows, const FitConfig& cfg,
                              const InnerConfig& inner = {});

}  // namespace vbmis
