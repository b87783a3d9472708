#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vbmis {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// One observation: covariates plus response, or a bare observation in y.
/// Latent-variable models also use Datum for their units (see
/// LatentVarModel::make_units), in which case x carries per-unit summaries.
struct Datum {
  std::vector<double> x;
  double y = 0.0;
  int group = -1;
};

class Dataset {
 public:
  Dataset() = default;
  /// Group ids must be all -1 or all in 0..G-1 with every id present.
  explicit Dataset(std::vector<Datum> rows);

  std::size_t n() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const Datum& operator[](std::size_t i) const { return rows_[i]; }
  const std::vector<Datum>& rows() const noexcept { return rows_; }
  auto begin() const noexcept { return rows_.begin(); }
  auto end() const noexcept { return rows_.end(); }

  bool has_groups() const noexcept { return group_count_ > 0; }
  int group_count() const noexcept { return group_count_; }

  Dataset slice(std::size_t first, std::size_t count) const;
  static Dataset concat(const Dataset& a, const Dataset& b);

 private:
  std::vector<Datum> rows_;
  int group_count_ = 0;
};

/// Independent N(mean_j, sd_j^2) prior on each unconstrained coordinate.
struct DiagonalGaussianPrior {
  Vec mean;
  Vec sd;

  static DiagonalGaussianPrior standard(int dim, double sd = 10.0) {
    return {Vec::Zero(dim), Vec::Constant(dim, sd)};
  }
  double logpdf(const Vec& theta) const;
  Vec grad(const Vec& theta) const;
};

/// p(θ) Π p(x_i | θ), with θ on an unconstrained scale. Implementations are
/// immutable after construction and safe to evaluate concurrently.
class ParametricModel {
 public:
  explicit ParametricModel(DiagonalGaussianPrior prior) : prior_(std::move(prior)) {}
  virtual ~ParametricModel() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;

  virtual double loglik(const Vec& theta, const Datum& d) const = 0;
  /// Returns log p(d | θ) and adds ∇_θ log p(d | θ) into grad.
  virtual double loglik_accumulate(const Vec& theta, const Datum& d, Vec& grad) const = 0;

  virtual double prior_logpdf(const Vec& theta) const { return prior_.logpdf(theta); }
  virtual Vec prior_grad(const Vec& theta) const { return prior_.grad(theta); }
  virtual Vec prior_mean() const { return prior_.mean; }
  virtual Vec prior_sd() const { return prior_.sd; }

  /// Coordinate order that maps θ onto a canonical labelling; identity unless
  /// the likelihood is invariant to relabelling (mixtures).
  virtual std::vector<int> canonical_permutation(const Vec& theta) const;

  Vec loglik_grad(const Vec& theta, const Datum& d) const;
  Vec canonicalize(const Vec& theta) const;

 protected:
  DiagonalGaussianPrior prior_;
};

/// Σ_i log p(x_i | θ). ShapeError on dimension mismatch.
double loglik_sum(const ParametricModel& model, const Vec& theta, const Dataset& data);
/// Σ_i log p(x_i | θ) with the gradient written into grad (resized).
double loglik_sum_grad(const ParametricModel& model, const Vec& theta, const Dataset& data, Vec& grad);
double log_posterior_unnorm(const ParametricModel& model, const Vec& theta, const Dataset& data);
double log_posterior_unnorm_grad(const ParametricModel& model, const Vec& theta, const Dataset& data, Vec& grad);

enum class LocalKind { ContinuousScalar, CategoricalK };

/// p(θ) Π p(z_i | θ) p(x_i | z_i, θ), one scalar or categorical local latent
/// per unit. Categorical latents are indexed 0..K-1.
class LatentVarModel {
 public:
  explicit LatentVarModel(DiagonalGaussianPrior prior) : prior_(std::move(prior)) {}
  virtual ~LatentVarModel() = default;

  virtual int global_dim() const = 0;
  virtual std::string name() const = 0;
  virtual LocalKind local_kind() const = 0;
  virtual int num_categories() const { return 0; }

  /// log p(x_unit, z | θ).
  virtual double joint(const Vec& theta, double z, const Datum& unit) const = 0;
  /// Adds ∇_θ log p(x_unit, z | θ) into grad.
  virtual void joint_grad(const Vec& theta, double z, const Datum& unit, Vec& grad) const = 0;
  /// Starting point for the continuous local search.
  virtual double local_start(const Vec& /*theta*/, const Datum& /*unit*/) const { return 0.0; }

  /// Groups raw rows into units, one local latent per unit. Default: one row
  /// per unit.
  virtual Dataset make_units(const Dataset& rows) const { return rows; }
  /// Unit representing a single fresh observation (for predictive densities).
  virtual Datum unit_for_new(const Datum& row) const { return row; }

  virtual double prior_logpdf(const Vec& theta) const { return prior_.logpdf(theta); }
  virtual Vec prior_grad(const Vec& theta) const { return prior_.grad(theta); }
  const DiagonalGaussianPrior& prior() const noexcept { return prior_; }
  virtual std::vector<int> canonical_permutation(const Vec& theta) const;

 protected:
  DiagonalGaussianPrior prior_;
};

/// Exact per-unit marginal p(x | θ) = ∫ p(x, z | θ) dz of a latent model:
/// log-sum-exp over categories, adaptive Gauss–Hermite for scalar latents.
class MarginalModel final : public ParametricModel {
 public:
  explicit MarginalModel(std::shared_ptr<const LatentVarModel> latent, int quadrature_nodes = 21);

  int dim() const override { return latent_->global_dim(); }
  std::string name() const override { return latent_->name() + "/marginal"; }
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
  int nodes_;
};

// ---------------------------------------------------------------------------
// Concrete models.

/// y | x ~ Poisson(exp(x'β)). Datum.x holds the covariate vector (include a
/// leading 1 for an intercept).
class PoissonRegression final : public ParametricModel {
 public:
  explicit PoissonRegression(int dim, DiagonalGaussianPrior prior);
  explicit PoissonRegression(int dim) : PoissonRegression(dim, DiagonalGaussianPrior::standard(dim)) {}

  int dim() const override { return dim_; }
  std::string name() const override { return "poisson_regression"; }
  double loglik(const Vec& theta, const Datum& d) const override;
  double loglik_accumulate(const Vec& theta, const Datum& d, Vec& grad) const override;

 private:
  int dim_;
};

/// y ~ N(μ, sd^2) with known sd; θ = μ.
class GaussianLocation final : public ParametricModel {
 public:
  GaussianLocation(double sd, DiagonalGaussianPrior prior);

  int dim() const override { return 1; }
  std::string name() const override { return "gaussian_location"; }
  double loglik(const Vec& theta, const Datum& d) const override;
  double loglik_accumulate(const Vec& theta, const Datum& d, Vec& grad) const override;

  double sd() const noexcept { return sd_; }

 private:
  double sd_;
};

enum class ComponentFamily { Gaussian, StudentT };

/// Equal-weight K-component location mixture with fixed unit scale:
/// p(x, c | θ) = (1/K) f(x; θ_c). θ holds the K centers; latent c is the
/// component index.
class LocationMixture final : public LatentVarModel {
 public:
  LocationMixture(int components, ComponentFamily family, double dof, double scale, DiagonalGaussianPrior prior);

  int global_dim() const override { return k_; }
  std::string name() const override;
  LocalKind local_kind() const override { return LocalKind::CategoricalK; }
  int num_categories() const override { return k_; }
  double joint(const Vec& theta, double z, const Datum& unit) const override;
  void joint_grad(const Vec& theta, double z, const Datum& unit, Vec& grad) const override;
  /// Sorts the centers.
  std::vector<int> canonical_permutation(const Vec& theta) const override;

  ComponentFamily family() const noexcept { return family_; }
  double dof() const noexcept { return dof_; }
  double scale() const noexcept { return scale_; }
  double component_logpdf(double x, double center) const;
  /// d/dcenter of component_logpdf.
  double component_dlogpdf(double x, double center) const;

 private:
  int k_;
  ComponentFamily family_;
  double dof_;
  double scale_;
  double log_norm_ = 0.0;  // component normalizing constant
};

/// Random-intercept Poisson LMM, one unit per group:
///   u_g ~ N(0, σ_u^2),  y_gj | u_g ~ Poisson(exp(β + u_g)).
/// θ = (β, log σ_u), or θ = (β) when log σ_u is held fixed. Units carry
/// x = {Σ y, count, Σ log y!}.
class PoissonLmm final : public LatentVarModel {
 public:
  PoissonLmm(DiagonalGaussianPrior prior, std::optional<double> fixed_log_sigma_u = std::nullopt);

  int global_dim() const override { return fixed_log_sigma_u_ ? 1 : 2; }
  std::string name() const override { return "poisson_lmm"; }
  LocalKind local_kind() const override { return LocalKind::ContinuousScalar; }
  double joint(const Vec& theta, double z, const Datum& unit) const override;
  void joint_grad(const Vec& theta, double z, const Datum& unit, Vec& grad) const override;
  double local_start(const Vec& theta, const Datum& unit) const override;
  Dataset make_units(const Dataset& rows) const override;
  Datum unit_for_new(const Datum& row) const override;

 private:
  double log_sigma_u(const Vec& theta) const { return fixed_log_sigma_u_ ? *fixed_log_sigma_u_ : theta[1]; }
  std::optional<double> fixed_log_sigma_u_;
};

/// Conjugate counterpart of PoissonLmm: y_gj | u_g ~ N(β + u_g, 1),
/// u_g ~ N(0, σ_u^2). Units carry x = {Σ y, count, Σ y^2}.
class GaussianLmm final : public LatentVarModel {
 public:
  explicit GaussianLmm(DiagonalGaussianPrior prior);

  int global_dim() const override { return 2; }
  std::string name() const override { return "gaussian_lmm"; }
  LocalKind local_kind() const override { return LocalKind::ContinuousScalar; }
  double joint(const Vec& theta, double z, const Datum& unit) const override;
  void joint_grad(const Vec& theta, double z, const Datum& unit, Vec& grad) const override;
  Dataset make_units(const Dataset& rows) const override;
  Datum unit_for_new(const Datum& row) const override;
};

}  // namespace vbmis
