#include "vbmis/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "vbmis/distributions.hpp"
#include "vbmis/errors.hpp"
#include "vbmis/quadrature.hpp"
#include "vbmis/special.hpp"

namespace vbmis {

namespace {

std::vector<int> identity_permutation(Eigen::Index d) {
  std::vector<int> p(static_cast<std::size_t>(d));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

void check_dim(int expected, const Vec& theta, const char* where) {
  if (theta.size() != expected) {
    throw ShapeError(std::string(where) + ": theta has dimension " + std::to_string(theta.size()) +
                     ", model expects " + std::to_string(expected));
  }
}

}  // namespace

Dataset::Dataset(std::vector<Datum> rows) : rows_(std::move(rows)) {
  if (rows_.empty()) return;
  const bool grouped = rows_.front().group >= 0;
  int max_id = -1;
  for (const Datum& d : rows_) {
    if ((d.group >= 0) != grouped) throw ShapeError("Dataset: either every row or no row carries a group id");
    max_id = std::max(max_id, d.group);
  }
  if (!grouped) return;
  std::vector<bool> seen(static_cast<std::size_t>(max_id) + 1, false);
  for (const Datum& d : rows_) seen[static_cast<std::size_t>(d.group)] = true;
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ShapeError("Dataset: group ids must be contiguous from 0");
  }
  group_count_ = max_id + 1;
}

Dataset Dataset::slice(std::size_t first, std::size_t count) const {
  first = std::min(first, rows_.size());
  count = std::min(count, rows_.size() - first);
  return Dataset(std::vector<Datum>(rows_.begin() + static_cast<std::ptrdiff_t>(first),
                                    rows_.begin() + static_cast<std::ptrdiff_t>(first + count)));
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  std::vector<Datum> rows = a.rows_;
  rows.insert(rows.end(), b.rows_.begin(), b.rows_.end());
  return Dataset(std::move(rows));
}

double DiagonalGaussianPrior::logpdf(const Vec& theta) const {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < theta.size(); ++j) lp += gaussian_logpdf(theta[j], mean[j], sd[j]);
  return lp;
}

Vec DiagonalGaussianPrior::grad(const Vec& theta) const {
  return -((theta - mean).array() / sd.array().square()).matrix();
}

std::vector<int> ParametricModel::canonical_permutation(const Vec& theta) const {
  return identity_permutation(theta.size());
}

std::vector<int> LatentVarModel::canonical_permutation(const Vec& theta) const {
  return identity_permutation(theta.size());
}

Vec ParametricModel::loglik_grad(const Vec& theta, const Datum& d) const {
  Vec g = Vec::Zero(theta.size());
  loglik_accumulate(theta, d, g);
  return g;
}

Vec ParametricModel::canonicalize(const Vec& theta) const {
  const std::vector<int> perm = canonical_permutation(theta);
  Vec out(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) out[j] = theta[perm[static_cast<std::size_t>(j)]];
  return out;
}

double loglik_sum(const ParametricModel& model, const Vec& theta, const Dataset& data) {
  check_dim(model.dim(), theta, "loglik_sum");
  double total = 0.0;
  for (const Datum& d : data) total += model.loglik(theta, d);
  return total;
}

double loglik_sum_grad(const ParametricModel& model, const Vec& theta, const Dataset& data, Vec& grad) {
  check_dim(model.dim(), theta, "loglik_sum_grad");
  grad = Vec::Zero(theta.size());
  double total = 0.0;
  for (const Datum& d : data) total += model.loglik_accumulate(theta, d, grad);
  return total;
}

double log_posterior_unnorm(const ParametricModel& model, const Vec& theta, const Dataset& data) {
  return model.prior_logpdf(theta) + loglik_sum(model, theta, data);
}

double log_posterior_unnorm_grad(const ParametricModel& model, const Vec& theta, const Dataset& data, Vec& grad) {
  const double ll = loglik_sum_grad(model, theta, data, grad);
  grad += model.prior_grad(theta);
  return ll + model.prior_logpdf(theta);
}

// --- MarginalModel -----------------------------------------------------------

MarginalModel::MarginalModel(std::shared_ptr<const LatentVarModel> latent, int quadrature_nodes)
    : ParametricModel(latent->prior()), latent_(std::move(latent)), nodes_(quadrature_nodes) {}

double MarginalModel::loglik(const Vec& theta, const Datum& unit) const {
  if (latent_->local_kind() == LocalKind::CategoricalK) {
    // Streaming log-sum-exp; this is the innermost loop of the samplers.
    double m = -std::numeric_limits<double>::infinity(), s = 0.0;
    for (int c = 0; c < latent_->num_categories(); ++c) {
      const double t = latent_->joint(theta, c, unit);
      if (t > m) {
        s = s * std::exp(m - t) + 1.0;
        m = t;
      } else {
        s += std::exp(t - m);
      }
    }
    return std::isfinite(m) ? m + std::log(s) : m;
  }
  return log_integral_adaptive([&](double z) { return latent_->joint(theta, z, unit); },
                               latent_->local_start(theta, unit), nodes_);
}

double MarginalModel::loglik_accumulate(const Vec& theta, const Datum& unit, Vec& grad) const {
  std::vector<double> zs;
  std::vector<double> terms;
  if (latent_->local_kind() == LocalKind::CategoricalK) {
    const int k = latent_->num_categories();
    for (int c = 0; c < k; ++c) {
      zs.push_back(c);
      terms.push_back(latent_->joint(theta, c, unit));
    }
  } else {
    auto log_f = [&](double z) { return latent_->joint(theta, z, unit); };
    const LaplacePoint lp = laplace_point(log_f, latent_->local_start(theta, unit));
    const GaussHermite& rule = gauss_hermite(nodes_);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double x = rule.nodes[i];
      const double z = lp.mode + lp.sd * x;
      zs.push_back(z);
      terms.push_back(std::log(rule.weights[i]) + log_f(z) + 0.5 * x * x + kLogSqrt2Pi + std::log(lp.sd));
    }
  }
  const double total = log_sum_exp(terms);
  // ∇ log ∫ p = E_{p(z | x, θ)}[∇ log p(x, z | θ)], with the posterior over z
  // represented by the normalized quadrature terms.
  Vec gi(theta.size());
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const double w = std::exp(terms[i] - total);
    if (w > 0.0) {
      gi.setZero();
      latent_->joint_grad(theta, zs[i], unit, gi);
      grad += w * gi;
    }
  }
  return total;
}

// --- PoissonRegression -------------------------------------------------------

PoissonRegression::PoissonRegression(int dim, DiagonalGaussianPrior prior)
    : ParametricModel(std::move(prior)), dim_(dim) {
  if (dim_ < 1) throw ShapeError("PoissonRegression: dim must be positive");
}

double PoissonRegression::loglik(const Vec& theta, const Datum& d) const {
  double eta = 0.0;
  for (int j = 0; j < dim_; ++j) eta += d.x[static_cast<std::size_t>(j)] * theta[j];
  return poisson_logpmf_lograte(d.y, eta);
}

double PoissonRegression::loglik_accumulate(const Vec& theta, const Datum& d, Vec& grad) const {
  double eta = 0.0;
  for (int j = 0; j < dim_; ++j) eta += d.x[static_cast<std::size_t>(j)] * theta[j];
  const double rate = std::exp(eta);
  const double resid = d.y - rate;
  for (int j = 0; j < dim_; ++j) grad[j] += resid * d.x[static_cast<std::size_t>(j)];
  return d.y * eta - rate - log_factorial(d.y);
}

// --- GaussianLocation --------------------------------------------------------

GaussianLocation::GaussianLocation(double sd, DiagonalGaussianPrior prior)
    : ParametricModel(std::move(prior)), sd_(sd) {
  if (!(sd_ > 0.0)) throw ParameterDomainError("GaussianLocation: sd must be > 0");
}

double GaussianLocation::loglik(const Vec& theta, const Datum& d) const { return gaussian_logpdf(d.y, theta[0], sd_); }

double GaussianLocation::loglik_accumulate(const Vec& theta, const Datum& d, Vec& grad) const {
  grad[0] += (d.y - theta[0]) / (sd_ * sd_);
  return gaussian_logpdf(d.y, theta[0], sd_);
}

// --- LocationMixture ---------------------------------------------------------

LocationMixture::LocationMixture(int components, ComponentFamily family, double dof, double scale,
                                 DiagonalGaussianPrior prior)
    : LatentVarModel(std::move(prior)), k_(components), family_(family), dof_(dof), scale_(scale) {
  if (k_ < 1) throw ShapeError("LocationMixture: need at least one component");
  if (!(scale_ > 0.0)) throw ParameterDomainError("LocationMixture: scale must be > 0");
  if (family_ == ComponentFamily::StudentT && !(dof_ > 0.0)) {
    throw ParameterDomainError("LocationMixture: dof must be > 0");
  }
  log_norm_ = family_ == ComponentFamily::StudentT
                  ? log_gamma(0.5 * (dof_ + 1.0)) - log_gamma(0.5 * dof_) - 0.5 * std::log(dof_ * kPi) - std::log(scale_)
                  : -kLogSqrt2Pi - std::log(scale_);
}

std::string LocationMixture::name() const {
  return family_ == ComponentFamily::StudentT ? "t_mixture" : "gaussian_mixture";
}

double LocationMixture::component_logpdf(double x, double center) const {
  const double z = (x - center) / scale_;
  return family_ == ComponentFamily::StudentT ? log_norm_ - 0.5 * (dof_ + 1.0) * std::log1p(z * z / dof_)
                                              : log_norm_ - 0.5 * z * z;
}

double LocationMixture::component_dlogpdf(double x, double center) const {
  const double z = (x - center) / scale_;
  if (family_ == ComponentFamily::Gaussian) return z / scale_;
  return (dof_ + 1.0) * z / (scale_ * (dof_ + z * z));
}

double LocationMixture::joint(const Vec& theta, double z, const Datum& unit) const {
  const auto c = static_cast<Eigen::Index>(z);
  return component_logpdf(unit.y, theta[c]) - std::log(static_cast<double>(k_));
}

void LocationMixture::joint_grad(const Vec& theta, double z, const Datum& unit, Vec& grad) const {
  const auto c = static_cast<Eigen::Index>(z);
  grad[c] += component_dlogpdf(unit.y, theta[c]);
}

std::vector<int> LocationMixture::canonical_permutation(const Vec& theta) const {
  std::vector<int> p = identity_permutation(theta.size());
  std::stable_sort(p.begin(), p.end(), [&](int a, int b) { return theta[a] < theta[b]; });
  return p;
}

// --- PoissonLmm --------------------------------------------------------------

PoissonLmm::PoissonLmm(DiagonalGaussianPrior prior, std::optional<double> fixed_log_sigma_u)
    : LatentVarModel(std::move(prior)), fixed_log_sigma_u_(fixed_log_sigma_u) {}

double PoissonLmm::joint(const Vec& theta, double z, const Datum& unit) const {
  const double sum_y = unit.x[0], count = unit.x[1], sum_lfact = unit.x[2];
  const double eta = theta[0] + z;
  return sum_y * eta - count * std::exp(eta) - sum_lfact + gaussian_logpdf(z, 0.0, std::exp(log_sigma_u(theta)));
}

void PoissonLmm::joint_grad(const Vec& theta, double z, const Datum& unit, Vec& grad) const {
  const double sum_y = unit.x[0], count = unit.x[1];
  grad[0] += sum_y - count * std::exp(theta[0] + z);
  if (!fixed_log_sigma_u_) grad[1] += -1.0 + z * z * std::exp(-2.0 * theta[1]);
}

double PoissonLmm::local_start(const Vec& theta, const Datum& unit) const {
  const double sum_y = unit.x[0], count = unit.x[1];
  if (count <= 0.0) return 0.0;
  return std::log((sum_y + 0.5) / count) - theta[0];
}

Dataset PoissonLmm::make_units(const Dataset& rows) const {
  std::map<int, Datum> units;
  for (const Datum& r : rows) {
    if (r.group < 0) throw ShapeError("PoissonLmm: rows need group ids");
    Datum& u = units[r.group];
    if (u.x.empty()) {
      u.x = {0.0, 0.0, 0.0};
      u.group = r.group;
    }
    u.x[0] += r.y;
    u.x[1] += 1.0;
    u.x[2] += log_factorial(r.y);
  }
  std::vector<Datum> out;
  out.reserve(units.size());
  for (auto& [g, u] : units) out.push_back(std::move(u));
  return Dataset(std::move(out));
}

Datum PoissonLmm::unit_for_new(const Datum& row) const {
  Datum u;
  u.x = {row.y, 1.0, log_factorial(row.y)};
  u.y = row.y;
  return u;
}

// --- GaussianLmm -------------------------------------------------------------

GaussianLmm::GaussianLmm(DiagonalGaussianPrior prior) : LatentVarModel(std::move(prior)) {}

double GaussianLmm::joint(const Vec& theta, double z, const Datum& unit) const {
  const double sum_y = unit.x[0], count = unit.x[1], sum_y2 = unit.x[2];
  const double m = theta[0] + z;
  const double sse = sum_y2 - 2.0 * m * sum_y + count * m * m;
  return -count * kLogSqrt2Pi - 0.5 * sse + gaussian_logpdf(z, 0.0, std::exp(theta[1]));
}

void GaussianLmm::joint_grad(const Vec& theta, double z, const Datum& unit, Vec& grad) const {
  const double sum_y = unit.x[0], count = unit.x[1];
  grad[0] += sum_y - count * (theta[0] + z);
  grad[1] += -1.0 + z * z * std::exp(-2.0 * theta[1]);
}

Dataset GaussianLmm::make_units(const Dataset& rows) const {
  std::map<int, Datum> units;
  for (const Datum& r : rows) {
    if (r.group < 0) throw ShapeError("GaussianLmm: rows need group ids");
    Datum& u = units[r.group];
    if (u.x.empty()) {
      u.x = {0.0, 0.0, 0.0};
      u.group = r.group;
    }
    u.x[0] += r.y;
    u.x[1] += 1.0;
    u.x[2] += r.y * r.y;
  }
  std::vector<Datum> out;
  for (auto& [g, u] : units) out.push_back(std::move(u));
  return Dataset(std::move(out));
}

Datum GaussianLmm::unit_for_new(const Datum& row) const {
  Datum u;
  u.x = {row.y, 1.0, row.y * row.y};
  u.y = row.y;
  return u;
}

}  // namespace vbmis
