#pragma once

#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vbmis/rng.hpp"

namespace vbmis {

enum class DistributionKind { Poisson, NegBinomial, Gaussian, StudentT, Bernoulli, Categorical };

std::string_view to_string(DistributionKind kind);

/// An elementary density with natural-scale parameters:
///
///   Poisson      {rate}
///   NegBinomial  {r, q}         P(k) = C(k+r-1, k) q^k (1-q)^r, mean r q / (1-q)
///   Gaussian     {mean, sd}
///   StudentT     {loc, scale, dof}
///   Bernoulli    {p}
///   Categorical  {w_0, ..., w_{K-1}}, outcomes are indices 0..K-1
///
/// score() differentiates with respect to the unconstrained parameterization
/// used by every model in the library: log rate; (log r, logit q);
/// (mean, log sd); (loc, log scale, log dof); logit p. Categorical has no
/// score.
class Distribution {
 public:
  /// Throws ParameterDomainError if params are invalid for kind.
  Distribution(DistributionKind kind, std::vector<double> params);

  static Distribution poisson(double rate) { return {DistributionKind::Poisson, {rate}}; }
  static Distribution neg_binomial(double r, double q) { return {DistributionKind::NegBinomial, {r, q}}; }
  static Distribution gaussian(double mean, double sd) { return {DistributionKind::Gaussian, {mean, sd}}; }
  static Distribution student_t(double loc, double scale, double dof) {
    return {DistributionKind::StudentT, {loc, scale, dof}};
  }
  static Distribution bernoulli(double p) { return {DistributionKind::Bernoulli, {p}}; }
  static Distribution categorical(std::vector<double> w) { return {DistributionKind::Categorical, std::move(w)}; }

  DistributionKind kind() const noexcept { return kind_; }
  const std::vector<double>& params() const noexcept { return params_; }
  bool is_discrete() const noexcept;

  /// -inf outside the support.
  double log_density(double x) const;
  double sample(Rng& rng) const;
  Eigen::VectorXd score(double x) const;

 private:
  DistributionKind kind_;
  std::vector<double> params_;
};

// Scalar kernels shared by the models; they skip parameter validation.
double poisson_logpmf(double k, double rate);
double poisson_logpmf_lograte(double k, double log_rate);
double neg_binomial_logpmf(double k, double r, double q);
double gaussian_logpdf(double x, double mean, double sd);
double student_t_logpdf(double x, double loc, double scale, double dof);

double sample_gamma(Rng& rng, double shape, double scale);
double sample_poisson(Rng& rng, double rate);
double sample_neg_binomial(Rng& rng, double r, double q);

}  // namespace vbmis
