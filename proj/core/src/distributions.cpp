#include "vbmis/distributions.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "vbmis/errors.hpp"
#include "vbmis/special.hpp"

namespace vbmis {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool is_count(double x) { return x >= 0.0 && std::floor(x) == x && std::isfinite(x); }

void require(bool ok, const char* what) {
  if (!ok) throw ParameterDomainError(what);
}

std::size_t expected_arity(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::Poisson:
    case DistributionKind::Bernoulli:
      return 1;
    case DistributionKind::NegBinomial:
    case DistributionKind::Gaussian:
      return 2;
    case DistributionKind::StudentT:
      return 3;
    case DistributionKind::Categorical:
      return 0;
  }
  return 0;
}

}  // namespace

std::string_view to_string(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::Poisson:
      return "Poisson";
    case DistributionKind::NegBinomial:
      return "NegBinomial";
    case DistributionKind::Gaussian:
      return "Gaussian";
    case DistributionKind::StudentT:
      return "StudentT";
    case DistributionKind::Bernoulli:
      return "Bernoulli";
    case DistributionKind::Categorical:
      return "Categorical";
  }
  return "?";
}

Distribution::Distribution(DistributionKind kind, std::vector<double> params)
    : kind_(kind), params_(std::move(params)) {
  const std::size_t arity = expected_arity(kind_);
  if (arity != 0 && params_.size() != arity) {
    throw ParameterDomainError(std::string(to_string(kind_)) + ": expected " + std::to_string(arity) +
                               " parameters, got " + std::to_string(params_.size()));
  }
  for (double p : params_) require(std::isfinite(p), "distribution parameters must be finite");
  const auto& p = params_;
  switch (kind_) {
    case DistributionKind::Poisson:
      require(p[0] > 0.0, "Poisson: rate must be > 0");
      break;
    case DistributionKind::NegBinomial:
      require(p[0] > 0.0, "NegBinomial: r must be > 0");
      require(p[1] > 0.0 && p[1] < 1.0, "NegBinomial: q must lie in (0, 1)");
      break;
    case DistributionKind::Gaussian:
      require(p[1] > 0.0, "Gaussian: sd must be > 0");
      break;
    case DistributionKind::StudentT:
      require(p[1] > 0.0, "StudentT: scale must be > 0");
      require(p[2] > 0.0, "StudentT: dof must be > 0");
      break;
    case DistributionKind::Bernoulli:
      require(p[0] >= 0.0 && p[0] <= 1.0, "Bernoulli: p must lie in [0, 1]");
      break;
    case DistributionKind::Categorical: {
      require(!p.empty(), "Categorical: need at least one weight");
      for (double w : p) require(w >= 0.0, "Categorical: weights must be nonnegative");
      const double total = std::accumulate(p.begin(), p.end(), 0.0);
      require(std::abs(total - 1.0) <= 1e-12, "Categorical: weights must sum to 1");
      break;
    }
  }
}

bool Distribution::is_discrete() const noexcept {
  return kind_ != DistributionKind::Gaussian && kind_ != DistributionKind::StudentT;
}

double Distribution::log_density(double x) const {
  const auto& p = params_;
  switch (kind_) {
    case DistributionKind::Poisson:
      return is_count(x) ? poisson_logpmf(x, p[0]) : kNegInf;
    case DistributionKind::NegBinomial:
      return is_count(x) ? neg_binomial_logpmf(x, p[0], p[1]) : kNegInf;
    case DistributionKind::Gaussian:
      return gaussian_logpdf(x, p[0], p[1]);
    case DistributionKind::StudentT:
      return student_t_logpdf(x, p[0], p[1], p[2]);
    case DistributionKind::Bernoulli:
      if (x == 1.0) return std::log(p[0]);
      if (x == 0.0) return std::log1p(-p[0]);
      return kNegInf;
    case DistributionKind::Categorical: {
      if (!is_count(x) || x >= static_cast<double>(p.size())) return kNegInf;
      return std::log(p[static_cast<std::size_t>(x)]);
    }
  }
  return kNegInf;
}

double Distribution::sample(Rng& rng) const {
  const auto& p = params_;
  switch (kind_) {
    case DistributionKind::Poisson:
      return sample_poisson(rng, p[0]);
    case DistributionKind::NegBinomial:
      return sample_neg_binomial(rng, p[0], p[1]);
    case DistributionKind::Gaussian:
      return p[0] + p[1] * rng.normal();
    case DistributionKind::StudentT: {
      const double chi2 = 2.0 * sample_gamma(rng, 0.5 * p[2], 1.0);
      return p[0] + p[1] * rng.normal() / std::sqrt(chi2 / p[2]);
    }
    case DistributionKind::Bernoulli:
      return rng.uniform() < p[0] ? 1.0 : 0.0;
    case DistributionKind::Categorical: {
      const double u = rng.uniform();
      double cum = 0.0;
      std::size_t last_positive = 0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) last_positive = k;
        cum += p[k];
        if (u < cum && p[k] > 0.0) return static_cast<double>(k);
      }
      return static_cast<double>(last_positive);
    }
  }
  return 0.0;
}

Eigen::VectorXd Distribution::score(double x) const {
  const auto& p = params_;
  if (!std::isfinite(log_density(x))) {
    throw UnsupportedOperation("score: point outside the support");
  }
  switch (kind_) {
    case DistributionKind::Poisson: {
      Eigen::VectorXd g(1);
      g << x - p[0];
      return g;
    }
    case DistributionKind::NegBinomial: {
      const double r = p[0], q = p[1];
      Eigen::VectorXd g(2);
      g << r * (digamma(x + r) - digamma(r) + std::log1p(-q)), x * (1.0 - q) - r * q;
      return g;
    }
    case DistributionKind::Gaussian: {
      const double z = (x - p[0]) / p[1];
      Eigen::VectorXd g(2);
      g << z / p[1], z * z - 1.0;
      return g;
    }
    case DistributionKind::StudentT: {
      const double s = p[1], nu = p[2];
      const double z = (x - p[0]) / s;
      const double denom = nu + z * z;
      Eigen::VectorXd g(3);
      const double d_nu = 0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) - 0.5 / nu -
                          0.5 * std::log1p(z * z / nu) + (nu + 1.0) * z * z / (2.0 * nu * denom);
      g << (nu + 1.0) * z / (s * denom), -1.0 + (nu + 1.0) * z * z / denom, nu * d_nu;
      return g;
    }
    case DistributionKind::Bernoulli: {
      Eigen::VectorXd g(1);
      g << x - p[0];
      return g;
    }
    case DistributionKind::Categorical:
      break;
  }
  throw UnsupportedOperation("score: Categorical weights have no unconstrained parameterization here");
}

double poisson_logpmf(double k, double rate) { return k * std::log(rate) - rate - log_factorial(k); }

double poisson_logpmf_lograte(double k, double log_rate) {
  return k * log_rate - std::exp(log_rate) - log_factorial(k);
}

double neg_binomial_logpmf(double k, double r, double q) {
  return log_gamma(k + r) - log_gamma(r) - log_factorial(k) + k * std::log(q) + r * std::log1p(-q);
}

double gaussian_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

double student_t_logpdf(double x, double loc, double scale, double dof) {
  const double z = (x - loc) / scale;
  return log_gamma(0.5 * (dof + 1.0)) - log_gamma(0.5 * dof) - 0.5 * std::log(dof * kPi) - std::log(scale) -
         0.5 * (dof + 1.0) * std::log1p(z * z / dof);
}

double sample_gamma(Rng& rng, double shape, double scale) {
  if (shape < 1.0) {
    // Boost to shape + 1 and rescale by U^{1/shape}.
    const double u = rng.uniform();
    return sample_gamma(rng, shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia & Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

double sample_poisson(Rng& rng, double rate) {
  if (rate <= 30.0) {
    // Sequential inversion.
    double k = 0.0;
    double prob = std::exp(-rate);
    double cum = prob;
    const double u = rng.uniform();
    while (u > cum) {
      k += 1.0;
      prob *= rate / k;
      cum += prob;
      if (prob < 1e-300 && k > rate) break;
    }
    return k;
  }
  // PTRS transformed rejection (Hörmann 1993).
  const double slam = std::sqrt(rate);
  const double loglam = std::log(rate);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform();
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + rate + 0.43);
    if (us >= 0.07 && v <= vr) return k;
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <= -rate + k * loglam - log_factorial(k)) {
      return k;
    }
  }
}

double sample_neg_binomial(Rng& rng, double r, double q) {
  const double rate = sample_gamma(rng, r, q / (1.0 - q));
  return rate > 0.0 ? sample_poisson(rng, rate) : 0.0;
}

}  // namespace vbmis
