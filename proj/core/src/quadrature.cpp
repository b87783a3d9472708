#include "vbmis/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include <Eigen/Dense>

#include "vbmis/errors.hpp"
#include "vbmis/special.hpp"

namespace vbmis {

namespace {

GaussHermite build_rule(int n) {
  // Jacobi matrix of the physicists' Hermite polynomials, weight exp(-x^2).
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(i / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  GaussHermite rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v0 = eig.eigenvectors()(0, i);
    // mu_0 = sqrt(pi); normalizing by it turns the rule into an N(0, 1/2) expectation.
    rule.nodes[i] = std::sqrt(2.0) * eig.eigenvalues()(i);
    rule.weights[i] = v0 * v0;
    total += rule.weights[i];
  }
  for (double& w : rule.weights) w /= total;
  return rule;
}

}  // namespace

const GaussHermite& gauss_hermite(int n) {
  if (n < 1) throw ParameterDomainError("gauss_hermite: need at least one node");
  static std::mutex mu;
  static std::map<int, GaussHermite> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build_rule(n)).first;
  return it->second;
}

LaplacePoint laplace_point(const std::function<double(double)>& log_f, double start) {
  double z = start;
  double fz = log_f(z);
  if (!std::isfinite(fz)) throw ParameterDomainError("laplace_point: log integrand not finite at start");
  double curvature = 1.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double h = 1e-4 * (1.0 + std::abs(z));
    const double fp = log_f(z + h);
    const double fm = log_f(z - h);
    const double d1 = (fp - fm) / (2.0 * h);
    const double d2 = (fp - 2.0 * fz + fm) / (h * h);
    double step;
    if (d2 < 0.0) {
      step = -d1 / d2;
      curvature = -d2;
    } else {
      step = d1 > 0 ? 1.0 : -1.0;
    }
    // Backtrack until the integrand does not decrease.
    double trial = z + step;
    double ft = log_f(trial);
    int halvings = 0;
    while ((!std::isfinite(ft) || ft < fz) && halvings < 60) {
      step *= 0.5;
      trial = z + step;
      ft = log_f(trial);
      ++halvings;
    }
    if (halvings == 60) break;
    const bool done = std::abs(step) < 1e-10 * (1.0 + std::abs(z));
    z = trial;
    fz = ft;
    if (done) break;
  }
  const double h = 1e-4 * (1.0 + std::abs(z));
  const double d2 = (log_f(z + h) - 2.0 * fz + log_f(z - h)) / (h * h);
  if (d2 < 0.0) curvature = -d2;
  return {z, 1.0 / std::sqrt(curvature)};
}

double log_integral_adaptive(const std::function<double(double)>& log_f, double start, int n_nodes) {
  const LaplacePoint lp = laplace_point(log_f, start);
  const GaussHermite& rule = gauss_hermite(n_nodes);
  // ∫ exp(g(z)) dz = E_{Z~N(0,1)}[ exp(g(m + s Z)) / φ(Z) ] · s
  std::vector<double> terms(rule.nodes.size());
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = rule.nodes[i];
    terms[i] = std::log(rule.weights[i]) + log_f(lp.mode + lp.sd * x) + 0.5 * x * x + kLogSqrt2Pi;
  }
  return log_sum_exp(terms) + std::log(lp.sd);
}

}  // namespace vbmis
