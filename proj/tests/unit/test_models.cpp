#include <cmath>
#include <memory>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "doctest.h"
#include "vbmis/errors.hpp"
#include "vbmis/models.hpp"

using namespace vbmis;

namespace {

class FlatPrior final : public ParametricModel {
 public:
  FlatPrior() : ParametricModel(DiagonalGaussianPrior::standard(1)) {}
  int dim() const override { return 1; }
  std::string name() const override { return "flat"; }
  double loglik(const Vec& theta, const Datum& d) const override { return -0.5 * (d.y - theta[0]) * (d.y - theta[0]); }
  double loglik_accumulate(const Vec& theta, const Datum& d, Vec& grad) const override {
    grad[0] += d.y - theta[0];
    return loglik(theta, d);
  }
  double prior_logpdf(const Vec&) const override { return 0.0; }
  Vec prior_grad(const Vec&) const override { return Vec::Zero(1); }
};

Vec fd_grad(const ParametricModel& m, const Vec& theta, const Datum& d) {
  Vec g(theta.size());
  const double h = 1e-5;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    Vec a = theta, b = theta;
    a[j] += h;
    b[j] -= h;
    g[j] = (m.loglik(a, d) - m.loglik(b, d)) / (2 * h);
  }
  return g;
}

void check_grad(const ParametricModel& m, const Vec& theta, const Datum& d) {
  const Vec an = m.loglik_grad(theta, d);
  const Vec fd = fd_grad(m, theta, d);
  for (Eigen::Index j = 0; j < an.size(); ++j) CHECK(std::abs(an[j] - fd[j]) <= 1e-6 * std::max(1.0, std::abs(fd[j])));
}

Datum row(double y, std::vector<double> x = {}, int group = -1) { return Datum{std::move(x), y, group}; }

}  // namespace

TEST_CASE("loglik_sum examples") {
  const PoissonRegression m(1);
  CHECK(loglik_sum(m, Vec::Zero(1), Dataset({row(0.0, {1.0})})) == doctest::Approx(-1.0));
  CHECK(loglik_sum(m, Vec::Zero(1), Dataset()) == 0.0);

  const Dataset a({row(3.0, {1.0})}), b({row(1.0, {1.0})});
  Vec th(1);
  th << 0.4;
  CHECK(loglik_sum(m, th, Dataset::concat(a, b)) ==
        doctest::Approx(loglik_sum(m, th, a) + loglik_sum(m, th, b)).epsilon(1e-14));

  CHECK_THROWS_AS(loglik_sum(m, Vec::Zero(2), a), ShapeError);
}

TEST_CASE("Poisson regression matches Boost pmf") {
  const PoissonRegression m(2);
  Vec th(2);
  th << 0.3, -0.5;
  for (int y = 0; y < 10; ++y) {
    const double z = 0.1 * y - 0.4;
    const boost::math::poisson_distribution<double> po(std::exp(0.3 - 0.5 * z));
    CHECK(m.loglik(th, row(y, {1.0, z})) == doctest::Approx(std::log(boost::math::pdf(po, y))).epsilon(1e-12));
  }
}

TEST_CASE("log_posterior_unnorm") {
  const FlatPrior flat;
  const Dataset data({row(0.3), row(-1.2), row(2.0)});
  Vec th(1);
  th << 0.7;
  CHECK(log_posterior_unnorm(flat, th, data) == loglik_sum(flat, th, data));

  const GaussianLocation g(1.0, DiagonalGaussianPrior::standard(1, 1.0));
  CHECK(log_posterior_unnorm(g, Vec::Zero(1), Dataset()) == doctest::Approx(-0.9189385332046727));

  // Conjugate normal-normal: p(θ | y) ∝ N(θ; Σy/(n+1), 1/(n+1)), so the
  // unnormalized log posterior minus that log density is constant in θ.
  const boost::math::normal_distribution<double> post(1.1 / 4.0, std::sqrt(1.0 / 4.0));
  std::vector<double> diffs;
  for (double t = -2; t <= 2; t += 0.5) {
    Vec v(1);
    v << t;
    diffs.push_back(log_posterior_unnorm(g, v, data) - std::log(boost::math::pdf(post, t)));
  }
  for (double d : diffs) CHECK(d == doctest::Approx(diffs.front()).epsilon(1e-12));
}

TEST_CASE("gradients match central differences") {
  SUBCASE("Poisson regression") {
    const PoissonRegression m(3);
    Vec th(3);
    th << 0.2, -0.4, 0.1;
    check_grad(m, th, row(4.0, {1.0, 0.5, -1.3}));
    Vec g;
    const Dataset data({row(2.0, {1.0, 0.1, 0.2}), row(0.0, {1.0, -0.3, 1.1})});
    loglik_sum_grad(m, th, data, g);
    CHECK(g.isApprox(m.loglik_grad(th, data[0]) + m.loglik_grad(th, data[1])));
    log_posterior_unnorm_grad(m, th, data, g);
    CHECK(g.isApprox(m.loglik_grad(th, data[0]) + m.loglik_grad(th, data[1]) + m.prior_grad(th)));
  }
  SUBCASE("Gaussian location") {
    const GaussianLocation m(1.7, DiagonalGaussianPrior::standard(1));
    Vec th(1);
    th << -0.3;
    check_grad(m, th, row(1.4));
  }
  SUBCASE("mixture marginal") {
    auto mix = std::make_shared<LocationMixture>(3, ComponentFamily::StudentT, 4.0, 1.0,
                                                 DiagonalGaussianPrior::standard(3));
    const MarginalModel m(mix);
    Vec th(3);
    th << -3.5, 0.4, 4.2;
    for (double y : {-4.0, -1.0, 0.3, 2.2, 5.0}) check_grad(m, th, row(y));

    const boost::math::students_t_distribution<double> t4(4.0);
    double direct = 0.0;
    for (int c = 0; c < 3; ++c) direct += boost::math::pdf(t4, 0.3 - th[c]) / 3.0;
    CHECK(m.loglik(th, row(0.3)) == doctest::Approx(std::log(direct)).epsilon(1e-12));
  }
  SUBCASE("Poisson LMM marginal") {
    auto lmm = std::make_shared<PoissonLmm>(DiagonalGaussianPrior::standard(2));
    const MarginalModel m(lmm, 41);
    const Dataset units = lmm->make_units(Dataset({row(2, {}, 0), row(0, {}, 0), row(3, {}, 0), row(1, {}, 1)}));
    REQUIRE(units.n() == 2);
    Vec th(2);
    th << 0.4, std::log(0.6);
    for (const Datum& u : units) check_grad(m, th, u);
  }
}

TEST_CASE("Poisson LMM marginal against brute-force quadrature") {
  auto lmm = std::make_shared<PoissonLmm>(DiagonalGaussianPrior::standard(2));
  const MarginalModel m(lmm, 61);
  const Dataset rows({row(2, {}, 0), row(0, {}, 0), row(5, {}, 0)});
  const Dataset units = lmm->make_units(rows);
  Vec th(2);
  th << 0.5, std::log(0.7);
  // Midpoint rule in u over ±10 sd.
  const double s = 0.7;
  double acc = 0.0;
  const int pts = 200000;
  const double lo = -10 * s, h = 20 * s / pts;
  for (int i = 0; i < pts; ++i) {
    const double u = lo + (i + 0.5) * h;
    double l = -0.5 * u * u / (s * s) - std::log(s) - 0.5 * std::log(2 * M_PI);
    for (const Datum& r : rows) {
      const boost::math::poisson_distribution<double> po(std::exp(0.5 + u));
      l += std::log(boost::math::pdf(po, r.y));
    }
    acc += std::exp(l) * h;
  }
  CHECK(m.loglik(th, units[0]) == doctest::Approx(std::log(acc)).epsilon(1e-8));
}

TEST_CASE("dataset group validation") {
  CHECK_THROWS_AS(Dataset({row(1, {}, 0), row(1, {}, -1)}), ShapeError);
  CHECK_THROWS_AS(Dataset({row(1, {}, 0), row(1, {}, 2)}), ShapeError);
  const Dataset ok({row(1, {}, 1), row(1, {}, 0)});
  CHECK(ok.group_count() == 2);
  CHECK(ok.slice(1, 1).n() == 1);
}

TEST_CASE("mixture canonicalization sorts centers") {
  auto mix = std::make_shared<LocationMixture>(3, ComponentFamily::Gaussian, 0.0, 1.0,
                                               DiagonalGaussianPrior::standard(3));
  const MarginalModel m(mix);
  Vec th(3);
  th << 4.0, -4.0, 0.0;
  const Vec c = m.canonicalize(th);
  CHECK(c[0] == -4.0);
  CHECK(c[1] == 0.0);
  CHECK(c[2] == 4.0);
  CHECK(m.loglik(th, row(1.0)) == doctest::Approx(m.loglik(c, row(1.0))));
}
