#include <cmath>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>

#include "doctest.h"
#include "vbmis/diagnostics.hpp"
#include "vbmis/errors.hpp"

using namespace vbmis;

namespace {

Mat m2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

Mat normal_draws(int n, int d, double shift, std::uint64_t seed) {
  Rng rng(seed);
  Mat out(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) out(i, j) = shift + rng.normal();
  }
  return out;
}

// Equal-variance Gaussian TV: 2Φ(|Δμ|/2σ) - 1.
double tv_shift(double delta) {
  const boost::math::normal_distribution<double> nd;
  return 2.0 * boost::math::cdf(nd, std::abs(delta) / 2.0) - 1.0;
}

}  // namespace

TEST_CASE("limiting normals") {
  const Mat V = m2(2, 1, 1, 2);
  const Vec ts = Vec::Zero(2);
  const LimitingNormal mf = mean_field_limit(V, ts, 1);
  CHECK(mf.covariance.isApprox(m2(0.5, 0, 0, 0.5), 1e-14));
  CHECK(mf.flavor == LimitFlavor::MeanField);
  const LimitingNormal ex = exact_limit(V, ts, 4);
  CHECK(ex.covariance.isApprox(m2(2.0 / 3, -1.0 / 3, -1.0 / 3, 2.0 / 3) / 4.0, 1e-14));

  const Mat D = m2(3, 0, 0, 0.5);
  CHECK(mean_field_limit(D, ts, 10).covariance.isApprox(exact_limit(D, ts, 10).covariance, 1e-15));

  Vec delta(2);
  delta << 1.0, -2.0;
  CHECK(exact_limit(V, ts, 100, delta).center.isApprox(delta / 10.0, 1e-15));
  CHECK_THROWS_AS(mean_field_limit(m2(1, 2, 2, 1), ts, 1), ParameterDomainError);
  CHECK_THROWS_AS(mean_field_limit(m2(1, 0.5, 0.4, 1), ts, 1), ParameterDomainError);
}

TEST_CASE("tv_grid") {
  const std::vector<GridAxis> axes = {{-8.0, 9.0, 10000}};
  const GridDensity a = gaussian_on_grid(Vec::Zero(1), Mat::Identity(1, 1), axes);
  const GridDensity b = gaussian_on_grid(Vec::Ones(1), Mat::Identity(1, 1), axes);
  CHECK(tv_grid(a, a) == 0.0);
  CHECK(tv_grid(a, b) == doctest::Approx(0.38292).epsilon(1e-4 / 0.38292));
  CHECK(std::abs(tv_grid(a, b) - tv_shift(1.0)) <= 1e-6);

  // Disjoint boxes.
  GridDensity p = make_grid(axes), q = make_grid(axes);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p.point(i)[0];
    p.log_values[i] = (x < 0) ? 0.0 : -INFINITY;
    q.log_values[i] = (x > 1) ? 0.0 : -INFINITY;
  }
  p.normalize();
  q.normalize();
  CHECK(tv_grid(p, q) == doctest::Approx(1.0).epsilon(1e-12));

  const GridDensity other = gaussian_on_grid(Vec::Zero(1), Mat::Identity(1, 1), {{-8.0, 9.0, 999}});
  CHECK_THROWS_AS(tv_grid(a, other), GridMismatch);
}

TEST_CASE("tv_gaussians in two dimensions") {
  // Shifting along one axis of a product normal reduces to the 1-D value.
  Vec a = Vec::Zero(2), b(2);
  b << 1.0, 0.0;
  CHECK(std::abs(tv_gaussians(a, Mat::Identity(2, 2), b, Mat::Identity(2, 2), 401) - tv_shift(1.0)) <= 1e-4);
  // Correlated pair against its mean-field version.
  const Mat V = m2(2, 1, 1, 2);
  const LimitingNormal ex = exact_limit(V, a, 1), mf = mean_field_limit(V, a, 1);
  const double tv = tv_gaussians(ex.center, ex.covariance, mf.center, mf.covariance, 401);
  CHECK(tv > 0.05);
  CHECK(tv < 1.0);
}

TEST_CASE("exact and mean-field limits differ iff V has off-diagonal mass") {
  const Vec c = Vec::Zero(2);
  for (double off : {0.0, 0.3, 0.9}) {
    const Mat V = m2(2, off, off, 2);
    const LimitingNormal ex = exact_limit(V, c, 50), mf = mean_field_limit(V, c, 50);
    const double tv = tv_gaussians(ex.center, ex.covariance, mf.center, mf.covariance, 401);
    if (off == 0.0) {
      CHECK(tv <= 1e-12);
    } else {
      CHECK(tv > 1e-3);
    }
  }
}

TEST_CASE("tv_samples") {
  const Mat s = normal_draws(20000, 1, 0.0, 1);
  CHECK(tv_samples(s.topRows(10000), s.bottomRows(10000)).value <= 0.05);
  CHECK(tv_samples(s, s).value == 0.0);
  const Mat a = normal_draws(100000, 1, 0.0, 2), b = normal_draws(100000, 1, 1.0, 3);
  const double tv = tv_samples(a, b).value;
  CHECK(std::abs(tv - 0.383) <= 0.02);
  CHECK(std::abs(tv - tv_shift(1.0)) <= 0.03);
  CHECK_THROWS_AS(tv_samples(normal_draws(100, 1, 0, 4), a), InsufficientDraws);

  // d > 2 averages the per-coordinate marginals.
  const SampleTv three = tv_samples(normal_draws(20000, 3, 0.0, 5), normal_draws(20000, 3, 0.0, 6));
  REQUIRE(three.per_coordinate.size() == 3);
  CHECK(three.value == doctest::Approx((three.per_coordinate[0] + three.per_coordinate[1] + three.per_coordinate[2]) / 3));
}

TEST_CASE("kl_mvn and entropy_gap") {
  const Mat I = Mat::Identity(1, 1);
  CHECK(kl_mvn(Vec::Zero(1), I, Vec::Zero(1), I) == 0.0);
  CHECK(kl_mvn(Vec::Zero(1), I, Vec::Ones(1), I) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(kl_mvn(Vec::Zero(1), 2.0 * I, Vec::Zero(1), I) == doctest::Approx(0.5 * (1.0 - std::log(2.0))).epsilon(1e-14));
  CHECK(std::abs(kl_mvn(Vec::Zero(1), 2.0 * I, Vec::Zero(1), I) - 0.153426) <= 1e-6);

  CHECK(entropy_gap(m2(3, 0, 0, 7)) == doctest::Approx(0.0));
  CHECK(std::abs(entropy_gap(m2(2, 1, 1, 2)) - 0.143841036225890) <= 1e-9);

  Rng rng(7);
  double worst = INFINITY;
  for (int t = 0; t < 100; ++t) {
    Mat A(5, 5);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
    const Mat S = A * A.transpose() + 1e-3 * Mat::Identity(5, 5);
    worst = std::min(worst, entropy_gap(S));
  }
  CHECK(worst >= -1e-12);
}

TEST_CASE("grid and sample TV agree on Gaussian pairs") {
  Rng rng(8);
  for (int k = 0; k < 3; ++k) {
    const double shift = 0.5 * (k + 1), scale = 1.0 + 0.3 * k;
    Mat a(100000, 1), b(100000, 1);
    for (int i = 0; i < 100000; ++i) {
      a(i, 0) = rng.normal();
      b(i, 0) = shift + scale * rng.normal();
    }
    const double grid = tv_gaussians(Vec::Zero(1), Mat::Identity(1, 1), Vec::Constant(1, shift),
                                     Mat::Constant(1, 1, scale * scale), 4001);
    CHECK(std::abs(grid - tv_samples(a, b).value) <= 0.03);
  }
}

TEST_CASE("predictive density") {
  const PoissonRegression pois(1);
  SUBCASE("point-mass draws give the model density") {
    Mat draws = Mat::Constant(5, 1, std::log(2.0));
    const std::vector<Datum> pts = {Datum{{1.0}, 0.0, -1}, Datum{{1.0}, 3.0, -1}};
    const PredictiveEstimate p = predictive_density(pois, draws, pts);
    const boost::math::poisson_distribution<double> po(2.0);
    CHECK(p.log_density[0] == doctest::Approx(std::log(boost::math::pdf(po, 0))).epsilon(1e-13));
    CHECK(p.log_density[1] == doctest::Approx(std::log(boost::math::pdf(po, 3))).epsilon(1e-13));
    CHECK(!p.has_zero);
    CHECK(p.draws_used == 5);
  }
  SUBCASE("conjugate normal predictive") {
    const double mu = 0.4, sd = 0.3;
    Rng rng(9);
    Mat draws(20000, 1);
    for (int i = 0; i < draws.rows(); ++i) draws(i, 0) = mu + sd * rng.normal();
    const GaussianLocation g(1.0, DiagonalGaussianPrior::standard(1));
    std::vector<Datum> pts;
    for (double y : {-1.5, 0.0, 0.4, 2.0}) pts.push_back(Datum{{}, y, -1});
    const PredictiveEstimate p = predictive_density(g, draws, pts);
    const boost::math::normal_distribution<double> nd(mu, std::sqrt(sd * sd + 1.0));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(std::abs(p.log_density[i] - std::log(boost::math::pdf(nd, pts[i].y))) <= 3.0 * p.se[i]);
    }
  }
  SUBCASE("concentrated draws approach the plug-in pmf") {
    Rng rng(10);
    Mat draws(5000, 1);
    for (int i = 0; i < draws.rows(); ++i) draws(i, 0) = std::log(2.0) + 1e-3 * rng.normal();
    const PredictiveEstimate p = predictive_density(pois, draws, {Datum{{1.0}, 4.0, -1}});
    const boost::math::poisson_distribution<double> po(2.0);
    CHECK(std::abs(p.log_density[0] - std::log(boost::math::pdf(po, 4))) <= 3.0 * p.se[0] + 1e-5);
  }
  SUBCASE("zero likelihood everywhere is flagged") {
    const PredictiveEstimate p = predictive_density(pois, Mat::Zero(3, 1), {Datum{{1.0}, -1.0, -1}});
    CHECK(p.has_zero);
    CHECK(p.log_density[0] == -INFINITY);
  }
}

TEST_CASE("misspec_ratio") {
  const std::vector<double> w(3, 1.0);
  const std::vector<double> a = {0.2, 0.5, 0.3}, b = {0.3, 0.4, 0.3}, c = {0.1, 0.1, 0.8};
  const MisspecRatio same = misspec_ratio(a, a, c, w);
  CHECK(same.ratio == 0.0);
  CHECK(!same.near_well_specified);
  const MisspecRatio r = misspec_ratio(a, b, c, w);
  CHECK(r.numerator == doctest::Approx(0.1));
  CHECK(r.denominator == doctest::Approx(tv_weighted(c, b, w)));
  CHECK(r.ratio == doctest::Approx(r.numerator / r.denominator));
  const MisspecRatio flag = misspec_ratio(a, b, b, w);
  CHECK(flag.near_well_specified);
  CHECK(std::isnan(flag.ratio));
}
