#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "vbmis/distributions.hpp"
#include "vbmis/errors.hpp"
#include "vbmis/population.hpp"

using namespace vbmis;

namespace {

TrueGenerator poisson_truth(double rate) {
  TrueGenerator g;
  g.sampler = [rate](Rng& rng) { return Datum{{1.0}, sample_poisson(rng, rate), -1}; };
  return g;
}

TrueGenerator nb_truth(double mean, double r) {
  TrueGenerator g;
  const double q = mean / (r + mean);
  g.sampler = [r, q](Rng& rng) { return Datum{{1.0}, sample_neg_binomial(rng, r, q), -1}; };
  return g;
}

TrueGenerator gaussian_truth(double mean, double sd) {
  TrueGenerator g;
  g.sampler = [mean, sd](Rng& rng) { return Datum{{}, mean + sd * rng.normal(), -1}; };
  return g;
}

ThetaStarConfig small_cfg(std::size_t draws, std::uint64_t seed) {
  ThetaStarConfig c;
  c.mc_draws = draws;
  c.seed = seed;
  return c;
}

class Linear final : public ParametricModel {
 public:
  Linear() : ParametricModel(DiagonalGaussianPrior::standard(1)) {}
  int dim() const override { return 1; }
  std::string name() const override { return "linear"; }
  double loglik(const Vec& theta, const Datum&) const override { return theta[0]; }
  double loglik_accumulate(const Vec& theta, const Datum&, Vec& grad) const override {
    grad[0] += 1.0;
    return theta[0];
  }
};

}  // namespace

TEST_CASE("theta* examples") {
  const PoissonRegression pois(1);
  SUBCASE("well-specified Poisson") {
    const PopulationSummary s = summarize_population(poisson_truth(3.0), pois, small_cfg(200000, 1));
    CHECK(std::abs(s.theta_star[0] - std::log(3.0)) <= 3.0 * s.theta_star_se[0]);
    CHECK(s.V(0, 0) == doctest::Approx(3.0).epsilon(0.02));
    CHECK(std::abs(s.S(0, 0) - s.V(0, 0)) <= 3.0 * s.gap_se(0, 0));
    CHECK(!s.multimodal);
  }
  SUBCASE("NB truth, intercept fit, against a bisection oracle") {
    const PopulationSummary s = summarize_population(nb_truth(2.0, 5.0), pois, small_cfg(400000, 2));
    // Independent draws from the standard library: failures before 5
    // successes with success probability 5/7 have mean 2.
    std::mt19937_64 eng(77);
    std::negative_binomial_distribution<int> nb(5, 5.0 / 7.0);
    std::vector<double> y(400000);
    for (double& v : y) v = nb(eng);
    auto residual = [&](double t) {
      double acc = 0.0;
      for (double v : y) acc += v - std::exp(t);
      return acc / static_cast<double>(y.size());
    };
    double lo = -5, hi = 5;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      (residual(mid) > 0 ? lo : hi) = mid;
    }
    const double root = 0.5 * (lo + hi);
    // Two independent Monte Carlo estimates: compare with the combined se.
    CHECK(std::abs(s.theta_star[0] - root) <= 3.0 * std::sqrt(2.0) * s.theta_star_se[0]);
    CHECK(std::abs(s.theta_star[0] - std::log(2.0)) <= 3.0 * s.theta_star_se[0]);
    // V = e^θ* is the same for every draw; its Monte Carlo error is that of θ*.
    CHECK(std::abs(s.V(0, 0) - 2.0) <= 3.0 * s.V(0, 0) * s.theta_star_se[0]);
    CHECK(std::abs(s.S(0, 0) - 2.8) <= 3.0 * s.S_se(0, 0));
    CHECK(s.sandwich(0, 0) == doctest::Approx(0.7).epsilon(0.03));
  }
  SUBCASE("symmetric truth for a Gaussian location fit") {
    const GaussianLocation g(1.0, DiagonalGaussianPrior::standard(1));
    const PopulationSummary s = summarize_population(gaussian_truth(0.0, std::sqrt(2.0)), g, small_cfg(100000, 3));
    CHECK(std::abs(s.theta_star[0]) <= 3.0 * s.theta_star_se[0]);
    CHECK(s.V(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(s.S(0, 0) - 2.0) <= 3.0 * s.S_se(0, 0));
  }
}

TEST_CASE("restarts agree for a concave objective") {
  const PoissonRegression pois(1);
  ThetaStarConfig c = small_cfg(20000, 4);
  c.restarts = 5;
  const ThetaStarEstimate e = estimate_theta_star(nb_truth(2.0, 5.0), pois, c);
  REQUIRE(e.restart_iterates.size() == 5);
  for (const Vec& v : e.restart_iterates) CHECK(std::abs(v[0] - e.theta_star[0]) <= 1e-4);
  CHECK(!e.multimodal);
  CHECK(e.grad.norm() <= 1e-6);
}

TEST_CASE("unbounded objective raises a divergence error") {
  const Linear lin;
  CHECK_THROWS_AS(estimate_theta_star(gaussian_truth(0.0, 1.0), lin, small_cfg(10000, 5)), DivergenceError);
}

TEST_CASE("point-mass truth has zero score variance") {
  TrueGenerator g;
  g.sampler = [](Rng&) { return Datum{{}, 1.5, -1}; };
  const GaussianLocation m(1.0, DiagonalGaussianPrior::standard(1));
  const PopulationSummary s = summarize_population(g, m, small_cfg(1000, 6));
  CHECK(s.theta_star[0] == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(std::abs(s.S(0, 0)) <= 1e-12);
}

TEST_CASE("two-covariate curvature matches the design-matrix form") {
  TrueGenerator g;
  g.sampler = [](Rng& rng) {
    const double z = rng.normal();
    const double q = 1.0 / (1.0 + std::exp(-(0.3 - 0.5 * z)));
    return Datum{{1.0, z}, sample_neg_binomial(rng, 5.0, q), -1};
  };
  const PoissonRegression m(2);
  const PopulationPool pool = draw_pool(g, 100000, 7);
  ThetaStarConfig c = small_cfg(100000, 7);
  const Vec th = estimate_theta_star(m, pool, c).theta_star;
  const MatrixEstimate V = lan_curvature(m, th, pool);
  // (X e^{X'β/2})'(X e^{X'β/2}) / M.
  Mat W = Mat::Zero(2, 2);
  for (const Datum& d : pool.draws) {
    Vec x(2);
    x << d.x[0], d.x[1];
    const Vec xs = x * std::exp(0.5 * x.dot(th));
    W += xs * xs.transpose();
  }
  W /= static_cast<double>(pool.draws.n());
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(std::abs(V.value(i, j) - W(i, j)) <= 0.02 * W.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("singular curvature is reported") {
  // A covariate that is always zero leaves its coefficient unidentified.
  TrueGenerator g;
  g.sampler = [](Rng& rng) { return Datum{{1.0, 0.0}, sample_poisson(rng, 2.0), -1}; };
  const PoissonRegression m(2);
  const PopulationPool pool = draw_pool(g, 1000, 8);
  CHECK_THROWS_AS(lan_curvature(m, Vec::Zero(2), pool), SingularCurvatureError);
}

TEST_CASE("sandwich examples") {
  Mat V(1, 1), S(1, 1);
  V << 2.0;
  S << 2.8;
  CHECK(sandwich(V, S)(0, 0) == doctest::Approx(0.7).epsilon(1e-14));
  Mat A(2, 2);
  A << 2.0, 0.5, 0.5, 1.0;
  CHECK(sandwich(A, A).isApprox(A.inverse(), 1e-12));
  CHECK(sandwich(Mat::Identity(2, 2), A).isApprox(A, 1e-14));
  Mat Z = Mat::Zero(2, 2);
  CHECK_THROWS_AS(sandwich(Z, A), SingularMatrixError);
}

TEST_CASE("lan_shift") {
  const PoissonRegression m(1);
  Mat V(1, 1);
  V << 2.0;
  Vec ts(1);
  ts << std::log(2.0);
  SUBCASE("data with mean exactly lambda* gives zero") {
    const Dataset data({Datum{{1.0}, 1.0, -1}, Datum{{1.0}, 3.0, -1}, Datum{{1.0}, 2.0, -1}});
    CHECK(std::abs(lan_shift(data, m, ts, V)[0]) <= 1e-12);
  }
  SUBCASE("Gaussian score summing to zero") {
    const GaussianLocation g(1.0, DiagonalGaussianPrior::standard(1));
    const Dataset data({Datum{{}, -1.0, -1}, Datum{{}, 1.0, -1}});
    Mat one(1, 1);
    one << 1.0;
    CHECK(std::abs(lan_shift(data, g, Vec::Zero(1), one)[0]) <= 1e-14);
  }
  SUBCASE("replication variance approaches the sandwich") {
    const TrueGenerator nb = nb_truth(2.0, 5.0);
    const int reps = 10000, n = 1000;
    double s = 0.0, s2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      Rng rng(derive_seed(9, {static_cast<std::uint64_t>(r)}));
      std::vector<Datum> rows;
      rows.reserve(n);
      for (int i = 0; i < n; ++i) rows.push_back(nb.draw(rng));
      const double d = lan_shift(Dataset(std::move(rows)), m, ts, V)[0];
      s += d;
      s2 += d * d;
    }
    const double var = s2 / reps - (s / reps) * (s / reps);
    CHECK(var == doctest::Approx(0.7).epsilon(0.1));
  }
}
