#include <benchmark/benchmark.h>

#include "vbmis/exact_posterior.hpp"
#include "vbmis/scenarios.hpp"
#include "vbmis/vb.hpp"

using namespace vbmis;

namespace {

struct Setup {
  ScenarioSpec spec;
  Dataset units;
  std::shared_ptr<const ParametricModel> vb_model, exact;
};

Setup setup(ScenarioName name, std::size_t n) {
  Setup s{ScenarioSpec::defaults(name), {}, nullptr, nullptr};
  s.units = to_units(s.spec, generate_data(s.spec, n, 1));
  s.vb_model = vb_target_model(s.spec);
  s.exact = exact_model(s.spec);
  return s;
}

constexpr ScenarioName kScenarios[] = {ScenarioName::WellSpecifiedControl, ScenarioName::CountRegression,
                                       ScenarioName::MixtureT, ScenarioName::PoissonGLMM};

void BM_ElboGradient(benchmark::State& state) {
  const Setup s = setup(kScenarios[state.range(0)], static_cast<std::size_t>(state.range(1)));
  const int d = s.vb_model->dim();
  const MeanFieldGaussian q = vb_init(s.spec, generate_data(s.spec, static_cast<std::size_t>(state.range(1)), 1))
                                  .value_or(MeanFieldGaussian::standard_at(Vec::Zero(d)));
  Rng rng(2);
  Mat eps(d, 10);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(elbo_gradient(*s.vb_model, s.units, q, eps));
  state.SetLabel(s.vb_model->name());
}
BENCHMARK(BM_ElboGradient)->ArgsProduct({{0, 1, 2, 3}, {100, 1000}})->Unit(benchmark::kMicrosecond);

void BM_ExactLoglik(benchmark::State& state) {
  const Setup s = setup(kScenarios[state.range(0)], static_cast<std::size_t>(state.range(1)));
  const Vec theta = Vec::Constant(s.exact->dim(), 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(loglik_sum(*s.exact, theta, s.units));
  state.SetLabel(s.exact->name());
}
BENCHMARK(BM_ExactLoglik)->ArgsProduct({{0, 1, 2, 3}, {100, 1000}})->Unit(benchmark::kMicrosecond);

void BM_Metropolis(benchmark::State& state) {
  const Setup s = setup(ScenarioName::CountRegression, static_cast<std::size_t>(state.range(0)));
  McmcConfig cfg;
  cfg.burn_in = 500;
  cfg.kept = 500;
  cfg.parallel = false;
  for (auto _ : state) benchmark::DoNotOptimize(metropolis_sample(*s.exact, s.units, cfg));
}
BENCHMARK(BM_Metropolis)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
