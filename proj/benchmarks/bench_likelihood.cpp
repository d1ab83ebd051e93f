#include <benchmark/benchmark.h>

#include "thmm/estimation.hpp"
#include "thmm/simulation.hpp"

using namespace thmm;

namespace {

struct Fixture {
  ScenarioDataset ds;
  Eigen::VectorXd working;

  explicit Fixture(int T) {
    ScenarioConfig c;
    c.id = "2a";
    c.T = T;
    ds = make_scenario_dataset(c, 0);
    ParameterLayout layout(ds.spec);
    working = layout.pack(ds.theta, ds.beta_true);
  }
};

void BM_Loglik(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  Likelihood lik(f.ds.spec, f.ds.data);
  for (auto _ : state) benchmark::DoNotOptimize(lik.evaluate(f.working, 500.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LoglikGradient(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  Likelihood lik(f.ds.spec, f.ds.data);
  Eigen::VectorXd g;
  for (auto _ : state) benchmark::DoNotOptimize(lik.evaluate(f.working, 500.0, &g));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Viterbi(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  Likelihood lik(f.ds.spec, f.ds.data);
  for (auto _ : state) benchmark::DoNotOptimize(lik.viterbi(f.working, 500.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_NegativeHessian(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)));
  Likelihood lik(f.ds.spec, f.ds.data);
  FitOptions o;
  o.hessian_jitter = {0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4};
  for (auto _ : state) benchmark::DoNotOptimize(negative_hessian(lik, f.working, 1.0, o));
}

}  // namespace

BENCHMARK(BM_Loglik)->Arg(1000)->Arg(10000);
BENCHMARK(BM_LoglikGradient)->Arg(1000)->Arg(10000);
BENCHMARK(BM_Viterbi)->Arg(1000)->Arg(10000);
BENCHMARK(BM_NegativeHessian)->Arg(1000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
