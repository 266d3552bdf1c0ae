#include <benchmark/benchmark.h>

#include <numeric>

#include "befa/identify.hpp"
#include "befa/modelcheck.hpp"
#include "befa/ordinal.hpp"
#include "befa/rng.hpp"
#include "befa/sampler.hpp"
#include "befa/synthetic.hpp"

using namespace befa;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, int r, int c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

// arg: 0 = central interval, 1 = far tail
static void BM_TruncatedNormal(benchmark::State& state) {
  Rng rng(1);
  const double a = state.range(0) ? 6.0 : -0.5, b = state.range(0) ? kInf : 0.7;
  double acc = 0.0;
  for (auto _ : state) acc += sample_truncated_normal(0.0, a, b, rng);
  benchmark::DoNotOptimize(acc);
}
BENCHMARK(BM_TruncatedNormal)->Arg(0)->Arg(1);

// One full sweep on the desk-scale design, K factors.
static void BM_Sweep(benchmark::State& state) {
  const auto ds = simulate(desk_scale_config()).first;
  SamplerConfig cfg;
  cfg.factors = static_cast<int>(state.range(0));
  cfg.n_chains = 1;
  const GibbsSampler s(ds, cfg);
  ChainState st = s.initialize(0, 7);
  for (auto _ : state) s.sweep(st);
  state.counters["observations"] = s.layout().observations();
}
BENCHMARK(BM_Sweep)->Arg(2)->Arg(5)->Unit(benchmark::kMillisecond);

static void BM_Varimax(benchmark::State& state) {
  Rng rng(2);
  const Eigen::MatrixXd l = random_matrix(rng, 8, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(varimax(l).loadings);
}
BENCHMARK(BM_Varimax)->DenseRange(2, 5);

static void BM_BestOrientation(benchmark::State& state) {
  Rng rng(3);
  const int k = static_cast<int>(state.range(0));
  const Eigen::MatrixXd a = random_matrix(rng, 8, k), b = random_matrix(rng, 8, k);
  for (auto _ : state) benchmark::DoNotOptimize(best_orientation(a, b).distance);
}
BENCHMARK(BM_BestOrientation)->DenseRange(1, 6);

static void BM_DipStatistic(benchmark::State& state) {
  Rng rng(4);
  std::vector<double> x(static_cast<std::size_t>(state.range(0)));
  for (auto& v : x) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(dip_statistic(x));
}
BENCHMARK(BM_DipStatistic)->Arg(200)->Arg(2000)->Arg(20000);

BENCHMARK_MAIN();
