// Microbenchmarks for the hot paths: the energy-distance kernels (serial
// reference vs blocked OpenMP vs the sorted 1-d path) and the shift-family
// estimator (serial vs parallel). Build requires Google Benchmark.
#include <benchmark/benchmark.h>

#include <cstdint>

#include "tailchain/diagnostics.hpp"
#include "tailchain/kernels.hpp"
#include "tailchain/models.hpp"
#include "tailchain/rng.hpp"
#include "tailchain/vecmath.hpp"

using namespace tailchain;

namespace {

Vec gaussian_rows(std::size_t n, int d, std::uint64_t seed) {
  RngStream rng(seed);
  Vec v(n * static_cast<std::size_t>(d));
  for (double& x : v) x = rng.normal();
  return v;
}

const BftcSpec& coin_chain() {
  static const BftcSpec chain = [] {
    const ModelFile mf = model_from_json_text(
        R"({"type": "ar1", "d": 1, "alpha": 1.0, "a": 0.5,
            "lambda": {"kind": "atomic",
                       "atoms": [{"s": [1.0], "w": 0.5}, {"s": [-1.0], "w": 0.5}]},
            "innovation": {"name": "pareto-symmetric", "scale": 1.0}})");
    RngStream gate(1);
    return mf.bftc(gate);
  }();
  return chain;
}

void BM_EnergySerial(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const int d = static_cast<int>(state.range(1));
  const Vec x = gaussian_rows(n, d, 11);
  const Vec y = gaussian_rows(n, d, 12);
  for (auto _ : state) benchmark::DoNotOptimize(energy_distance_serial(x, n, y, n, d));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n * n);
}

void BM_EnergyParallel(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const int d = static_cast<int>(state.range(1));
  const Vec x = gaussian_rows(n, d, 11);
  const Vec y = gaussian_rows(n, d, 12);
  for (auto _ : state) benchmark::DoNotOptimize(energy_distance_parallel(x, n, y, n, d));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n * n);
}

void BM_EnergySorted1d(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Vec x = gaussian_rows(n, 1, 11);
  const Vec y = gaussian_rows(n, 1, 12);
  for (auto _ : state) benchmark::DoNotOptimize(energy_distance_1d(x, y));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n);
}

void BM_FamilySerial(benchmark::State& state) {
  const BftcSpec& chain = coin_chain();
  const TestFunctional f = standard_functionals().front();
  const long n = state.range(0);
  for (auto _ : state) {
    RngStream stream(77);
    benchmark::DoNotOptimize(timechange_family_serial(f, chain, 2, 2, n, stream));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n);
}

void BM_FamilyParallel(benchmark::State& state) {
  const BftcSpec& chain = coin_chain();
  const TestFunctional f = standard_functionals().front();
  const long n = state.range(0);
  for (auto _ : state) {
    RngStream stream(77);
    benchmark::DoNotOptimize(timechange_family(f, chain, 2, 2, n, stream));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n);
}

}  // namespace

BENCHMARK(BM_EnergySerial)
    ->Args({256, 2})
    ->Args({1024, 2})
    ->Args({4096, 2})
    ->Args({1024, 8})
    ->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_EnergyParallel)
    ->Args({256, 2})
    ->Args({1024, 2})
    ->Args({4096, 2})
    ->Args({1024, 8})
    ->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_EnergySorted1d)->Arg(1024)->Arg(16384)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_FamilySerial)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FamilyParallel)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
