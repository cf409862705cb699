#include <benchmark/benchmark.h>

#include "rkb/gexp.hpp"
#include "rkb/mmse.hpp"
#include "rkb/sde.hpp"

namespace {

void simulate(benchmark::State& state, rkb::Execution execution) {
  const rkb::TimeGrid grid(1.0, 500);
  const auto model = rkb::ModelCoefficients::scalar(grid, -0.5, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0);
  const auto theta = rkb::ThetaPath::constant(rkb::Vec::Constant(1, 0.3), rkb::Vec::Constant(1, -0.2), grid.points());
  rkb::SimulationOptions opt;
  opt.execution = execution;
  opt.storage = rkb::PathStorage::terminal;
  const auto n_paths = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto batch = rkb::simulate_paths(model, grid, theta, n_paths, 42, opt);
    benchmark::DoNotOptimize(batch.paths.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SimulateSerial(benchmark::State& state) { simulate(state, rkb::Execution::serial); }
void BM_SimulateParallel(benchmark::State& state) { simulate(state, rkb::Execution::parallel); }

void BM_ConditionalMmse(benchmark::State& state) {
  auto rng = rkb::stream_rng(3, 0);
  const auto inst = rkb::random_instance(rng, 8, 4, 3);
  rkb::MmseOptions opt;
  opt.starts = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto r = rkb::conditional_mmse(inst.op, inst.xi, inst.C, opt);
    benchmark::DoNotOptimize(r.value);
  }
}

}  // namespace

BENCHMARK(BM_SimulateSerial)->Arg(1000)->Arg(4000);
BENCHMARK(BM_SimulateParallel)->Arg(1000)->Arg(4000);
BENCHMARK(BM_ConditionalMmse)->Arg(1)->Arg(10);

BENCHMARK_MAIN();
