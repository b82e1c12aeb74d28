// Serial reference vs OpenMP kernels. Both produce bitwise identical
// results (per-index seeds, private result slots); only wall time differs.

#include <benchmark/benchmark.h>

#include "qlink/lindblad.hpp"
#include "qlink/mcwf.hpp"
#include "qlink/protocol.hpp"

namespace {

using namespace qlink;

void BM_EnsembleExpectation(benchmark::State& state) {
  const auto exec = state.range(0) ? Execution::Parallel : Execution::Serial;
  const auto toy = make_toy_model({});
  IntegratorConfig cfg;
  cfg.dt = 2e-3;
  cfg.t_final = 2.0;
  cfg.sample_stride = 100;
  const auto obs = number(toy.space, "cav");
  for (auto _ : state) {
    auto s = exec == Execution::Serial
                 ? ensemble_expectation_serial(obs, toy.psi0, toy.heff, toy.jumps, cfg, 256, 1)
                 : ensemble_expectation(obs, toy.psi0, toy.heff, toy.jumps, cfg, 256, 1, Execution::Parallel);
    benchmark::DoNotOptimize(s.mean.data());
  }
  state.SetItemsProcessed(state.iterations() * 256);
  state.SetLabel(exec == Execution::Serial ? "serial" : "openmp");
}
BENCHMARK(BM_EnsembleExpectation)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ProtocolBatch(benchmark::State& state) {
  const auto exec = state.range(0) ? Execution::Parallel : Execution::Serial;
  const QubitInput q{cplx(0.6, 0.0), cplx(0.0, 0.8)};
  NoiseConfig noise;
  noise.p_nojump = 0.5;
  for (auto _ : state) {
    auto b = run_protocol_batch(q, noise, 2000, 1, 50, exec);
    benchmark::DoNotOptimize(b.success_rate);
  }
  state.SetItemsProcessed(state.iterations() * 2000);
  state.SetLabel(exec == Execution::Serial ? "serial" : "openmp");
}
BENCHMARK(BM_ProtocolBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
