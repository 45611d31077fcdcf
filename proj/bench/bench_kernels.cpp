#include <benchmark/benchmark.h>

#include "dysim/config.hpp"
#include "dysim/oracles.hpp"
#include "dysim/runner.hpp"
#include "dysim/workload.hpp"

namespace {

dysim::ModelConfig bench_model(std::int64_t seq) {
  dysim::ModelConfig m = dysim::model_preset("L-8");
  m.seq_len = static_cast<int>(seq);
  return m;
}

void BM_Routing(benchmark::State& st) {
  const auto m = bench_model(st.range(0));
  const auto d = dysim::Distribution::normal(0.032);
  for (auto _ : st) benchmark::DoNotOptimize(dysim::gen_routing(m, d, 7));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_RoutingSerial(benchmark::State& st) {
  const auto m = bench_model(st.range(0));
  const auto d = dysim::Distribution::normal(0.032);
  for (auto _ : st) benchmark::DoNotOptimize(dysim::gen_routing_serial(m, d, 7));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_MonteCarlo(benchmark::State& st) {
  const auto m = bench_model(2048);
  for (auto _ : st) {
    benchmark::DoNotOptimize(dysim::monte_carlo_oracle(m, 32, dysim::Distribution::uniform(), st.range(0), 3));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_MonteCarloSerial(benchmark::State& st) {
  const auto m = bench_model(2048);
  for (auto _ : st) {
    benchmark::DoNotOptimize(
        dysim::monte_carlo_oracle_serial(m, 32, dysim::Distribution::uniform(), st.range(0), 3));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

dysim::ExperimentSpec sweep_spec() {
  return dysim::parse_config_string(R"(
[experiment]
methods = [deepep, dysharp_full]
seeds = [1, 2]
[system]
n_gpu = 4
[model]
preset = S
seq_len = 256
n_experts = 16
[sweep]
topk = [2, 4]
)");
}

void BM_Sweep(benchmark::State& st) {
  const auto spec = sweep_spec();
  dysim::RunOptions opt;
  opt.parallel = st.range(0) != 0;
  for (auto _ : st) benchmark::DoNotOptimize(dysim::run_experiment(spec, opt));
}

}  // namespace

BENCHMARK(BM_Routing)->Arg(2048)->Arg(16384);
BENCHMARK(BM_RoutingSerial)->Arg(2048)->Arg(16384);
BENCHMARK(BM_MonteCarlo)->Arg(1 << 14)->Arg(1 << 16);
BENCHMARK(BM_MonteCarloSerial)->Arg(1 << 14)->Arg(1 << 16);
BENCHMARK(BM_Sweep)->Arg(0)->Arg(1)->ArgNames({"parallel"});

BENCHMARK_MAIN();
