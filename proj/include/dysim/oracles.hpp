#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dysim/baselines.hpp"
#include "dysim/metrics.hpp"
#include "dysim/workload.hpp"

namespace dysim {

// Expected number of distinct GPUs hosting a token's experts under uniform
// routing and block placement: n_gpu * (1 - C(E - epg, k) / C(E, k)).
double expected_distinct_gpus_uniform(int n_experts, int n_gpu, int topk);
// Same, excluding the source GPU: (n_gpu - 1) * (1 - C(E - epg, k) / C(E, k)).
double expected_remote_gpus_uniform(int n_experts, int n_gpu, int topk);
// Probability that every expert of a token sits on its source GPU.
double prob_all_local_uniform(int n_experts, int n_gpu, int topk);

// Baseline-dataflow traffic summary per token, d = distinct remote GPUs.
//   redundancy     = sum max(d-1, 0) / (2 sum d)     (data flits, both directions)
//   ideal_speedup  = 2 sum d / (sum d + #{d > 0})    (bottleneck direction, concurrent)
//   nvls_useless   = sum (n-1-d) / sum d
struct TrafficOracle {
  double mean_d = 0;
  double p_zero = 0;
  double redundancy = 0;
  double ideal_speedup = 1;
  double nvls_useless = 0;
};

struct MonteCarloEstimate : TrafficOracle {
  std::int64_t samples = 0;
  double se_d = 0;
  double se_redundancy = 0;
  double se_ideal_speedup = 0;
  double se_nvls_useless = 0;
};

// Exact closed form; uniform routing only (ConfigError otherwise).
TrafficOracle closed_form_oracle(const ModelConfig& model, int n_gpu);
// Sampled tokens from the routing generator; the OpenMP and serial paths
// return bit-identical estimates.
MonteCarloEstimate monte_carlo_oracle(const ModelConfig& model, int n_gpu, const Distribution& dist,
                                      std::int64_t samples, std::uint64_t seed);
MonteCarloEstimate monte_carlo_oracle_serial(const ModelConfig& model, int n_gpu,
                                             const Distribution& dist, std::int64_t samples,
                                             std::uint64_t seed);
// Exact summary of one routing table (token sources by contiguous blocks).
TrafficOracle routing_oracle(const RoutingTable& routing, int n_gpu);

// Exact data-flit totals a pure-communication run must produce, both
// directions summed over GPUs.
struct DataFlitTotals {
  std::int64_t up = 0;
  std::int64_t down = 0;
};
DataFlitTotals expected_data_flits(const RoutingTable& routing, int n_gpu, Method method,
                                   std::int64_t token_bytes, std::int64_t fragment_bytes,
                                   int flit_bytes);

double geomean(const std::vector<double>& v);

struct SpeedupRow {
  std::string config;
  std::string method;
  double completion_ns = 0;
  double speedup = 0;  // baseline completion / this completion
};

struct SpeedupTable {
  std::string baseline;
  std::vector<SpeedupRow> rows;
  std::map<std::string, double> geomean;  // per method, across configs
};

// `runs` pairs a config label with a finished run. Runs sharing a label must
// share a workload fingerprint; every label needs a baseline run.
SpeedupTable speedup_table(const std::vector<std::pair<std::string, RunMetrics>>& runs,
                           const std::string& baseline);

}  // namespace dysim
