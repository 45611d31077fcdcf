#include "dysim/oracles.hpp"

#include <cmath>

#include "dysim/errors.hpp"
#include "dysim/packet.hpp"

namespace dysim {

namespace {

// C(E - m, k) / C(E, k) as a running product.
double choose_ratio(int n_experts, int m, int topk) {
  if (topk > n_experts - m) return 0.0;
  double r = 1.0;
  for (int i = 0; i < topk; ++i) {
    r *= static_cast<double>(n_experts - m - i) / static_cast<double>(n_experts - i);
  }
  return r;
}

void check_shape(int n_experts, int n_gpu, int topk) {
  if (n_gpu < 1 || n_experts % n_gpu != 0) {
    throw ConfigError("n_experts must be a multiple of n_gpu");
  }
  if (topk < 1 || topk > n_experts) throw ConfigError("topk must be in [1, n_experts]");
}

struct Sums {
  double d = 0, d2 = 0;
  double a = 0, a2 = 0, ad = 0;  // a = max(d-1, 0)
  double z = 0, z2 = 0, zd = 0;  // z = [d > 0]
  double u = 0, u2 = 0, ud = 0;  // u = n-1-d
  std::int64_t n = 0;
};

Sums accumulate(const std::vector<int>& ds, int n_gpu) {
  Sums s;
  for (int d : ds) {
    const double dd = d, a = std::max(d - 1, 0), z = d > 0 ? 1 : 0, u = n_gpu - 1 - d;
    s.d += dd;
    s.d2 += dd * dd;
    s.a += a;
    s.a2 += a * a;
    s.ad += a * dd;
    s.z += z;
    s.z2 += z * z;
    s.zd += z * dd;
    s.u += u;
    s.u2 += u * u;
    s.ud += u * dd;
  }
  s.n = static_cast<std::int64_t>(ds.size());
  return s;
}

TrafficOracle summarize(const Sums& s) {
  TrafficOracle o;
  if (s.n == 0) return o;
  o.mean_d = s.d / s.n;
  o.p_zero = 1.0 - s.z / s.n;
  if (s.d > 0) {
    o.redundancy = s.a / (2.0 * s.d);
    o.ideal_speedup = 2.0 * s.d / (s.d + s.z);
    o.nvls_useless = s.u / s.d;
  }
  return o;
}

// Delta-method standard error of mean(x) / mean(y) scaled by c.
double ratio_se(double sx, double sx2, double sxy, double sy, double sy2, double n, double c) {
  if (sy == 0 || n < 2) return 0.0;
  const double r = sx / sy;
  // residual e_i = x_i - r y_i has mean 0 by construction
  const double var_e = (sx2 - 2 * r * sxy + r * r * sy2) / (n - 1);
  return std::abs(c) * std::sqrt(std::max(var_e, 0.0) / n) / (sy / n);
}

MonteCarloEstimate estimate(const RoutingTable& rt, int n_gpu) {
  const Placement place = Placement::block(rt.n_experts(), n_gpu);
  std::vector<int> ds(rt.n_tokens());
  for (int t = 0; t < rt.n_tokens(); ++t) {
    ds[t] = distinct_dest_gpus(rt.experts(t), place, t % n_gpu, false);
  }
  const Sums s = accumulate(ds, n_gpu);
  MonteCarloEstimate m;
  static_cast<TrafficOracle&>(m) = summarize(s);
  m.samples = s.n;
  const double n = static_cast<double>(s.n);
  if (s.n >= 2) {
    m.se_d = std::sqrt(std::max(s.d2 / n - m.mean_d * m.mean_d, 0.0) * n / (n - 1) / n);
    m.se_redundancy = ratio_se(s.a, s.a2, s.ad, s.d, s.d2, n, 0.5);
    m.se_nvls_useless = ratio_se(s.u, s.u2, s.ud, s.d, s.d2, n, 1.0);
    // speedup = 2 D / (D + Z) = 2 / (1 + Z/D)
    const double q = s.d > 0 ? s.z / s.d : 0.0;
    const double se_q = ratio_se(s.z, s.z2, s.zd, s.d, s.d2, n, 1.0);
    m.se_ideal_speedup = 2.0 / ((1 + q) * (1 + q)) * se_q;
  }
  return m;
}

ModelConfig sampling_model(const ModelConfig& model, int n_gpu, std::int64_t samples) {
  check_shape(model.n_experts, n_gpu, model.topk);
  if (samples < 2 || samples > (std::int64_t{1} << 30)) {
    throw ConfigError("Monte-Carlo sample count must be in [2, 2^30]");
  }
  ModelConfig m = model;
  m.seq_len = static_cast<int>(samples);
  return m;
}

}  // namespace

double prob_all_local_uniform(int n_experts, int n_gpu, int topk) {
  check_shape(n_experts, n_gpu, topk);
  const int epg = n_experts / n_gpu;
  // all k experts drawn from the local block
  return choose_ratio(n_experts, n_experts - epg, topk);
}

double expected_distinct_gpus_uniform(int n_experts, int n_gpu, int topk) {
  check_shape(n_experts, n_gpu, topk);
  return n_gpu * (1.0 - choose_ratio(n_experts, n_experts / n_gpu, topk));
}

double expected_remote_gpus_uniform(int n_experts, int n_gpu, int topk) {
  check_shape(n_experts, n_gpu, topk);
  return (n_gpu - 1) * (1.0 - choose_ratio(n_experts, n_experts / n_gpu, topk));
}

TrafficOracle closed_form_oracle(const ModelConfig& model, int n_gpu) {
  const int e = model.n_experts, k = model.topk;
  const double d = expected_remote_gpus_uniform(e, n_gpu, k);
  const double p0 = prob_all_local_uniform(e, n_gpu, k);
  TrafficOracle o;
  o.mean_d = d;
  o.p_zero = p0;
  if (d > 0) {
    // E[max(d-1, 0)] = E[d] - 1 + P(d = 0)
    o.redundancy = (d - 1.0 + p0) / (2.0 * d);
    o.ideal_speedup = 2.0 * d / (d + 1.0 - p0);
    o.nvls_useless = (n_gpu - 1 - d) / d;
  }
  return o;
}

MonteCarloEstimate monte_carlo_oracle(const ModelConfig& model, int n_gpu, const Distribution& dist,
                                      std::int64_t samples, std::uint64_t seed) {
  const ModelConfig m = sampling_model(model, n_gpu, samples);
  return estimate(gen_routing(m, dist, seed), n_gpu);
}

MonteCarloEstimate monte_carlo_oracle_serial(const ModelConfig& model, int n_gpu,
                                             const Distribution& dist, std::int64_t samples,
                                             std::uint64_t seed) {
  const ModelConfig m = sampling_model(model, n_gpu, samples);
  return estimate(gen_routing_serial(m, dist, seed), n_gpu);
}

TrafficOracle routing_oracle(const RoutingTable& routing, int n_gpu) {
  check_shape(routing.n_experts(), n_gpu, routing.topk());
  const Placement place = Placement::block(routing.n_experts(), n_gpu);
  std::vector<int> ds(routing.n_tokens());
  for (int t = 0; t < routing.n_tokens(); ++t) {
    ds[t] = distinct_dest_gpus(routing.experts(t), place,
                               source_gpu_of(t, routing.n_tokens(), n_gpu), false);
  }
  return summarize(accumulate(ds, n_gpu));
}

DataFlitTotals expected_data_flits(const RoutingTable& routing, int n_gpu, Method method,
                                   std::int64_t token_bytes, std::int64_t fragment_bytes,
                                   int flit_bytes) {
  if (fragment_bytes <= 0 || token_bytes <= 0) throw ConfigError("byte sizes must be positive");
  std::int64_t per_token = 0;
  for (std::int64_t off = 0; off < token_bytes; off += fragment_bytes) {
    per_token += data_flits_for(std::min(fragment_bytes, token_bytes - off), flit_bytes);
  }
  const Placement place = Placement::block(routing.n_experts(), n_gpu);
  std::int64_t sum_d = 0, sum_z = 0;
  for (int t = 0; t < routing.n_tokens(); ++t) {
    const int d = distinct_dest_gpus(routing.experts(t), place,
                                     source_gpu_of(t, routing.n_tokens(), n_gpu), false);
    sum_d += d;
    sum_z += d > 0;
  }
  DataFlitTotals out;
  switch (traits_of(method).dataflow) {
    case Dataflow::kUnicast:
      out.up = out.down = 2 * sum_d * per_token;
      break;
    case Dataflow::kStatic:
      out.up = out.down = std::int64_t{routing.n_tokens()} * n_gpu * per_token;
      break;
    case Dataflow::kExplicit:
    case Dataflow::kDynamic:
      out.up = out.down = (sum_d + sum_z) * per_token;
      break;
  }
  return out;
}

double geomean(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("geometric mean of an empty set");
  double s = 0;
  for (double x : v) {
    if (!(x > 0)) throw ConfigError("geometric mean needs positive values");
    s += std::log(x);
  }
  return std::exp(s / static_cast<double>(v.size()));
}

SpeedupTable speedup_table(const std::vector<std::pair<std::string, RunMetrics>>& runs,
                           const std::string& baseline) {
  SpeedupTable table;
  table.baseline = baseline;
  std::map<std::string, const RunMetrics*> base;
  std::map<std::string, std::uint64_t> fingerprint;
  for (const auto& [cfg, r] : runs) {
    auto [it, fresh] = fingerprint.try_emplace(cfg, r.workload_hash);
    if (!fresh && it->second != r.workload_hash) {
      throw ConfigError("runs labelled '" + cfg + "' were made on different workloads");
    }
    if (r.method == baseline) base[cfg] = &r;
  }
  std::map<std::string, std::vector<double>> per_method;
  for (const auto& [cfg, r] : runs) {
    auto b = base.find(cfg);
    if (b == base.end()) throw ConfigError("no " + baseline + " run for config '" + cfg + "'");
    if (r.completion <= 0) throw ConfigError("run without a completion time in '" + cfg + "'");
    SpeedupRow row;
    row.config = cfg;
    row.method = r.method;
    row.completion_ns = to_ns(r.completion);
    row.speedup = static_cast<double>(b->second->completion) / static_cast<double>(r.completion);
    per_method[r.method].push_back(row.speedup);
    table.rows.push_back(row);
  }
  for (auto& [m, v] : per_method) table.geomean[m] = geomean(v);
  return table;
}

}  // namespace dysim
