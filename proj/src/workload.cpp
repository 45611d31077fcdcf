#include "dysim/workload.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dysim/errors.hpp"
#include "dysim/rng.hpp"

namespace dysim {

void ModelConfig::validate() const {
  if (hidden_size <= 0 || moe_hidden_size <= 0) throw ConfigError("model sizes must be positive");
  if (seq_len <= 0) throw ConfigError("seq_len must be positive");
  if (n_experts <= 0 || n_experts > 65536) throw ConfigError("n_experts must be in [1, 65536]");
  if (topk <= 0) throw ConfigError("topk must be positive");
  if (topk > n_experts) {
    throw ConfigError("topk " + std::to_string(topk) + " exceeds n_experts " +
                      std::to_string(n_experts));
  }
  if (dtype_bytes <= 0) throw ConfigError("dtype_bytes must be positive");
}

ModelConfig model_preset(const std::string& full) {
  // "L-16" is the L preset with topk 16
  std::string name = full;
  int topk = 0;
  if (auto dash = full.rfind('-'); dash != std::string::npos && dash + 1 < full.size() &&
      full.find_first_not_of("0123456789", dash + 1) == std::string::npos &&
      (full.compare(0, dash, "S") == 0 || full.compare(0, dash, "M") == 0 || full.compare(0, dash, "L") == 0)) {
    name = full.substr(0, dash);
    topk = std::stoi(full.substr(dash + 1));
  }
  ModelConfig m;
  if (name == "S") {
    m = {"S", 2048, 512, 2048, 64, 8, 1};
  } else if (name == "M") {
    m = {"M", 4096, 1024, 4096, 128, 8, 1};
  } else if (name == "L") {
    m = {"L", 7168, 2048, 8192, 256, 8, 1};
  } else if (name == "gpt-oss-120b") {
    m = {"gpt-oss-120b", 2880, 2880, 4096, 64, 4, 1};
  } else if (name == "qwen3-235b") {
    m = {"qwen3-235b", 4096, 1536, 4096, 128, 8, 1};
  } else {
    throw ConfigError("unknown model preset '" + full + "'");
  }
  if (topk > 0) {
    m.topk = topk;
    m.name = full;
  }
  return m;
}

std::string Distribution::label() const {
  std::ostringstream os;
  switch (kind) {
    case DistKind::kUniform: os << "uniform"; break;
    case DistKind::kNormal: os << "normal(" << param << ")"; break;
    case DistKind::kPowerLaw: os << "powerlaw(" << param << ")"; break;
  }
  return os.str();
}

Distribution parse_distribution(const std::string& kind, double param) {
  if (kind == "uniform") return Distribution::uniform();
  if (kind == "normal") {
    if (param < 0) throw ConfigError("normal std must be >= 0");
    return Distribution::normal(param);
  }
  if (kind == "powerlaw") {
    if (param < 0) throw ConfigError("power-law alpha must be >= 0");
    return Distribution::powerlaw(param);
  }
  throw ConfigError("unknown distribution '" + kind + "'");
}

RoutingTable::RoutingTable(int n_tokens, int topk, int n_experts)
    : n_tokens_(n_tokens),
      topk_(topk),
      n_experts_(n_experts),
      experts_(static_cast<std::size_t>(n_tokens) * topk),
      weights_(static_cast<std::size_t>(n_tokens) * topk) {}

std::vector<int> RoutingTable::expert_loads() const {
  std::vector<int> loads(n_experts_, 0);
  for (std::uint16_t e : experts_) ++loads[e];
  return loads;
}

void RoutingTable::validate() const {
  for (int t = 0; t < n_tokens_; ++t) {
    auto ex = experts(t);
    double wsum = 0;
    for (int i = 0; i < topk_; ++i) {
      if (ex[i] >= n_experts_) throw ConfigError("token " + std::to_string(t) + ": expert out of range");
      if (i > 0 && ex[i] <= ex[i - 1]) {
        throw ConfigError("token " + std::to_string(t) + ": experts not sorted/distinct");
      }
      wsum += weights(t)[i];
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("token " + std::to_string(t) + ": weights do not sum to 1");
  }
}

Placement Placement::block(int n_experts, int n_gpu) {
  if (n_gpu <= 0 || n_experts % n_gpu != 0) {
    throw ConfigError("n_experts " + std::to_string(n_experts) + " is not divisible by n_gpu " +
                      std::to_string(n_gpu));
  }
  return Placement{n_experts, n_gpu, n_experts / n_gpu};
}

std::vector<double> expert_probabilities(const ModelConfig& model, const Distribution& dist,
                                         std::uint64_t seed) {
  const int n = model.n_experts;
  const double mean = 1.0 / n;
  std::vector<double> p(n, mean);
  switch (dist.kind) {
    case DistKind::kUniform:
      break;
    case DistKind::kNormal: {
      RngStream rng(seed, "expert-popularity");
      for (double& v : p) v = mean + rng.normal() * dist.param * mean;
      break;
    }
    case DistKind::kPowerLaw: {
      // Zipf-like ranks over a seeded permutation of expert IDs.
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      RngStream rng(seed, "expert-rank");
      for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
      for (int r = 0; r < n; ++r) p[order[r]] = std::pow(static_cast<double>(r + 1), -dist.param);
      break;
    }
  }
  const double eps = 1e-3 * mean;
  for (double& v : p) v = std::max(v, eps);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= total;
  return p;
}

namespace {

void route_token(int t, const std::vector<double>& probs, int topk, std::uint64_t seed,
                 RoutingTable& out, std::vector<double>& scratch) {
  RngStream rng(seed, "routing", static_cast<std::uint64_t>(t));
  scratch = probs;
  auto ex = out.mutable_experts(t);
  for (int i = 0; i < topk; ++i) {
    double total = 0;
    for (double v : scratch) total += v;
    const double u = rng.uniform() * total;
    double acc = 0;
    int pick = -1;
    int last_live = -1;
    for (int e = 0; e < static_cast<int>(scratch.size()); ++e) {
      if (scratch[e] <= 0) continue;
      last_live = e;
      acc += scratch[e];
      if (u < acc) {
        pick = e;
        break;
      }
    }
    if (pick < 0) pick = last_live;  // rounding at the upper end
    ex[i] = static_cast<std::uint16_t>(pick);
    scratch[pick] = 0;
  }
  std::sort(ex.begin(), ex.end());
  auto w = out.mutable_weights(t);
  double wsum = 0;
  for (double& v : w) {
    v = 0.05 + 0.95 * rng.uniform();
    wsum += v;
  }
  for (double& v : w) v /= wsum;
}

}  // namespace

RoutingTable gen_routing(const ModelConfig& model, const Distribution& dist, std::uint64_t seed) {
  model.validate();
  const auto probs = expert_probabilities(model, dist, seed);
  RoutingTable table(model.seq_len, model.topk, model.n_experts);
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (int t = 0; t < model.seq_len; ++t) route_token(t, probs, model.topk, seed, table, scratch);
  }
  return table;
}

RoutingTable gen_routing_serial(const ModelConfig& model, const Distribution& dist,
                                std::uint64_t seed) {
  model.validate();
  const auto probs = expert_probabilities(model, dist, seed);
  RoutingTable table(model.seq_len, model.topk, model.n_experts);
  std::vector<double> scratch;
  for (int t = 0; t < model.seq_len; ++t) route_token(t, probs, model.topk, seed, table, scratch);
  return table;
}

std::uint64_t routing_fingerprint(const RoutingTable& routing) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(routing.n_tokens()) * 0x10001ULL +
                          static_cast<std::uint64_t>(routing.topk()));
  h = mix64(h ^ static_cast<std::uint64_t>(routing.n_experts()));
  for (int t = 0; t < routing.n_tokens(); ++t) {
    auto ex = routing.experts(t);
    auto w = routing.weights(t);
    for (std::size_t i = 0; i < ex.size(); ++i) {
      h = mix64(h ^ ex[i]);
      h = mix64(h ^ std::bit_cast<std::uint64_t>(w[i]));
    }
  }
  return h;
}

int source_gpu_of(int token, int seq_len, int n_gpu) {
  return static_cast<int>(std::int64_t{token} * n_gpu / seq_len);
}

int distinct_dest_gpus(std::span<const std::uint16_t> experts, const Placement& placement,
                       int source_gpu, bool include_local) {
  // experts are sorted, so equal GPUs are adjacent.
  int count = 0;
  int prev = -1;
  for (std::uint16_t e : experts) {
    const int g = placement.gpu_of(e);
    if (g == prev) continue;
    prev = g;
    if (g != source_gpu || include_local) ++count;
  }
  return count;
}

std::uint64_t token_checksum(int token, int expert, Stage phase) {
  const std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(token)) << 24) ^
                            (static_cast<std::uint64_t>(expert) << 1) ^
                            static_cast<std::uint64_t>(phase);
  return mix64(mix64(key) ^ 0x5851f42d4c957f2dULL);
}

std::uint64_t fragment_checksum(int token, int expert, Stage phase, int fragment) {
  return mix64(token_checksum(token, expert, phase) + static_cast<std::uint64_t>(fragment));
}

std::uint64_t reference_combine_fold(const RoutingTable& routing, int token, int n_fragments) {
  std::uint64_t acc = 0;
  for (std::uint16_t e : routing.experts(token)) {
    for (int f = 0; f < n_fragments; ++f) acc = fold(acc, fragment_checksum(token, e, Stage::kCombine, f));
  }
  return acc;
}

void write_routing(std::ostream& os, const RoutingTable& routing) {
  os << "# tokens=" << routing.n_tokens() << " topk=" << routing.topk()
     << " n_experts=" << routing.n_experts() << "\n";
  os.precision(17);
  for (int t = 0; t < routing.n_tokens(); ++t) {
    os << t;
    for (auto e : routing.experts(t)) os << ' ' << e;
    for (auto w : routing.weights(t)) os << ' ' << w;
    os << '\n';
  }
}

RoutingTable read_routing(std::istream& is) {
  std::string header;
  std::getline(is, header);
  int n_tokens = 0, topk = 0, n_experts = 0;
  if (std::sscanf(header.c_str(), "# tokens=%d topk=%d n_experts=%d", &n_tokens, &topk, &n_experts) != 3) {
    throw ConfigError("routing file: malformed header '" + header + "'");
  }
  RoutingTable table(n_tokens, topk, n_experts);
  for (int t = 0; t < n_tokens; ++t) {
    int tok = -1;
    if (!(is >> tok) || tok != t) throw ConfigError("routing file: bad token row " + std::to_string(t));
    for (auto& e : table.mutable_experts(t)) {
      int v;
      if (!(is >> v)) throw ConfigError("routing file: truncated row " + std::to_string(t));
      e = static_cast<std::uint16_t>(v);
    }
    for (auto& w : table.mutable_weights(t)) {
      if (!(is >> w)) throw ConfigError("routing file: truncated row " + std::to_string(t));
    }
  }
  table.validate();
  return table;
}

}  // namespace dysim
