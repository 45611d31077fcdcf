#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dysim/packet.hpp"

namespace dysim {

struct ModelConfig {
  std::string name = "L";
  int hidden_size = 7168;
  int moe_hidden_size = 2048;
  int seq_len = 8192;
  int n_experts = 256;
  int topk = 8;
  int dtype_bytes = 1;

  std::int64_t token_bytes() const { return std::int64_t{hidden_size} * dtype_bytes; }
  void validate() const;
};

// S, M, L (DeepSeek-V3 family), gpt-oss-120b, qwen3-235b.
ModelConfig model_preset(const std::string& name);

enum class DistKind : std::uint8_t { kUniform, kNormal, kPowerLaw };

struct Distribution {
  DistKind kind = DistKind::kNormal;
  double param = 0.032;  // std for normal, alpha for power-law

  static Distribution uniform() { return {DistKind::kUniform, 0.0}; }
  static Distribution normal(double std_dev) { return {DistKind::kNormal, std_dev}; }
  static Distribution powerlaw(double alpha) { return {DistKind::kPowerLaw, alpha}; }
  std::string label() const;
};

Distribution parse_distribution(const std::string& kind, double param);

// Per-token sorted distinct expert IDs with gating weights summing to 1.
class RoutingTable {
 public:
  RoutingTable() = default;
  RoutingTable(int n_tokens, int topk, int n_experts);

  int n_tokens() const { return n_tokens_; }
  int topk() const { return topk_; }
  int n_experts() const { return n_experts_; }

  std::span<const std::uint16_t> experts(int token) const {
    return {experts_.data() + static_cast<std::size_t>(token) * topk_, static_cast<std::size_t>(topk_)};
  }
  std::span<const double> weights(int token) const {
    return {weights_.data() + static_cast<std::size_t>(token) * topk_, static_cast<std::size_t>(topk_)};
  }
  std::span<std::uint16_t> mutable_experts(int token) {
    return {experts_.data() + static_cast<std::size_t>(token) * topk_, static_cast<std::size_t>(topk_)};
  }
  std::span<double> mutable_weights(int token) {
    return {weights_.data() + static_cast<std::size_t>(token) * topk_, static_cast<std::size_t>(topk_)};
  }

  // Tokens routed to each expert (the runtime's nactive[expert]).
  std::vector<int> expert_loads() const;

  // Throws ConfigError when a row breaks the distinct/sorted/range/weight rules.
  void validate() const;

  bool operator==(const RoutingTable&) const = default;

 private:
  int n_tokens_ = 0;
  int topk_ = 0;
  int n_experts_ = 0;
  std::vector<std::uint16_t> experts_;
  std::vector<double> weights_;
};

// Contiguous block placement: expert e lives on GPU e / experts_per_gpu.
struct Placement {
  int n_experts = 0;
  int n_gpu = 0;
  int experts_per_gpu = 0;

  static Placement block(int n_experts, int n_gpu);
  int gpu_of(int expert) const { return expert / experts_per_gpu; }
  int first_expert(int gpu) const { return gpu * experts_per_gpu; }
};

// Normalized per-expert selection probabilities (floored at a small epsilon).
std::vector<double> expert_probabilities(const ModelConfig& model, const Distribution& dist,
                                         std::uint64_t seed);

// Sequential weighted sampling without replacement; each token draws from its
// own RNG stream, so the parallel and serial paths are bit-identical.
RoutingTable gen_routing(const ModelConfig& model, const Distribution& dist, std::uint64_t seed);
RoutingTable gen_routing_serial(const ModelConfig& model, const Distribution& dist,
                                std::uint64_t seed);

int source_gpu_of(int token, int seq_len, int n_gpu);

// Order-sensitive hash of experts and weight bit patterns.
std::uint64_t routing_fingerprint(const RoutingTable& routing);

int distinct_dest_gpus(std::span<const std::uint16_t> experts, const Placement& placement,
                       int source_gpu, bool include_local);

// Symbolic payloads: a 64-bit hash per (token, expert, phase). Reductions fold
// with wrapping addition, which is commutative and associative, so the folded
// value identifies the contributing set independently of arrival order.
std::uint64_t token_checksum(int token, int expert, Stage phase);
std::uint64_t fragment_checksum(int token, int expert, Stage phase, int fragment);
inline std::uint64_t fold(std::uint64_t acc, std::uint64_t v) { return acc + v; }

// Combine result a token must receive: fold over every activated expert and
// every payload fragment.
std::uint64_t reference_combine_fold(const RoutingTable& routing, int token, int n_fragments);

// Columnar text: "token e_1 .. e_k w_1 .. w_k" per line after a header line.
void write_routing(std::ostream& os, const RoutingTable& routing);
RoutingTable read_routing(std::istream& is);

}  // namespace dysim
