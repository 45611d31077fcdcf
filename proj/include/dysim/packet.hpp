#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dysim {

enum class PacketKind : std::uint8_t {
  kDymultimemStReq,
  kDymultimemLdReduceReq,
  kReduceResponse,
  kUnicastReq,
  kExplicitReq,
  kMulticastStaticReq,
  kAck,
};

enum class Stage : std::uint8_t { kDispatch = 0, kCombine = 1 };

const char* to_string(PacketKind k);

// Baseline NVLink-style format constants. Neither is stated explicitly for the
// modeled link; they are the unique small-integer pair that puts an 8-target
// 256 B dymultimem request at 80% payload efficiency and the explicit-address
// request+response pair within 1 pp of 69% (see tests/test_packet.cpp).
inline constexpr int kHeaderFlits = 1;
inline constexpr int kByteEnableGranule = 128;  // payload bytes per byte-enable flit
inline constexpr int kTargetsPerFlit = 8;       // 16-bit expert IDs per extension flit

inline constexpr std::uint64_t kMaxMultimemAddr = (1ULL << 48) - 1;  // 128 TB
inline constexpr std::uint32_t kMaxTargetCount = (1U << 15) - 1;
inline constexpr std::uint32_t kMaxExpertId = (1U << 16) - 1;

struct FlitLayout {
  std::int64_t header_flits = 0;
  std::int64_t target_ext_flits = 0;  // also holds explicit destination-address flits
  std::int64_t byte_enable_flits = 0;
  std::int64_t data_flits = 0;

  std::int64_t total() const {
    return header_flits + target_ext_flits + byte_enable_flits + data_flits;
  }
  FlitLayout& operator+=(const FlitLayout& o);
  bool operator==(const FlitLayout&) const = default;
};

struct Packet {
  PacketKind kind = PacketKind::kDymultimemStReq;
  std::uint64_t maddr = 0;
  Stage stage = Stage::kDispatch;
  std::vector<std::uint16_t> targets;  // expert IDs, request order preserved
  std::int64_t payload_bytes = 0;

  std::uint32_t target_count() const { return static_cast<std::uint32_t>(targets.size()); }
  bool operator==(const Packet&) const = default;
};

std::int64_t data_flits_for(std::int64_t payload_bytes, int flit_bytes = 16);
std::int64_t byte_enable_flits_for(std::int64_t payload_bytes);

// dymultimem.st / dymultimem.ld_reduce request. `n_experts` bounds target IDs
// when nonzero.
FlitLayout encode_dymultimem(PacketKind kind, std::uint64_t maddr, Stage stage,
                             std::span<const std::uint16_t> targets, std::int64_t payload_bytes,
                             std::uint32_t n_experts = 0, int flit_bytes = 16);
FlitLayout encode_dymultimem(const Packet& pkt, std::uint32_t n_experts = 0, int flit_bytes = 16);

// Explicit-addressing request: one 64-bit destination address per flit, with
// the first address taking flit0's address slot.
FlitLayout encode_explicit(std::span<const std::uint64_t> dest_addrs, std::int64_t payload_bytes,
                           int flit_bytes = 16);
FlitLayout encode_explicit(std::size_t n_dests, std::int64_t payload_bytes, int flit_bytes = 16);
// Explicit-addressing response carrying data back to one destination.
FlitLayout encode_explicit_response(std::int64_t payload_bytes, int flit_bytes = 16);

// Plain single-destination store, ld_reduce response, and static (NVLS)
// multicast: header + byte-enable + data.
FlitLayout encode_unicast(std::int64_t payload_bytes, int flit_bytes = 16);
FlitLayout encode_reduce_response(std::int64_t payload_bytes, int flit_bytes = 16);
FlitLayout encode_static_multicast(std::int64_t payload_bytes, int flit_bytes = 16);
FlitLayout encode_ack();
// Small control message (token counts, readiness notifications).
FlitLayout encode_metadata(std::int64_t bytes, int flit_bytes = 16);

FlitLayout layout_of(const Packet& pkt, int flit_bytes = 16);

// Data flits over total flits across the request and, when given, the response.
double payload_efficiency(const FlitLayout& request,
                          const std::optional<FlitLayout>& response = std::nullopt);

// Replica of `pkt` carrying only `port_targets`, which must be a non-empty
// subset of pkt.targets.
Packet trim_targets(const Packet& pkt, std::span<const std::uint16_t> port_targets);

// One-line textual dump used by codec golden tests and `--dump-flits`.
std::string describe(const Packet& pkt, int flit_bytes = 16);

}  // namespace dysim
