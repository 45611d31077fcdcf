#include "dysim/packet.hpp"

#include <algorithm>
#include <sstream>

#include "dysim/errors.hpp"

namespace dysim {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

FlitLayout plain(std::int64_t payload_bytes, int flit_bytes) {
  return FlitLayout{kHeaderFlits, 0, byte_enable_flits_for(payload_bytes),
                    data_flits_for(payload_bytes, flit_bytes)};
}

}  // namespace

const char* to_string(PacketKind k) {
  switch (k) {
    case PacketKind::kDymultimemStReq: return "dymultimem_st_req";
    case PacketKind::kDymultimemLdReduceReq: return "dymultimem_ldreduce_req";
    case PacketKind::kReduceResponse: return "reduce_response";
    case PacketKind::kUnicastReq: return "unicast_req";
    case PacketKind::kExplicitReq: return "explicit_req";
    case PacketKind::kMulticastStaticReq: return "multicast_static_req";
    case PacketKind::kAck: return "ack";
  }
  return "?";
}

FlitLayout& FlitLayout::operator+=(const FlitLayout& o) {
  header_flits += o.header_flits;
  target_ext_flits += o.target_ext_flits;
  byte_enable_flits += o.byte_enable_flits;
  data_flits += o.data_flits;
  return *this;
}

std::int64_t data_flits_for(std::int64_t payload_bytes, int flit_bytes) {
  if (payload_bytes < 0) throw EncodingError("negative payload");
  return ceil_div(payload_bytes, flit_bytes);
}

std::int64_t byte_enable_flits_for(std::int64_t payload_bytes) {
  if (payload_bytes < 0) throw EncodingError("negative payload");
  return ceil_div(payload_bytes, kByteEnableGranule);
}

FlitLayout encode_dymultimem(PacketKind kind, std::uint64_t maddr, Stage stage,
                             std::span<const std::uint16_t> targets, std::int64_t payload_bytes,
                             std::uint32_t n_experts, int flit_bytes) {
  (void)stage;  // 1 bit inside flit0
  if (kind != PacketKind::kDymultimemStReq && kind != PacketKind::kDymultimemLdReduceReq) {
    throw EncodingError(std::string("not a dymultimem kind: ") + to_string(kind));
  }
  if (targets.empty()) throw EncodingError("dymultimem packet needs at least one target");
  if (targets.size() > kMaxTargetCount) {
    throw EncodingError("target count " + std::to_string(targets.size()) + " exceeds 15 bits");
  }
  if (maddr > kMaxMultimemAddr) throw EncodingError("multimem address exceeds 48 bits");
  for (std::uint16_t t : targets) {
    if (n_experts != 0 && t >= n_experts) {
      throw EncodingError("target expert " + std::to_string(t) + " >= n_experts " +
                          std::to_string(n_experts));
    }
  }
  FlitLayout l = plain(payload_bytes, flit_bytes);
  l.target_ext_flits = ceil_div(static_cast<std::int64_t>(targets.size()), kTargetsPerFlit);
  return l;
}

FlitLayout encode_dymultimem(const Packet& pkt, std::uint32_t n_experts, int flit_bytes) {
  return encode_dymultimem(pkt.kind, pkt.maddr, pkt.stage, pkt.targets, pkt.payload_bytes,
                           n_experts, flit_bytes);
}

FlitLayout encode_explicit(std::size_t n_dests, std::int64_t payload_bytes, int flit_bytes) {
  if (n_dests == 0) throw EncodingError("explicit packet needs at least one destination");
  FlitLayout l = plain(payload_bytes, flit_bytes);
  l.header_flits = 0;
  l.target_ext_flits = static_cast<std::int64_t>(n_dests);
  return l;
}

FlitLayout encode_explicit(std::span<const std::uint64_t> dest_addrs, std::int64_t payload_bytes,
                           int flit_bytes) {
  return encode_explicit(dest_addrs.size(), payload_bytes, flit_bytes);
}

FlitLayout encode_explicit_response(std::int64_t payload_bytes, int flit_bytes) {
  FlitLayout l = plain(payload_bytes, flit_bytes);
  l.target_ext_flits = 1;
  return l;
}

FlitLayout encode_unicast(std::int64_t payload_bytes, int flit_bytes) {
  return plain(payload_bytes, flit_bytes);
}

FlitLayout encode_reduce_response(std::int64_t payload_bytes, int flit_bytes) {
  return plain(payload_bytes, flit_bytes);
}

FlitLayout encode_static_multicast(std::int64_t payload_bytes, int flit_bytes) {
  return plain(payload_bytes, flit_bytes);
}

FlitLayout encode_ack() { return FlitLayout{1, 0, 0, 0}; }

FlitLayout encode_metadata(std::int64_t bytes, int flit_bytes) {
  return FlitLayout{kHeaderFlits, 0, 0, data_flits_for(bytes, flit_bytes)};
}

FlitLayout layout_of(const Packet& pkt, int flit_bytes) {
  switch (pkt.kind) {
    case PacketKind::kDymultimemStReq:
    case PacketKind::kDymultimemLdReduceReq:
      return encode_dymultimem(pkt, 0, flit_bytes);
    case PacketKind::kExplicitReq:
      return encode_explicit(pkt.targets.size(), pkt.payload_bytes, flit_bytes);
    case PacketKind::kReduceResponse:
      return encode_reduce_response(pkt.payload_bytes, flit_bytes);
    case PacketKind::kUnicastReq:
      return encode_unicast(pkt.payload_bytes, flit_bytes);
    case PacketKind::kMulticastStaticReq:
      return encode_static_multicast(pkt.payload_bytes, flit_bytes);
    case PacketKind::kAck:
      return encode_ack();
  }
  return {};
}

double payload_efficiency(const FlitLayout& request, const std::optional<FlitLayout>& response) {
  FlitLayout sum = request;
  if (response) sum += *response;
  if (sum.total() == 0) throw EncodingError("payload efficiency of an empty layout");
  return static_cast<double>(sum.data_flits) / static_cast<double>(sum.total());
}

Packet trim_targets(const Packet& pkt, std::span<const std::uint16_t> port_targets) {
  if (port_targets.empty()) throw EncodingError("trim to an empty target list");
  for (std::uint16_t t : port_targets) {
    if (std::find(pkt.targets.begin(), pkt.targets.end(), t) == pkt.targets.end()) {
      throw EncodingError("trim target " + std::to_string(t) + " not in packet");
    }
  }
  Packet out = pkt;
  out.targets.assign(port_targets.begin(), port_targets.end());
  return out;
}

std::string describe(const Packet& pkt, int flit_bytes) {
  const FlitLayout l = layout_of(pkt, flit_bytes);
  std::ostringstream os;
  os << to_string(pkt.kind) << " maddr=0x" << std::hex << pkt.maddr << std::dec
     << " stage=" << (pkt.stage == Stage::kDispatch ? "dispatch" : "combine")
     << " targets=" << pkt.targets.size() << " payload=" << pkt.payload_bytes
     << " hdr=" << l.header_flits << " ext=" << l.target_ext_flits
     << " be=" << l.byte_enable_flits << " data=" << l.data_flits << " total=" << l.total();
  return os.str();
}

}  // namespace dysim
