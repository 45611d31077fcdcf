#include <doctest.h>

#include <cmath>
#include <vector>

#include "dysim/errors.hpp"
#include "dysim/packet.hpp"

using namespace dysim;

namespace {

std::vector<std::uint16_t> iota_targets(int n) {
  std::vector<std::uint16_t> t(n);
  for (int i = 0; i < n; ++i) t[i] = static_cast<std::uint16_t>(i * 3);
  return t;
}

double explicit_efficiency(int n, std::int64_t payload) {
  return payload_efficiency(encode_explicit(static_cast<std::size_t>(n), payload), encode_explicit_response(payload));
}

}  // namespace

TEST_CASE("frozen format constants") {
  CHECK(kHeaderFlits == 1);
  CHECK(kByteEnableGranule == 128);
  CHECK(kTargetsPerFlit == 8);
}

TEST_CASE("dymultimem 8 targets / 256 B is 20 flits at exactly 80%") {
  const auto t = iota_targets(8);
  const FlitLayout l = encode_dymultimem(PacketKind::kDymultimemStReq, 0x1000, Stage::kDispatch, t, 256);
  CHECK(l == FlitLayout{1, 1, 2, 16});
  CHECK(payload_efficiency(l) == doctest::Approx(0.80).epsilon(1e-12));
}

TEST_CASE("explicit addressing 8 destinations / 256 B") {
  const FlitLayout req = encode_explicit(8, 256);
  CHECK(req.data_flits == 16);
  CHECK(req.target_ext_flits == 8);
  CHECK(payload_efficiency(req) == doctest::Approx(16.0 / 26.0));
  const double eff = explicit_efficiency(8, 256);
  CHECK(std::abs(eff - 0.69) <= 0.01);
}

TEST_CASE("dymultimem never below explicit over the design grid") {
  for (int n = 2; n <= 32; ++n) {
    for (std::int64_t g : {64, 128, 256, 512, 1024}) {
      const auto t = iota_targets(n);
      const double dy =
          payload_efficiency(encode_dymultimem(PacketKind::kDymultimemStReq, 0, Stage::kDispatch, t, g));
      CAPTURE(n);
      CAPTURE(g);
      CHECK(dy >= explicit_efficiency(n, g));
    }
  }
}

TEST_CASE("efficiency grows toward 1 with payload") {
  const auto t = iota_targets(8);
  double prev = 0;
  for (std::int64_t g = 64; g <= (1 << 20); g *= 4) {
    const double e = payload_efficiency(encode_dymultimem(PacketKind::kDymultimemStReq, 0, Stage::kDispatch, t, g));
    CHECK(e > prev);
    prev = e;
  }
  CHECK(prev > 0.88);
}

TEST_CASE("target extension flits pack 8 ids each") {
  for (int n : {1, 7, 8, 9, 16, 17, 32}) {
    const auto t = iota_targets(n);
    const auto l = encode_dymultimem(PacketKind::kDymultimemLdReduceReq, 0, Stage::kCombine, t, 0);
    CHECK(l.target_ext_flits == (n + 7) / 8);
    CHECK(l.data_flits == 0);
  }
}

TEST_CASE("encoder rejects malformed requests") {
  const std::vector<std::uint16_t> none;
  CHECK_THROWS_AS(encode_dymultimem(PacketKind::kDymultimemStReq, 0, Stage::kDispatch, none, 256), EncodingError);
  const auto t = iota_targets(4);
  CHECK_THROWS_AS(encode_dymultimem(PacketKind::kUnicastReq, 0, Stage::kDispatch, t, 256), EncodingError);
  CHECK_THROWS_AS(encode_dymultimem(PacketKind::kDymultimemStReq, kMaxMultimemAddr + 1, Stage::kDispatch, t, 256),
                  EncodingError);
  CHECK_THROWS_AS(encode_dymultimem(PacketKind::kDymultimemStReq, 0, Stage::kDispatch, t, 256, 5), EncodingError);
  CHECK_THROWS_AS(data_flits_for(-1), EncodingError);
  CHECK_THROWS_AS(encode_explicit(std::size_t{0}, 256), EncodingError);
}

TEST_CASE("trimmed replicas keep only their port's targets") {
  Packet p{PacketKind::kDymultimemStReq, 0x40, Stage::kDispatch, {1, 9, 17, 30}, 256};
  const std::vector<std::uint16_t> sub = {9, 30};
  const Packet r = trim_targets(p, sub);
  CHECK(r.targets == sub);
  CHECK(r.maddr == p.maddr);
  CHECK(layout_of(r).target_ext_flits == 1);
  const std::vector<std::uint16_t> bad = {2};
  CHECK_THROWS_AS(trim_targets(p, bad), EncodingError);
}

TEST_CASE("describe golden lines") {
  Packet p{PacketKind::kDymultimemStReq, 0x1000, Stage::kDispatch, iota_targets(8), 256};
  CHECK(describe(p) == "dymultimem_st_req maddr=0x1000 stage=dispatch targets=8 payload=256 hdr=1 ext=1 be=2 data=16 total=20");
  Packet a{PacketKind::kAck, 0, Stage::kDispatch, {}, 0};
  CHECK(layout_of(a).total() == 1);
}
