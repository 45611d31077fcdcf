#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dysim/topology.hpp"
#include "dysim/workload.hpp"

namespace dysim {

enum class Method : std::uint8_t {
  kDeepEP,
  kNvlsWorkaround,
  kExplicit,
  kCometOverlap,
  kDySharpBasic,
  kDySharpComet,
  kFusionOnly,
  kDySharpFull,
};

inline constexpr std::array<Method, 8> kAllMethods = {
    Method::kDeepEP,       Method::kNvlsWorkaround, Method::kExplicit,   Method::kCometOverlap,
    Method::kDySharpBasic, Method::kDySharpComet,   Method::kFusionOnly, Method::kDySharpFull};

const char* to_string(Method m);
// Throws ConfigError naming the value for unknown methods.
Method parse_method(std::string_view name);

enum class Overlap : std::uint8_t {
  kSerialized,  // Dispatch | GEMM-1 | GEMM-2 | Combine with global barriers
  kPhased,      // (Dispatch || GEMM-1) | (GEMM-2 || Combine)
  kPipelined,   // all four stages concurrent, readiness gated
};

// How tokens move through the fabric.
enum class Dataflow : std::uint8_t {
  kUnicast,   // one copy per destination GPU, pushed pre-reduced partials
  kStatic,    // static multicast to every GPU, static reduce-scatter
  kExplicit,  // in-switch multicast/reduction with per-destination addresses
  kDynamic,   // dymultimem st / ld_reduce
};

struct MethodTraits {
  Overlap overlap;
  Dataflow dataflow;
  bool metadata_exchange;  // per GPU pair token-count exchange before Dispatch
  bool notifications;      // tracker notifies sources on GEMM-2 row completion
};

MethodTraits traits_of(Method m);

// Stage-concurrency mask: mask[a][b] is true when stages a and b may run at
// the same time. Stage order is Dispatch, GEMM-1, GEMM-2, Combine.
using StageMask = std::array<std::array<bool, 4>, 4>;
StageMask overlap_policy(Method m);

struct DirectionFlits {
  std::int64_t up = 0;
  std::int64_t down = 0;
};

// Analytic data-flit totals of the static-collective workaround over one
// routing table. `needed` counts fan-out legs that reach GPUs hosting one of
// the token's experts; `useless` the remainder.
struct NvlsTraffic {
  DirectionFlits total;
  std::int64_t needed_fanout = 0;
  std::int64_t useless_fanout = 0;
  double useless_ratio() const;
};
NvlsTraffic nvls_workaround_traffic(const RoutingTable& routing, const Placement& placement,
                                    const SystemConfig& sys, const ModelConfig& model,
                                    std::int64_t fragment_bytes = 256);

}  // namespace dysim
