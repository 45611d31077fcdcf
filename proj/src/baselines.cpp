#include "dysim/baselines.hpp"

#include <algorithm>

#include "dysim/errors.hpp"
#include "dysim/packet.hpp"

namespace dysim {

const char* to_string(Method m) {
  switch (m) {
    case Method::kDeepEP: return "deepep";
    case Method::kNvlsWorkaround: return "nvls_workaround";
    case Method::kExplicit: return "explicit";
    case Method::kCometOverlap: return "comet_overlap";
    case Method::kDySharpBasic: return "dysharp_basic";
    case Method::kDySharpComet: return "dysharp_comet";
    case Method::kFusionOnly: return "fusion_only";
    case Method::kDySharpFull: return "dysharp_full";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

MethodTraits traits_of(Method m) {
  switch (m) {
    case Method::kDeepEP: return {Overlap::kSerialized, Dataflow::kUnicast, true, false};
    case Method::kNvlsWorkaround: return {Overlap::kSerialized, Dataflow::kStatic, false, false};
    case Method::kExplicit: return {Overlap::kPipelined, Dataflow::kExplicit, true, true};
    case Method::kCometOverlap: return {Overlap::kPhased, Dataflow::kUnicast, true, false};
    case Method::kDySharpBasic: return {Overlap::kSerialized, Dataflow::kDynamic, false, false};
    case Method::kDySharpComet: return {Overlap::kPhased, Dataflow::kDynamic, false, true};
    case Method::kFusionOnly: return {Overlap::kPipelined, Dataflow::kUnicast, true, false};
    case Method::kDySharpFull: return {Overlap::kPipelined, Dataflow::kDynamic, false, true};
  }
  throw ConfigError("bad method");
}

StageMask overlap_policy(Method m) {
  StageMask mask{};
  for (int i = 0; i < 4; ++i) mask[i][i] = true;
  auto both = [&](int a, int b) { mask[a][b] = mask[b][a] = true; };
  switch (traits_of(m).overlap) {
    case Overlap::kSerialized:
      break;
    case Overlap::kPhased:
      both(0, 1);
      both(2, 3);
      break;
    case Overlap::kPipelined:
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) mask[a][b] = true;
      break;
  }
  return mask;
}

double NvlsTraffic::useless_ratio() const {
  if (needed_fanout == 0) return 0.0;
  return static_cast<double>(useless_fanout) / static_cast<double>(needed_fanout);
}

NvlsTraffic nvls_workaround_traffic(const RoutingTable& routing, const Placement& placement,
                                    const SystemConfig& sys, const ModelConfig& model,
                                    std::int64_t fragment_bytes) {
  NvlsTraffic out;
  const std::int64_t token = model.token_bytes();
  std::int64_t data = 0;
  for (std::int64_t off = 0; off < token; off += fragment_bytes) {
    data += encode_static_multicast(std::min(fragment_bytes, token - off)).data_flits;
  }
  const int n = sys.n_gpu;
  for (int t = 0; t < routing.n_tokens(); ++t) {
    const int src = source_gpu_of(t, routing.n_tokens(), n);
    const int d = distinct_dest_gpus(routing.experts(t), placement, src, false);
    // Dispatch: one up-link copy, n-1 down-link replicas. Combine: n-1 up-link
    // partials, one reduced down-link result.
    out.total.up += data + std::int64_t{n - 1} * data;
    out.total.down += std::int64_t{n - 1} * data + data;
    out.needed_fanout += 2 * std::int64_t{d} * data;
    out.useless_fanout += 2 * std::int64_t{n - 1 - d} * data;
  }
  return out;
}

}  // namespace dysim
