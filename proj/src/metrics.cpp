#include "dysim/metrics.hpp"

#include <algorithm>

#include "dysim/errors.hpp"

namespace dysim {

const char* to_string(FlitCategory c) {
  switch (c) {
    case FlitCategory::kData: return "data";
    case FlitCategory::kHeader: return "header";
    case FlitCategory::kTargetExt: return "target_ext";
    case FlitCategory::kByteEnable: return "byte_enable";
    case FlitCategory::kMetadata: return "metadata";
    case FlitCategory::kAck: return "ack";
  }
  return "?";
}

const char* to_string(StageId s) {
  switch (s) {
    case StageId::kDispatch: return "dispatch";
    case StageId::kGemm1: return "gemm1";
    case StageId::kGemm2: return "gemm2";
    case StageId::kCombine: return "combine";
  }
  return "?";
}

std::int64_t FlitCounts::total() const {
  std::int64_t n = 0;
  for (auto v : by_cat) n += v;
  return n;
}

FlitCounts& FlitCounts::operator+=(const FlitCounts& o) {
  for (int i = 0; i < kFlitCategories; ++i) by_cat[i] += o.by_cat[i];
  return *this;
}

FlitCounts RunMetrics::total(bool up_dir) const {
  FlitCounts f;
  for (const auto& l : up_dir ? up : down) f += l.flits;
  return f;
}

std::int64_t RunMetrics::data_flits() const {
  return total(true)[FlitCategory::kData] + total(false)[FlitCategory::kData];
}

double RunMetrics::tlb_hit_rate() const {
  const auto n = tlb_hits + tlb_misses;
  return n ? static_cast<double>(tlb_hits) / static_cast<double>(n) : 0.0;
}

double RunMetrics::rb_eviction_rate() const {
  return rb_inserts ? static_cast<double>(rb_evictions) / static_cast<double>(rb_inserts) : 0.0;
}

SimTime RunMetrics::ideal_time() const {
  const int planes = std::max(1, n_planes);
  std::int64_t worst = 0;
  for (const auto* links : {&up, &down}) {
    for (std::size_t g = 0; g * planes < links->size(); ++g) {
      std::int64_t f = 0;
      for (int p = 0; p < planes; ++p) f += (*links)[g * planes + p].flits.total();
      worst = std::max(worst, f);
    }
  }
  return worst * flit_time / planes;
}

double RunMetrics::useless_ratio() const {
  return fanout_needed_data ? static_cast<double>(fanout_useless_data) / fanout_needed_data : 0.0;
}

std::vector<Interval> merge_intervals(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) {
    return a.start != b.start ? a.start < b.start : a.end < b.end;
  });
  std::vector<Interval> out;
  for (const Interval& iv : v) {
    if (iv.end <= iv.start) continue;
    if (!out.empty() && iv.start <= out.back().end) {
      out.back().end = std::max(out.back().end, iv.end);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

double link_utilization(const LinkStats& link, SimTime w0, SimTime w1) {
  if (w1 <= w0) throw ConfigError("utilization window is empty");
  auto it = std::lower_bound(link.busy.begin(), link.busy.end(), w0,
                             [](const Interval& iv, SimTime t) { return iv.end <= t; });
  SimTime busy = 0;
  for (; it != link.busy.end() && it->start < w1; ++it) {
    busy += std::min(it->end, w1) - std::max(it->start, w0);
  }
  return static_cast<double>(busy) / static_cast<double>(w1 - w0);
}

double mean_utilization(const RunMetrics& m, bool up_dir, SimTime w0, SimTime w1) {
  const auto& links = up_dir ? m.up : m.down;
  if (links.empty()) return 0.0;
  double s = 0;
  for (const auto& l : links) s += link_utilization(l, w0, w1);
  return s / static_cast<double>(links.size());
}

std::vector<double> utilization_samples(const RunMetrics& m, bool up_dir, SimTime window) {
  if (window <= 0) throw ConfigError("sampling window must be positive");
  std::vector<double> out;
  for (SimTime t = 0; t < m.completion; t += window) {
    out.push_back(mean_utilization(m, up_dir, t, std::min(t + window, m.completion)));
  }
  return out;
}

}  // namespace dysim
