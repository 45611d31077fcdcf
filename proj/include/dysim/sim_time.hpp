#pragma once

#include <cmath>
#include <cstdint>

namespace dysim {

// Simulation time in integer femtoseconds. A 16 B flit on a 450 GB/s link is
// 35555.6 fs, so per-packet rounding stays below one part in 10^5.
using SimTime = std::int64_t;

inline constexpr SimTime kFsPerPs = 1000;
inline constexpr SimTime kFsPerNs = 1000 * kFsPerPs;

constexpr SimTime from_ns(double ns) {
  return static_cast<SimTime>(ns * static_cast<double>(kFsPerNs) + 0.5);
}

constexpr double to_ns(SimTime t) {
  return static_cast<double>(t) / static_cast<double>(kFsPerNs);
}

// Serialization time of `bytes` at `bytes_per_second`, rounded to nearest fs.
inline SimTime serialization_time(std::int64_t bytes, double bytes_per_second) {
  return static_cast<SimTime>(
      std::llround(static_cast<double>(bytes) * 1e15 / bytes_per_second));
}

}  // namespace dysim
