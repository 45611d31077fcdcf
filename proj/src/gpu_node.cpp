#include "dysim/gpu_node.hpp"

#include <cmath>
#include <string>

#include "dysim/errors.hpp"

namespace dysim {

MultimemQ::MultimemQ(int capacity) : capacity_(capacity) {
  if (capacity <= 0) throw ConfigError("MultimemQ capacity must be positive");
}

void MultimemQ::acquire() {
  if (full()) throw CapacityError("MultimemQ overflow at " + std::to_string(capacity_) + " entries");
  ++occupied_;
  ++issued_;
  if (occupied_ > peak_) peak_ = occupied_;
}

void MultimemQ::retire() {
  if (occupied_ == 0) throw ProtocolError("MultimemQ retire with no outstanding entry");
  --occupied_;
  ++retired_;
}

void ComputeModel::validate() const {
  if (!(peak_flops > 0)) throw ConfigError("peak_flops must be positive");
  if (!(efficiency > 0 && efficiency <= 8)) throw ConfigError("gemm efficiency must be in (0, 8]");
  if (num_sms <= 0) throw ConfigError("num_sms must be positive");
  if (tile_m <= 0 || tile_n <= 0) throw ConfigError("tile dimensions must be positive");
}

SimTime ComputeModel::gemm_time(std::int64_t m, std::int64_t n, std::int64_t k) const {
  if (m < 0 || n <= 0 || k <= 0) throw ConfigError("gemm dimensions must be positive");
  if (m == 0) return 0;
  const std::int64_t mq = (m + tile_m - 1) / tile_m * tile_m;
  const double seconds = 2.0 * static_cast<double>(mq) * n * k / (peak_flops * efficiency);
  return static_cast<SimTime>(std::llround(seconds * 1e15));
}

SimTime ComputeModel::tb_time(std::int64_t k) const {
  const double per_sm = peak_flops * efficiency / num_sms;
  const double seconds = 2.0 * tile_m * tile_n * static_cast<double>(k) / per_sm;
  return static_cast<SimTime>(std::llround(seconds * 1e15));
}

int ComputeModel::tbs_per_row(std::int64_t n) const {
  return static_cast<int>((n + tile_n - 1) / tile_n);
}

}  // namespace dysim
