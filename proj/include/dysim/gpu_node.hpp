#pragma once

#include <cstdint>

#include "dysim/sim_time.hpp"

namespace dysim {

// Per-SM queue of in-flight multimem instructions. Entries are taken at issue
// and retired when the packet starts transmission on the up link.
class MultimemQ {
 public:
  explicit MultimemQ(int capacity = 32);

  bool full() const { return occupied_ >= capacity_; }
  int occupied() const { return occupied_; }
  int capacity() const { return capacity_; }
  int peak() const { return peak_; }
  std::uint64_t issued() const { return issued_; }
  std::uint64_t retired() const { return retired_; }

  // Throws CapacityError when full; callers check full() first.
  void acquire();
  // Throws ProtocolError when nothing is outstanding.
  void retire();

 private:
  int capacity_;
  int occupied_ = 0;
  int peak_ = 0;
  std::uint64_t issued_ = 0;
  std::uint64_t retired_ = 0;
};

// Tile-quantized GEMM timing. A thread block computes one 128x128 output tile.
struct ComputeModel {
  double peak_flops = 1979e12;  // FP8 dense, whole GPU
  double efficiency = 2.6;  // calibrated: deepep L-8 comm share 0.704 at seq 8192
  int num_sms = 132;
  int tile_m = 128;
  int tile_n = 128;

  void validate() const;
  // Whole GEMM on the full GPU, m rounded up to whole tile rows; 0 when m == 0.
  SimTime gemm_time(std::int64_t m, std::int64_t n, std::int64_t k) const;
  // One thread block on one SM.
  SimTime tb_time(std::int64_t k) const;
  // Thread blocks per tile row of an (m x n) output.
  int tbs_per_row(std::int64_t n) const;
};

// Hub-side latencies applied when a packet is written into or read from
// local HBM.
struct HubLatency {
  double hub_ns = 10.0;
  double al_miss_ns = 400.0;
  double mem_ns = 200.0;
  double target_fetch_shared_ns = 30.0;
  double target_fetch_global_ns = 400.0;
  double overflow_penalty_ns = 400.0;  // TS/OR entry spilled to DRAM
};

}  // namespace dysim
