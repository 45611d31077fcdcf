#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dysim {

enum class GemmKind : std::uint8_t { kGemm1 = 0, kGemm2 = 1 };

struct TSEntry {
  bool valid = false;
  int exp_id = 0;
  int row = 0;
  std::int64_t dacc = 0;
  int tbcnt1 = 0;
  int tbcnt2 = 0;
  int issued1 = 0;
  int issued2 = 0;
};

// Per-GPU tile status table over the GPU's local experts. Rows are tsize
// tokens of one expert; the last row of an expert may be partial.
class TileStatusTable {
 public:
  struct Shape {
    int first_expert = 0;
    int n_local_experts = 1;
    int tsize = 128;
    std::int64_t bsize = 0;
    int tbs_gemm1 = 1;  // thread blocks per GEMM-1 row
    int tbs_gemm2 = 1;
    int capacity = 1024;  // live entries before DRAM offload
  };

  TileStatusTable(const Shape& shape, std::vector<std::uint32_t> nactive);

  int rows(int expert) const;
  int tokens_in_row(int expert, int row) const;
  std::int64_t threshold(int expert, int row) const;
  int tbs(GemmKind which) const;

  // Returns true when the row just became GEMM-1 ready.
  bool on_store_arrival(int expert, int row, std::int64_t bytes);
  // Throws ProtocolError when the row is not ready for this GEMM or all its
  // thread blocks were already issued.
  void on_tb_issue(GemmKind which, int expert, int row);
  // Returns true when this completion finished the row.
  bool on_tb_complete(GemmKind which, int expert, int row);

  bool gemm1_ready(int expert, int row) const;
  bool row_done(GemmKind which, int expert, int row) const;
  const TSEntry& entry(int expert, int row) const;

  int live_entries() const { return live_; }
  int peak_live() const { return peak_live_; }
  // True when the last access touched an entry beyond on-chip capacity.
  bool overflowing() const { return live_ > shape_.capacity; }
  std::uint64_t overflow_accesses() const { return overflow_accesses_; }
  const Shape& shape() const { return shape_; }

 private:
  TSEntry& at(int expert, int row);
  const TSEntry& at(int expert, int row) const;
  void touch();

  Shape shape_;
  std::vector<std::uint32_t> nactive_;
  std::vector<int> row_base_;  // index of row 0 per local expert
  std::vector<TSEntry> entries_;
  int live_ = 0;
  int peak_live_ = 0;
  std::uint64_t overflow_accesses_ = 0;
};

// Token ids per tile row, in layout-block allocation order.
class TokenIdTable {
 public:
  TokenIdTable(const TileStatusTable& ts);
  void register_token(int expert, int row, std::int32_t tid);
  std::span<const std::int32_t> tids(int expert, int row) const;

 private:
  const TileStatusTable* ts_;
  std::vector<int> row_base_;
  std::vector<std::vector<std::int32_t>> tids_;
};

// Groups a row's tids by source GPU, one notification per remote source.
struct Notification {
  int source_gpu = 0;
  std::vector<std::int32_t> tids;
};
// Groups in ascending source order. The caller handles its own GPU's group
// locally at zero network cost.
std::vector<Notification> notify_sources(std::span<const std::int32_t> tids,
                                         const std::function<int(std::int32_t)>& source_of);
constexpr std::int64_t kNotifyBytesPerTid = 4;

// Per-source-GPU combine readiness counters, allocated lazily per tid.
class OutputReadinessTable {
 public:
  explicit OutputReadinessTable(int topk, int capacity = 1024);
  // Returns true when tid reached topk; the entry is then released.
  bool on_notification(std::int32_t tid);
  int n_ready(std::int32_t tid) const;
  int live_entries() const { return static_cast<int>(entries_.size()); }
  int peak_live() const { return peak_live_; }
  bool overflowing() const { return live_entries() > capacity_; }
  std::uint64_t overflow_accesses() const { return overflow_accesses_; }

 private:
  int topk_;
  int capacity_;
  std::unordered_map<std::int32_t, int> entries_;
  int peak_live_ = 0;
  std::uint64_t overflow_accesses_ = 0;
};

enum class SmGroup : std::uint8_t { kDispatch = 0, kGemm1 = 1, kGemm2 = 2, kCombine = 3 };
const char* to_string(SmGroup g);

struct SMPartition {
  int dispatch = 16;
  int gemm1 = 50;
  int gemm2 = 50;
  int combine = 16;
  bool share_gemm = true;

  int total() const { return dispatch + gemm1 + gemm2 + combine; }
  int size(SmGroup g) const;
  void validate(int num_sms) const;

  // Fixed communication groups, GEMM groups split the remainder evenly.
  static SMPartition fixed(int num_sms, int comm_sms);
  // Every group sized in proportion to its stage's standalone time.
  static SMPartition proportional(int num_sms, const double stage_time[4], int min_group = 1);
};

struct GemmTask {
  GemmKind which = GemmKind::kGemm1;
  int expert = 0;
  int row = 0;
};

// FIFO ready queues for GEMM rows. Each queued row hands out its thread
// blocks one by one; a group borrows the other GEMM queue when its own is
// empty and sharing is on.
class GemmScheduler {
 public:
  GemmScheduler(int tbs_gemm1, int tbs_gemm2, bool share);

  void push_row(GemmKind which, int expert, int row);
  // Oldest ready thread block for a free SM of `group`, or none.
  std::optional<GemmTask> next_task(SmGroup group);
  bool empty() const { return q_[0].empty() && q_[1].empty(); }
  std::size_t queued_rows(GemmKind which) const { return q_[static_cast<int>(which)].size(); }
  std::uint64_t borrowed() const { return borrowed_; }

 private:
  struct Pending {
    int expert;
    int row;
    int left;
  };
  std::optional<GemmTask> pop(GemmKind which);

  int tbs_[2];
  bool share_;
  std::deque<Pending> q_[2];
  std::uint64_t borrowed_ = 0;
};

}  // namespace dysim
