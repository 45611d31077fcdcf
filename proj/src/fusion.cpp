#include "dysim/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dysim/errors.hpp"

namespace dysim {

namespace {
std::string where(int expert, int row) {
  return "expert " + std::to_string(expert) + " row " + std::to_string(row);
}
}  // namespace

TileStatusTable::TileStatusTable(const Shape& shape, std::vector<std::uint32_t> nactive)
    : shape_(shape), nactive_(std::move(nactive)) {
  if (shape_.tsize <= 0) throw ConfigError("tsize must be positive");
  if (shape_.bsize <= 0) throw ConfigError("block size must be positive");
  if (shape_.tbs_gemm1 <= 0 || shape_.tbs_gemm2 <= 0) {
    throw ConfigError("thread blocks per row must be positive");
  }
  if (static_cast<int>(nactive_.size()) != shape_.n_local_experts) {
    throw ConfigError("nactive size does not match local expert count");
  }
  int n = 0;
  for (std::uint32_t a : nactive_) {
    row_base_.push_back(n);
    n += static_cast<int>((a + shape_.tsize - 1) / shape_.tsize);
  }
  row_base_.push_back(n);
  entries_.resize(n);
}

int TileStatusTable::rows(int expert) const {
  const int le = expert - shape_.first_expert;
  if (le < 0 || le >= shape_.n_local_experts) {
    throw ProtocolError("expert " + std::to_string(expert) + " is not local");
  }
  return row_base_[le + 1] - row_base_[le];
}

int TileStatusTable::tokens_in_row(int expert, int row) const {
  if (row < 0 || row >= rows(expert)) throw ProtocolError("no tile row for " + where(expert, row));
  const std::int64_t n = nactive_[expert - shape_.first_expert];
  return static_cast<int>(std::min<std::int64_t>(shape_.tsize, n - std::int64_t{row} * shape_.tsize));
}

std::int64_t TileStatusTable::threshold(int expert, int row) const {
  return tokens_in_row(expert, row) * shape_.bsize;
}

int TileStatusTable::tbs(GemmKind which) const {
  return which == GemmKind::kGemm1 ? shape_.tbs_gemm1 : shape_.tbs_gemm2;
}

TSEntry& TileStatusTable::at(int expert, int row) {
  if (row < 0 || row >= rows(expert)) throw ProtocolError("no tile row for " + where(expert, row));
  return entries_[row_base_[expert - shape_.first_expert] + row];
}

const TSEntry& TileStatusTable::at(int expert, int row) const {
  return const_cast<TileStatusTable*>(this)->at(expert, row);
}

const TSEntry& TileStatusTable::entry(int expert, int row) const { return at(expert, row); }

void TileStatusTable::touch() {
  if (overflowing()) ++overflow_accesses_;
}

bool TileStatusTable::on_store_arrival(int expert, int row, std::int64_t bytes) {
  if (bytes <= 0) throw ProtocolError("store of " + std::to_string(bytes) + " B");
  TSEntry& e = at(expert, row);
  if (!e.valid) {
    e.valid = true;
    e.exp_id = expert;
    e.row = row;
    ++live_;
    peak_live_ = std::max(peak_live_, live_);
  }
  touch();
  const std::int64_t th = threshold(expert, row);
  if (e.dacc + bytes > th) {
    throw ProtocolError("dacc overshoot at " + where(expert, row) + ": " +
                        std::to_string(e.dacc + bytes) + " > " + std::to_string(th));
  }
  e.dacc += bytes;
  return e.dacc == th;
}

bool TileStatusTable::gemm1_ready(int expert, int row) const {
  const TSEntry& e = at(expert, row);
  return e.dacc == threshold(expert, row);
}

bool TileStatusTable::row_done(GemmKind which, int expert, int row) const {
  const TSEntry& e = at(expert, row);
  return which == GemmKind::kGemm1 ? e.tbcnt1 == shape_.tbs_gemm1 : e.tbcnt2 == shape_.tbs_gemm2;
}

void TileStatusTable::on_tb_issue(GemmKind which, int expert, int row) {
  TSEntry& e = at(expert, row);
  if (which == GemmKind::kGemm1) {
    if (!gemm1_ready(expert, row)) throw ProtocolError("GEMM-1 issued before dispatch of " + where(expert, row));
    if (e.issued1 >= shape_.tbs_gemm1) throw ProtocolError("GEMM-1 over-issued at " + where(expert, row));
    ++e.issued1;
  } else {
    if (e.tbcnt1 != shape_.tbs_gemm1) throw ProtocolError("GEMM-2 issued before GEMM-1 of " + where(expert, row));
    if (e.issued2 >= shape_.tbs_gemm2) throw ProtocolError("GEMM-2 over-issued at " + where(expert, row));
    ++e.issued2;
  }
}

bool TileStatusTable::on_tb_complete(GemmKind which, int expert, int row) {
  TSEntry& e = at(expert, row);
  touch();
  if (which == GemmKind::kGemm1) {
    if (e.tbcnt1 >= e.issued1) throw ProtocolError("GEMM-1 completion without issue at " + where(expert, row));
    return ++e.tbcnt1 == shape_.tbs_gemm1;
  }
  if (e.tbcnt2 >= e.issued2) throw ProtocolError("GEMM-2 completion without issue at " + where(expert, row));
  if (++e.tbcnt2 == shape_.tbs_gemm2) {
    --live_;  // row retired; the entry's counters stay for inspection
    return true;
  }
  return false;
}

TokenIdTable::TokenIdTable(const TileStatusTable& ts) : ts_(&ts) {
  const auto& sh = ts.shape();
  int n = 0;
  for (int le = 0; le < sh.n_local_experts; ++le) {
    row_base_.push_back(n);
    n += ts.rows(sh.first_expert + le);
  }
  tids_.resize(n);
}

void TokenIdTable::register_token(int expert, int row, std::int32_t tid) {
  const int idx = row_base_.at(expert - ts_->shape().first_expert) + row;
  auto& v = tids_.at(idx);
  if (static_cast<int>(v.size()) >= ts_->tokens_in_row(expert, row)) {
    throw ProtocolError("tile row overfull at " + where(expert, row));
  }
  v.push_back(tid);
}

std::span<const std::int32_t> TokenIdTable::tids(int expert, int row) const {
  return tids_.at(row_base_.at(expert - ts_->shape().first_expert) + row);
}

std::vector<Notification> notify_sources(std::span<const std::int32_t> tids,
                                         const std::function<int(std::int32_t)>& source_of) {
  std::map<int, std::vector<std::int32_t>> groups;
  for (std::int32_t t : tids) groups[source_of(t)].push_back(t);
  std::vector<Notification> out;
  out.reserve(groups.size());
  for (auto& [src, v] : groups) out.push_back({src, std::move(v)});
  return out;
}

OutputReadinessTable::OutputReadinessTable(int topk, int capacity) : topk_(topk), capacity_(capacity) {
  if (topk <= 0) throw ConfigError("topk must be positive");
}

bool OutputReadinessTable::on_notification(std::int32_t tid) {
  auto [it, fresh] = entries_.try_emplace(tid, 0);
  if (fresh) peak_live_ = std::max(peak_live_, live_entries());
  if (overflowing()) ++overflow_accesses_;
  if (++it->second > topk_) {
    throw ProtocolError("token " + std::to_string(tid) + " notified more than topk times");
  }
  if (it->second == topk_) {
    entries_.erase(it);
    return true;
  }
  return false;
}

int OutputReadinessTable::n_ready(std::int32_t tid) const {
  auto it = entries_.find(tid);
  return it == entries_.end() ? 0 : it->second;
}

const char* to_string(SmGroup g) {
  switch (g) {
    case SmGroup::kDispatch: return "dispatch";
    case SmGroup::kGemm1: return "gemm1";
    case SmGroup::kGemm2: return "gemm2";
    case SmGroup::kCombine: return "combine";
  }
  return "?";
}

int SMPartition::size(SmGroup g) const {
  switch (g) {
    case SmGroup::kDispatch: return dispatch;
    case SmGroup::kGemm1: return gemm1;
    case SmGroup::kGemm2: return gemm2;
    case SmGroup::kCombine: return combine;
  }
  return 0;
}

void SMPartition::validate(int num_sms) const {
  if (dispatch < 1 || gemm1 < 1 || gemm2 < 1 || combine < 1) {
    throw ConfigError("every SM group needs at least one SM");
  }
  if (total() != num_sms) {
    throw ConfigError("SM partition sums to " + std::to_string(total()) + ", GPU has " +
                      std::to_string(num_sms));
  }
}

SMPartition SMPartition::fixed(int num_sms, int comm_sms) {
  SMPartition p;
  p.dispatch = comm_sms;
  p.combine = comm_sms;
  const int rest = num_sms - 2 * comm_sms;
  if (rest < 2) throw ConfigError("not enough SMs left for GEMM groups");
  p.gemm1 = rest / 2;
  p.gemm2 = rest - p.gemm1;
  return p;
}

SMPartition SMPartition::proportional(int num_sms, const double stage_time[4], int min_group) {
  double sum = 0;
  for (int i = 0; i < 4; ++i) {
    if (!(stage_time[i] >= 0)) throw ConfigError("stage time must be non-negative");
    sum += stage_time[i];
  }
  if (!(sum > 0)) throw ConfigError("stage times sum to zero");
  const int spare = num_sms - 4 * min_group;
  if (spare < 0) throw ConfigError("too few SMs for four groups");
  // Largest-remainder apportionment of the spare SMs.
  int size[4];
  double rem[4];
  int used = 0;
  for (int i = 0; i < 4; ++i) {
    const double share = spare * stage_time[i] / sum;
    size[i] = static_cast<int>(std::floor(share));
    rem[i] = share - size[i];
    used += size[i];
  }
  while (used < spare) {
    int best = 0;
    for (int i = 1; i < 4; ++i) if (rem[i] > rem[best]) best = i;
    ++size[best];
    rem[best] = -1;
    ++used;
  }
  SMPartition p;
  p.dispatch = size[0] + min_group;
  p.gemm1 = size[1] + min_group;
  p.gemm2 = size[2] + min_group;
  p.combine = size[3] + min_group;
  return p;
}

GemmScheduler::GemmScheduler(int tbs_gemm1, int tbs_gemm2, bool share)
    : tbs_{tbs_gemm1, tbs_gemm2}, share_(share) {}

void GemmScheduler::push_row(GemmKind which, int expert, int row) {
  const int w = static_cast<int>(which);
  q_[w].push_back({expert, row, tbs_[w]});
}

std::optional<GemmTask> GemmScheduler::pop(GemmKind which) {
  auto& q = q_[static_cast<int>(which)];
  if (q.empty()) return std::nullopt;
  Pending& p = q.front();
  GemmTask t{which, p.expert, p.row};
  if (--p.left == 0) q.pop_front();
  return t;
}

std::optional<GemmTask> GemmScheduler::next_task(SmGroup group) {
  GemmKind own;
  if (group == SmGroup::kGemm1) {
    own = GemmKind::kGemm1;
  } else if (group == SmGroup::kGemm2) {
    own = GemmKind::kGemm2;
  } else {
    return std::nullopt;
  }
  if (auto t = pop(own)) return t;
  if (!share_) return std::nullopt;
  auto t = pop(own == GemmKind::kGemm1 ? GemmKind::kGemm2 : GemmKind::kGemm1);
  if (t) ++borrowed_;
  return t;
}

}  // namespace dysim
