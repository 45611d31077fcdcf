#include "dysim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <ostream>
#include <sstream>

#include "dysim/errors.hpp"
#include "dysim/event_queue.hpp"
#include "dysim/rng.hpp"
#include "dysim/switch_fabric.hpp"

namespace dysim {

void RunConfig::validate() const {
  sys.validate();
  model.validate();
  compute.validate();
  if (model.n_experts % sys.n_gpu != 0) {
    throw ConfigError("n_experts (" + std::to_string(model.n_experts) +
                      ") must be divisible by n_gpu (" + std::to_string(sys.n_gpu) + ")");
  }
  if (model.seq_len % sys.n_gpu != 0) {
    throw ConfigError("seq_len must be divisible by n_gpu");
  }
  if (tsize <= 0) throw ConfigError("tsize must be positive");
  if (fragment_bytes <= 0) throw ConfigError("fragment_bytes must be positive");
  if (fragment_bytes > sys.reduction_buffer_bytes) {
    throw ConfigError("fragment larger than the reduction buffer");
  }
  if (comm_sms < 1) throw ConfigError("comm_sms must be at least 1");
  if (2 * comm_sms + 2 > compute.num_sms) throw ConfigError("comm_sms leaves no SMs for GEMM");
  if (combine_window < 1) throw ConfigError("combine_window must be at least 1");
  if (!(window_mark_fraction > 0 && window_mark_fraction <= 1)) {
    throw ConfigError("window_mark_fraction must be in (0, 1]");
  }
  if (combine_window_max < combine_window) throw ConfigError("combine_window_max must be >= combine_window");
  if (poll_ns < 0) throw ConfigError("poll_ns must be non-negative");
  if (explicit_compute_tax < 0 || explicit_compute_tax >= 1) {
    throw ConfigError("explicit_compute_tax must be in [0, 1)");
  }
  if (explicit_comm_overhead < 0) throw ConfigError("explicit_comm_overhead must be non-negative");
}

std::array<double, 4> standalone_stage_times(const RunConfig& cfg, const RoutingTable& routing) {
  const Placement place = Placement::block(cfg.model.n_experts, cfg.sys.n_gpu);
  const int n = cfg.sys.n_gpu;
  std::vector<double> sent(n, 0.0);
  for (int t = 0; t < routing.n_tokens(); ++t) {
    const int src = source_gpu_of(t, routing.n_tokens(), n);
    sent[src] += distinct_dest_gpus(routing.experts(t), place, src, false);
  }
  const double comm = *std::max_element(sent.begin(), sent.end()) *
                      static_cast<double>(cfg.model.token_bytes()) / cfg.sys.link_bw_per_dir;
  const auto loads = routing.expert_loads();
  double g1 = 0, g2 = 0;
  for (int g = 0; g < n; ++g) {
    double a = 0, b = 0;
    for (int e = place.first_expert(g); e < place.first_expert(g) + place.experts_per_gpu; ++e) {
      a += to_ns(cfg.compute.gemm_time(loads[e], cfg.model.moe_hidden_size, cfg.model.hidden_size));
      b += to_ns(cfg.compute.gemm_time(loads[e], cfg.model.hidden_size, cfg.model.moe_hidden_size));
    }
    g1 = std::max(g1, a * 1e-9);
    g2 = std::max(g2, b * 1e-9);
  }
  return {comm, g1, g2, comm};
}

SMPartition resolve_partition(const RunConfig& cfg, const RoutingTable& routing) {
  SMPartition p;
  if (cfg.partition == PartitionMode::kProportional) {
    const auto st = standalone_stage_times(cfg, routing);
    p = SMPartition::proportional(cfg.compute.num_sms, st.data());
  } else {
    p = SMPartition::fixed(cfg.compute.num_sms, cfg.comm_sms);
  }
  p.share_gemm = cfg.share_gemm;
  p.validate(cfg.compute.num_sms);
  return p;
}

namespace {

enum class Op : std::uint8_t {
  kStore,            // dymultimem.st or explicit multicast store
  kUnicastStore,     // one destination GPU
  kStaticStore,      // static multicast to every other GPU
  kReduceReq,        // dymultimem.ld_reduce or explicit reduce request
  kStaticReduceReq,  // static reduce over every other GPU
  kPartial,          // destination GPU -> switch
  kReduced,          // switch -> source GPU
  kPush,             // pre-reduced Combine partial, expert GPU -> source GPU
  kAck,
  kMeta,
  kNotify,
};

const char* op_name(Op op) {
  switch (op) {
    case Op::kStore: return "store";
    case Op::kUnicastStore: return "unicast_store";
    case Op::kStaticStore: return "static_store";
    case Op::kReduceReq: return "reduce_req";
    case Op::kStaticReduceReq: return "static_reduce_req";
    case Op::kPartial: return "partial";
    case Op::kReduced: return "reduced";
    case Op::kPush: return "push";
    case Op::kAck: return "ack";
    case Op::kMeta: return "meta";
    case Op::kNotify: return "notify";
  }
  return "?";
}

struct Pkt {
  Op op = Op::kStore;
  std::uint8_t vclass = 0;  // 0 request, 1 response
  std::uint8_t stage = 0;   // 0 Dispatch, 1 Combine
  bool useful = true;
  bool final = false;
  bool marked = false;  // source port's reduction buffer was above the mark threshold
  std::int16_t src = 0;
  std::int16_t dst = -1;
  std::int16_t mq_sm = -1;  // issuing SM holding a MultimemQ entry
  std::uint8_t mq_group = 0;
  std::int32_t token = 0;
  std::int32_t frag = 0;
  std::uint32_t count = 0;
  std::int64_t bytes = 0;  // fragment payload the operation moves
  std::uint64_t req = 0;
  std::uint64_t value = 0;
  FlitLayout layout;
  std::vector<std::uint16_t> targets;
  std::vector<std::int32_t> aux;  // lidx per target, or tids for notifications
};

enum class EvKind : std::uint8_t {
  kUpFree,
  kDownFree,
  kSwArrive,
  kSwDeliver,
  kGpuArrive,
  kHubDone,
  kEnqueueUp,
  kLocalWrite,
  kTbDone,
  kRowReady,
  kCombineReady,
  kPushReady,
  kSmWake,
};

struct Ev {
  EvKind kind = EvKind::kSmWake;
  std::uint8_t sub = 0;
  std::int16_t a = 0;
  std::int32_t b = 0;
  std::int32_t c = 0;
  std::uint32_t id = 0;
};

struct Chan {
  std::deque<std::uint32_t> q[2];                 // down links
  std::vector<std::deque<std::uint32_t>> vq[2];  // up links, per VC
  int vrr[2] = {0, 0};
  bool busy = false;
  int rr = 0;
};

// Input port: per class, round-robin over VCs keyed by first output port.
// Credits are per VC.
struct SwIn {
  std::vector<std::deque<std::uint32_t>> vq[2];
  std::vector<std::uint8_t> blocked[2];
  int rr[2] = {0, 0};
  std::vector<std::int64_t> credits[2];
};

struct SwOut {
  std::int64_t reserved[2] = {0, 0};
  std::vector<std::pair<int, int>> waiters[2];  // (input, vc)
};

struct IssueSm {
  MultimemQ mq;
  std::int32_t token = -1;
  int next = 0;
  int n_pkts = 0;
  bool window_blocked = false;
  bool stalled = false;
  std::vector<int> dests;
  explicit IssueSm(int cap) : mq(cap) {}
};

// Unfinished ld_reduce fragments of one GPU's Combine SMs, see
// RunConfig::combine_window.
struct CombineWindow {
  int outstanding = 0;
  double cwnd = 0;
  double floor = 0;
  double cap = 0;
  bool slow_start = true;
  SimTime last_cut = -1;
};

struct Gpu {
  CombineWindow cw;
  std::unique_ptr<ALManager> al;
  std::unique_ptr<ALManager> al_prev;  // previous layer, pure-communication Combine
  std::unique_ptr<TileStatusTable> ts;
  std::unique_ptr<TokenIdTable> tid;
  std::unique_ptr<OutputReadinessTable> orr;
  std::unique_ptr<GemmScheduler> gs;
  std::vector<IssueSm> dsm;
  std::vector<IssueSm> csm;
  int gemm_free[2] = {0, 0};
  std::vector<std::int32_t> own_tokens;
  std::size_t disp_cursor = 0;
  bool dispatch_open = false;
  int metas = 0;
  std::deque<std::int32_t> comb_ready;
  std::vector<std::uint8_t> local_left;  // push readiness: local experts of token pending GEMM-2
  std::array<SimTime, kStages> st_start;
  std::array<SimTime, kStages> st_end;
};

constexpr std::uint8_t kDispatchGroup = 0;
constexpr std::uint8_t kCombineGroup = 1;

class Sim {
 public:
  Sim(const RunConfig& cfg, const RoutingTable& routing);
  RunMetrics run();

 private:
  // transport
  std::uint32_t alloc();
  void release(std::uint32_t id);
  Pkt& pk(std::uint32_t id) { return pool_[id]; }
  void enqueue_up(int g, std::uint32_t id);
  void kick_up(int ci);
  void kick_down(int ci);
  void start_tx(bool up, int ci, std::uint32_t id);
  void on_sw_arrive(int ii, std::uint32_t id);
  struct Leg {
    int port;
    std::int64_t flits;
  };
  void legs_of(const Pkt& p, std::vector<Leg>& legs) const;
  int vc_of(const Pkt& p) const;
  void try_forward(int ii, int c);
  void forward(int ii, std::uint32_t id);
  void deliver_down(int port, std::uint32_t id);
  FlitLayout replica_layout(const Pkt& p, std::size_t n_targets) const;
  FlitLayout response_layout(std::int64_t bytes) const;

  // GPU side
  void on_gpu_arrive(int g, std::uint32_t id);
  void on_hub_done(int g, std::uint32_t id);
  void record_store(int g, int expert, std::uint32_t lidx, std::int32_t token, std::int64_t bytes,
                    bool allocated);
  void on_local_write(int g, std::int32_t token);
  void on_dispatch_acked(int g);
  void open_dispatch(int g);
  void dispatch_step(int g, int s);
  void issue_dispatch_packet(int g, int s);
  void combine_step(int g, int s);
  void issue_combine_packet(int g, int s);
  void begin_combine_token(int g, int s, std::int32_t t);
  void push_ready(int h, std::int32_t t);
  void fold_local(std::int32_t t, int g);
  void maybe_finish(std::int32_t t);
  void schedule_gemm(int g);
  void on_tb_done(int g, int group, GemmKind which, int expert, int row);
  void on_gemm2_row_done(int g, int expert, int row);
  void retire_mq(const Pkt& p);
  void wake(int g, std::uint8_t group, int s);
  void mark(int g, StageId st, SimTime t0, SimTime t1);
  void progress();
  void start_gemm_all(GemmKind which);
  void start_combine_all();
  void finalize(SimTime end);

  std::uint64_t maddr(Stage st, std::int32_t t, int f) const {
    return gpus_[0].al->maddr_of(st, static_cast<std::uint32_t>(t),
                                 static_cast<std::uint64_t>(f) * cfg_.fragment_bytes);
  }
  std::int64_t frag_bytes(int f) const {
    return std::min<std::int64_t>(cfg_.fragment_bytes, token_bytes_ - std::int64_t{f} * cfg_.fragment_bytes);
  }
  int src_of(std::int32_t t) const { return source_gpu_of(t, seq_, n_); }
  bool gated() const { return traits_.overlap != Overlap::kSerialized && !cfg_.pure_comm; }
  bool compute_on() const { return !cfg_.pure_comm; }
  bool explicit_df() const { return traits_.dataflow == Dataflow::kExplicit; }
  bool pull() const { return traits_.dataflow != Dataflow::kUnicast; }
  bool window_open(const Gpu& G) const { return !pull() || G.cw.outstanding < static_cast<int>(G.cw.cwnd); }
  bool window_full(const Gpu& G, IssueSm& sm) const {
    if (window_open(G)) return false;
    sm.window_blocked = true;
    return true;
  }
  void on_reduce_feedback(int g, bool final, bool marked);

  const RunConfig& cfg_;
  const RoutingTable& routing_;
  MethodTraits traits_;
  Placement place_;
  int n_;
  int planes_;
  int seq_;
  int nfrag_;
  std::int64_t token_bytes_;
  SimTime ft_;
  SimTime lat_;
  SimTime sw_lat_;
  SimTime poll_;
  SimTime fetch_;
  std::int64_t in_cap_;
  std::int64_t out_cap_ = 2048;
  int vcs_ = 8;
  SMPartition part_;

  EventQueue<Ev> q_;
  std::vector<Pkt> pool_;
  std::vector<std::uint32_t> free_;
  std::size_t live_pkts_ = 0;

  std::vector<Chan> up_, down_;
  std::vector<SwIn> in_;
  std::vector<Leg> legs_scratch_;
  std::vector<SwOut> out_;
  std::vector<int> up_rr_, down_rr_;
  ReductionUnit rx_;
  AckCollector acks_;
  std::uint64_t next_req_ = 1;

  std::vector<Gpu> gpus_;
  std::vector<int> n_remote_gpus_;
  std::vector<int> n_remote_targets_;
  std::vector<int> n_local_targets_;

  // Combine state per token at its source GPU.
  std::vector<std::uint64_t> comb_acc_;
  std::vector<std::int64_t> comb_need_, comb_got_;
  std::vector<std::uint8_t> comb_local_done_, comb_done_, or_ready_;
  std::vector<std::int16_t> comb_sm_;

  enum class Phase : std::uint8_t { kDispatch, kGemm1, kGemm2, kCombine, kPhaseA, kPhaseB, kDone };
  Phase phase_ = Phase::kDispatch;
  bool combine_open_ = false;
  std::int64_t disp_work_ = 0;
  std::int64_t comb_work_ = 0;
  std::int64_t tbs_left_[2] = {0, 0};
  SimTime tb_time_[2] = {0, 0};

  RunMetrics m_;
};

Sim::Sim(const RunConfig& cfg, const RoutingTable& routing)
    : cfg_(cfg),
      routing_(routing),
      traits_(traits_of(cfg.method)),
      place_(Placement::block(cfg.model.n_experts, cfg.sys.n_gpu)),
      n_(cfg.sys.n_gpu),
      planes_(cfg.sys.n_switch),
      seq_(routing.n_tokens()),
      token_bytes_(cfg.model.token_bytes()),
      ft_(cfg.sys.flit_time()),
      lat_(cfg.sys.link_latency()),
      sw_lat_(from_ns(cfg.sys.switch_latency_ns)),
      poll_(from_ns(cfg.poll_ns)),
      q_(cfg.max_events),
      rx_(cfg.sys.n_gpu, cfg.sys.reduction_buffer_bytes) {
  cfg.validate();
  if (routing.n_tokens() != cfg.model.seq_len || routing.topk() != cfg.model.topk ||
      routing.n_experts() != cfg.model.n_experts) {
    throw ConfigError("routing table does not match the model configuration");
  }
  nfrag_ = static_cast<int>((token_bytes_ + cfg.fragment_bytes - 1) / cfg.fragment_bytes);
  if (nfrag_ > 255) throw ConfigError("more than 255 fragments per token");
  fetch_ = from_ns(cfg.target_list_in_shared ? cfg.hub.target_fetch_shared_ns
                                             : cfg.hub.target_fetch_global_ns);
  in_cap_ = std::int64_t{cfg.sys.vc_depth} + lat_ / ft_ + 1;
  vcs_ = std::max(1, cfg.sys.vcs_per_class());
  part_ = resolve_partition(cfg, routing);

  const int nc = n_ * planes_;
  up_.resize(nc);
  down_.resize(nc);
  in_.resize(nc);
  out_.resize(nc);
  for (auto& in : in_) {
    for (int c = 0; c < 2; ++c) {
      in.vq[c].resize(vcs_);
      in.blocked[c].assign(vcs_, 0);
      in.credits[c].assign(vcs_, in_cap_);
    }
  }
  for (auto& ch : up_) {
    for (auto& v : ch.vq) v.resize(vcs_);
  }
  up_rr_.assign(n_, 0);
  down_rr_.assign(n_, 0);

  m_.method = to_string(cfg.method);
  m_.n_gpu = n_;
  m_.n_planes = planes_;
  m_.flit_time = ft_;
  m_.pure_comm = cfg.pure_comm;
  m_.up.resize(nc);
  m_.down.resize(nc);
  m_.tokens = seq_;

  // Per-token destination summary.
  n_remote_gpus_.resize(seq_);
  n_remote_targets_.resize(seq_);
  n_local_targets_.resize(seq_);
  for (int t = 0; t < seq_; ++t) {
    const int src = src_of(t);
    n_remote_gpus_[t] = distinct_dest_gpus(routing.experts(t), place_, src, false);
    int local = 0;
    for (auto e : routing.experts(t)) local += place_.gpu_of(e) == src;
    n_local_targets_[t] = local;
    n_remote_targets_[t] = routing.topk() - local;
  }

  const auto loads = routing.expert_loads();
  const int epg = place_.experts_per_gpu;
  const bool explicit_tax = cfg.method == Method::kExplicit;
  tb_time_[0] = cfg.compute.tb_time(cfg.model.hidden_size);
  tb_time_[1] = cfg.compute.tb_time(cfg.model.moe_hidden_size);
  const int tbs1 = cfg.compute.tbs_per_row(cfg.model.moe_hidden_size);
  const int tbs2 = cfg.compute.tbs_per_row(cfg.model.hidden_size);

  gpus_.resize(n_);
  for (int g = 0; g < n_; ++g) {
    Gpu& G = gpus_[g];
    std::vector<std::uint32_t> nact(epg);
    for (int i = 0; i < epg; ++i) nact[i] = static_cast<std::uint32_t>(loads[place_.first_expert(g) + i]);
    ALManager::Layout lay;
    lay.first_expert = place_.first_expert(g);
    lay.n_local_experts = epg;
    lay.ntoken = static_cast<std::uint32_t>(seq_);
    lay.bsize = static_cast<std::uint64_t>(token_bytes_);
    lay.mbase[0] = 1ULL << 36;
    lay.mbase[1] = lay.mbase[0] + static_cast<std::uint64_t>(seq_) * lay.bsize;
    G.al = std::make_unique<ALManager>(lay, nact, cfg.sys.al_tlb_entries, cfg.tlb_policy);
    G.al->set_tlb_enabled(traits_.dataflow == Dataflow::kDynamic);

    TileStatusTable::Shape sh;
    sh.first_expert = lay.first_expert;
    sh.n_local_experts = epg;
    sh.tsize = cfg.tsize;
    sh.bsize = token_bytes_;
    sh.tbs_gemm1 = tbs1;
    sh.tbs_gemm2 = tbs2;
    sh.capacity = cfg.sys.ts_table_entries;
    G.ts = std::make_unique<TileStatusTable>(sh, nact);
    G.tid = std::make_unique<TokenIdTable>(*G.ts);
    G.orr = std::make_unique<OutputReadinessTable>(cfg.model.topk, cfg.sys.or_table_entries);
    G.gs = std::make_unique<GemmScheduler>(tbs1, tbs2,
                                           traits_.overlap == Overlap::kPipelined ? part_.share_gemm : true);

    int dsm = part_.dispatch, csm = part_.combine;
    if (traits_.overlap != Overlap::kPipelined) dsm = csm = cfg.comm_sms;
    for (int s = 0; s < dsm; ++s) G.dsm.emplace_back(cfg.sys.multimemq_entries);
    for (int s = 0; s < csm; ++s) G.csm.emplace_back(cfg.sys.multimemq_entries);
    G.cw.floor = static_cast<double>(cfg.combine_window) * csm;
    G.cw.cap = static_cast<double>(cfg.combine_window_max) * csm;
    G.cw.cwnd = G.cw.floor;

    int pool1 = 0, pool2 = 0;
    switch (traits_.overlap) {
      case Overlap::kSerialized: pool1 = cfg.compute.num_sms; break;
      case Overlap::kPhased: pool1 = cfg.compute.num_sms - cfg.comm_sms; break;
      case Overlap::kPipelined: pool1 = part_.gemm1; pool2 = part_.gemm2; break;
    }
    if (explicit_tax) {
      pool1 = std::max(pool1 > 0 ? 1 : 0, static_cast<int>(pool1 * (1.0 - cfg.explicit_compute_tax)));
      pool2 = std::max(pool2 > 0 ? 1 : 0, static_cast<int>(pool2 * (1.0 - cfg.explicit_compute_tax)));
    }
    G.gemm_free[0] = pool1;
    G.gemm_free[1] = pool2;
    G.st_start.fill(-1);
    G.st_end.fill(-1);
    if (!pull()) G.local_left.assign(seq_, 0);

    if (compute_on()) {
      for (int i = 0; i < epg; ++i) {
        const int e = place_.first_expert(g) + i;
        const int rows = G.ts->rows(e);
        tbs_left_[0] += std::int64_t{rows} * tbs1;
        tbs_left_[1] += std::int64_t{rows} * tbs2;
      }
    }
  }
  for (int t = 0; t < seq_; ++t) {
    const int src = src_of(t);
    gpus_[src].own_tokens.push_back(t);
    if (!pull()) {
      for (auto e : routing.experts(t)) ++gpus_[place_.gpu_of(e)].local_left[t];
    }
  }

  if (cfg.pure_comm) {
    // Combine reads blocks laid out by the previous layer's Dispatch.
    std::vector<std::vector<std::uint32_t>> nact(n_, std::vector<std::uint32_t>(epg, 0));
    for (int e = 0; e < cfg.model.n_experts; ++e) nact[place_.gpu_of(e)][e % epg] = loads[e];
    for (int g = 0; g < n_; ++g) {
      Gpu& G = gpus_[g];
      G.al_prev = std::make_unique<ALManager>(G.al->layout(), nact[g], cfg.sys.al_tlb_entries,
                                              cfg.tlb_policy);
      G.al_prev->set_tlb_enabled(false);
    }
    for (int t = 0; t < seq_; ++t) {
      for (auto e : routing.experts(t)) {
        gpus_[place_.gpu_of(e)].al_prev->translate_dispatch(e, maddr(Stage::kDispatch, t, 0));
      }
    }
    for (auto& G : gpus_) G.al_prev->set_tlb_enabled(traits_.dataflow == Dataflow::kDynamic);
  }

  comb_acc_.assign(seq_, 0);
  comb_need_.assign(seq_, 0);
  comb_got_.assign(seq_, 0);
  comb_local_done_.assign(seq_, 0);
  comb_done_.assign(seq_, 0);
  or_ready_.assign(seq_, 0);
  comb_sm_.assign(seq_, -1);
  for (int t = 0; t < seq_; ++t) {
    if (traits_.dataflow == Dataflow::kStatic) {
      comb_need_[t] = std::int64_t{nfrag_} * (n_ - 1);
    } else {
      comb_need_[t] = std::int64_t{nfrag_} * n_remote_targets_[t];
    }
    // Pull methods fold local experts at issue; push methods when the
    // source's own GEMM-2 rows for the token finish.
    comb_local_done_[t] = (!pull() && n_local_targets_[t] > 0) ? 0 : 1;
  }

  // Dispatch work: one ack per issued store plus one local write per token
  // with local experts.
  for (int t = 0; t < seq_; ++t) {
    std::int64_t pk = 0;
    switch (traits_.dataflow) {
      case Dataflow::kUnicast: pk = std::int64_t{nfrag_} * n_remote_gpus_[t]; break;
      case Dataflow::kStatic: pk = nfrag_; break;
      default: pk = n_remote_gpus_[t] > 0 ? nfrag_ : 0; break;
    }
    disp_work_ += pk + (n_local_targets_[t] > 0 ? 1 : 0);
    comb_work_ += 1;
    if (!pull()) comb_work_ += std::int64_t{nfrag_} * n_remote_gpus_[t];  // push acks
  }
}

std::uint32_t Sim::alloc() {
  ++live_pkts_;
  if (!free_.empty()) {
    const std::uint32_t id = free_.back();
    free_.pop_back();
    return id;
  }
  pool_.emplace_back();
  return static_cast<std::uint32_t>(pool_.size() - 1);
}

void Sim::release(std::uint32_t id) {
  Pkt& p = pool_[id];
  p.targets.clear();
  p.aux.clear();
  p.mq_sm = -1;
  p.useful = true;
  p.final = false;
  p.dst = -1;
  --live_pkts_;
  free_.push_back(id);
}

FlitLayout Sim::replica_layout(const Pkt& p, std::size_t n_targets) const {
  const bool req = p.op == Op::kReduceReq;
  const std::int64_t payload = req ? 0 : p.bytes;
  if (explicit_df()) return encode_explicit(n_targets, payload, cfg_.sys.flit_bytes);
  return FlitLayout{kHeaderFlits,
                    static_cast<std::int64_t>((n_targets + kTargetsPerFlit - 1) / kTargetsPerFlit),
                    byte_enable_flits_for(payload), data_flits_for(payload, cfg_.sys.flit_bytes)};
}

FlitLayout Sim::response_layout(std::int64_t bytes) const {
  return explicit_df() ? encode_explicit_response(bytes, cfg_.sys.flit_bytes)
                       : encode_reduce_response(bytes, cfg_.sys.flit_bytes);
}

void Sim::enqueue_up(int g, std::uint32_t id) {
  const int plane = planes_ == 1 ? 0 : (up_rr_[g]++ % planes_);
  const int ci = g * planes_ + plane;
  const Pkt& p = pk(id);
  up_[ci].vq[p.vclass][vc_of(p)].push_back(id);
  kick_up(ci);
}

void Sim::kick_up(int ci) {
  Chan& ch = up_[ci];
  if (ch.busy) return;
  SwIn& in = in_[ci];
  for (int k = 0; k < 2; ++k) {
    const int c = (ch.rr + k) & 1;
    for (int j = 0; j < vcs_; ++j) {
      const int v = (ch.vrr[c] + j) % vcs_;
      auto& q = ch.vq[c][v];
      if (q.empty()) continue;
      const std::uint32_t id = q.front();
      const std::int64_t f = pk(id).layout.total();
      if (in.credits[c][v] < f) continue;
      q.pop_front();
      in.credits[c][v] -= f;
      ch.rr = c ^ 1;
      ch.vrr[c] = (v + 1) % vcs_;
      start_tx(true, ci, id);
      return;
    }
  }
}

void Sim::kick_down(int ci) {
  Chan& ch = down_[ci];
  if (ch.busy) return;
  for (int k = 0; k < 2; ++k) {
    const int c = (ch.rr + k) & 1;
    if (ch.q[c].empty()) continue;
    const std::uint32_t id = ch.q[c].front();
    ch.q[c].pop_front();
    ch.rr = c ^ 1;
    SwOut& out = out_[ci];
    out.reserved[c] -= pk(id).layout.total();
    start_tx(false, ci, id);
    if (!out.waiters[c].empty()) {
      std::vector<std::pair<int, int>> w;
      w.swap(out.waiters[c]);
      for (auto [ii, v] : w) in_[ii].blocked[c][v] = 0;
      for (auto [ii, v] : w) try_forward(ii, c);
    }
    return;
  }
}

void Sim::start_tx(bool up, int ci, std::uint32_t id) {
  Pkt& p = pk(id);
  Chan& ch = up ? up_[ci] : down_[ci];
  ch.busy = true;
  const SimTime now = q_.now();
  const std::int64_t f = p.layout.total();
  const SimTime ser = f * ft_;
  SimTime gap = 0;
  if (explicit_df() && p.op != Op::kAck && p.op != Op::kMeta && p.op != Op::kNotify) {
    gap = static_cast<SimTime>(std::llround(cfg_.explicit_comm_overhead * static_cast<double>(ser)));
  }

  LinkStats& ls = up ? m_.up[ci] : m_.down[ci];
  if (p.op == Op::kAck) {
    ls.flits[FlitCategory::kAck] += f;
  } else if (p.op == Op::kMeta || p.op == Op::kNotify) {
    ls.flits[FlitCategory::kMetadata] += f;
  } else {
    ls.flits[FlitCategory::kHeader] += p.layout.header_flits;
    ls.flits[FlitCategory::kTargetExt] += p.layout.target_ext_flits;
    ls.flits[FlitCategory::kByteEnable] += p.layout.byte_enable_flits;
    ls.flits[FlitCategory::kData] += p.layout.data_flits;
  }
  if (!ls.busy.empty() && ls.busy.back().end == now) {
    ls.busy.back().end = now + ser;
  } else {
    ls.busy.push_back({now, now + ser});
  }

  if (cfg_.flit_dump) {
    std::ostream& os = *cfg_.flit_dump;
    os << to_ns(now) << ' ' << (up ? "up" : "down") << " gpu=" << ci / planes_;
    if (planes_ > 1) os << " plane=" << ci % planes_;
    os << ' ' << op_name(p.op) << " token=" << p.token << " frag=" << p.frag;
    if (!p.targets.empty()) {
      os << " targets=[";
      for (std::size_t i = 0; i < p.targets.size(); ++i) os << (i ? "," : "") << p.targets[i];
      os << ']';
    }
    os << " flits=" << p.layout.header_flits << '/' << p.layout.target_ext_flits << '/'
       << p.layout.byte_enable_flits << '/' << p.layout.data_flits << '\n';
  }

  Ev arrive;
  arrive.kind = up ? EvKind::kSwArrive : EvKind::kGpuArrive;
  arrive.a = static_cast<std::int16_t>(ci);
  arrive.id = id;
  q_.schedule(now + ser + lat_, arrive);
  Ev free_ev;
  free_ev.kind = up ? EvKind::kUpFree : EvKind::kDownFree;
  free_ev.a = static_cast<std::int16_t>(ci);
  q_.schedule(now + ser + gap, free_ev);

  if (up && p.mq_sm >= 0) {
    retire_mq(p);
    p.mq_sm = -1;
  }
}

void Sim::retire_mq(const Pkt& p) {
  Gpu& G = gpus_[p.src];
  IssueSm& sm = p.mq_group == kDispatchGroup ? G.dsm[p.mq_sm] : G.csm[p.mq_sm];
  sm.mq.retire();
  if (sm.stalled) {
    sm.stalled = false;
    wake(p.src, p.mq_group, p.mq_sm);
  }
}

void Sim::wake(int g, std::uint8_t group, int s) {
  Ev e;
  e.kind = EvKind::kSmWake;
  e.sub = group;
  e.a = static_cast<std::int16_t>(g);
  e.b = s;
  q_.schedule(q_.now(), e);
}

void Sim::on_sw_arrive(int ii, std::uint32_t id) {
  Pkt& p = pk(id);
  m_.up[ii].delivered += p.layout.total();
  const int c = p.vclass;
  const int v = vc_of(p);
  in_[ii].vq[c][v].push_back(id);
  if (!in_[ii].blocked[c][v]) try_forward(ii, c);
}

// VC keyed by the first output port the packet needs. In the request class
// the lower half of the VCs carries posted stores and the upper half
// non-posted ld_reduce requests.
int Sim::vc_of(const Pkt& p) const {
  int port = p.dst;
  if (p.op == Op::kStore || p.op == Op::kReduceReq) {
    port = place_.gpu_of(p.targets.front());
  } else if (p.op == Op::kStaticStore || p.op == Op::kStaticReduceReq) {
    port = (p.src + 1) % n_;
  }
  if (p.vclass != 0 || vcs_ < 2) return port % vcs_;
  const int half = vcs_ / 2;
  const bool non_posted = p.op == Op::kReduceReq || p.op == Op::kStaticReduceReq;
  return non_posted ? half + port % (vcs_ - half) : port % half;
}

// Output legs a packet needs at the head of its VC; empty when it is
// absorbed by the switch (non-final partial or ack).
void Sim::legs_of(const Pkt& p, std::vector<Leg>& legs) const {
  legs.clear();
  switch (p.op) {
    case Op::kStore:
    case Op::kReduceReq: {
      std::size_t i = 0;
      while (i < p.targets.size()) {
        const int port = place_.gpu_of(p.targets[i]);
        std::size_t j = i;
        while (j < p.targets.size() && place_.gpu_of(p.targets[j]) == port) ++j;
        legs.push_back({port, replica_layout(p, j - i).total()});
        i = j;
      }
      break;
    }
    case Op::kStaticStore:
    case Op::kStaticReduceReq:
      for (int port = 0; port < n_; ++port) {
        if (port != p.src) legs.push_back({port, p.layout.total()});
      }
      break;
    case Op::kPartial:
      if (rx_.emits_output(p.req, p.count)) legs.push_back({p.dst, response_layout(p.bytes).total()});
      break;
    case Op::kAck:
      if (acks_.completes_on_next(p.req)) legs.push_back({p.dst, p.layout.total()});
      break;
    default:
      legs.push_back({p.dst, p.layout.total()});
      break;
  }
}

void Sim::try_forward(int ii, int c) {
  SwIn& in = in_[ii];
  std::vector<Leg>& legs = legs_scratch_;
  bool progress = true;
  while (progress) {
    progress = false;
    for (int k = 0; k < vcs_; ++k) {
      const int v = (in.rr[c] + k) % vcs_;
      auto& q = in.vq[c][v];
      if (q.empty() || in.blocked[c][v]) continue;
      const std::uint32_t id = q.front();
      const Pkt& p = pk(id);
      legs_of(p, legs);
      bool fits = true;
      for (const Leg& leg : legs) {
        const int oi = leg.port * planes_ + (down_rr_[leg.port] % planes_);
        if (out_[oi].reserved[c] + leg.flits > out_cap_) {
          out_[oi].waiters[c].emplace_back(ii, v);
          in.blocked[c][v] = 1;
          fits = false;
          break;
        }
      }
      if (!fits) continue;
      q.pop_front();
      in.credits[c][v] += p.layout.total();
      in.rr[c] = (v + 1) % vcs_;
      forward(ii, id);
      kick_up(ii);
      progress = true;
      break;
    }
  }
}

void Sim::deliver_down(int port, std::uint32_t id) {
  const int oi = port * planes_ + (down_rr_[port]++ % planes_);
  Pkt& p = pk(id);
  out_[oi].reserved[p.vclass] += p.layout.total();
  Ev e;
  e.kind = EvKind::kSwDeliver;
  e.a = static_cast<std::int16_t>(oi);
  e.id = id;
  q_.schedule(q_.now() + sw_lat_, e);
}

void Sim::forward(int ii, std::uint32_t id) {
  (void)ii;
  Pkt& p = pk(id);
  switch (p.op) {
    case Op::kStore:
    case Op::kReduceReq: {
      const bool reduce = p.op == Op::kReduceReq;
      std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> groups;
      std::size_t i = 0;
      while (i < p.targets.size()) {
        const int port = place_.gpu_of(p.targets[i]);
        std::size_t j = i;
        while (j < p.targets.size() && place_.gpu_of(p.targets[j]) == port) ++j;
        groups.push_back({port, {i, j}});
        i = j;
      }
      if (reduce) {
        rx_.open(p.req, p.src, static_cast<std::uint32_t>(p.targets.size()), p.bytes);
      } else {
        acks_.open(p.req, p.src, static_cast<std::uint32_t>(groups.size()));
      }
      for (auto& [port, range] : groups) {
        const std::uint32_t rid = alloc();
        Pkt& r = pk(rid);
        const Pkt& o = pk(id);  // pool may have grown
        r.op = o.op;
        r.vclass = o.vclass;
        r.stage = o.stage;
        r.src = o.src;
        r.dst = static_cast<std::int16_t>(port);
        r.token = o.token;
        r.frag = o.frag;
        r.bytes = o.bytes;
        r.req = o.req;
        r.targets.assign(o.targets.begin() + range.first, o.targets.begin() + range.second);
        r.layout = replica_layout(o, r.targets.size());
        ++m_.replicas_created;
        deliver_down(port, rid);
      }
      release(id);
      break;
    }
    case Op::kStaticStore:
    case Op::kStaticReduceReq: {
      const bool reduce = p.op == Op::kStaticReduceReq;
      if (reduce) {
        rx_.open(p.req, p.src, static_cast<std::uint32_t>(n_ - 1), p.bytes);
      } else {
        acks_.open(p.req, p.src, static_cast<std::uint32_t>(n_ - 1));
      }
      for (int port = 0; port < n_; ++port) {
        if (port == pk(id).src) continue;
        const std::uint32_t rid = alloc();
        Pkt& r = pk(rid);
        r = pk(id);
        r.dst = static_cast<std::int16_t>(port);
        r.mq_sm = -1;
        bool useful = false;
        for (auto e : routing_.experts(r.token)) useful |= place_.gpu_of(e) == port;
        r.useful = useful;
        if (!reduce) {
          (useful ? m_.fanout_needed_data : m_.fanout_useless_data) += r.layout.data_flits;
        }
        ++m_.replicas_created;
        deliver_down(port, rid);
      }
      release(id);
      break;
    }
    case Op::kPartial: {
      const std::uint64_t req = p.req;
      PartialOutcome out = rx_.on_partial(req, p.value, p.count);
      const std::int32_t token = p.token;
      const std::int32_t frag = p.frag;
      const std::int64_t bytes = p.bytes;
      release(id);
      for (const ReductionOutput& o : out.outputs) {
        const std::uint32_t rid = alloc();
        Pkt& r = pk(rid);
        r.op = Op::kReduced;
        r.vclass = 1;
        r.stage = 1;
        r.src = static_cast<std::int16_t>(o.source_port);
        r.dst = static_cast<std::int16_t>(o.source_port);
        r.req = o.req_id;
        r.value = o.value;
        r.count = o.count;
        r.final = o.final;
        r.marked = rx_.buffer(o.source_port).used() >=
                   cfg_.window_mark_fraction * static_cast<double>(rx_.buffer(o.source_port).capacity());
        r.bytes = bytes;
        r.layout = response_layout(bytes);
        if (o.req_id == req) {
          r.token = token;
          r.frag = frag;
        } else {
          // Eviction flush of another slot; its token is encoded in req_id.
          r.token = static_cast<std::int32_t>(o.req_id >> 8);
          r.frag = static_cast<std::int32_t>(o.req_id & 0xffu);
          ++m_.flush_packets;
        }
        deliver_down(o.source_port, rid);
      }
      break;
    }
    case Op::kAck: {
      if (auto src = acks_.on_ack(p.req)) {
        p.dst = static_cast<std::int16_t>(*src);
        deliver_down(*src, id);
      } else {
        release(id);
      }
      break;
    }
    case Op::kUnicastStore:
    case Op::kPush:
      acks_.open(p.req, p.src, 1);
      deliver_down(p.dst, id);
      break;
    default:
      deliver_down(p.dst, id);
      break;
  }
}

void Sim::mark(int g, StageId st, SimTime t0, SimTime t1) {
  Gpu& G = gpus_[g];
  const int i = static_cast<int>(st);
  if (t0 >= 0 && (G.st_start[i] < 0 || t0 < G.st_start[i])) G.st_start[i] = t0;
  if (t1 >= 0 && t1 > G.st_end[i]) G.st_end[i] = t1;
}

void Sim::open_dispatch(int g) {
  Gpu& G = gpus_[g];
  G.dispatch_open = true;
  for (int s = 0; s < static_cast<int>(G.dsm.size()); ++s) wake(g, kDispatchGroup, s);
}

void Sim::dispatch_step(int g, int s) {
  Gpu& G = gpus_[g];
  for (;;) {
    IssueSm& sm = G.dsm[s];
    if (sm.token < 0) {
      if (!G.dispatch_open || G.disp_cursor >= G.own_tokens.size()) return;
      const std::int32_t t = G.own_tokens[G.disp_cursor++];
      sm.token = t;
      sm.next = 0;
      mark(g, StageId::kDispatch, q_.now(), -1);
      switch (traits_.dataflow) {
        case Dataflow::kUnicast: {
          sm.dests.clear();
          for (auto e : routing_.experts(t)) {
            const int h = place_.gpu_of(e);
            if (h != g && (sm.dests.empty() || sm.dests.back() != h)) sm.dests.push_back(h);
          }
          sm.n_pkts = nfrag_ * static_cast<int>(sm.dests.size());
          break;
        }
        case Dataflow::kStatic: sm.n_pkts = nfrag_; break;
        default: sm.n_pkts = n_remote_gpus_[t] > 0 ? nfrag_ : 0; break;
      }
      if (n_local_targets_[t] > 0) {
        Ev e;
        e.kind = EvKind::kLocalWrite;
        e.a = static_cast<std::int16_t>(g);
        e.b = t;
        q_.schedule(q_.now() + from_ns(cfg_.hub.mem_ns), e);
      }
      if (sm.n_pkts == 0) {
        sm.token = -1;
        continue;
      }
    }
    if (sm.mq.full()) {
      sm.stalled = true;
      return;
    }
    issue_dispatch_packet(g, s);
    IssueSm& sm2 = G.dsm[s];
    if (++sm2.next == sm2.n_pkts) sm2.token = -1;
  }
}

void Sim::issue_dispatch_packet(int g, int s) {
  const std::uint32_t id = alloc();
  IssueSm& sm = gpus_[g].dsm[s];
  Pkt& p = pk(id);
  const std::int32_t t = sm.token;
  const int i = sm.next;
  p.src = static_cast<std::int16_t>(g);
  p.stage = 0;
  p.vclass = 0;
  p.token = t;
  p.mq_sm = static_cast<std::int16_t>(s);
  p.mq_group = kDispatchGroup;
  p.req = next_req_++;
  SimTime fetch = 0;
  switch (traits_.dataflow) {
    case Dataflow::kUnicast: {
      const int dest = sm.dests[i / nfrag_];
      p.frag = i % nfrag_;
      p.bytes = frag_bytes(p.frag);
      p.op = Op::kUnicastStore;
      p.dst = static_cast<std::int16_t>(dest);
      for (auto e : routing_.experts(t)) {
        if (place_.gpu_of(e) == dest) p.targets.push_back(e);
      }
      p.layout = encode_unicast(p.bytes, cfg_.sys.flit_bytes);
      break;
    }
    case Dataflow::kStatic:
      p.frag = i;
      p.bytes = frag_bytes(p.frag);
      p.op = Op::kStaticStore;
      p.layout = encode_static_multicast(p.bytes, cfg_.sys.flit_bytes);
      break;
    case Dataflow::kExplicit:
    case Dataflow::kDynamic:
      p.frag = i;
      p.bytes = frag_bytes(p.frag);
      p.op = Op::kStore;
      for (auto e : routing_.experts(t)) {
        if (place_.gpu_of(e) != g) p.targets.push_back(e);
      }
      p.layout = explicit_df()
                     ? encode_explicit(p.targets.size(), p.bytes, cfg_.sys.flit_bytes)
                     : encode_dymultimem(PacketKind::kDymultimemStReq, maddr(Stage::kDispatch, t, p.frag),
                                         Stage::kDispatch, p.targets, p.bytes,
                                         static_cast<std::uint32_t>(cfg_.model.n_experts),
                                         cfg_.sys.flit_bytes);
      fetch = fetch_;
      break;
  }
  sm.mq.acquire();
  if (fetch > 0) {
    Ev e;
    e.kind = EvKind::kEnqueueUp;
    e.a = static_cast<std::int16_t>(g);
    e.id = id;
    q_.schedule(q_.now() + fetch, e);
  } else {
    enqueue_up(g, id);
  }
}

void Sim::record_store(int g, int expert, std::uint32_t lidx, std::int32_t token, std::int64_t bytes,
                       bool allocated) {
  if (!compute_on()) return;
  Gpu& G = gpus_[g];
  const int row = static_cast<int>(lidx / static_cast<std::uint32_t>(cfg_.tsize));
  if (allocated) G.tid->register_token(expert, row, token);
  if (G.ts->on_store_arrival(expert, row, bytes) && gated()) {
    Ev e;
    e.kind = EvKind::kRowReady;
    e.sub = static_cast<std::uint8_t>(GemmKind::kGemm1);
    e.a = static_cast<std::int16_t>(g);
    e.b = expert;
    e.c = row;
    q_.schedule(q_.now() + poll_, e);
  }
}

void Sim::on_local_write(int g, std::int32_t t) {
  ALManager& al = *gpus_[g].al;
  const bool tlb = al.tlb_enabled();
  al.set_tlb_enabled(false);  // ordinary local stores bypass the Hub TLB
  for (auto e : routing_.experts(t)) {
    if (place_.gpu_of(e) != g) continue;
    const Translation tr = al.translate_dispatch(e, maddr(Stage::kDispatch, t, 0));
    record_store(g, e, tr.lidx, t, token_bytes_, tr.allocated);
  }
  al.set_tlb_enabled(tlb);
  on_dispatch_acked(g);
}

void Sim::on_dispatch_acked(int g) {
  --disp_work_;
  mark(g, StageId::kDispatch, -1, q_.now());
  progress();
}

void Sim::on_gpu_arrive(int g, std::uint32_t id) {
  Gpu& G = gpus_[g];
  Pkt& p = pk(id);
  SimTime delay = from_ns(cfg_.hub.hub_ns);
  const SimTime miss = from_ns(cfg_.hub.al_miss_ns);
  const SimTime mem = from_ns(cfg_.hub.mem_ns);
  switch (p.op) {
    case Op::kAck: {
      const bool dispatch = p.stage == 0;
      release(id);
      if (dispatch) {
        on_dispatch_acked(g);
      } else {
        --comb_work_;
        mark(g, StageId::kCombine, -1, q_.now());
        progress();
      }
      return;
    }
    case Op::kMeta:
      release(id);
      if (++G.metas == n_ - 1) open_dispatch(g);
      return;
    case Op::kNotify:
      if (G.orr->overflowing()) delay += from_ns(cfg_.hub.overflow_penalty_ns);
      break;
    case Op::kStore:
    case Op::kUnicastStore:
    case Op::kStaticStore: {
      if (p.op == Op::kStaticStore) {
        p.targets.clear();
        for (auto e : routing_.experts(p.token)) {
          if (place_.gpu_of(e) == g) p.targets.push_back(e);
        }
      }
      int misses = 0;
      p.aux.clear();
      for (auto e : p.targets) {
        const Translation tr = G.al->translate_dispatch(e, maddr(Stage::kDispatch, p.token, p.frag));
        if (G.al->tlb_enabled() && !tr.tlb_hit) ++misses;
        p.aux.push_back(static_cast<std::int32_t>(tr.lidx));
        if (tr.allocated && compute_on()) {
          G.tid->register_token(e, static_cast<int>(tr.lidx / static_cast<std::uint32_t>(cfg_.tsize)),
                                p.token);
        }
      }
      delay += misses * miss + mem;
      if (compute_on() && G.ts->overflowing()) delay += from_ns(cfg_.hub.overflow_penalty_ns);
      break;
    }
    case Op::kReduceReq:
    case Op::kStaticReduceReq: {
      ALManager& al = cfg_.pure_comm ? *G.al_prev : *G.al;
      if (p.op == Op::kStaticReduceReq) {
        p.targets.clear();
        for (auto e : routing_.experts(p.token)) {
          if (place_.gpu_of(e) == g) p.targets.push_back(e);
        }
      }
      int misses = 0;
      std::uint64_t value = 0;
      for (auto e : p.targets) {
        const Translation tr = al.translate_combine(e, maddr(Stage::kCombine, p.token, p.frag));
        if (al.tlb_enabled() && !tr.tlb_hit) ++misses;
        value = fold(value, fragment_checksum(p.token, e, Stage::kCombine, p.frag));
      }
      p.value = value;
      delay += misses * miss + mem;
      break;
    }
    case Op::kReduced:
    case Op::kPush:
      delay += mem;
      break;
    case Op::kPartial:
      throw ProtocolError("partial response delivered to a GPU");
  }
  Ev e;
  e.kind = EvKind::kHubDone;
  e.a = static_cast<std::int16_t>(g);
  e.id = id;
  q_.schedule(q_.now() + delay, e);
}

void Sim::on_hub_done(int g, std::uint32_t id) {
  Pkt& p = pk(id);
  switch (p.op) {
    case Op::kStore:
    case Op::kUnicastStore:
    case Op::kStaticStore: {
      for (std::size_t i = 0; i < p.targets.size(); ++i) {
        record_store(g, p.targets[i], static_cast<std::uint32_t>(p.aux[i]), p.token, p.bytes, false);
      }
      // Visibility: the ack leaves once the write is done.
      Pkt& a = pk(id);
      a.op = Op::kAck;
      a.vclass = 1;
      a.stage = 0;
      a.dst = a.src;
      a.src = static_cast<std::int16_t>(g);
      a.targets.clear();
      a.aux.clear();
      a.layout = encode_ack();
      enqueue_up(g, id);
      break;
    }
    case Op::kReduceReq:
    case Op::kStaticReduceReq: {
      const bool stat = p.op == Op::kStaticReduceReq;
      p.op = Op::kPartial;
      p.vclass = 1;
      p.stage = 1;
      p.count = stat ? 1 : static_cast<std::uint32_t>(p.targets.size());
      p.dst = p.src;
      p.src = static_cast<std::int16_t>(g);
      p.layout = response_layout(p.bytes);
      if (stat) {
        p.useful = !p.targets.empty();
        (p.useful ? m_.fanout_needed_data : m_.fanout_useless_data) += p.layout.data_flits;
      }
      p.targets.clear();
      enqueue_up(g, id);
      break;
    }
    case Op::kReduced: {
      const std::int32_t t = p.token;
      comb_acc_[t] = fold(comb_acc_[t], p.value);
      comb_got_[t] += p.count;
      on_reduce_feedback(g, p.final, p.marked);
      release(id);
      maybe_finish(t);
      break;
    }
    case Op::kPush: {
      const std::int32_t t = p.token;
      comb_acc_[t] = fold(comb_acc_[t], p.value);
      comb_got_[t] += p.count;
      p.op = Op::kAck;
      p.vclass = 1;
      p.stage = 1;
      p.dst = p.src;
      p.src = static_cast<std::int16_t>(g);
      p.layout = encode_ack();
      enqueue_up(g, id);
      maybe_finish(t);
      break;
    }
    case Op::kNotify: {
      Gpu& G = gpus_[g];
      for (std::int32_t tid : p.aux) {
        if (G.orr->on_notification(tid)) {
          Ev e;
          e.kind = EvKind::kCombineReady;
          e.a = static_cast<std::int16_t>(g);
          e.b = tid;
          q_.schedule(q_.now() + poll_, e);
        }
      }
      release(id);
      break;
    }
    default:
      throw ProtocolError(std::string("unexpected packet at hub: ") + op_name(p.op));
  }
}

void Sim::fold_local(std::int32_t t, int g) {
  for (auto e : routing_.experts(t)) {
    if (place_.gpu_of(e) != g) continue;
    for (int f = 0; f < nfrag_; ++f) {
      comb_acc_[t] = fold(comb_acc_[t], fragment_checksum(t, e, Stage::kCombine, f));
    }
  }
}

void Sim::push_ready(int h, std::int32_t t) {
  if (h == src_of(t)) {
    fold_local(t, h);
    comb_local_done_[t] = 1;
    maybe_finish(t);
    return;
  }
  gpus_[h].comb_ready.push_back(t);
  // wake one idle combine SM
  Gpu& G = gpus_[h];
  for (int s = 0; s < static_cast<int>(G.csm.size()); ++s) {
    if (G.csm[s].token < 0 && !G.csm[s].stalled) {
      wake(h, kCombineGroup, s);
      break;
    }
  }
}

void Sim::begin_combine_token(int g, int s, std::int32_t t) {
  IssueSm& sm = gpus_[g].csm[s];
  mark(g, StageId::kCombine, q_.now(), -1);
  sm.next = 0;
  if (pull()) {
    if (gated() && !or_ready_[t]) {
      throw ProtocolError("Combine issued before readiness of token " + std::to_string(t));
    }
    fold_local(t, g);
    comb_sm_[t] = static_cast<std::int16_t>(s);
    sm.n_pkts = traits_.dataflow == Dataflow::kStatic ? nfrag_ : (n_remote_targets_[t] > 0 ? nfrag_ : 0);
    if (sm.n_pkts == 0) {
      sm.token = -1;
      maybe_finish(t);
    } else {
      sm.token = t;
    }
  } else {
    if (gated() && gpus_[g].local_left[t] != 0) {
      throw ProtocolError("Combine push issued before GEMM-2 of token " + std::to_string(t));
    }
    sm.token = t;
    sm.n_pkts = nfrag_;
  }
}

// A final response retires one fragment of the SM's window. A marked or
// non-final (evicted) response is congestion feedback.
void Sim::on_reduce_feedback(int g, bool final, bool marked) {
  Gpu& G = gpus_[g];
  CombineWindow& w = G.cw;
  if (final) --w.outstanding;
  if (cfg_.adaptive_window && final && !marked) {
    w.cwnd = std::min(w.cap, w.cwnd + (w.slow_start ? 1.0 : 1.0 / w.cwnd));
  } else if (cfg_.adaptive_window) {
    const SimTime rtt = from_ns(4 * cfg_.sys.link_latency_ns + 2 * cfg_.sys.switch_latency_ns);
    if (w.last_cut < 0 || q_.now() - w.last_cut >= rtt) {
      w.cwnd = std::max(w.floor, w.cwnd / 2);
      w.slow_start = false;
      w.last_cut = q_.now();
    }
  }
  int room = static_cast<int>(w.cwnd) - w.outstanding;
  for (int s = 0; room > 0 && s < static_cast<int>(G.csm.size()); ++s) {
    IssueSm& sm = G.csm[s];
    if (!sm.stalled && (sm.window_blocked || (sm.token < 0 && !G.comb_ready.empty()))) {
      sm.window_blocked = false;
      wake(g, kCombineGroup, s);
      --room;
    }
  }
}

void Sim::combine_step(int g, int s) {
  Gpu& G = gpus_[g];
  for (;;) {
    IssueSm& sm = G.csm[s];
    if (sm.token < 0) {
      if (!combine_open_ || G.comb_ready.empty()) return;
      if (window_full(G, sm)) return;
      const std::int32_t t = G.comb_ready.front();
      G.comb_ready.pop_front();
      begin_combine_token(g, s, t);
      if (!G.comb_ready.empty()) {
        for (int o = 0; o < static_cast<int>(G.csm.size()); ++o) {
          if (o != s && G.csm[o].token < 0 && !G.csm[o].stalled &&
              window_open(G)) {
            wake(g, kCombineGroup, o);
            break;
          }
        }
      }
      continue;
    }
    if (window_full(G, sm)) return;
    if (sm.mq.full()) {
      sm.stalled = true;
      return;
    }
    if (pull()) ++G.cw.outstanding;
    issue_combine_packet(g, s);
    IssueSm& sm2 = G.csm[s];
    if (++sm2.next == sm2.n_pkts) sm2.token = -1;
  }
}

void Sim::issue_combine_packet(int g, int s) {
  const std::uint32_t id = alloc();
  IssueSm& sm = gpus_[g].csm[s];
  Pkt& p = pk(id);
  const std::int32_t t = sm.token;
  const int f = sm.next;
  p.src = static_cast<std::int16_t>(g);
  p.stage = 1;
  p.vclass = 0;
  p.token = t;
  p.frag = f;
  p.bytes = frag_bytes(f);
  p.mq_sm = static_cast<std::int16_t>(s);
  p.mq_group = kCombineGroup;
  SimTime fetch = 0;
  switch (traits_.dataflow) {
    case Dataflow::kUnicast: {
      p.op = Op::kPush;
      p.dst = static_cast<std::int16_t>(src_of(t));
      p.req = next_req_++;
      std::uint64_t v = 0;
      std::uint32_t n = 0;
      for (auto e : routing_.experts(t)) {
        if (place_.gpu_of(e) != g) continue;
        v = fold(v, fragment_checksum(t, e, Stage::kCombine, f));
        ++n;
      }
      p.value = v;
      p.count = n;
      p.layout = encode_unicast(p.bytes, cfg_.sys.flit_bytes);
      break;
    }
    case Dataflow::kStatic:
      p.op = Op::kStaticReduceReq;
      p.req = (static_cast<std::uint64_t>(t) << 8) | static_cast<std::uint64_t>(f);
      p.layout = encode_static_multicast(0, cfg_.sys.flit_bytes);
      break;
    case Dataflow::kExplicit:
    case Dataflow::kDynamic:
      p.op = Op::kReduceReq;
      p.req = (static_cast<std::uint64_t>(t) << 8) | static_cast<std::uint64_t>(f);
      for (auto e : routing_.experts(t)) {
        if (place_.gpu_of(e) != g) p.targets.push_back(e);
      }
      p.layout = explicit_df()
                     ? encode_explicit(p.targets.size(), 0, cfg_.sys.flit_bytes)
                     : encode_dymultimem(PacketKind::kDymultimemLdReduceReq, maddr(Stage::kCombine, t, f),
                                         Stage::kCombine, p.targets, 0,
                                         static_cast<std::uint32_t>(cfg_.model.n_experts),
                                         cfg_.sys.flit_bytes);
      fetch = fetch_;
      break;
  }
  sm.mq.acquire();
  if (fetch > 0) {
    Ev e;
    e.kind = EvKind::kEnqueueUp;
    e.a = static_cast<std::int16_t>(g);
    e.id = id;
    q_.schedule(q_.now() + fetch, e);
  } else {
    enqueue_up(g, id);
  }
}

void Sim::maybe_finish(std::int32_t t) {
  if (comb_done_[t]) return;
  if (comb_got_[t] > comb_need_[t]) {
    throw ProtocolError("token " + std::to_string(t) + " received more Combine partials than targets");
  }
  if (comb_got_[t] != comb_need_[t] || !comb_local_done_[t]) return;
  comb_done_[t] = 1;
  ++m_.tokens_combined;
  if (comb_acc_[t] != reference_combine_fold(routing_, t, nfrag_)) {
    ++m_.fold_mismatches;
    if (m_.fold_mismatches <= 5) {
      m_.violations.push_back("combine fold mismatch for token " + std::to_string(t));
    }
  }
  --comb_work_;
  const int src = src_of(t);
  mark(src, StageId::kCombine, -1, q_.now());
  progress();
}

void Sim::schedule_gemm(int g) {
  Gpu& G = gpus_[g];
  for (int grp = 0; grp < 2; ++grp) {
    while (G.gemm_free[grp] > 0) {
      auto task = G.gs->next_task(grp == 0 ? SmGroup::kGemm1 : SmGroup::kGemm2);
      if (!task) break;
      G.ts->on_tb_issue(task->which, task->expert, task->row);
      --G.gemm_free[grp];
      const int w = static_cast<int>(task->which);
      mark(g, w == 0 ? StageId::kGemm1 : StageId::kGemm2, q_.now(), -1);
      Ev e;
      e.kind = EvKind::kTbDone;
      e.sub = static_cast<std::uint8_t>(grp | (w << 1));
      e.a = static_cast<std::int16_t>(g);
      e.b = task->expert;
      e.c = task->row;
      q_.schedule(q_.now() + tb_time_[w], e);
    }
  }
}

void Sim::on_tb_done(int g, int group, GemmKind which, int expert, int row) {
  Gpu& G = gpus_[g];
  ++G.gemm_free[group];
  const int w = static_cast<int>(which);
  mark(g, w == 0 ? StageId::kGemm1 : StageId::kGemm2, -1, q_.now());
  --tbs_left_[w];
  if (G.ts->on_tb_complete(which, expert, row)) {
    if (which == GemmKind::kGemm1) {
      if (traits_.overlap == Overlap::kPipelined) {
        Ev e;
        e.kind = EvKind::kRowReady;
        e.sub = static_cast<std::uint8_t>(GemmKind::kGemm2);
        e.a = static_cast<std::int16_t>(g);
        e.b = expert;
        e.c = row;
        q_.schedule(q_.now() + poll_, e);
      }
    } else {
      on_gemm2_row_done(g, expert, row);
    }
  }
  schedule_gemm(g);
  progress();
}

void Sim::on_gemm2_row_done(int g, int expert, int row) {
  if (!gated()) return;
  Gpu& G = gpus_[g];
  const auto tids = G.tid->tids(expert, row);
  if (!pull()) {
    for (std::int32_t t : tids) {
      if (--G.local_left[t] == 0) {
        Ev e;
        e.kind = EvKind::kPushReady;
        e.a = static_cast<std::int16_t>(g);
        e.b = t;
        q_.schedule(q_.now() + poll_, e);
      }
    }
    return;
  }
  if (!traits_.notifications) return;
  for (auto& nt : notify_sources(tids, [this](std::int32_t t) { return src_of(t); })) {
    if (nt.source_gpu == g) {
      for (std::int32_t t : nt.tids) {
        if (G.orr->on_notification(t)) {
          Ev e;
          e.kind = EvKind::kCombineReady;
          e.a = static_cast<std::int16_t>(g);
          e.b = t;
          q_.schedule(q_.now() + poll_, e);
        }
      }
      continue;
    }
    const std::uint32_t id = alloc();
    Pkt& p = pk(id);
    p.op = Op::kNotify;
    p.vclass = 0;
    p.stage = 1;
    p.src = static_cast<std::int16_t>(g);
    p.dst = static_cast<std::int16_t>(nt.source_gpu);
    p.token = nt.tids.front();
    p.aux = nt.tids;
    p.layout = encode_metadata(kNotifyBytesPerTid * static_cast<std::int64_t>(nt.tids.size()),
                               cfg_.sys.flit_bytes);
    enqueue_up(g, id);
  }
}

void Sim::start_gemm_all(GemmKind which) {
  for (int g = 0; g < n_; ++g) {
    Gpu& G = gpus_[g];
    for (int i = 0; i < place_.experts_per_gpu; ++i) {
      const int e = place_.first_expert(g) + i;
      for (int r = 0; r < G.ts->rows(e); ++r) G.gs->push_row(which, e, r);
    }
    schedule_gemm(g);
  }
}

void Sim::start_combine_all() {
  combine_open_ = true;
  if (pull()) {
    for (int g = 0; g < n_; ++g) {
      Gpu& G = gpus_[g];
      for (std::int32_t t : G.own_tokens) {
        or_ready_[t] = 1;
        G.comb_ready.push_back(t);
      }
      for (int s = 0; s < static_cast<int>(G.csm.size()); ++s) wake(g, kCombineGroup, s);
    }
    return;
  }
  // Interleave sources so expert GPUs do not all push to one source at once.
  for (int k = 0; k < seq_; ++k) {
    const int t = gpus_[k % n_].own_tokens[k / n_];
    int last = -1;
    for (auto e : routing_.experts(t)) {
      const int h = place_.gpu_of(e);
      if (h == last) continue;
      last = h;
      if (h == src_of(t)) {
        fold_local(t, h);
        comb_local_done_[t] = 1;
        maybe_finish(t);
      } else {
        gpus_[h].comb_ready.push_back(t);
      }
    }
  }
  for (int g = 0; g < n_; ++g) {
    for (int s = 0; s < static_cast<int>(gpus_[g].csm.size()); ++s) wake(g, kCombineGroup, s);
  }
}

void Sim::progress() {
  if (cfg_.pure_comm) return;
  for (;;) {
    switch (phase_) {
      case Phase::kDispatch:
        if (disp_work_ != 0) return;
        phase_ = Phase::kGemm1;
        start_gemm_all(GemmKind::kGemm1);
        continue;
      case Phase::kGemm1:
        if (tbs_left_[0] != 0) return;
        phase_ = Phase::kGemm2;
        start_gemm_all(GemmKind::kGemm2);
        continue;
      case Phase::kGemm2:
        if (tbs_left_[1] != 0) return;
        phase_ = Phase::kCombine;
        start_combine_all();
        continue;
      case Phase::kPhaseA:
        if (traits_.overlap != Overlap::kPhased) return;
        if (disp_work_ != 0 || tbs_left_[0] != 0) return;
        phase_ = Phase::kPhaseB;
        combine_open_ = true;
        start_gemm_all(GemmKind::kGemm2);
        continue;
      default:
        return;
    }
  }
}

RunMetrics Sim::run() {
  phase_ = traits_.overlap == Overlap::kSerialized ? Phase::kDispatch : Phase::kPhaseA;
  if (traits_.metadata_exchange) {
    const std::int64_t bytes = cfg_.metadata_bytes_per_expert * place_.experts_per_gpu;
    for (int g = 0; g < n_; ++g) {
      for (int h = 0; h < n_; ++h) {
        if (h == g) continue;
        const std::uint32_t id = alloc();
        Pkt& p = pk(id);
        p.op = Op::kMeta;
        p.vclass = 0;
        p.src = static_cast<std::int16_t>(g);
        p.dst = static_cast<std::int16_t>(h);
        p.layout = encode_metadata(bytes, cfg_.sys.flit_bytes);
        enqueue_up(g, id);
      }
    }
  } else {
    for (int g = 0; g < n_; ++g) open_dispatch(g);
  }
  if (cfg_.pure_comm) {
    start_combine_all();
  } else if (traits_.overlap == Overlap::kPipelined) {
    combine_open_ = true;
  }

  SimTime end = 0;
  bool aborted = false;
  try {
    end = q_.run_until_idle([this](const Event<Ev>& ev) {
      const Ev& e = ev.payload;
      switch (e.kind) {
        case EvKind::kUpFree:
          up_[e.a].busy = false;
          kick_up(e.a);
          break;
        case EvKind::kDownFree:
          down_[e.a].busy = false;
          kick_down(e.a);
          break;
        case EvKind::kSwArrive:
          on_sw_arrive(e.a, e.id);
          break;
        case EvKind::kSwDeliver:
          down_[e.a].q[pk(e.id).vclass].push_back(e.id);
          kick_down(e.a);
          break;
        case EvKind::kGpuArrive:
          m_.down[e.a].delivered += pk(e.id).layout.total();
          on_gpu_arrive(e.a / planes_, e.id);
          break;
        case EvKind::kHubDone:
          on_hub_done(e.a, e.id);
          break;
        case EvKind::kEnqueueUp:
          enqueue_up(e.a, e.id);
          break;
        case EvKind::kLocalWrite:
          on_local_write(e.a, e.b);
          break;
        case EvKind::kTbDone:
          on_tb_done(e.a, e.sub & 1, static_cast<GemmKind>(e.sub >> 1), e.b, e.c);
          break;
        case EvKind::kRowReady:
          gpus_[e.a].gs->push_row(static_cast<GemmKind>(e.sub), e.b, e.c);
          schedule_gemm(e.a);
          break;
        case EvKind::kCombineReady:
          or_ready_[e.b] = 1;
          gpus_[e.a].comb_ready.push_back(e.b);
          for (int s = 0; s < static_cast<int>(gpus_[e.a].csm.size()); ++s) {
            const IssueSm& sm = gpus_[e.a].csm[s];
            if (sm.token < 0 && !sm.stalled && window_open(gpus_[e.a])) {
              wake(e.a, kCombineGroup, s);
              break;
            }
          }
          break;
        case EvKind::kPushReady:
          push_ready(e.a, e.b);
          break;
        case EvKind::kSmWake:
          if (e.sub == kDispatchGroup) {
            dispatch_step(e.a, e.b);
          } else {
            combine_step(e.a, e.b);
          }
          break;
      }
    });
  } catch (const SimError& err) {
    aborted = true;
    end = q_.now();
    m_.violations.push_back("aborted at " + std::to_string(to_ns(end)) + " ns: " + err.what());
  }
  finalize(end);
  if (aborted) m_.completion = end;
  return std::move(m_);
}

void Sim::finalize(SimTime end) {
  m_.completion = end;
  m_.events = q_.processed();
  auto fail = [&](const std::string& s) { m_.violations.push_back(s); };
  if (m_.tokens_combined != seq_) {
    fail("liveness: " + std::to_string(m_.tokens_combined) + " of " + std::to_string(seq_) +
         " tokens combined");
  }
  if (disp_work_ != 0) fail("dispatch incomplete: " + std::to_string(disp_work_) + " items left");
  if (comb_work_ != 0) fail("combine incomplete: " + std::to_string(comb_work_) + " items left");
  if (tbs_left_[0] != 0 || tbs_left_[1] != 0) fail("GEMM thread blocks left unexecuted");
  if (rx_.live_slots() != 0) fail(std::to_string(rx_.live_slots()) + " reduction slots still live");
  if (acks_.live() != 0) fail(std::to_string(acks_.live()) + " stores never fully acked");
  if (live_pkts_ != 0) fail(std::to_string(live_pkts_) + " packets still in flight");
  for (std::size_t i = 0; i < m_.up.size(); ++i) {
    if (m_.up[i].flits.total() != m_.up[i].delivered) fail("up-link flit loss on channel " + std::to_string(i));
    if (m_.down[i].flits.total() != m_.down[i].delivered) fail("down-link flit loss on channel " + std::to_string(i));
  }

  for (auto& G : gpus_) {
    for (auto* mgr : {G.al.get(), G.al_prev.get()}) {
      if (!mgr) continue;
      m_.tlb_hits += mgr->tlb().hits();
      m_.tlb_misses += mgr->tlb().misses();
    }
    for (auto* group : {&G.dsm, &G.csm}) {
      for (auto& sm : *group) {
        m_.multimemq_peak = std::max(m_.multimemq_peak, sm.mq.peak());
        m_.multimemq_issued += sm.mq.issued();
        m_.multimemq_retired += sm.mq.retired();
      }
    }
    m_.ts_peak_live = std::max(m_.ts_peak_live, G.ts->peak_live());
    m_.or_peak_live = std::max(m_.or_peak_live, G.orr->peak_live());
    m_.table_overflow_accesses += G.ts->overflow_accesses() + G.orr->overflow_accesses();
    m_.gemm_borrowed_tbs += G.gs->borrowed();
  }
  if (m_.multimemq_issued != m_.multimemq_retired) fail("MultimemQ issued != retired");
  m_.rb_inserts = rx_.buffer_inserts();
  m_.rb_hits = rx_.buffer_hits();
  m_.rb_evictions = rx_.buffer_evictions();
  m_.slots_opened = rx_.opened();

  const char* gemm_group = traits_.overlap == Overlap::kSerialized ? "all"
                           : traits_.overlap == Overlap::kPhased   ? "gemm"
                                                                   : nullptr;
  for (int st = 0; st < kStages; ++st) {
    for (int g = 0; g < n_; ++g) {
      const Gpu& G = gpus_[g];
      if (G.st_start[st] < 0) continue;
      const SimTime s0 = G.st_start[st];
      const SimTime s1 = std::max(G.st_end[st], s0);
      std::string group;
      switch (static_cast<StageId>(st)) {
        case StageId::kDispatch: group = "dispatch"; break;
        case StageId::kCombine: group = "combine"; break;
        case StageId::kGemm1: group = gemm_group ? gemm_group : "gemm1"; break;
        case StageId::kGemm2: group = gemm_group ? gemm_group : "gemm2"; break;
      }
      m_.timeline.push_back({static_cast<StageId>(st), g, group, s0, s1});
      if (!m_.stage_active[st]) {
        m_.stage[st] = {s0, s1};
        m_.stage_active[st] = true;
      } else {
        m_.stage[st].start = std::min(m_.stage[st].start, s0);
        m_.stage[st].end = std::max(m_.stage[st].end, s1);
      }
    }
  }
}

}  // namespace

RunMetrics run_method(const RunConfig& cfg, const RoutingTable& routing) {
  Sim sim(cfg, routing);
  RunMetrics m = sim.run();
  m.workload_hash = mix64(routing_fingerprint(routing) ^
                          mix64(static_cast<std::uint64_t>(cfg.sys.n_gpu) << 32 ^
                                static_cast<std::uint64_t>(cfg.model.token_bytes())));
  return m;
}

RunMetrics run_method(const RunConfig& cfg) {
  cfg.validate();
  const RoutingTable routing = gen_routing(cfg.model, cfg.dist, cfg.seed);
  return run_method(cfg, routing);
}

}  // namespace dysim
