#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dysim/errors.hpp"
#include "dysim/sim_time.hpp"

namespace dysim {

using EventHandle = std::uint64_t;

template <class Payload>
struct Event {
  SimTime time = 0;
  std::uint64_t seq = 0;
  Payload payload{};
};

// Discrete-event kernel. Events are totally ordered by (time, seq), where seq
// is the insertion counter, so equal-time events fire in FIFO order.
template <class Payload>
class EventQueue {
 public:
  explicit EventQueue(std::uint64_t max_events = 2'000'000'000ULL)
      : max_events_(max_events) {}

  SimTime now() const { return now_; }
  std::uint64_t processed() const { return processed_; }
  bool empty() const { return heap_.size() == cancelled_.size(); }
  std::size_t pending() const { return heap_.size() - cancelled_.size(); }

  EventHandle schedule(SimTime time, Payload payload) {
    if (time < now_) {
      throw EngineError("event scheduled into the past: t=" +
                        std::to_string(time) + " < now=" + std::to_string(now_));
    }
    const std::uint64_t seq = next_seq_++;
    fired_.push_back(false);
    heap_.push(Event<Payload>{time, seq, std::move(payload)});
    return seq;
  }

  EventHandle schedule_in(SimTime delay, Payload payload) {
    return schedule(now_ + delay, std::move(payload));
  }

  // Cancelling an already-fired or unknown handle is a no-op.
  void cancel(EventHandle h) {
    if (h < next_seq_ && !fired_[h]) cancelled_.insert(h);
  }

  void add_end_hook(std::function<void(SimTime)> hook) {
    end_hooks_.push_back(std::move(hook));
  }

  // Drains the queue through `handler` and returns the time of the last event.
  template <class Handler>
  SimTime run_until_idle(Handler&& handler) {
    while (!heap_.empty()) {
      Event<Payload> ev = heap_.top();
      heap_.pop();
      fired_[ev.seq] = true;
      if (!cancelled_.empty()) {
        auto it = cancelled_.find(ev.seq);
        if (it != cancelled_.end()) {
          cancelled_.erase(it);
          continue;
        }
      }
      if (++processed_ > max_events_) {
        throw EngineError("runaway simulation: more than " +
                          std::to_string(max_events_) + " events");
      }
      now_ = ev.time;
      handler(ev);
    }
    for (auto& hook : end_hooks_) hook(now_);
    return now_;
  }

 private:
  struct Later {
    bool operator()(const Event<Payload>& a, const Event<Payload>& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  std::priority_queue<Event<Payload>, std::vector<Event<Payload>>, Later> heap_;
  std::unordered_set<std::uint64_t> cancelled_;
  std::vector<std::function<void(SimTime)>> end_hooks_;
  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::vector<bool> fired_;
  std::uint64_t processed_ = 0;
  std::uint64_t max_events_;
};

}  // namespace dysim
