#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "dsim/error.hpp"
#include "dsim/time.hpp"

namespace dsim {

/// Total order over events: timestamp, then emitting source, then per-source
/// sequence number. The source here is the *logical* source (LP id, or 0 for
/// scenario-injected events), never a transport address, so the order is
/// identical no matter how processes are spread over agents.
struct EventKey {
  VirtualTime ts;
  LpId src = 0;
  std::uint64_t seq = 0;

  friend constexpr auto operator<=>(const EventKey&, const EventKey&) = default;

  std::string str() const {
    return "(" + ts.str() + "," + std::to_string(src) + "," +
           std::to_string(seq) + ")";
  }
};

enum class EventKind : std::uint8_t {
  kGeneric = 0,
  kStartNewJob = 1,
  kStateUpdate = 2,
  kWakeup = 3,
  kEndOfRun = 4,
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::kGeneric: return "GENERIC";
    case EventKind::kStartNewJob: return "START_NEW_JOB";
    case EventKind::kStateUpdate: return "STATE_UPDATE";
    case EventKind::kWakeup: return "WAKEUP";
    case EventKind::kEndOfRun: return "END_OF_RUN";
  }
  return "?";
}

inline std::optional<EventKind> event_kind_from_string(const std::string& s) {
  if (s == "GENERIC") return EventKind::kGeneric;
  if (s == "START_NEW_JOB") return EventKind::kStartNewJob;
  if (s == "STATE_UPDATE") return EventKind::kStateUpdate;
  if (s == "WAKEUP") return EventKind::kWakeup;
  if (s == "END_OF_RUN") return EventKind::kEndOfRun;
  return std::nullopt;
}

struct SimEvent {
  EventKey key;
  ContextId context_id = 0;
  LpId src_lp = 0;  // == key.src for process emissions, 0 for injections
  LpId dst_lp = 0;
  EventKind kind = EventKind::kGeneric;
  std::string payload;  // opaque to the kernel; models use JSON text
};

/// The comparator everything sorts by.
inline const EventKey& event_order_key(const SimEvent& ev) { return ev.key; }

/// Pending events ordered by key. Duplicate keys are a protocol violation
/// (either a replayed frame or a broken sequence allocator), so enqueue
/// refuses them rather than guessing.
class EventQueue {
 public:
  bool empty() const { return events_.empty(); }
  std::size_t size() const { return events_.size(); }

  void enqueue(SimEvent ev) {
    auto key = ev.key;
    auto [it, inserted] = events_.emplace(key, std::move(ev));
    (void)it;
    if (!inserted) {
      throw ProtocolError("duplicate event key " + key.str());
    }
  }

  const SimEvent* peek() const {
    return events_.empty() ? nullptr : &events_.begin()->second;
  }

  SimEvent pop() {
    if (events_.empty()) throw StateError("pop from empty event queue");
    auto node = events_.extract(events_.begin());
    return std::move(node.mapped());
  }

  bool contains(const EventKey& k) const { return events_.count(k) != 0; }

 private:
  std::map<EventKey, SimEvent> events_;
};

/// Smallest head event across a set of queues; ties between queues cannot
/// happen because keys are globally unique. Returns the queue index so the
/// caller can pop from the right place.
inline std::optional<std::pair<std::size_t, const SimEvent*>> peek_min_across(
    std::span<const EventQueue* const> queues) {
  std::optional<std::pair<std::size_t, const SimEvent*>> best;
  for (std::size_t i = 0; i < queues.size(); ++i) {
    const SimEvent* head = queues[i]->peek();
    if (head == nullptr) continue;
    if (!best || head->key < best->second->key) best.emplace(i, head);
  }
  return best;
}

}  // namespace dsim
