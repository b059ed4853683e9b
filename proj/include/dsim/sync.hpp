#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsim/error.hpp"
#include "dsim/event.hpp"
#include "dsim/time.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Conservative synchronization: null messages by demand.
//
// Each agent keeps, per context, one queue of locally produced events plus
// one queue per remote agent. An event may be dispatched only when no remote
// agent can still send something that would have to run first. Agents learn
// what remotes can still send through LVT bounds: every EVENT raises the
// sender's bound to its timestamp, and when an agent is blocked it asks the
// violating agents for a guarantee (LVT_REQUEST) instead of having everyone
// broadcast null messages continuously.
// ---------------------------------------------------------------------------

enum class SyncMsgKind : std::uint8_t {
  kEvent = 0,
  kLvtRequest = 1,
  kLvtResponse = 2,
};

struct SyncMessage {
  SyncMsgKind kind = SyncMsgKind::kEvent;
  ContextId context_id = 0;
  AgentId sender = 0;

  SimEvent event;  // kEvent

  // kLvtRequest. The request doubles as a null message: it carries the
  // requester's clock and its own current guarantee so a blocked pair can
  // ratchet each other forward instead of waiting forever.
  VirtualTime requester_clock;
  VirtualTime requester_guarantee;
  VirtualTime threshold;

  VirtualTime guarantee;  // kLvtResponse
};

/// Lower bounds on the timestamps remote agents may still send. UNKNOWN
/// until the first message from that agent; updates are monotone (stale or
/// reordered information can only be ignored, never lower a bound).
class LvtTable {
 public:
  void add_peer(AgentId agent) { bounds_.emplace(agent, std::nullopt); }

  bool has_peer(AgentId agent) const { return bounds_.count(agent) != 0; }

  std::optional<VirtualTime> bound(AgentId agent) const {
    auto it = bounds_.find(agent);
    if (it == bounds_.end()) {
      throw StateError("lvt bound for unknown agent " + std::to_string(agent));
    }
    return it->second;
  }

  /// Monotone raise; returns true when the table actually advanced
  /// (UNKNOWN -> KNOWN counts).
  bool raise(AgentId agent, VirtualTime t) {
    auto it = bounds_.find(agent);
    if (it == bounds_.end()) {
      throw StateError("lvt raise for unknown agent " + std::to_string(agent));
    }
    if (it->second && *it->second >= t) return false;
    it->second = t;
    ++version_;
    return true;
  }

  /// Increments whenever any bound advances; blocked candidates are only
  /// re-examined (and re-requested) after the version moves.
  std::uint64_t version() const { return version_; }

  const std::map<AgentId, std::optional<VirtualTime>>& all() const {
    return bounds_;
  }

 private:
  std::map<AgentId, std::optional<VirtualTime>> bounds_;
  std::uint64_t version_ = 0;
};

struct SyncStats {
  std::uint64_t events_processed = 0;
  std::uint64_t events_sent = 0;      // remote EVENT messages released
  std::uint64_t events_received = 0;
  std::uint64_t lvt_requests_sent = 0;
  std::uint64_t lvt_responses_sent = 0;
  std::uint64_t lvt_requests_received = 0;
  std::uint64_t lvt_responses_received = 0;
  std::uint64_t blocking_episodes = 0;  // request rounds actually issued

  std::uint64_t sync_messages_sent() const {
    return lvt_requests_sent + lvt_responses_sent;
  }
};

enum class StepOutcome : std::uint8_t {
  kProcessed,  // one event dispatched
  kBlocked,    // head event exists but is not yet safe
  kIdle,       // no pending events
  kFinished,   // context is done
};

struct SyncConfig {
  ContextId context_id = 0;
  AgentId self = 0;
  VirtualTime lookahead{1};
  VirtualTime horizon{VirtualTime::max()};
};

/// Per-(agent, context) synchronization state. Single-threaded by design:
/// the owning engine loop feeds inbound messages in, drives step(), and
/// ships whatever the send hook is handed.
class SyncState {
 public:
  struct Hooks {
    std::function<void(AgentId dst, const SyncMessage&)> send;
    std::function<void(const SimEvent&)> dispatch;
  };

  SyncState(SyncConfig cfg, Hooks hooks)
      : cfg_(cfg), hooks_(std::move(hooks)) {
    if (cfg_.lookahead < VirtualTime::zero()) {
      throw ConfigError("negative lookahead");
    }
  }

  /// Declares a remote agent. `min_source` is the smallest logical-process
  /// id hosted there, or nullopt when it hosts none (then it can never emit
  /// and does not constrain us). Placement is fixed per context, so this is
  /// set up once at context creation.
  void add_peer(AgentId agent, std::optional<LpId> min_source) {
    if (agent == cfg_.self) throw ConfigError("agent peered with itself");
    lvt_.add_peer(agent);
    if (min_source) {
      emitter_min_src_.emplace(agent, *min_source);
      remote_queues_[agent];  // materialize the per-sender queue
    }
  }

  // -- inbound ------------------------------------------------------------

  void on_event_received(AgentId sender, const SimEvent& ev) {
    auto qit = remote_queues_.find(sender);
    if (qit == remote_queues_.end()) {
      throw ProtocolError("event from agent " + std::to_string(sender) +
                          " that hosts no processes");
    }
    // FIFO transport + the sender's release discipline make timestamps per
    // sender nondecreasing; a violation means the peer broke its guarantee.
    auto lit = last_in_ts_.find(sender);
    if (lit != last_in_ts_.end() && ev.key.ts < lit->second) {
      throw ProtocolError("event " + ev.key.str() + " from agent " +
                          std::to_string(sender) +
                          " breaks its timestamp promise");
    }
    bool job = (ev.kind == EventKind::kStartNewJob);
    auto bound = lvt_.bound(sender);
    if (!job && bound && ev.key.ts < *bound) {
      throw ProtocolError("event " + ev.key.str() + " below advertised bound " +
                          bound->str() + " from agent " +
                          std::to_string(sender));
    }
    last_in_ts_[sender] = ev.key.ts;
    qit->second.enqueue(ev);
    ++stats_.events_received;
    // Job activations bypass the bound update; everything else is a promise.
    if (!job) lvt_.raise(sender, ev.key.ts);
  }

  void on_lvt_request(AgentId sender, VirtualTime requester_clock,
                      VirtualTime requester_guarantee, VirtualTime threshold) {
    ++stats_.lvt_requests_received;
    // The request is itself a promise from the requester.
    if (lvt_.has_peer(sender)) {
      lvt_.raise(sender, std::max(requester_clock, requester_guarantee));
    }
    // Latest threshold per requester wins; answer immediately with whatever
    // we can guarantee right now, and again later as the guarantee grows.
    VirtualTime g = compute_guarantee();
    respond(sender, g);
    if (g < threshold) {
      pending_requests_[sender] =
          Pending{threshold, g, lvt_.version()};
    } else {
      pending_requests_.erase(sender);
    }
  }

  void on_lvt_response(AgentId sender, VirtualTime guarantee) {
    ++stats_.lvt_responses_received;
    if (lvt_.has_peer(sender)) lvt_.raise(sender, guarantee);
  }

  // -- guarantees and safety ------------------------------------------------

  /// Smallest timestamp this agent might still send, i.e. a promise.
  /// Everything we may still dispatch is bounded below by our pending events
  /// and by what emitters elsewhere may still feed us (unknown bound counts
  /// as the context epoch); emissions add at least the lookahead on top.
  /// With nothing pending and nobody able to feed us, the horizon caps it.
  VirtualTime compute_guarantee() const {
    if (finished_) return cap();
    std::optional<VirtualTime> low;
    auto fold = [&low](VirtualTime t) {
      if (!low || t < *low) low = t;
    };
    if (const SimEvent* head = local_queue_.peek()) fold(head->key.ts);
    for (const auto& [agent, q] : remote_queues_) {
      if (const SimEvent* head = q.peek()) fold(head->key.ts);
      auto b = lvt_.bound(agent);
      fold(b ? *b : VirtualTime::zero());
    }
    // Held-back emissions were produced under an older, smaller guarantee;
    // they are flushed before any promise that would overtake them, but they
    // still bound what this agent is about to put on the wire.
    for (const auto& [dst, buf] : holdback_) {
      if (!buf.empty()) fold(buf.begin()->first.ts);
    }
    if (!low) return cap();
    VirtualTime g = *low + cfg_.lookahead;
    return g < cap() ? g : cap();
  }

  /// An event is safe when no remote emitter can still send anything that
  /// must run before it. Equal-timestamp bounds are safe only when every
  /// process hosted by that remote sorts after the candidate's source: then
  /// any event it may still send at that timestamp has a larger key (same
  /// source implies a larger sequence; FIFO delivery already gave us the
  /// smaller ones).
  std::vector<AgentId> safety_violators(const EventKey& candidate) const {
    std::vector<AgentId> violators;
    for (const auto& [agent, min_src] : emitter_min_src_) {
      auto b = lvt_.bound(agent);
      if (!b) {
        violators.push_back(agent);
        continue;
      }
      if (*b > candidate.ts) continue;
      if (*b == candidate.ts && min_src >= candidate.src) continue;
      violators.push_back(agent);
    }
    return violators;
  }

  bool is_safe(const EventKey& candidate) const {
    return safety_violators(candidate).empty();
  }

  // -- driving --------------------------------------------------------------

  /// Dispatches the smallest pending event if it is safe. On a block,
  /// issues one LVT_REQUEST per violator and re-issues only after the
  /// table has advanced (so a new fact exists) while the block persists.
  StepOutcome step() {
    if (finished_) return StepOutcome::kFinished;
    auto head = peek_head();
    if (!head) {
      // Nothing to dispatch, but a held emission that the guarantee cannot
      // cover stalls every downstream agent just like a blocked dispatch
      // would, so it demands facts the same way. Releasing e needs
      // guarantee >= e.ts, i.e. every emitter bound >= e.ts - lookahead.
      if (auto held = min_held()) {
        VirtualTime needed = held->ts - cfg_.lookahead;
        std::vector<std::pair<AgentId, VirtualTime>> demands;
        for (const auto& [agent, min_src] : emitter_min_src_) {
          auto b = lvt_.bound(agent);
          if (!b || *b < needed) demands.emplace_back(agent, needed);
        }
        if (!demands.empty()) {
          request_round(*held, demands);
          return StepOutcome::kBlocked;
        }
      }
      return StepOutcome::kIdle;
    }
    EventQueue* queue = head->first;
    const EventKey key = head->second->key;

    auto violators = safety_violators(key);
    if (!violators.empty()) {
      // A violator whose processes all sort after the candidate's source is
      // cleared by a bound of exactly ts (the tie rule accepts equality);
      // anyone else must promise strictly past the candidate.
      std::vector<std::pair<AgentId, VirtualTime>> demands;
      for (AgentId agent : violators) {
        VirtualTime need = emitter_min_src_.at(agent) >= key.src
                               ? key.ts
                               : key.ts + VirtualTime(1);
        demands.emplace_back(agent, need);
      }
      request_round(key, demands);
      return StepOutcome::kBlocked;
    }

    episode_.reset();
    SimEvent ev = queue->pop();
    if (ev.key.ts < clock_) {
      throw StateError("conservative order broken: dispatching " +
                       ev.key.str() + " after clock " + clock_.str());
    }
    clock_ = ev.key.ts;
    ++stats_.events_processed;
    bool end = (ev.kind == EventKind::kEndOfRun);
    if (hooks_.dispatch) hooks_.dispatch(ev);
    if (end) {
      finished_ = true;
      return StepOutcome::kFinished;
    }
    return StepOutcome::kProcessed;
  }

  /// Flushes held-back emissions covered by the current guarantee, feeds
  /// deferred LVT responses, and cascades unmet demands to the peers whose
  /// bounds pin this agent. Run after every batch of steps.
  void maintenance() {
    VirtualTime g = compute_guarantee();
    release_held(g);
    answer_pending(g);
    demand_for_pending();
  }

  // -- emissions ------------------------------------------------------------

  /// Event produced by (or injected for) a process hosted here.
  void submit_local(SimEvent ev) {
    validate_emission(ev, /*remote=*/false);
    local_queue_.enqueue(std::move(ev));
  }

  /// Event for a process hosted on `dst`. Buffered and released in key
  /// order once covered by a guarantee, which keeps per-destination
  /// timestamps nondecreasing no matter how the model interleaves sends.
  void submit_remote(AgentId dst, SimEvent ev) {
    validate_emission(ev, /*remote=*/true);
    if (!lvt_.has_peer(dst)) {
      throw StateError("emission to unknown agent " + std::to_string(dst));
    }
    auto key = ev.key;
    if (!holdback_[dst].emplace(key, std::move(ev)).second) {
      throw StateError("duplicate held emission " + key.str());
    }
  }

  /// Marks the context finished without an inline END_OF_RUN event (used
  /// when the run coordinator has certified global quiescence).
  void finish() { finished_ = true; }

  // -- introspection ----------------------------------------------------------

  VirtualTime clock() const { return clock_; }
  bool finished() const { return finished_; }
  const LvtTable& lvt() const { return lvt_; }
  const SyncStats& stats() const { return stats_; }
  ContextId context_id() const { return cfg_.context_id; }
  AgentId self() const { return cfg_.self; }
  VirtualTime lookahead() const { return cfg_.lookahead; }
  VirtualTime horizon() const { return cfg_.horizon; }

  std::size_t queued_events() const {
    std::size_t n = local_queue_.size();
    for (const auto& [agent, q] : remote_queues_) n += q.size();
    return n;
  }

  std::size_t held_events() const {
    std::size_t n = 0;
    for (const auto& [dst, buf] : holdback_) n += buf.size();
    return n;
  }

  /// Human-readable description of why the head event cannot run.
  std::string diagnose() const {
    std::ostringstream os;
    auto head = peek_head();
    if (head) {
      os << "blocked on " << head->second->key.str() << " -> lp"
         << head->second->dst_lp;
    } else if (auto held = min_held()) {
      os << "blocked releasing " << held->str();
    } else {
      return "no pending events";
    }
    os << "; bounds:";
    for (const auto& [agent, b] : lvt_.all()) {
      os << " agent" << agent << "=" << (b ? b->str() : "unknown");
    }
    return os.str();
  }

 private:
  struct Pending {
    VirtualTime threshold;
    VirtualTime last_sent;
    std::uint64_t version_at_send = 0;
  };
  struct Episode {
    EventKey candidate;
    std::map<AgentId, std::uint64_t> asked_at_version;
  };

  VirtualTime cap() const { return cfg_.horizon + cfg_.lookahead; }

  /// Smallest held-back emission across all destinations, if any.
  std::optional<EventKey> min_held() const {
    std::optional<EventKey> best;
    for (const auto& [dst, buf] : holdback_) {
      if (buf.empty()) continue;
      const EventKey& k = buf.begin()->first;
      if (!best || k < *best) best = k;
    }
    return best;
  }

  std::optional<std::pair<EventQueue*, const SimEvent*>> peek_head() {
    std::optional<std::pair<EventQueue*, const SimEvent*>> best;
    auto consider = [&best](EventQueue& q) {
      const SimEvent* h = q.peek();
      if (h && (!best || h->key < best->second->key)) best.emplace(&q, h);
    };
    consider(local_queue_);
    for (auto& [agent, q] : remote_queues_) consider(q);
    return best;
  }
  std::optional<std::pair<const EventQueue*, const SimEvent*>> peek_head()
      const {
    auto r = const_cast<SyncState*>(this)->peek_head();
    if (!r) return std::nullopt;
    return std::pair<const EventQueue*, const SimEvent*>{r->first, r->second};
  }

  void validate_emission(const SimEvent& ev, bool remote) const {
    if (ev.context_id != cfg_.context_id) {
      throw StateError("emission for wrong context");
    }
    if (ev.key.ts > cfg_.horizon) {
      throw ModelError("emission " + ev.key.str() + " beyond horizon " +
                       cfg_.horizon.str());
    }
    bool self_send = ev.key.src == ev.dst_lp && ev.key.src != kSystemSource;
    VirtualTime floor =
        self_send && !remote ? clock_ : clock_ + cfg_.lookahead;
    // Injections (source 0) are seeded before the clock moves; they only
    // need to respect the epoch.
    if (ev.key.src == kSystemSource) floor = clock_;
    if (ev.key.ts < floor) {
      throw ModelError("emission " + ev.key.str() + " below floor " +
                       floor.str());
    }
  }

  /// Everything promised must already be on the wire: flush held events
  /// with timestamps the promise would cover, then never promise lower.
  void release_held(VirtualTime g) {
    for (auto& [dst, buf] : holdback_) {
      while (!buf.empty() && buf.begin()->first.ts <= g) {
        auto node = buf.extract(buf.begin());
        SimEvent& ev = node.mapped();
        auto lit = last_out_ts_.find(dst);
        if (lit != last_out_ts_.end() && ev.key.ts < lit->second) {
          throw StateError("outgoing timestamps regressed for agent " +
                           std::to_string(dst));
        }
        last_out_ts_[dst] = ev.key.ts;
        SyncMessage msg;
        msg.kind = SyncMsgKind::kEvent;
        msg.context_id = cfg_.context_id;
        msg.sender = cfg_.self;
        msg.event = std::move(ev);
        ++stats_.events_sent;
        hooks_.send(dst, msg);
      }
    }
  }

  void respond(AgentId dst, VirtualTime g) {
    release_held(g);
    SyncMessage msg;
    msg.kind = SyncMsgKind::kLvtResponse;
    msg.context_id = cfg_.context_id;
    msg.sender = cfg_.self;
    msg.guarantee = g;
    ++stats_.lvt_responses_sent;
    hooks_.send(dst, msg);
  }

  /// Deferred responses: a fresh answer the moment the threshold is met,
  /// plus incremental answers whenever remote facts (not mere local
  /// processing) grew the guarantee — those keep two mutually blocked
  /// agents ratcheting each other to the threshold.
  void answer_pending(VirtualTime g) {
    for (auto it = pending_requests_.begin();
         it != pending_requests_.end();) {
      Pending& p = it->second;
      bool crossed = g >= p.threshold;
      bool table_moved = lvt_.version() > p.version_at_send;
      if (g > p.last_sent && (crossed || table_moved)) {
        respond(it->first, g);
        p.last_sent = g;
        p.version_at_send = lvt_.version();
      }
      if (crossed) {
        it = pending_requests_.erase(it);
      } else {
        ++it;
      }
    }
  }

  /// Requests do not only originate at blocked dispatches: being *asked*
  /// for a guarantee we cannot give is demand too. For every pending
  /// request whose threshold exceeds our guarantee, ask the emitter peers
  /// whose bounds pin us below it (their answer must reach threshold minus
  /// lookahead before ours can reach the threshold). Deduplicated per peer
  /// by (threshold, table version), so a cascade through a cycle of agents
  /// ratchets instead of flooding, and dies out at lookahead zero where the
  /// deadlock probe takes over.
  void demand_for_pending() {
    VirtualTime top;
    bool any = false;
    for (const auto& [agent, p] : pending_requests_) {
      if (!any || p.threshold > top) top = p.threshold;
      any = true;
    }
    if (!any) return;
    VirtualTime needed = top - cfg_.lookahead;
    VirtualTime g;
    bool have_g = false;
    for (const auto& [agent, min_src] : emitter_min_src_) {
      auto b = lvt_.bound(agent);
      if (b && *b >= needed) continue;
      auto it = relay_asks_.find(agent);
      if (it != relay_asks_.end() && it->second.second >= lvt_.version() &&
          it->second.first >= needed) {
        continue;
      }
      if (!have_g) {
        g = compute_guarantee();
        have_g = true;
        release_held(g);  // the request carries g as a promise
      }
      SyncMessage msg;
      msg.kind = SyncMsgKind::kLvtRequest;
      msg.context_id = cfg_.context_id;
      msg.sender = cfg_.self;
      msg.requester_clock = clock_;
      msg.requester_guarantee = g;
      msg.threshold = needed;
      relay_asks_[agent] = {needed, lvt_.version()};
      ++stats_.lvt_requests_sent;
      hooks_.send(agent, msg);
    }
  }

  /// One request per violator per round; a new round needs a new fact
  /// (table version moved) while still blocked on the same candidate.
  /// Each demand names the bound that responder must reach before its
  /// answer is final: the candidate's timestamp when the tie rule accepts
  /// equality, one past it when it does not, timestamp minus lookahead for
  /// a release block.
  void request_round(
      const EventKey& candidate,
      const std::vector<std::pair<AgentId, VirtualTime>>& demands) {
    if (!episode_ || episode_->candidate != candidate) {
      episode_ = Episode{candidate, {}};
    }
    VirtualTime g = compute_guarantee();
    bool issued = false;
    for (const auto& [agent, threshold] : demands) {
      auto it = episode_->asked_at_version.find(agent);
      if (it != episode_->asked_at_version.end() &&
          it->second >= lvt_.version()) {
        continue;
      }
      release_held(g);  // the request carries g as a promise
      SyncMessage msg;
      msg.kind = SyncMsgKind::kLvtRequest;
      msg.context_id = cfg_.context_id;
      msg.sender = cfg_.self;
      msg.requester_clock = clock_;
      msg.requester_guarantee = g;
      msg.threshold = threshold;
      episode_->asked_at_version[agent] = lvt_.version();
      ++stats_.lvt_requests_sent;
      issued = true;
      hooks_.send(agent, msg);
    }
    if (issued) ++stats_.blocking_episodes;
  }

  SyncConfig cfg_;
  Hooks hooks_;

  EventQueue local_queue_;
  std::map<AgentId, EventQueue> remote_queues_;
  std::map<AgentId, LpId> emitter_min_src_;
  LvtTable lvt_;

  std::map<AgentId, std::map<EventKey, SimEvent>> holdback_;
  std::map<AgentId, Pending> pending_requests_;
  std::optional<Episode> episode_;
  // Cascaded demands already issued: peer -> (threshold asked for, table
  // version at the time). A new ask needs a higher threshold or a new fact.
  std::map<AgentId, std::pair<VirtualTime, std::uint64_t>> relay_asks_;

  std::map<AgentId, VirtualTime> last_in_ts_;
  std::map<AgentId, VirtualTime> last_out_ts_;

  VirtualTime clock_;
  bool finished_ = false;
  SyncStats stats_;
};

/// Local deadlock verdict: blocked, and no fact has arrived for the whole
/// timeout window, so nothing this agent can do will unblock it. The run
/// coordinator combines these per-agent verdicts (a slow peer is not a
/// deadlock; every agent stuck with conserved message flow is).
struct DeadlockProbe {
  std::uint64_t last_version = 0;
  std::uint64_t last_processed = 0;
  std::int64_t stalled_since_ms = -1;

  /// Feeds one observation; returns a diagnosis once the stall exceeds
  /// `timeout_ms`.
  std::optional<std::string> observe(const SyncState& st, bool blocked,
                                     std::int64_t wall_ms,
                                     std::int64_t timeout_ms) {
    bool moved = st.lvt().version() != last_version ||
                 st.stats().events_processed != last_processed;
    last_version = st.lvt().version();
    last_processed = st.stats().events_processed;
    if (!blocked || moved) {
      stalled_since_ms = -1;
      return std::nullopt;
    }
    if (stalled_since_ms < 0) {
      stalled_since_ms = wall_ms;
      return std::nullopt;
    }
    if (wall_ms - stalled_since_ms < timeout_ms) return std::nullopt;
    return "context " + std::to_string(st.context_id()) + " agent " +
           std::to_string(st.self()) + " deadlocked: " + st.diagnose();
  }
};

}  // namespace dsim
