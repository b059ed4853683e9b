#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsim/error.hpp"
#include "dsim/event.hpp"
#include "dsim/lp.hpp"
#include "dsim/model.hpp"
#include "dsim/results.hpp"
#include "dsim/scenario.hpp"
#include "dsim/sync.hpp"
#include "dsim/transport.hpp"
#include "dsim/wire.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Simulation agent. Hosts any number of contexts; each context runs its own
// conservative synchronization state, its share of the model's processes,
// and yields a processed-event trace plus result records. The engine is
// single-threaded per agent: inbound frames and step batches interleave on
// the caller's loop.
// ---------------------------------------------------------------------------

struct TraceEntry {
  EventKey key;
  LpId dst = 0;
  EventKind kind = EventKind::kGeneric;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
  auto operator<=>(const TraceEntry& o) const { return key <=> o.key; }
};

inline std::uint64_t trace_hash(const std::vector<TraceEntry>& trace) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const TraceEntry& t : trace) {
    std::string line = std::to_string(t.key.ts.ticks()) + ":" +
                       std::to_string(t.key.src) + ":" +
                       std::to_string(t.key.seq) + ":" +
                       std::to_string(t.dst) + ":" + to_string(t.kind) + "\n";
    h = fnv1a(line, h);
  }
  return h;
}

/// One context on one agent.
class ContextRuntime {
 public:
  using SendFn = std::function<void(AgentId, const SyncMessage&)>;

  ContextRuntime(AgentId self, ContextId ctx_id, const ScenarioConfig& cfg,
                 std::vector<AgentId> participants,
                 const std::map<std::string,
                                std::vector<std::pair<std::string,
                                                      std::int64_t>>>& db_seed,
                 SendFn send)
      : self_(self), cfg_(cfg), participants_(std::move(participants)),
        pool_(cfg.worker_pool), send_(std::move(send)) {
    ModelBuild model = build_model(cfg_, ctx_id, participants_, db_seed);
    owner_ = assign_lps(model.lps, participants_);
    auto floors = emitter_floor(model.lps, owner_);

    SyncConfig sc;
    sc.context_id = ctx_id;
    sc.self = self_;
    sc.lookahead = cfg_.lookahead;
    sc.horizon = cfg_.horizon;
    sync_.emplace(sc, SyncState::Hooks{
        [this](AgentId dst, const SyncMessage& m) { send_(dst, m); },
        [this](const SimEvent& ev) { dispatch(ev); }});
    for (AgentId peer : participants_) {
      if (peer == self_) continue;
      sync_->add_peer(peer, floors.count(peer) ? floors.at(peer)
                                               : std::optional<LpId>{});
    }

    // Instantiate only what we host; admit everything through the pool up
    // front (placement is static, so admission failing means the scenario
    // asked for more concurrent processes than the pool allows).
    for (const LpPlan& plan : model.lps) {
      if (owner_.at(plan.id) != self_) continue;
      LogicalProcess lp;
      lp.id = plan.id;
      lp.kind = plan.kind;
      lp.behavior = model.behavior_factory(plan);
      pool_.request(plan.id);
      auto admitted = pool_.try_admit();
      if (!admitted || *admitted != plan.id) {
        throw ConfigError("worker pool of " +
                          std::to_string(pool_.capacity()) +
                          " cannot admit all processes hosted here");
      }
      lp_transition(lp, LpState::kReady, pool_);
      plans_[plan.id] = plan;
      rngs_.emplace(plan.id,
                    std::mt19937_64(cfg_.seed ^ (0x9e3779b97f4a7c15ULL *
                                                 (plan.id + 1))));
      lps_.emplace(plan.id, std::move(lp));
    }
    for (const SimEvent& ev : model.injections) {
      if (owner_.at(ev.dst_lp) == self_) sync_->submit_local(ev);
    }
  }

  // -- inbound ----------------------------------------------------------------

  void on_sync(AgentId sender, const SyncMessage& m) {
    switch (m.kind) {
      case SyncMsgKind::kEvent:
        sync_->on_event_received(sender, m.event);
        break;
      case SyncMsgKind::kLvtRequest:
        sync_->on_lvt_request(sender, m.requester_clock, m.requester_guarantee,
                              m.threshold);
        break;
      case SyncMsgKind::kLvtResponse:
        sync_->on_lvt_response(sender, m.guarantee);
        break;
    }
  }

  // -- driving ------------------------------------------------------------------

  void start() { started_ = true; }
  bool started() const { return started_; }

  /// Runs a bounded batch of safe steps plus one maintenance pass.
  /// Returns true when at least one event was processed.
  bool pump(int batch = 64) {
    if (!started_ || failed_) return false;
    bool progressed = false;
    for (int i = 0; i < batch; ++i) {
      StepOutcome oc = sync_->step();
      last_outcome_ = oc;
      if (oc != StepOutcome::kProcessed) break;
      progressed = true;
    }
    sync_->maintenance();
    return progressed;
  }

  std::optional<std::string> observe_deadlock(std::int64_t wall_ms) {
    if (!started_ || failed_ || sync_->finished()) return std::nullopt;
    bool blocked = last_outcome_ == StepOutcome::kBlocked;
    return probe_.observe(*sync_, blocked, wall_ms, cfg_.deadlock_timeout_ms);
  }

  /// Certify global quiescence: stop stepping, run model epilogues, convert
  /// counters into records. Idempotent.
  void finalize() {
    if (finalized_) return;
    finalized_ = true;
    sync_->finish();
    for (auto& [id, lp] : lps_) {
      EpilogueCtx ctx(*this, lp);
      lp.behavior->on_finish(ctx);
    }
    const SyncStats& s = sync_->stats();
    MetricTags agent_tag;
    agent_tag.kv = {{"agent", std::to_string(self_)}};
    push_record("events_processed", static_cast<double>(s.events_processed),
                agent_tag);
    push_record("sync_messages", static_cast<double>(s.sync_messages_sent()),
                agent_tag);
    push_record("blocking_episodes", static_cast<double>(s.blocking_episodes),
                agent_tag);
  }

  // -- introspection --------------------------------------------------------------

  nlohmann::json status() const {
    const SyncStats& s = sync_->stats();
    // The coordinator treats a context as quiescent only when queues are
    // empty everywhere AND every counter pair conserves globally (sent ==
    // received for events and for both LVT lanes), so a message still in
    // flight anywhere keeps the run alive.
    return nlohmann::json{
        {"clock", sync_->clock().ticks()},
        {"processed", s.events_processed},
        {"sent", s.events_sent},
        {"received", s.events_received},
        {"requests_sent", s.lvt_requests_sent},
        {"requests_received", s.lvt_requests_received},
        {"responses_sent", s.lvt_responses_sent},
        {"responses_received", s.lvt_responses_received},
        {"queued", sync_->queued_events()},
        {"held", sync_->held_events()},
        {"blocked", last_outcome_ == StepOutcome::kBlocked},
        {"finished", sync_->finished()},
        {"failed", failed_},
    };
  }

  const SyncState& sync() const { return *sync_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  std::vector<ResultRecord>& records() { return records_; }
  bool failed() const { return failed_; }
  void mark_failed() { failed_ = true; }
  AgentId self() const { return self_; }
  const ScenarioConfig& scenario() const { return cfg_; }

 private:
  // -- event dispatch --------------------------------------------------------

  /// Live view handed to behaviors while one of their events is running.
  class DispatchCtx final : public LpContext {
   public:
    DispatchCtx(ContextRuntime& rt, LogicalProcess& lp, VirtualTime now)
        : rt_(rt), lp_(lp), now_(now) {}

    VirtualTime now() const override { return now_; }
    VirtualTime lookahead() const override { return rt_.cfg_.lookahead; }
    VirtualTime horizon() const override { return rt_.cfg_.horizon; }
    LpId self() const override { return lp_.id; }
    std::uint64_t rand64() override { return rt_.rngs_.at(lp_.id)(); }

    void emit(LpId dst, VirtualTime ts, EventKind kind,
              std::string payload) override {
      rt_.emit_from(lp_, dst, ts, kind, std::move(payload));
    }

    void sleep_until(VirtualTime ts, std::string tag) override {
      nlohmann::json j{{"tag", std::move(tag)}};
      rt_.emit_from(lp_, lp_.id, ts, EventKind::kWakeup, j.dump());
    }

    void record(const std::string& metric, double value,
                MetricTags tags) override {
      rt_.push_record_at(metric, value, std::move(tags), now_);
    }

   private:
    ContextRuntime& rt_;
    LogicalProcess& lp_;
    VirtualTime now_;
  };

  /// Same surface at shutdown: emissions are meaningless then, records pin
  /// to the horizon so every layout stamps epilogue metrics identically.
  class EpilogueCtx final : public LpContext {
   public:
    EpilogueCtx(ContextRuntime& rt, LogicalProcess& lp) : rt_(rt), lp_(lp) {}
    VirtualTime now() const override { return rt_.cfg_.horizon; }
    VirtualTime lookahead() const override { return rt_.cfg_.lookahead; }
    VirtualTime horizon() const override { return rt_.cfg_.horizon; }
    LpId self() const override { return lp_.id; }
    std::uint64_t rand64() override { return rt_.rngs_.at(lp_.id)(); }
    void emit(LpId, VirtualTime, EventKind, std::string) override {
      throw StateError("emission during context shutdown");
    }
    void sleep_until(VirtualTime, std::string) override {
      throw StateError("sleep during context shutdown");
    }
    void record(const std::string& metric, double value,
                MetricTags tags) override {
      rt_.push_record_at(metric, value, std::move(tags), rt_.cfg_.horizon);
    }

   private:
    ContextRuntime& rt_;
    LogicalProcess& lp_;
  };

  void dispatch(const SimEvent& ev) {
    if (ev.kind == EventKind::kEndOfRun) return;  // engine-level sentinel
    auto it = lps_.find(ev.dst_lp);
    if (it == lps_.end()) {
      throw StateError("event " + ev.key.str() + " for process " +
                       std::to_string(ev.dst_lp) + " not hosted here");
    }
    LogicalProcess& lp = it->second;
    // Per-agent dispatch order is total over event keys; any regression is
    // a causality violation and aborts the run.
    if (last_key_ && !(*last_key_ < ev.key)) {
      throw StateError("out-of-order dispatch: " + ev.key.str() + " after " +
                       last_key_->str());
    }
    last_key_ = ev.key;
    trace_.push_back(TraceEntry{ev.key, ev.dst_lp, ev.kind});

    if (lp.state == LpState::kWaiting) lp_transition(lp, LpState::kReady, pool_);
    if (lp.state != LpState::kReady) {
      throw StateError("event for process " + std::to_string(lp.id) +
                       " in state " + to_string(lp.state));
    }
    lp_transition(lp, LpState::kRunning, pool_);
    lp.clock = ev.key.ts;

    DispatchCtx ctx(*this, lp, ev.key.ts);
    lp.behavior->on_event(ctx, ev);

    if (lp.behavior->done()) {
      lp_transition(lp, LpState::kFinished, pool_);
    } else if (lp.behavior->parked()) {
      lp_transition(lp, LpState::kWaiting, pool_);
    } else {
      lp_transition(lp, LpState::kReady, pool_);
    }
  }

  void emit_from(LogicalProcess& lp, LpId dst, VirtualTime ts, EventKind kind,
                 std::string payload) {
    if (!plans_.at(lp.id).can_emit) {
      throw ModelError("process " + std::to_string(lp.id) +
                       " is declared non-emitting");
    }
    auto oit = owner_.find(dst);
    if (oit == owner_.end()) {
      throw ModelError("emission to unknown process " + std::to_string(dst));
    }
    SimEvent ev;
    ev.key = EventKey{ts, lp.id, lp.next_seq++};
    ev.context_id = sync_->context_id();
    ev.src_lp = lp.id;
    ev.dst_lp = dst;
    ev.kind = kind;
    ev.payload = std::move(payload);
    if (oit->second == self_) {
      sync_->submit_local(std::move(ev));
    } else {
      sync_->submit_remote(oit->second, std::move(ev));
    }
  }

  void push_record_at(const std::string& metric, double value, MetricTags tags,
                      VirtualTime vt) {
    ResultRecord r;
    r.context_id = sync_->context_id();
    r.metric = metric;
    r.virtual_time = vt;
    r.value = value;
    r.tags = std::move(tags.kv);
    records_.push_back(std::move(r));
  }

  void push_record(const std::string& metric, double value, MetricTags tags) {
    push_record_at(metric, value, std::move(tags), cfg_.horizon);
  }

  AgentId self_;
  ScenarioConfig cfg_;
  std::vector<AgentId> participants_;
  std::map<LpId, AgentId> owner_;
  std::map<LpId, LpPlan> plans_;
  std::map<LpId, LogicalProcess> lps_;
  std::map<LpId, std::mt19937_64> rngs_;
  WorkerPool pool_;
  SendFn send_;
  std::optional<SyncState> sync_;
  DeadlockProbe probe_;
  StepOutcome last_outcome_ = StepOutcome::kIdle;
  std::optional<EventKey> last_key_;
  std::vector<TraceEntry> trace_;
  std::vector<ResultRecord> records_;
  bool started_ = false;
  bool finalized_ = false;
  bool failed_ = false;
};

// ---------------------------------------------------------------------------
// Frame-level agent: owns the transport endpoint and all hosted contexts.
// ---------------------------------------------------------------------------

inline constexpr AgentId kCoordinatorId = 0;

class Agent {
 public:
  Agent(AgentId id, std::shared_ptr<Transport> transport)
      : id_(id), transport_(std::move(transport)) {}

  AgentId id() const { return id_; }

  /// Drains every queued frame, then pumps all contexts. Returns true when
  /// anything at all happened (frame handled or event processed).
  bool poll_and_pump(std::int64_t wall_ms) {
    bool any = false;
    while (auto env = transport_->poll()) {
      handle(*env);
      any = true;
    }
    for (auto& [ctx_id, rt] : contexts_) {
      try {
        if (rt->pump()) any = true;
      } catch (const Error& e) {
        rt->mark_failed();
        nlohmann::json j{{"context", ctx_id}, {"error", e.what()}};
        transport_->send(kCoordinatorId,
                         Frame{MsgType::kNack, ctx_id, j.dump()});
        continue;
      }
      if (auto diag = rt->observe_deadlock(wall_ms)) {
        rt->mark_failed();
        nlohmann::json j{{"context", ctx_id},
                         {"deadlock", true},
                         {"error", *diag}};
        transport_->send(kCoordinatorId,
                         Frame{MsgType::kNack, ctx_id, j.dump()});
      }
    }
    return any;
  }

  void handle(const Envelope& env) {
    const Frame& f = env.frame;
    switch (f.msg_type) {
      case MsgType::kContextCreate:
        handle_create(env.sender, f);
        return;
      case MsgType::kContextDestroy:
        handle_destroy(f);
        return;
      case MsgType::kEvent:
      case MsgType::kLvtRequest:
      case MsgType::kLvtResponse:
        handle_sync(env.sender, f);
        return;
      case MsgType::kHeartbeat:
        handle_heartbeat(f);
        return;
      default:
        return;  // registration/result frames are for the coordinator
    }
  }

  bool has_context(ContextId id) const { return contexts_.count(id) != 0; }

  const ContextRuntime* context(ContextId id) const {
    auto it = contexts_.find(id);
    return it == contexts_.end() ? nullptr : it->second.get();
  }

 private:
  void handle_create(AgentId sender, const Frame& f) {
    (void)sender;
    try {
      auto j = nlohmann::json::parse(f.payload);
      if (contexts_.count(f.context_id)) {
        throw StateError("context " + std::to_string(f.context_id) +
                         " already exists");
      }
      ScenarioParse parsed = parse_scenario_text(j.at("scenario").dump());
      if (!parsed.config) {
        std::string all = "invalid scenario:";
        for (const std::string& e : parsed.errors) all += " " + e + ";";
        throw ConfigError(all);
      }
      std::vector<AgentId> participants =
          j.at("participants").get<std::vector<AgentId>>();
      std::map<std::string, std::vector<std::pair<std::string, std::int64_t>>>
          seed;
      if (j.contains("db_seed")) {
        for (const auto& [db, objects] : j.at("db_seed").items()) {
          for (const auto& o : objects) {
            seed[db].emplace_back(o.at(0).get<std::string>(),
                                  o.at(1).get<std::int64_t>());
          }
        }
      }
      auto rt = std::make_unique<ContextRuntime>(
          id_, f.context_id, *parsed.config, participants, seed,
          [this, ctx = f.context_id](AgentId dst, const SyncMessage& m) {
            Frame frame = sync_to_frame(m, seq_.next_out(dst, ctx));
            transport_->send(dst, frame);
          });
      contexts_.emplace(f.context_id, std::move(rt));
      nlohmann::json ack{{"ack", "create"}, {"agent", id_}};
      transport_->send(kCoordinatorId,
                       Frame{MsgType::kHeartbeat, f.context_id, ack.dump()});
    } catch (const Error& e) {
      // Creation is atomic: nothing was registered on failure.
      nlohmann::json nack{{"error", e.what()}, {"agent", id_}};
      transport_->send(kCoordinatorId,
                       Frame{MsgType::kNack, f.context_id, nack.dump()});
    }
  }

  void handle_destroy(const Frame& f) {
    auto it = contexts_.find(f.context_id);
    if (it == contexts_.end()) {
      // Destroy is idempotent: an agent that refused (or already dropped)
      // the context still acknowledges so the coordinator can finish.
      nlohmann::json done{{"done", true},     {"agent", id_},
                          {"records", 0},     {"trace_len", 0},
                          {"trace_hash", 0},  {"processed", 0},
                          {"sent", 0},        {"received", 0},
                          {"sync_sent", 0},   {"requests_sent", 0},
                          {"responses_sent", 0}, {"requests_received", 0},
                          {"episodes", 0},    {"failed", false}};
      transport_->send(kCoordinatorId, Frame{MsgType::kContextDestroy,
                                             f.context_id, done.dump()});
      return;
    }
    ContextRuntime& rt = *it->second;
    rt.finalize();
    flush_results(f.context_id, rt);
    contexts_.erase(it);
  }

  void handle_sync(AgentId sender, const Frame& f) {
    auto it = contexts_.find(f.context_id);
    if (it == contexts_.end()) {
      nack_unknown(f.context_id);
      return;
    }
    ContextRuntime& rt = *it->second;
    try {
      DecodedSync dec = sync_from_frame(f);
      seq_.accept_in(sender, f.context_id, dec.wire_seq);
      rt.on_sync(sender, dec.msg);
    } catch (const Error& e) {
      rt.mark_failed();
      nlohmann::json j{{"context", f.context_id}, {"error", e.what()}};
      transport_->send(kCoordinatorId,
                       Frame{MsgType::kNack, f.context_id, j.dump()});
    }
  }

  void handle_heartbeat(const Frame& f) {
    auto j = nlohmann::json::parse(f.payload);
    if (j.contains("go")) {
      auto it = contexts_.find(f.context_id);
      if (it != contexts_.end()) it->second->start();
      return;
    }
    if (j.contains("probe")) {
      nlohmann::json reply{{"probe", j.at("probe")}, {"agent", id_}};
      auto it = contexts_.find(f.context_id);
      if (it != contexts_.end()) reply["status"] = it->second->status();
      transport_->send(kCoordinatorId,
                       Frame{MsgType::kHeartbeat, f.context_id, reply.dump()});
    }
  }

  void nack_unknown(ContextId ctx) {
    nlohmann::json j{{"error", "unknown context"}, {"agent", id_}};
    transport_->send(kCoordinatorId, Frame{MsgType::kNack, ctx, j.dump()});
  }

  /// Ships records and the processed-event trace in bounded batches, then
  /// the destroy acknowledgement carrying the totals.
  void flush_results(ContextId ctx_id, ContextRuntime& rt) {
    constexpr std::size_t kBatch = 4096;
    const auto& records = rt.records();
    for (std::size_t i = 0; i < records.size(); i += kBatch) {
      nlohmann::json batch = nlohmann::json::array();
      for (std::size_t k = i; k < std::min(records.size(), i + kBatch); ++k) {
        const ResultRecord& r = records[k];
        nlohmann::json tags = nlohmann::json::array();
        for (const auto& [key, value] : r.tags) tags.push_back({key, value});
        batch.push_back({{"metric", r.metric},
                         {"vt", r.virtual_time.ticks()},
                         {"value", r.value},
                         {"tags", tags}});
      }
      nlohmann::json j{{"records", std::move(batch)}};
      transport_->send(kCoordinatorId,
                       Frame{MsgType::kResult, ctx_id, j.dump()});
    }
    const auto& trace = rt.trace();
    for (std::size_t i = 0; i < trace.size(); i += kBatch) {
      nlohmann::json batch = nlohmann::json::array();
      for (std::size_t k = i; k < std::min(trace.size(), i + kBatch); ++k) {
        const TraceEntry& t = trace[k];
        batch.push_back({t.key.ts.ticks(), t.key.src, t.key.seq, t.dst,
                         static_cast<int>(t.kind)});
      }
      nlohmann::json j{{"trace", std::move(batch)}};
      transport_->send(kCoordinatorId,
                       Frame{MsgType::kResult, ctx_id, j.dump()});
    }
    const SyncStats& s = rt.sync().stats();
    nlohmann::json done{{"done", true},
                        {"agent", id_},
                        {"records", records.size()},
                        {"trace_len", trace.size()},
                        {"trace_hash", trace_hash(trace)},
                        {"processed", s.events_processed},
                        {"sent", s.events_sent},
                        {"received", s.events_received},
                        {"sync_sent", s.sync_messages_sent()},
                        {"requests_sent", s.lvt_requests_sent},
                        {"responses_sent", s.lvt_responses_sent},
                        {"requests_received", s.lvt_requests_received},
                        {"episodes", s.blocking_episodes},
                        {"failed", rt.failed()}};
    transport_->send(kCoordinatorId,
                     Frame{MsgType::kContextDestroy, ctx_id, done.dump()});
  }

  AgentId id_;
  std::shared_ptr<Transport> transport_;
  WireSequencer seq_;
  std::map<ContextId, std::unique_ptr<ContextRuntime>> contexts_;
};

}  // namespace dsim
