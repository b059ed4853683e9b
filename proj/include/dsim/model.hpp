#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsim/components.hpp"
#include "dsim/error.hpp"
#include "dsim/event.hpp"
#include "dsim/lp.hpp"
#include "dsim/placement.hpp"
#include "dsim/results.hpp"
#include "dsim/scenario.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Workload models. A scenario's model section expands into a fixed set of
// logical processes with deterministic behaviors; the same expansion runs on
// every agent, which then instantiates only the processes it hosts. Nothing
// here depends on the agent layout, so traces are layout-independent.
// ---------------------------------------------------------------------------

struct LpPlan {
  LpId id = 0;
  std::string kind;
  bool can_emit = true;
};

struct ModelBuild {
  std::vector<LpPlan> lps;  // ascending by id
  std::vector<SimEvent> injections;  // src = system, globally sequenced
  std::function<std::unique_ptr<LpBehavior>(const LpPlan&)> behavior_factory;
};

/// Static placement: processes go round-robin over the participant list in
/// plan order. Every agent derives the same map.
inline std::map<LpId, AgentId> assign_lps(const std::vector<LpPlan>& lps,
                                          const std::vector<AgentId>& agents) {
  if (agents.empty()) throw ConfigError("no participants");
  std::map<LpId, AgentId> owner;
  for (std::size_t i = 0; i < lps.size(); ++i) {
    owner[lps[i].id] = agents[i % agents.size()];
  }
  return owner;
}

/// Smallest emitting process id per agent; agents hosting none get nullopt
/// and never constrain their peers (they cannot send events).
inline std::map<AgentId, std::optional<LpId>> emitter_floor(
    const std::vector<LpPlan>& lps, const std::map<LpId, AgentId>& owner) {
  std::map<AgentId, std::optional<LpId>> floor;
  for (const auto& [lp, agent] : owner) floor.emplace(agent, std::nullopt);
  for (const LpPlan& p : lps) {
    if (!p.can_emit) continue;
    auto& slot = floor[owner.at(p.id)];
    if (!slot || p.id < *slot) slot = p.id;
  }
  return floor;
}

namespace detail {

inline VirtualTime hop_delay(VirtualTime lookahead) {
  return lookahead > VirtualTime(1) ? lookahead : VirtualTime(1);
}

inline bool within(const LpContext& ctx, VirtualTime ts) {
  return ts <= ctx.horizon();
}

inline MetricTags tags(std::initializer_list<std::pair<std::string, std::string>> kv) {
  MetricTags t;
  t.kv.assign(kv.begin(), kv.end());
  std::sort(t.kv.begin(), t.kv.end());
  return t;
}

// -- pingpong -----------------------------------------------------------------

class PingerBehavior : public LpBehavior {
 public:
  PingerBehavior(std::int64_t rounds, VirtualTime delay,
                 std::int64_t wakeup_every, LpId peer)
      : rounds_(rounds), delay_(delay), wakeup_every_(wakeup_every),
        peer_(peer) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    if (ev.kind == EventKind::kWakeup) {
      --outstanding_wakeups_;
      ++wakeups_;
      return;
    }
    if (ev.src_lp != kSystemSource) ++pongs_;
    if (sent_ < rounds_ && within(ctx, ctx.now() + delay_)) {
      ctx.emit(peer_, ctx.now() + delay_, EventKind::kGeneric, "{}");
      ++sent_;
      if (wakeup_every_ > 0 && sent_ % wakeup_every_ == 0 &&
          within(ctx, ctx.now() + VirtualTime(wakeup_every_))) {
        ctx.emit(ctx.self(), ctx.now() + VirtualTime(wakeup_every_),
                 EventKind::kWakeup, "{}");
        ++outstanding_wakeups_;
      }
    }
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("pings_sent", static_cast<double>(sent_), {});
    ctx.record("pongs_received", static_cast<double>(pongs_), {});
  }

  bool done() const override {
    return sent_ == rounds_ && pongs_ >= sent_ && outstanding_wakeups_ == 0;
  }

 private:
  std::int64_t rounds_;
  VirtualTime delay_;
  std::int64_t wakeup_every_;
  LpId peer_;
  std::int64_t sent_ = 0;
  std::int64_t pongs_ = 0;
  std::int64_t wakeups_ = 0;
  std::int64_t outstanding_wakeups_ = 0;
};

class PongerBehavior : public LpBehavior {
 public:
  PongerBehavior(VirtualTime delay, LpId peer) : delay_(delay), peer_(peer) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    if (ev.kind != EventKind::kGeneric) return;
    ++seen_;
    if (within(ctx, ctx.now() + delay_)) {
      ctx.emit(peer_, ctx.now() + delay_, EventKind::kGeneric, "{}");
    }
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("pings_answered", static_cast<double>(seen_), {});
  }

 private:
  VirtualTime delay_;
  LpId peer_;
  std::int64_t seen_ = 0;
};

// -- cycle ----------------------------------------------------------------------

/// Self-clocked node that also feeds its peer every beat. Two of these form
/// the classic symmetric dependency cycle: with zero lookahead neither side
/// can ever cover the other's next beat, which is the deadlock fixture.
class CycleBehavior : public LpBehavior {
 public:
  CycleBehavior(VirtualTime gap, LpId peer) : gap_(gap), peer_(peer) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    if (ev.kind == EventKind::kWakeup) {
      if (within(ctx, ctx.now() + gap_)) {
        ctx.emit(peer_, ctx.now() + gap_, EventKind::kGeneric, "{}");
      }
      VirtualTime next = ctx.now() + gap_ + gap_;
      if (within(ctx, next)) {
        ctx.emit(ctx.self(), next, EventKind::kWakeup, "{}");
      }
      ++beats_;
    } else {
      ++received_;
    }
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("beats", static_cast<double>(beats_), {});
    ctx.record("cross_received", static_cast<double>(received_), {});
  }

 private:
  VirtualTime gap_;
  LpId peer_;
  std::int64_t beats_ = 0;
  std::int64_t received_ = 0;
};

// -- stream / star ------------------------------------------------------------

class ProducerBehavior : public LpBehavior {
 public:
  ProducerBehavior(std::int64_t messages, VirtualTime gap,
                   std::vector<LpId> consumers)
      : messages_(messages), gap_(gap), consumers_(std::move(consumers)) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    if (ev.kind != EventKind::kWakeup) return;
    if (sent_ >= messages_ || !within(ctx, ctx.now() + gap_)) return;
    LpId dst = consumers_[static_cast<std::size_t>(sent_) % consumers_.size()];
    nlohmann::json j{{"n", sent_}};
    ctx.emit(dst, ctx.now() + gap_, EventKind::kGeneric, j.dump());
    ++sent_;
    if (sent_ < messages_ && within(ctx, ctx.now() + gap_)) {
      ctx.emit(ctx.self(), ctx.now() + gap_, EventKind::kWakeup, "{}");
    }
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("messages_sent", static_cast<double>(sent_), {});
  }

  bool done() const override { return sent_ == messages_; }

 private:
  std::int64_t messages_;
  VirtualTime gap_;
  std::vector<LpId> consumers_;
  std::int64_t sent_ = 0;
};

/// Pure consumer; the plan marks it non-emitting so hosts of only sinks never
/// constrain anyone, and any emission attempt is a model bug.
class SinkBehavior : public LpBehavior {
 public:
  void on_event(LpContext& ctx, const SimEvent& ev) override {
    (void)ctx;
    if (ev.kind == EventKind::kGeneric) ++received_;
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("messages_received", static_cast<double>(received_),
               tags({{"lp", std::to_string(ctx.self())}}));
  }

 private:
  std::int64_t received_ = 0;
};

// -- t0t1 -----------------------------------------------------------------------

/// Tier-0 dataset source: emits one transfer request per dataset to the
/// fabric, alternating over tier-1 targets, and records the end-to-end
/// completion time when the acknowledgement returns.
class T0SourceBehavior : public LpBehavior {
 public:
  T0SourceBehavior(std::int64_t datasets, VirtualTime interarrival,
                   std::int64_t bits, std::int64_t t1_count, VirtualTime hop,
                   LpId fabric)
      : datasets_(datasets), interarrival_(interarrival), bits_(bits),
        t1_count_(t1_count), hop_(hop), fabric_(fabric) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    if (ev.kind == EventKind::kWakeup) {
      std::int64_t d = issued_++;
      nlohmann::json j{{"op", "xfer"},
                       {"dataset", d},
                       {"bits", bits_},
                       {"t1", d % t1_count_ + 1}};
      if (within(ctx, ctx.now() + hop_)) {
        ctx.emit(fabric_, ctx.now() + hop_, EventKind::kGeneric, j.dump());
        submit_at_[d] = ctx.now();
      }
      if (issued_ < datasets_ && within(ctx, ctx.now() + interarrival_)) {
        ctx.emit(ctx.self(), ctx.now() + interarrival_, EventKind::kWakeup,
                 "{}");
      }
      return;
    }
    auto j = nlohmann::json::parse(ev.payload);
    if (j.contains("ack")) {
      std::int64_t d = j.at("ack").get<std::int64_t>();
      auto it = submit_at_.find(d);
      if (it == submit_at_.end()) {
        throw ModelError("ack for unknown dataset " + std::to_string(d));
      }
      ctx.record("job_completion_time",
                 static_cast<double>((ctx.now() - it->second).ticks()),
                 tags({{"job", "ds-" + std::to_string(d)}}));
      ++acked_;
    }
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("datasets_issued", static_cast<double>(issued_), {});
    ctx.record("datasets_acked", static_cast<double>(acked_), {});
  }

 private:
  std::int64_t datasets_;
  VirtualTime interarrival_;
  std::int64_t bits_;
  std::int64_t t1_count_;
  VirtualTime hop_;
  LpId fabric_;
  std::int64_t issued_ = 0;
  std::int64_t acked_ = 0;
  std::map<std::int64_t, VirtualTime> submit_at_;
};

/// Owns every WAN link as one equal-share pool. Transfers join the link to
/// their target tier; completions come back as self-wakeups carrying the
/// schedule generation, so superseded schedules are recognised and skipped.
class FabricBehavior : public LpBehavior {
 public:
  FabricBehavior(std::int64_t bandwidth, std::int64_t t1_count,
                 VirtualTime horizon, VirtualTime hop, LpId first_t1)
      : pool_(horizon), t1_count_(t1_count), hop_(hop), first_t1_(first_t1) {
    for (std::int64_t i = 1; i <= t1_count_; ++i) {
      pool_.add_resource(link_name(i), bandwidth);
    }
  }

  static std::string link_name(std::int64_t i) {
    return "wan-" + std::to_string(i);
  }

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    auto j = nlohmann::json::parse(ev.payload);
    if (ev.kind == EventKind::kGeneric && j.value("op", "") == "xfer") {
      std::int64_t d = j.at("dataset").get<std::int64_t>();
      std::int64_t bits = j.at("bits").get<std::int64_t>();
      std::int64_t t1 = j.at("t1").get<std::int64_t>();
      meta_[d] = {bits, t1};
      bits_in_[t1] += bits;
      schedule(ctx, pool_.join(static_cast<FluidPool::TaskId>(d), bits,
                               {link_name(t1)}, ctx.now()));
      return;
    }
    if (ev.kind == EventKind::kWakeup && j.contains("task")) {
      auto task = j.at("task").get<FluidPool::TaskId>();
      auto gen = j.at("gen").get<std::uint64_t>();
      auto res = pool_.on_completion(task, gen, ctx.now());
      if (res.stale) return;
      const auto& [bits, t1] = meta_.at(static_cast<std::int64_t>(task));
      if (within(ctx, ctx.now() + hop_)) {
        nlohmann::json out{{"op", "deliver"},
                           {"dataset", static_cast<std::int64_t>(task)},
                           {"bits", bits}};
        ctx.emit(first_t1_ + t1 - 1, ctx.now() + hop_, EventKind::kGeneric,
                 out.dump());
      }
      schedule(ctx, res.rescheduled);
    }
  }

  void on_finish(LpContext& ctx) override {
    for (std::int64_t i = 1; i <= t1_count_; ++i) {
      ctx.record("link_bits", static_cast<double>(bits_in_[i]),
                 tags({{"link", link_name(i)}}));
    }
    ctx.record("interrupts", static_cast<double>(pool_.interrupts()), {});
  }

 private:
  void schedule(LpContext& ctx, const std::vector<FluidPool::Completion>& cs) {
    for (const auto& c : cs) {
      if (!c.reachable) continue;  // would land beyond the horizon
      nlohmann::json j{{"task", c.task}, {"gen", c.gen}};
      ctx.emit(ctx.self(), c.at, EventKind::kWakeup, j.dump());
    }
  }

  FluidPool pool_;
  std::int64_t t1_count_;
  VirtualTime hop_;
  LpId first_t1_;
  std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> meta_;
  std::map<std::int64_t, std::int64_t> bits_in_;
};

/// Tier-1 regional store: delivered datasets go into the database with LRU
/// overflow onto tape; each write acknowledges the source and broadcasts a
/// catalog version to the tier-0 replica.
class T1StorageBehavior : public LpBehavior {
 public:
  T1StorageBehavior(std::int64_t index, std::int64_t capacity, VirtualTime hop,
                    LpId source, LpId replica)
      : index_(index), hop_(hop), source_(source), replica_(replica) {
    db_.capacity = capacity;
    mass_.tape_capacity = -1;
  }

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    auto j = nlohmann::json::parse(ev.payload);
    if (j.value("op", "") != "deliver") return;
    std::int64_t d = j.at("dataset").get<std::int64_t>();
    std::int64_t bits = j.at("bits").get<std::int64_t>();
    auto outcome = db_write(db_, "ds-" + std::to_string(d), bits, ctx.now(),
                            {&mass_}, cursor_);
    for (const Eviction& e : outcome.evictions) {
      mass_.stored[e.object_id] = StoredObject{e.size, ctx.now()};
      ++evictions_;
    }
    if (db_.used() > db_.capacity) {
      throw StateError("database over capacity after ds-" + std::to_string(d));
    }
    if (within(ctx, ctx.now() + hop_)) {
      nlohmann::json ack{{"ack", d}};
      ctx.emit(source_, ctx.now() + hop_, EventKind::kGeneric, ack.dump());
      StateUpdate upd;
      upd.component_id = component();
      upd.state_version = ++version_;
      upd.fields["objects"] = std::to_string(db_.stored.size());
      upd.fields["used"] = std::to_string(db_.used());
      nlohmann::json su{{"component", upd.component_id},
                        {"version", upd.state_version},
                        {"fields", upd.fields}};
      ctx.emit(replica_, ctx.now() + hop_, EventKind::kStateUpdate, su.dump());
    }
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("db_used", static_cast<double>(db_.used()),
               tags({{"db", component()}}));
    ctx.record("db_evictions", static_cast<double>(evictions_),
               tags({{"db", component()}}));
  }

  std::string component() const { return "db-t1-" + std::to_string(index_); }

 private:
  std::int64_t index_;
  VirtualTime hop_;
  LpId source_;
  LpId replica_;
  DbServer db_;
  MassStorage mass_;
  std::size_t cursor_ = 0;
  std::uint64_t version_ = 0;
  std::int64_t evictions_ = 0;
};

/// Tier-0 side copy of one tier-1 catalog, fed by STATE_UPDATE events.
class CatalogReplicaBehavior : public LpBehavior {
 public:
  explicit CatalogReplicaBehavior(std::string component)
      : component_(std::move(component)) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    (void)ctx;
    if (ev.kind != EventKind::kStateUpdate) return;
    auto j = nlohmann::json::parse(ev.payload);
    StateUpdate upd;
    upd.component_id = j.at("component").get<std::string>();
    upd.state_version = j.at("version").get<std::uint64_t>();
    upd.fields = j.at("fields").get<std::map<std::string, std::string>>();
    apply_state_update(component_, replica_, upd);
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("replica_version", static_cast<double>(replica_.state_version),
               tags({{"component", component_}}));
    auto it = replica_.fields.find("objects");
    if (it != replica_.fields.end()) {
      ctx.record("replica_objects", std::stod(it->second),
                 tags({{"component", component_}}));
    }
  }

  const Replica& replica() const { return replica_; }

 private:
  std::string component_;
  Replica replica_;
};

// -- storage ---------------------------------------------------------------------

/// Seeded read/write op generator. Parks between ops, so the WAITING leg of
/// the process lifecycle is exercised by every storage run.
class StorageGenBehavior : public LpBehavior {
 public:
  StorageGenBehavior(std::int64_t events, std::int64_t objects,
                     std::int64_t max_size, VirtualTime hop, LpId server)
      : events_(events), objects_(objects), max_size_(max_size), hop_(hop),
        server_(server) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    if (ev.kind != EventKind::kWakeup) return;
    parked_ = false;
    std::uint64_t r = ctx.rand64();
    std::string object =
        "obj-" + std::to_string(r % static_cast<std::uint64_t>(objects_));
    bool write = (r >> 48) % 10 < 7;
    nlohmann::json j;
    if (write) {
      std::int64_t size =
          1 + static_cast<std::int64_t>((r >> 16) %
                                        static_cast<std::uint64_t>(max_size_));
      j = {{"op", "write"}, {"object", object}, {"size", size}};
    } else {
      j = {{"op", "read"}, {"object", object}};
    }
    if (!within(ctx, ctx.now() + hop_)) return;
    ctx.emit(server_, ctx.now() + hop_, EventKind::kGeneric, j.dump());
    ++issued_;
    VirtualTime next = ctx.now() + VirtualTime(5);
    if (issued_ < events_ && within(ctx, next)) {
      ctx.sleep_until(next, "next-op");
      parked_ = true;
    }
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("ops_issued", static_cast<double>(issued_), {});
  }

  bool parked() const override { return parked_; }

 private:
  std::int64_t events_;
  std::int64_t objects_;
  std::int64_t max_size_;
  VirtualTime hop_;
  LpId server_;
  std::int64_t issued_ = 0;
  bool parked_ = false;
};

class StorageServerBehavior : public LpBehavior {
 public:
  StorageServerBehavior(
      std::int64_t capacity, std::int64_t tiers,
      const std::vector<std::pair<std::string, std::int64_t>>& seed)
      : mass_(static_cast<std::size_t>(std::max<std::int64_t>(tiers, 1))) {
    db_.capacity = capacity;
    std::int64_t seeded = 0;
    for (const auto& [object, size] : seed) {
      db_.stored[object] = StoredObject{size, VirtualTime::zero()};
      seeded += size;
    }
    if (seeded > capacity) {
      throw ConfigError("imported placements exceed database capacity");
    }
    for (auto& m : mass_) m.tape_capacity = -1;
  }

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    if (ev.kind != EventKind::kGeneric) return;
    auto j = nlohmann::json::parse(ev.payload);
    std::string op = j.at("op").get<std::string>();
    if (op == "write") {
      std::vector<MassStorage*> tiers;
      for (auto& m : mass_) tiers.push_back(&m);
      auto outcome = db_write(db_, j.at("object").get<std::string>(),
                              j.at("size").get<std::int64_t>(), ctx.now(),
                              tiers, cursor_);
      for (const Eviction& e : outcome.evictions) {
        mass_[e.mass_index].stored[e.object_id] =
            StoredObject{e.size, ctx.now()};
        ++evictions_;
      }
      ++writes_;
    } else if (op == "read") {
      if (!db_touch(db_, j.at("object").get<std::string>(), ctx.now())) {
        ++misses_;
      }
      ++reads_;
    }
    // The capacity invariant must hold after every single event.
    if (db_.used() > db_.capacity) {
      throw StateError("database over capacity after op " +
                       std::to_string(writes_ + reads_));
    }
  }

  void on_finish(LpContext& ctx) override {
    for (const auto& [object, obj] : db_.stored) {
      ctx.record("db_final_object", static_cast<double>(obj.size),
                 tags({{"db", "db-1"}, {"object", object}}));
    }
    for (std::size_t t = 0; t < mass_.size(); ++t) {
      for (const auto& [object, obj] : mass_[t].stored) {
        ctx.record("mass_final_object", static_cast<double>(obj.size),
                   tags({{"mass", "ms-" + std::to_string(t + 1)},
                         {"object", object}}));
      }
    }
    ctx.record("db_used", static_cast<double>(db_.used()),
               tags({{"db", "db-1"}}));
    ctx.record("db_evictions", static_cast<double>(evictions_),
               tags({{"db", "db-1"}}));
    ctx.record("read_misses", static_cast<double>(misses_), {});
  }

 private:
  DbServer db_;
  std::vector<MassStorage> mass_;
  std::size_t cursor_ = 0;
  std::int64_t writes_ = 0;
  std::int64_t reads_ = 0;
  std::int64_t misses_ = 0;
  std::int64_t evictions_ = 0;
};

// -- jobs ------------------------------------------------------------------------

/// One regional center's components, instantiated from its spec. Processing
/// and transfer capacity share one fluid pool; databases and tape tiers are
/// discrete stores.
struct CenterRuntime {
  std::string name;
  FluidPool pool;
  std::map<std::string, DbServer> dbs;
  std::vector<MassStorage> mass;
  std::size_t mass_cursor = 0;
  std::size_t component_count = 0;

  explicit CenterRuntime(VirtualTime horizon) : pool(horizon) {}
};

inline CenterRuntime instantiate_regional_center(const CenterSpec& spec,
                                                 VirtualTime horizon) {
  CenterRuntime rt(horizon);
  rt.name = spec.name;
  std::set<std::string> ids;
  auto claim = [&ids](const std::string& id) {
    if (!ids.insert(id).second) {
      throw ConfigError("duplicate component id " + id);
    }
  };
  for (const CpuSpec& c : spec.cpus) {
    claim(c.id);
    rt.pool.add_resource(c.id, c.power);
    ++rt.component_count;
  }
  for (const LinkSpec& l : spec.links) {
    claim(l.id);
    rt.pool.add_resource(l.id, l.bandwidth);
    ++rt.component_count;
  }
  for (const DbSpec& d : spec.dbs) {
    claim(d.id);
    DbServer db;
    db.capacity = d.capacity;
    rt.dbs.emplace(d.id, std::move(db));
    ++rt.component_count;
  }
  for (const MassSpec& m : spec.mass) {
    claim(m.id);
    MassStorage ms;
    ms.tape_capacity = m.tape_capacity;
    ms.mount_latency = VirtualTime(m.mount_latency);
    rt.mass.push_back(std::move(ms));
    ++rt.component_count;
  }
  return rt;
}

/// Ranks candidate agents for a job by the placement score over the current
/// performance snapshot, best first. Candidates missing a value are skipped;
/// an empty result means nothing can take the job right now.
inline std::vector<AgentId> place_job(
    const std::map<AgentId, PerfValue>& values,
    const std::vector<AgentId>& candidates) {
  std::set<AgentId> participating;
  for (AgentId a : candidates) {
    if (values.count(a)) participating.insert(a);
  }
  if (participating.empty()) return {};
  std::vector<PerfValue> snapshot;
  snapshot.reserve(values.size());
  for (const auto& [agent, v] : values) snapshot.push_back(v);
  PlacementGraph g = PlacementGraph::build(snapshot);
  std::vector<AgentId> ranked = placement_ranking(g, participating);
  std::vector<AgentId> out;
  for (AgentId a : ranked) {
    if (participating.count(a)) out.push_back(a);
  }
  return out;
}

class JobSchedulerBehavior : public LpBehavior {
 public:
  JobSchedulerBehavior(std::vector<JobSpec> jobs,
                       std::map<AgentId, PerfValue> values,
                       std::vector<std::pair<std::string, AgentId>> center_agents,
                       std::map<std::string, std::vector<std::size_t>> job_candidates,
                       VirtualTime hop, LpId first_runner)
      : jobs_(std::move(jobs)), values_(std::move(values)),
        center_agents_(std::move(center_agents)),
        job_candidates_(std::move(job_candidates)), hop_(hop),
        first_runner_(first_runner) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    auto j = nlohmann::json::parse(ev.payload);
    if (j.contains("job")) {  // injected arrival
      dispatch(ctx, j.at("job").get<std::size_t>(), 0);
      return;
    }
    if (j.contains("retry")) {
      dispatch(ctx, j.at("retry").get<std::size_t>(),
               j.at("attempt").get<std::size_t>() + 1);
      return;
    }
    if (j.contains("done")) ++completed_;
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("jobs_completed", static_cast<double>(completed_), {});
    ctx.record("jobs_unplaceable", static_cast<double>(unplaceable_), {});
  }

 private:
  /// Candidate centers ranked by their agents' placement order; `attempt`
  /// walks that ranking when a runner bounces the job back.
  void dispatch(LpContext& ctx, std::size_t index, std::size_t attempt) {
    const auto& candidates = job_candidates_.at(std::to_string(index));
    std::vector<AgentId> cand_agents;
    for (std::size_t c : candidates) {
      cand_agents.push_back(center_agents_[c].second);
    }
    std::vector<AgentId> ranked = place_job(values_, cand_agents);
    std::vector<std::size_t> order;
    for (AgentId a : ranked) {
      for (std::size_t c : candidates) {
        if (center_agents_[c].second == a &&
            std::find(order.begin(), order.end(), c) == order.end()) {
          order.push_back(c);
        }
      }
    }
    if (attempt >= order.size()) {
      ++unplaceable_;
      ctx.record("placement_failed", 1.0,
                 tags({{"job", std::to_string(index)}}));
      return;
    }
    if (!within(ctx, ctx.now() + hop_)) return;
    nlohmann::json out{{"index", index}, {"attempt", attempt}};
    ctx.emit(first_runner_ + static_cast<LpId>(order[attempt]),
             ctx.now() + hop_, EventKind::kStartNewJob, out.dump());
  }

  std::vector<JobSpec> jobs_;
  std::map<AgentId, PerfValue> values_;
  std::vector<std::pair<std::string, AgentId>> center_agents_;
  std::map<std::string, std::vector<std::size_t>> job_candidates_;
  VirtualTime hop_;
  LpId first_runner_;
  std::int64_t completed_ = 0;
  std::int64_t unplaceable_ = 0;
};

class CenterRunnerBehavior : public LpBehavior {
 public:
  CenterRunnerBehavior(CenterSpec spec, std::vector<JobSpec> jobs,
                       VirtualTime horizon, VirtualTime hop, LpId scheduler,
                       std::int64_t slots)
      : center_(instantiate_regional_center(spec, horizon)),
        jobs_(std::move(jobs)), hop_(hop), scheduler_(scheduler),
        slots_(slots) {}

  void on_event(LpContext& ctx, const SimEvent& ev) override {
    auto j = nlohmann::json::parse(ev.payload);
    if (ev.kind == EventKind::kStartNewJob) {
      std::size_t index = j.at("index").get<std::size_t>();
      if (active_ >= slots_) {
        nlohmann::json bounce{{"retry", index},
                              {"attempt", j.at("attempt").get<std::size_t>()}};
        if (within(ctx, ctx.now() + hop_)) {
          ctx.emit(scheduler_, ctx.now() + hop_, EventKind::kGeneric,
                   bounce.dump());
        }
        return;
      }
      const JobSpec& job = jobs_.at(index);
      ++active_;
      start_at_[index] = ctx.now();
      schedule(ctx, center_.pool.join(index, job.demand, job.resources,
                                      ctx.now()));
      return;
    }
    if (ev.kind == EventKind::kWakeup && j.contains("task")) {
      auto task = j.at("task").get<FluidPool::TaskId>();
      auto gen = j.at("gen").get<std::uint64_t>();
      auto res = center_.pool.on_completion(task, gen, ctx.now());
      if (res.stale) return;
      finish_job(ctx, static_cast<std::size_t>(task));
      schedule(ctx, res.rescheduled);
    }
  }

  void on_finish(LpContext& ctx) override {
    ctx.record("jobs_run", static_cast<double>(completed_),
               tags({{"center", center_.name}}));
    ctx.record("interrupts", static_cast<double>(center_.pool.interrupts()),
               tags({{"center", center_.name}}));
  }

 private:
  void schedule(LpContext& ctx, const std::vector<FluidPool::Completion>& cs) {
    for (const auto& c : cs) {
      if (!c.reachable) continue;
      nlohmann::json j{{"task", c.task}, {"gen", c.gen}};
      ctx.emit(ctx.self(), c.at, EventKind::kWakeup, j.dump());
    }
  }

  void finish_job(LpContext& ctx, std::size_t index) {
    const JobSpec& job = jobs_.at(index);
    --active_;
    ++completed_;
    ctx.record("job_completion_time",
               static_cast<double>((ctx.now() - start_at_.at(index)).ticks()),
               tags({{"job", std::to_string(index)},
                     {"center", center_.name}}));
    // Analysis output lands in the center's first database, overflowing to
    // tape like any other write.
    if (job.kind == JobKind::kAnalysis && !center_.dbs.empty()) {
      auto& [db_id, db] = *center_.dbs.begin();
      std::vector<MassStorage*> tiers;
      for (auto& m : center_.mass) tiers.push_back(&m);
      auto outcome =
          db_write(db, "result-" + std::to_string(index), job.demand / 10 + 1,
                   ctx.now(), tiers, center_.mass_cursor);
      for (const Eviction& e : outcome.evictions) {
        center_.mass[e.mass_index].stored[e.object_id] =
            StoredObject{e.size, ctx.now()};
      }
    }
    if (within(ctx, ctx.now() + hop_)) {
      nlohmann::json done{{"done", index}};
      ctx.emit(scheduler_, ctx.now() + hop_, EventKind::kGeneric, done.dump());
    }
  }

  CenterRuntime center_;
  std::vector<JobSpec> jobs_;
  VirtualTime hop_;
  LpId scheduler_;
  std::int64_t slots_;
  std::int64_t active_ = 0;
  std::int64_t completed_ = 0;
  std::map<std::size_t, VirtualTime> start_at_;
};

}  // namespace detail

/// Expands a scenario's model section into its process plan, injected kick
/// events and a behavior factory. Pure: every agent gets the same expansion.
inline ModelBuild build_model(
    const ScenarioConfig& cfg, ContextId ctx_id,
    const std::vector<AgentId>& participants,
    const std::map<std::string,
                   std::vector<std::pair<std::string, std::int64_t>>>&
        db_seed = {}) {
  const ModelSpec& m = cfg.model;
  VirtualTime hop = detail::hop_delay(cfg.lookahead);
  ModelBuild out;
  std::uint64_t next_seq = 0;
  auto inject = [&out, &next_seq, ctx_id](LpId dst, VirtualTime ts,
                                          EventKind kind,
                                          std::string payload) {
    SimEvent ev;
    ev.key = EventKey{ts, kSystemSource, next_seq++};
    ev.context_id = ctx_id;
    ev.src_lp = kSystemSource;
    ev.dst_lp = dst;
    ev.kind = kind;
    ev.payload = std::move(payload);
    out.injections.push_back(std::move(ev));
  };

  if (m.kind == "pingpong") {
    out.lps = {{1, "pinger", true}, {2, "ponger", true}};
    inject(1, VirtualTime(1), EventKind::kGeneric, "{}");
    std::int64_t rounds = m.rounds;
    VirtualTime delay(m.reply_delay);
    std::int64_t wakeup = m.wakeup_every;
    out.behavior_factory = [rounds, delay,
                            wakeup](const LpPlan& p) -> std::unique_ptr<LpBehavior> {
      if (p.id == 1) {
        return std::make_unique<detail::PingerBehavior>(rounds, delay, wakeup,
                                                        2);
      }
      return std::make_unique<detail::PongerBehavior>(delay, 1);
    };
  } else if (m.kind == "cycle") {
    out.lps = {{1, "cycle", true}, {2, "cycle", true}};
    inject(1, VirtualTime(1), EventKind::kWakeup, "{}");
    inject(2, VirtualTime(2), EventKind::kWakeup, "{}");
    VirtualTime gap(m.gap);
    out.behavior_factory = [gap](const LpPlan& p) {
      return std::make_unique<detail::CycleBehavior>(gap,
                                                     p.id == 1 ? LpId(2) : LpId(1));
    };
  } else if (m.kind == "stream" || m.kind == "star") {
    std::int64_t consumers = m.kind == "stream" ? 1 : m.consumers;
    out.lps.push_back({1, "producer", true});
    std::vector<LpId> sinks;
    for (std::int64_t i = 0; i < consumers; ++i) {
      out.lps.push_back({static_cast<LpId>(2 + i), "sink", false});
      sinks.push_back(static_cast<LpId>(2 + i));
    }
    inject(1, VirtualTime(1), EventKind::kWakeup, "{}");
    std::int64_t messages = m.messages;
    VirtualTime gap(m.gap);
    out.behavior_factory = [messages, gap,
                            sinks](const LpPlan& p) -> std::unique_ptr<LpBehavior> {
      if (p.id == 1) {
        return std::make_unique<detail::ProducerBehavior>(messages, gap, sinks);
      }
      return std::make_unique<detail::SinkBehavior>();
    };
  } else if (m.kind == "t0t1") {
    std::int64_t n = m.t1_count;
    out.lps.push_back({1, "t0-source", true});
    out.lps.push_back({2, "fabric", true});
    for (std::int64_t i = 1; i <= n; ++i) {
      out.lps.push_back({static_cast<LpId>(2 + i), "t1-storage", true});
    }
    for (std::int64_t i = 1; i <= n; ++i) {
      out.lps.push_back({static_cast<LpId>(2 + n + i), "catalog-replica",
                         false});
    }
    inject(1, VirtualTime(1), EventKind::kWakeup, "{}");
    ModelSpec spec = m;
    VirtualTime horizon = cfg.horizon;
    out.behavior_factory = [spec, horizon, hop,
                            n](const LpPlan& p) -> std::unique_ptr<LpBehavior> {
      if (p.id == 1) {
        return std::make_unique<detail::T0SourceBehavior>(
            spec.datasets, VirtualTime(spec.interarrival), spec.dataset_bits,
            n, hop, 2);
      }
      if (p.id == 2) {
        return std::make_unique<detail::FabricBehavior>(spec.bandwidth, n,
                                                        horizon, hop, 3);
      }
      if (p.id <= static_cast<LpId>(2 + n)) {
        std::int64_t idx = static_cast<std::int64_t>(p.id) - 2;
        return std::make_unique<detail::T1StorageBehavior>(
            idx, spec.db_capacity, hop, 1,
            static_cast<LpId>(2 + n + idx));
      }
      std::int64_t idx = static_cast<std::int64_t>(p.id) - 2 - n;
      return std::make_unique<detail::CatalogReplicaBehavior>(
          "db-t1-" + std::to_string(idx));
    };
  } else if (m.kind == "storage") {
    out.lps = {{1, "storage-gen", true}, {2, "storage-server", false}};
    inject(1, VirtualTime(1), EventKind::kWakeup, "{}");
    ModelSpec spec = m;
    std::vector<std::pair<std::string, std::int64_t>> seed;
    if (auto it = db_seed.find("db-1"); it != db_seed.end()) seed = it->second;
    out.behavior_factory = [spec, hop,
                            seed](const LpPlan& p) -> std::unique_ptr<LpBehavior> {
      if (p.id == 1) {
        return std::make_unique<detail::StorageGenBehavior>(
            spec.events, spec.objects, spec.max_object_size, hop, 2);
      }
      return std::make_unique<detail::StorageServerBehavior>(
          spec.db_capacity, spec.mass_tiers, seed);
    };
  } else if (m.kind == "jobs") {
    out.lps.push_back({1, "scheduler", true});
    std::vector<std::pair<std::string, AgentId>> center_agents;
    for (std::size_t c = 0; c < m.centers.size(); ++c) {
      LpId runner = static_cast<LpId>(2 + c);
      out.lps.push_back({runner, "center-runner", true});
      // The runner's host is fixed by the same round-robin the engine uses.
      center_agents.emplace_back(
          m.centers[c].name,
          participants[(runner - 1) % participants.size()]);
    }
    // Processing components (CPUs, links) are replicated at every center so
    // placement is free to pick any of them; databases and mass storage stay
    // where they were declared. Every center is therefore a candidate for
    // every job, and the scheduler's ranking decides.
    std::map<std::string, std::vector<std::size_t>> job_candidates;
    std::vector<std::size_t> all_centers(m.centers.size());
    for (std::size_t c = 0; c < m.centers.size(); ++c) all_centers[c] = c;
    for (std::size_t ji = 0; ji < m.jobs.size(); ++ji) {
      job_candidates[std::to_string(ji)] = all_centers;
      nlohmann::json j{{"job", ji}};
      inject(1, VirtualTime(m.jobs[ji].at), EventKind::kGeneric, j.dump());
    }
    // Performance snapshot: synthetic per-agent values, fixed for the run.
    std::map<AgentId, PerfValue> values;
    for (std::size_t i = 0; i < participants.size(); ++i) {
      auto src = cfg.metrics;
      PerfSample s;
      if (!src.synthetic.empty()) {
        const auto& sm = src.synthetic[i % src.synthetic.size()];
        s.cpu_load_norm = sm.cpu;
        s.mem_used_frac = sm.mem;
        s.net_load_norm = sm.net;
        s.lp_count = sm.lp_count;
        s.lp_capacity = sm.lp_capacity;
      }
      values[participants[i]] =
          PerfValue{participants[i], performance_value(s), 0, false};
    }
    ModelSpec spec = m;
    VirtualTime horizon = cfg.horizon;
    out.behavior_factory =
        [spec, horizon, hop, values, center_agents,
         job_candidates](const LpPlan& p) -> std::unique_ptr<LpBehavior> {
      if (p.id == 1) {
        return std::make_unique<detail::JobSchedulerBehavior>(
            spec.jobs, values, center_agents, job_candidates, hop, 2);
      }
      std::size_t c = static_cast<std::size_t>(p.id) - 2;
      // Replicate every center's processing components into this runner's
      // pool (ids are globally unique, so the union is well-formed).
      CenterSpec replicated = spec.centers.at(c);
      for (std::size_t other = 0; other < spec.centers.size(); ++other) {
        if (other == c) continue;
        const CenterSpec& o = spec.centers[other];
        replicated.cpus.insert(replicated.cpus.end(), o.cpus.begin(),
                               o.cpus.end());
        replicated.links.insert(replicated.links.end(), o.links.begin(),
                                o.links.end());
      }
      return std::make_unique<detail::CenterRunnerBehavior>(
          replicated, spec.jobs, horizon, hop, 1, 4);
    };
  } else {
    throw ConfigError("unknown model kind " + m.kind);
  }
  return out;
}

}  // namespace dsim
