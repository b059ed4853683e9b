#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dsim/error.hpp"
#include "dsim/time.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Grid resources. CPUs and network links are shared resources under a
// processor-sharing (equal share) fluid model with the interrupt scheme:
// whenever a job joins or leaves, every affected in-progress completion is
// recomputed and the superseded completion events become dead letters.
// ---------------------------------------------------------------------------

struct ComponentBase {
  std::string component_id;
  AgentId owner_agent = 0;
  std::uint64_t state_version = 0;
};

enum class LinkKind : std::uint8_t { kLan = 0, kWan = 1 };

struct CpuUnit {
  ComponentBase base;
  std::int64_t power = 1;  // work-units per simulated second
};

struct NetLink {
  ComponentBase base;
  std::int64_t bandwidth = 1;  // bits per simulated second
  LinkKind kind = LinkKind::kLan;
};

enum class JobKind : std::uint8_t {
  kProcessing = 0,
  kTransfer = 1,
  kAnalysis = 2,
};

inline const char* to_string(JobKind k) {
  switch (k) {
    case JobKind::kProcessing: return "PROCESSING";
    case JobKind::kTransfer: return "TRANSFER";
    case JobKind::kAnalysis: return "ANALYSIS";
  }
  return "?";
}

struct SimJob {
  std::uint64_t job_id = 0;
  JobKind kind = JobKind::kProcessing;
  std::int64_t demand = 0;  // work-units or bits
  std::vector<std::string> resources;
  LpId emitting_lp = 0;
};

// ---------------------------------------------------------------------------
// Equal-share fluid pool.
//
// Tasks occupy one or more resources; a task's instantaneous rate is the
// minimum over its resources of capacity / occupancy (the bottleneck rule;
// single-resource tasks degenerate to plain equal share). Remaining demand
// is tracked in micro-units so integer rounding stays under one tick per
// recompute at realistic capacities.
// ---------------------------------------------------------------------------

class FluidPool {
 public:
  using TaskId = std::uint64_t;

  struct Completion {
    TaskId task = 0;
    std::uint64_t gen = 0;  // stale generations identify cancelled events
    VirtualTime at;
    bool reachable = true;  // false: beyond the horizon, never scheduled
  };

  explicit FluidPool(VirtualTime horizon) : horizon_(horizon) {}

  void add_resource(const std::string& id, std::int64_t capacity) {
    if (capacity <= 0) {
      throw ConfigError("resource " + id + " needs positive capacity");
    }
    if (!resources_.emplace(id, Resource{capacity, {}, 0}).second) {
      throw ConfigError("duplicate resource " + id);
    }
  }

  bool has_resource(const std::string& id) const {
    return resources_.count(id) != 0;
  }

  /// Admits a task over the given resource set. Returns the fresh
  /// completion schedule for every task whose rate changed (including the
  /// new one). Caller turns these into self-addressed events.
  std::vector<Completion> join(TaskId task, std::int64_t demand_units,
                               const std::vector<std::string>& resources,
                               VirtualTime now) {
    if (resources.empty()) throw ModelError("task over empty resource set");
    if (demand_units <= 0) throw ModelError("task demand must be positive");
    if (tasks_.count(task) != 0) {
      throw ModelError("task " + std::to_string(task) + " already active");
    }
    for (const std::string& r : resources) {
      if (!has_resource(r)) throw ModelError("unknown resource " + r);
    }
    advance_to(now);
    Task t;
    t.remaining_mu = mul_check(demand_units, kMicro);
    t.resources = resources;
    for (const std::string& r : t.resources) {
      resource(r).active.insert(task);
    }
    tasks_.emplace(task, std::move(t));
    return reschedule(sharers_of(task), now);
  }

  /// Handles a completion event. Stale generations (superseded by a later
  /// recompute) are ignored and reported as such.
  struct CompletionResult {
    bool stale = false;
    std::vector<Completion> rescheduled;
  };
  CompletionResult on_completion(TaskId task, std::uint64_t gen,
                                 VirtualTime now) {
    auto it = tasks_.find(task);
    if (it == tasks_.end() || it->second.gen != gen) return {true, {}};
    advance_to(now);
    it->second.remaining_mu = 0;
    return {false, remove(task, now)};
  }

  /// Removes a task outright (abort path).
  std::vector<Completion> leave(TaskId task, VirtualTime now) {
    if (tasks_.find(task) == tasks_.end()) {
      throw ModelError("leave of unknown task " + std::to_string(task));
    }
    advance_to(now);
    return remove(task, now);
  }

  bool active(TaskId task) const { return tasks_.count(task) != 0; }

  std::size_t active_on(const std::string& id) const {
    auto it = resources_.find(id);
    return it == resources_.end() ? 0 : it->second.active.size();
  }

  /// Completion reschedules that superseded an earlier schedule.
  std::uint64_t interrupts() const { return interrupts_; }

  /// Demand actually served through a resource, in whole units.
  std::int64_t served_units(const std::string& id) const {
    auto it = resources_.find(id);
    if (it == resources_.end()) throw ModelError("unknown resource " + id);
    return it->second.served_mu / kMicro;
  }

  std::vector<std::pair<TaskId, std::int64_t>> remaining() const {
    std::vector<std::pair<TaskId, std::int64_t>> out;
    for (const auto& [id, t] : tasks_) {
      out.emplace_back(id, (t.remaining_mu + kMicro - 1) / kMicro);
    }
    return out;
  }

 private:
  static constexpr std::int64_t kMicro = 1'000'000;

  struct Resource {
    std::int64_t capacity = 1;
    std::set<TaskId> active;
    std::int64_t served_mu = 0;
  };

  struct Task {
    std::int64_t remaining_mu = 0;
    std::vector<std::string> resources;
    std::uint64_t gen = 0;
    bool scheduled = false;
  };

  Resource& resource(const std::string& id) {
    auto it = resources_.find(id);
    if (it == resources_.end()) throw ModelError("unknown resource " + id);
    return it->second;
  }

  static std::int64_t mul_check(std::int64_t a, std::int64_t b) {
    __int128 r = static_cast<__int128>(a) * b;
    if (r > std::numeric_limits<std::int64_t>::max()) {
      throw ModelError("demand too large");
    }
    return static_cast<std::int64_t>(r);
  }

  /// Bottleneck share for one task: min over its resources of cap/occupancy,
  /// as an exact rational (capacity, occupancy).
  std::pair<std::int64_t, std::int64_t> rate_of(const Task& t) const {
    std::pair<std::int64_t, std::int64_t> best{0, 1};
    bool first = true;
    for (const std::string& rid : t.resources) {
      const Resource& r = resources_.at(rid);
      auto n = static_cast<std::int64_t>(r.active.size());
      // cap/n < best.cap/best.n  <=>  cap*best.n < best.cap*n
      if (first || static_cast<__int128>(r.capacity) * best.second <
                       static_cast<__int128>(best.first) * n) {
        best = {r.capacity, n};
        first = false;
      }
    }
    return best;
  }

  /// Integrates all tasks at their current (piecewise-constant) rates up to
  /// `now`. Rates only change at join/leave instants, so this runs exactly
  /// once per membership change.
  void advance_to(VirtualTime now) {
    if (now < last_) {
      throw ModelError("fluid recompute moving backwards: " + now.str() +
                       " < " + last_.str());
    }
    std::int64_t elapsed = (now - last_).ticks();
    last_ = now;
    if (elapsed == 0) return;
    for (auto& [id, t] : tasks_) {
      auto [cap, occ] = rate_of(t);
      // micro-units consumed = elapsed ticks * (cap units/s) / occupancy;
      // ticks are microseconds, so units/s == micro-units/tick.
      __int128 eaten = static_cast<__int128>(elapsed) * cap / occ;
      if (eaten > t.remaining_mu) eaten = t.remaining_mu;
      t.remaining_mu -= static_cast<std::int64_t>(eaten);
      for (const std::string& rid : t.resources) {
        resources_.at(rid).served_mu += static_cast<std::int64_t>(eaten);
      }
    }
  }

  std::set<TaskId> sharers_of(TaskId task) const {
    std::set<TaskId> out;
    const Task& t = tasks_.at(task);
    for (const std::string& rid : t.resources) {
      const auto& act = resources_.at(rid).active;
      out.insert(act.begin(), act.end());
    }
    return out;
  }

  std::vector<Completion> remove(TaskId task, VirtualTime now) {
    std::set<TaskId> affected = sharers_of(task);
    affected.erase(task);
    for (const std::string& rid : tasks_.at(task).resources) {
      resources_.at(rid).active.erase(task);
    }
    tasks_.erase(task);
    return reschedule(affected, now);
  }

  /// Fresh completion instants for the affected tasks. Every schedule that
  /// supersedes an earlier one is an interrupt.
  std::vector<Completion> reschedule(const std::set<TaskId>& affected,
                                     VirtualTime now) {
    std::vector<Completion> out;
    for (TaskId id : affected) {
      Task& t = tasks_.at(id);
      auto [cap, occ] = rate_of(t);
      // round-half-up(remaining * occ / cap), at least one tick of residual
      // work, so completions never land in the past.
      __int128 num = static_cast<__int128>(t.remaining_mu) * occ;
      __int128 delta = (num * 2 + cap) / (static_cast<__int128>(cap) * 2);
      if (t.remaining_mu > 0 && delta < 1) delta = 1;
      if (t.scheduled) ++interrupts_;
      t.scheduled = true;
      ++t.gen;
      Completion c;
      c.task = id;
      c.gen = t.gen;
      bool fits = delta <= (horizon_ - now).ticks();
      c.reachable = fits;
      c.at = fits ? now + VirtualTime(static_cast<std::int64_t>(delta))
                  : horizon_;
      out.push_back(c);
    }
    return out;
  }

  VirtualTime horizon_;
  VirtualTime last_;
  std::map<TaskId, Task> tasks_;
  std::map<std::string, Resource> resources_;
  std::uint64_t interrupts_ = 0;
};

// ---------------------------------------------------------------------------
// Storage tiers: a database server backed by mass storage, with automatic
// LRU migration when the database runs out of space.
// ---------------------------------------------------------------------------

struct StoredObject {
  std::int64_t size = 0;
  VirtualTime last_access;
};

struct DbServer {
  ComponentBase base;
  std::int64_t capacity = 0;
  std::map<std::string, StoredObject> stored;

  std::int64_t used() const {
    std::int64_t sum = 0;
    for (const auto& [id, obj] : stored) sum += obj.size;
    return sum;
  }
};

struct MassStorage {
  ComponentBase base;
  std::int64_t tape_capacity = -1;  // negative: unbounded
  VirtualTime mount_latency;
  std::map<std::string, StoredObject> stored;

  std::int64_t used() const {
    std::int64_t sum = 0;
    for (const auto& [id, obj] : stored) sum += obj.size;
    return sum;
  }
  bool fits(std::int64_t size) const {
    return tape_capacity < 0 || used() + size <= tape_capacity;
  }
};

/// One object leaving the database for a mass-storage tier. The caller
/// models the actual movement as a transfer with its own duration; the
/// object is off the database immediately (the space is what was needed).
struct Eviction {
  std::string object_id;
  std::int64_t size = 0;
  std::size_t mass_index = 0;
};

struct DbWriteOutcome {
  std::vector<Eviction> evictions;
};

/// Stores an object, evicting least-recently-accessed objects one at a time
/// until the write fits. `mass_cursor` rotates over the configured
/// mass-storage list so overflow spreads round-robin.
inline DbWriteOutcome db_write(DbServer& db, const std::string& object_id,
                               std::int64_t size, VirtualTime now,
                               const std::vector<MassStorage*>& mass,
                               std::size_t& mass_cursor) {
  if (size <= 0) throw ModelError("object size must be positive");
  if (size > db.capacity) {
    throw ModelError("object " + object_id + " (" + std::to_string(size) +
                     ") exceeds database capacity " +
                     std::to_string(db.capacity));
  }
  DbWriteOutcome out;
  auto existing = db.stored.find(object_id);
  std::int64_t occupied = db.used() - (existing != db.stored.end()
                                           ? existing->second.size
                                           : 0);
  while (occupied + size > db.capacity) {
    // Evict the least recently accessed object (oldest access, then
    // lexicographic id so the choice is total).
    const std::string* victim = nullptr;
    for (const auto& [id, obj] : db.stored) {
      if (id == object_id) continue;
      if (victim == nullptr ||
          obj.last_access < db.stored.at(*victim).last_access ||
          (obj.last_access == db.stored.at(*victim).last_access &&
           id < *victim)) {
        victim = &id;
      }
    }
    if (victim == nullptr) throw ModelError("nothing left to evict");
    if (mass.empty()) {
      throw ModelError("database full and no mass storage configured");
    }
    std::int64_t vsize = db.stored.at(*victim).size;
    std::optional<std::size_t> target;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      std::size_t idx = (mass_cursor + i) % mass.size();
      if (mass[idx]->fits(vsize)) {
        target = idx;
        break;
      }
    }
    if (!target) throw ModelError("all mass storage tiers full");
    mass_cursor = (*target + 1) % mass.size();
    std::string victim_id = *victim;
    out.evictions.push_back(Eviction{victim_id, vsize, *target});
    db.stored.erase(victim_id);
    occupied -= vsize;
  }
  db.stored[object_id] = StoredObject{size, now};
  return out;
}

/// Marks an access (read) so LRU ordering follows use, not just writes.
inline bool db_touch(DbServer& db, const std::string& object_id,
                     VirtualTime now) {
  auto it = db.stored.find(object_id);
  if (it == db.stored.end()) return false;
  it->second.last_access = now;
  return true;
}

// ---------------------------------------------------------------------------
// Replicated component state. Owners bump a version and broadcast
// STATE_UPDATE events through the synchronization layer; replicas adopt
// strictly newer versions and ignore replays.
// ---------------------------------------------------------------------------

struct StateUpdate {
  std::string component_id;
  std::uint64_t state_version = 0;
  std::map<std::string, std::string> fields;
};

struct Replica {
  std::uint64_t state_version = 0;
  std::map<std::string, std::string> fields;
};

/// Adopts `update` iff it is newer. Returns true when the replica changed.
inline bool apply_state_update(const std::string& replica_component,
                               Replica& replica, const StateUpdate& update) {
  if (update.component_id != replica_component) {
    throw StateError("state update for " + update.component_id +
                     " routed to replica of " + replica_component);
  }
  if (update.state_version <= replica.state_version) return false;
  replica.state_version = update.state_version;
  replica.fields = update.fields;
  return true;
}

}  // namespace dsim
