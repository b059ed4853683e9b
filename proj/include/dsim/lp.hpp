#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dsim/error.hpp"
#include "dsim/event.hpp"
#include "dsim/time.hpp"

namespace dsim {

/// Lifecycle of a logical process.
///
///   CREATED -> READY          (admitted to the worker pool)
///   READY   -> RUNNING        (an event for it is dispatched)
///   RUNNING -> READY          (handler returned, more work possible)
///   RUNNING -> WAITING        (handler parked itself until a wakeup)
///   WAITING -> READY          (wakeup or message arrived)
///   RUNNING -> FINISHED       (handler declared itself done)
enum class LpState : std::uint8_t {
  kCreated = 0,
  kReady,
  kRunning,
  kWaiting,
  kFinished,
};

inline const char* to_string(LpState s) {
  switch (s) {
    case LpState::kCreated: return "CREATED";
    case LpState::kReady: return "READY";
    case LpState::kRunning: return "RUNNING";
    case LpState::kWaiting: return "WAITING";
    case LpState::kFinished: return "FINISHED";
  }
  return "?";
}

inline bool lp_transition_legal(LpState from, LpState to) {
  switch (from) {
    case LpState::kCreated: return to == LpState::kReady;
    case LpState::kReady: return to == LpState::kRunning;
    case LpState::kRunning:
      return to == LpState::kReady || to == LpState::kWaiting ||
             to == LpState::kFinished;
    case LpState::kWaiting: return to == LpState::kReady;
    case LpState::kFinished: return false;
  }
  return false;
}

/// Counted execution permits. Processes above the pool size queue up in FIFO
/// order and are admitted as permits free up; while unadmitted they stay
/// CREATED and their events wait in the queues.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("worker pool capacity must be > 0");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t in_use() const { return in_use_; }

  void request(LpId lp) { waiting_.push_back(lp); }

  /// Admits the longest-waiting requester if a permit is free.
  std::optional<LpId> try_admit() {
    if (waiting_.empty() || in_use_ >= capacity_) return std::nullopt;
    LpId lp = waiting_.front();
    waiting_.pop_front();
    ++in_use_;
    return lp;
  }

  void release() {
    if (in_use_ == 0) throw StateError("worker pool release without permit");
    --in_use_;
  }

 private:
  std::size_t capacity_;
  std::size_t in_use_ = 0;
  std::deque<LpId> waiting_;
};

struct MetricTags {
  // Flat sorted key=value representation keeps exports canonical.
  std::vector<std::pair<std::string, std::string>> kv;
};

/// What a behavior is allowed to do while handling an event. The engine
/// passes a live view of the owning context; emissions are validated there
/// (timestamp floors, known destination, horizon cap).
class LpContext {
 public:
  virtual ~LpContext() = default;

  virtual VirtualTime now() const = 0;
  virtual VirtualTime lookahead() const = 0;
  virtual VirtualTime horizon() const = 0;
  virtual LpId self() const = 0;
  virtual std::uint64_t rand64() = 0;

  /// Sends an event to another process. For cross-process sends the
  /// timestamp must be >= now() + lookahead(); self-sends only need
  /// ts >= now(). Everything must stay <= horizon().
  virtual void emit(LpId dst, VirtualTime ts, EventKind kind,
                    std::string payload) = 0;

  /// Parks the calling process until `ts`; the engine delivers a WAKEUP.
  virtual void sleep_until(VirtualTime ts, std::string tag) = 0;

  /// Records one result sample.
  virtual void record(const std::string& metric, double value,
                      MetricTags tags) = 0;
};

class LpBehavior {
 public:
  virtual ~LpBehavior() = default;

  /// Handles one dispatched event. Runs with the process in RUNNING state.
  virtual void on_event(LpContext& ctx, const SimEvent& ev) = 0;

  /// Called once when the context shuts down, before results are flushed.
  virtual void on_finish(LpContext& ctx) { (void)ctx; }

  /// True once the process has nothing left to do (RUNNING -> FINISHED).
  virtual bool done() const { return false; }

  /// True when on_event parked the process (RUNNING -> WAITING).
  virtual bool parked() const { return false; }
};

struct LogicalProcess {
  LpId id = 0;
  std::string kind;
  LpState state = LpState::kCreated;
  VirtualTime clock;  // timestamp of the last event it handled
  std::uint64_t next_seq = 0;  // per-source emission sequence
  std::unique_ptr<LpBehavior> behavior;
};

/// Applies a state change, enforcing legality and pool accounting.
/// CREATED->READY consumes a pool permit (the caller admits via the pool);
/// ->FINISHED returns it.
inline void lp_transition(LogicalProcess& lp, LpState to, WorkerPool& pool) {
  if (!lp_transition_legal(lp.state, to)) {
    throw StateError(std::string("illegal transition ") + to_string(lp.state) +
                     " -> " + to_string(to) + " for lp " +
                     std::to_string(lp.id));
  }
  if (to == LpState::kFinished) pool.release();
  lp.state = to;
}

}  // namespace dsim
