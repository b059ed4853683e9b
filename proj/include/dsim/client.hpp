#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsim/agent.hpp"
#include "dsim/results.hpp"
#include "dsim/scenario.hpp"
#include "dsim/transport.hpp"
#include "dsim/wire.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Run coordinator. Owns the agent fleet (in-process or TCP), drives any
// number of contexts to completion, certifies global quiescence, and merges
// per-agent results and traces into one report per context.
// ---------------------------------------------------------------------------

enum class FleetMode : std::uint8_t { kInProc, kTcp, kRemote };

struct RunOptions {
  FleetMode mode = FleetMode::kInProc;
  std::size_t agents = 1;
  // kRemote: addresses of already-running agents, index i serving id i+1.
  std::vector<std::string> remote_agents;
  std::int64_t wall_timeout_ms = 120'000;
  bool quiet = true;
};

/// One context to run: a validated scenario plus its raw JSON text (hashed
/// into the manifest) and an optional prior result pool whose final database
/// contents seed this run's stores.
struct ContextJob {
  ScenarioConfig config;
  std::string scenario_text;
  std::optional<ResultPool> import;
};

struct RunReport {
  enum class Outcome : std::uint8_t {
    kCompleted,
    kValidationError,
    kRuntimeAbort,
    kDeadlock,
  };

  Outcome outcome = Outcome::kRuntimeAbort;
  std::string diagnostic;
  ContextId context_id = 0;
  ResultPool pool;
  std::vector<TraceEntry> trace;
  std::uint64_t merged_trace_hash = 0;
  std::uint64_t events_processed = 0;
  std::uint64_t events_sent = 0;
  std::uint64_t events_received = 0;
  std::uint64_t sync_messages = 0;
  std::uint64_t lvt_requests = 0;
  std::uint64_t blocking_episodes = 0;

  bool completed() const { return outcome == Outcome::kCompleted; }

  int exit_code() const {
    switch (outcome) {
      case Outcome::kCompleted: return 0;
      case Outcome::kValidationError: return 2;
      case Outcome::kRuntimeAbort: return 3;
      case Outcome::kDeadlock: return 4;
    }
    return 3;
  }
};

/// Context ids are a pure function of (scenario name, seed) so reruns and
/// different fleet layouts talk about the same context.
inline ContextId context_id_for(const std::string& name, std::uint64_t seed) {
  ContextId id = fnv1a(name + "#" + std::to_string(seed));
  return id == 0 ? 1 : id;
}

namespace detail {

inline std::int64_t steady_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// Per-agent counters from one probe reply; quiescence compares whole
/// snapshots across consecutive rounds.
struct AgentStatus {
  std::int64_t clock = 0;
  std::uint64_t processed = 0, sent = 0, received = 0;
  std::uint64_t requests_sent = 0, requests_received = 0;
  std::uint64_t responses_sent = 0, responses_received = 0;
  std::uint64_t queued = 0, held = 0;
  bool blocked = false, failed = false;

  friend bool operator==(const AgentStatus&, const AgentStatus&) = default;
};

inline AgentStatus status_from_json(const nlohmann::json& j) {
  AgentStatus s;
  s.clock = j.at("clock").get<std::int64_t>();
  s.processed = j.at("processed").get<std::uint64_t>();
  s.sent = j.at("sent").get<std::uint64_t>();
  s.received = j.at("received").get<std::uint64_t>();
  s.requests_sent = j.at("requests_sent").get<std::uint64_t>();
  s.requests_received = j.at("requests_received").get<std::uint64_t>();
  s.responses_sent = j.at("responses_sent").get<std::uint64_t>();
  s.responses_received = j.at("responses_received").get<std::uint64_t>();
  s.queued = j.at("queued").get<std::uint64_t>();
  s.held = j.at("held").get<std::uint64_t>();
  s.blocked = j.at("blocked").get<bool>();
  s.failed = j.at("failed").get<bool>();
  return s;
}

/// All frames show up in one inbox; this is the per-context bookkeeping the
/// coordinator threads them back out into.
struct ContextTrack {
  enum class Phase : std::uint8_t { kCreating, kRunning, kCollecting, kDone };

  ContextJob job;
  ContextId id = 0;
  std::vector<AgentId> participants;
  Phase phase = Phase::kCreating;
  RunReport report;

  std::set<AgentId> create_acks;
  std::uint64_t probe_round = 0;
  bool probe_outstanding = false;
  std::map<AgentId, AgentStatus> round_status;
  std::optional<std::map<AgentId, AgentStatus>> prev_snapshot;

  std::set<AgentId> done_acks;
  std::vector<ResultRecord> records;
  std::vector<std::vector<TraceEntry>> agent_traces;
  std::map<AgentId, std::uint64_t> expected_trace_len;

  bool failed_early = false;  // outcome already fixed (nack/deadlock/timeout)
};

/// Fleet abstraction: the coordinator only needs its own endpoint, the agent
/// roster, and a way to give local agents cycles.
///
/// Member order is load-bearing: `keepalive` (the hub / thread state every
/// transport points into) is declared first so it is destroyed last, after
/// the client endpoint and the lambdas holding agent references.
struct Fleet {
  std::shared_ptr<void> keepalive;
  std::shared_ptr<Transport> client;
  std::vector<AgentId> agents;
  std::function<bool()> pump;  // advance in-proc agents; false when idle
  std::function<void()> shutdown;
};

inline Fleet make_inproc_fleet(std::size_t n) {
  auto hub = std::make_shared<InProcHub>();
  auto client = hub->attach(kCoordinatorId);
  auto agents = std::make_shared<std::vector<std::unique_ptr<Agent>>>();
  std::vector<AgentId> ids;
  for (std::size_t i = 1; i <= n; ++i) {
    auto id = static_cast<AgentId>(i);
    agents->push_back(std::make_unique<Agent>(id, hub->attach(id)));
    ids.push_back(id);
  }
  Fleet f;
  f.keepalive = hub;
  f.client = client;
  f.agents = std::move(ids);
  f.pump = [agents]() {
    bool any = false;
    for (auto& a : *agents) {
      if (a->poll_and_pump(steady_ms())) any = true;
    }
    return any;
  };
  f.shutdown = [agents]() { agents->clear(); };
  return f;
}

inline Fleet make_tcp_fleet(std::size_t n) {
  struct TcpFleetState {
    std::vector<std::shared_ptr<TcpTransport>> transports;
    std::vector<std::thread> threads;
    std::atomic<bool> stop{false};
  };
  auto st = std::make_shared<TcpFleetState>();

  auto client = std::make_shared<TcpTransport>(kCoordinatorId);
  std::map<AgentId, std::string> peers;
  peers[kCoordinatorId] = client->listen_address();
  std::vector<AgentId> ids;
  for (std::size_t i = 1; i <= n; ++i) {
    auto id = static_cast<AgentId>(i);
    st->transports.push_back(std::make_shared<TcpTransport>(id));
    peers[id] = st->transports.back()->listen_address();
    ids.push_back(id);
  }
  client->start(peers);
  for (auto& t : st->transports) t->start(peers);

  for (std::size_t i = 0; i < n; ++i) {
    auto transport = st->transports[i];
    auto id = static_cast<AgentId>(i + 1);
    st->threads.emplace_back([st, transport, id]() {
      Agent agent(id, transport);
      while (!st->stop.load(std::memory_order_relaxed)) {
        try {
          if (auto env = transport->poll_wait(1)) agent.handle(*env);
          agent.poll_and_pump(steady_ms());
        } catch (const std::exception& e) {
          // Keep the agent alive; per-context errors were already NACKed.
          std::cerr << "[agent " << id << "] " << e.what() << "\n";
        }
      }
    });
  }

  Fleet f;
  f.keepalive = st;
  f.client = client;
  f.agents = std::move(ids);
  f.pump = []() { return false; };
  f.shutdown = [st, client]() {
    st->stop.store(true);
    for (auto& t : st->threads) t.join();
    st->threads.clear();
    for (auto& t : st->transports) t->close();
    client->close();
  };
  return f;
}

/// Fleet of agents that run in their own processes: the coordinator dials
/// them and otherwise leaves their lifecycle alone.
inline Fleet make_remote_fleet(const std::vector<std::string>& addresses) {
  if (addresses.empty()) throw ConfigError("remote fleet has no agents");
  auto client = std::make_shared<TcpTransport>(kCoordinatorId);
  std::map<AgentId, std::string> peers;
  peers[kCoordinatorId] = client->listen_address();
  std::vector<AgentId> ids;
  for (std::size_t i = 0; i < addresses.size(); ++i) {
    auto id = static_cast<AgentId>(i + 1);
    peers[id] = addresses[i];
    ids.push_back(id);
  }
  client->start(peers);
  Fleet f;
  f.keepalive = client;
  f.client = client;
  f.agents = std::move(ids);
  f.pump = []() { return false; };
  f.shutdown = [client]() { client->close(); };
  return f;
}

}  // namespace detail

/// Blocking service loop for a standalone agent. `agent_addresses[i]` is the
/// address of agent i+1; only peers with a higher id are dialed (the lower
/// id of each pair dials, so the mesh forms exactly once), and the
/// coordinator dials in on its own. Returns when `stop` flips.
inline void serve_agent(
    AgentId id, const std::string& listen_address,
    const std::vector<std::string>& agent_addresses,
    const std::atomic<bool>& stop,
    const std::function<void(const std::string&)>& on_listening = {}) {
  if (id == kCoordinatorId) throw ConfigError("agent id 0 is the coordinator");
  auto transport = std::make_shared<TcpTransport>(id, listen_address);
  std::map<AgentId, std::string> peers;
  for (std::size_t i = 0; i < agent_addresses.size(); ++i) {
    auto peer = static_cast<AgentId>(i + 1);
    if (peer > id) peers[peer] = agent_addresses[i];
  }
  transport->start(peers);
  if (on_listening) on_listening(transport->listen_address());
  Agent agent(id, transport);
  while (!stop.load(std::memory_order_relaxed)) {
    try {
      if (auto env = transport->poll_wait(5)) agent.handle(*env);
      agent.poll_and_pump(detail::steady_ms());
    } catch (const std::exception& e) {
      // Keep serving; per-context failures were already NACKed.
      std::cerr << "[agent " << id << "] " << e.what() << "\n";
    }
  }
  transport->close();
}

/// Runs a batch of contexts concurrently on one fleet and reports each one
/// separately. Contexts are isolated: ids must be distinct.
inline std::vector<RunReport> run_contexts(const RunOptions& opts,
                                           const std::vector<ContextJob>& jobs) {
  using detail::ContextTrack;
  using Phase = ContextTrack::Phase;
  if (opts.mode != FleetMode::kRemote && opts.agents == 0) {
    throw ConfigError("fleet needs at least one agent");
  }
  if (jobs.empty()) return {};

  detail::Fleet fleet =
      opts.mode == FleetMode::kInProc ? detail::make_inproc_fleet(opts.agents)
      : opts.mode == FleetMode::kTcp  ? detail::make_tcp_fleet(opts.agents)
                                      : detail::make_remote_fleet(opts.remote_agents);

  std::map<ContextId, ContextTrack> tracks;
  for (const ContextJob& job : jobs) {
    ContextTrack t;
    t.job = job;
    t.id = context_id_for(job.config.name, job.config.seed);
    t.participants = fleet.agents;
    t.report.context_id = t.id;
    if (tracks.count(t.id)) {
      fleet.shutdown();
      throw ConfigError("duplicate context id for scenario '" +
                        job.config.name + "' (same name and seed)");
    }
    tracks.emplace(t.id, std::move(t));
  }

  const std::int64_t start_ms = detail::steady_ms();
  const std::int64_t run_deadline = start_ms + opts.wall_timeout_ms;
  std::int64_t next_progress_ms = start_ms + 500;

  // -- outbound helpers -------------------------------------------------------

  auto send_all = [&](ContextTrack& t, MsgType type, const std::string& body) {
    for (AgentId a : t.participants) {
      fleet.client->send(a, Frame{type, t.id, body});
    }
  };

  auto begin_collect = [&](ContextTrack& t) {
    t.phase = Phase::kCollecting;
    send_all(t, MsgType::kContextDestroy, "{}");
  };

  auto fail_context = [&](ContextTrack& t, RunReport::Outcome outcome,
                          const std::string& diag) {
    if (t.failed_early) return;
    t.failed_early = true;
    t.report.outcome = outcome;
    t.report.diagnostic = diag;
    if (t.phase == Phase::kCreating || t.phase == Phase::kRunning) {
      begin_collect(t);
    }
  };

  // -- context kickoff ----------------------------------------------------------

  for (auto& [id, t] : tracks) {
    nlohmann::json create{
        {"scenario", nlohmann::json::parse(t.job.scenario_text)},
        {"participants", t.participants},
    };
    if (t.job.import) {
      nlohmann::json seed = nlohmann::json::object();
      for (const auto& [db, objects] : extract_db_seed(*t.job.import)) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [obj, size] : objects) arr.push_back({obj, size});
        seed[db] = std::move(arr);
      }
      create["db_seed"] = std::move(seed);
    }
    send_all(t, MsgType::kContextCreate, create.dump());
  }

  // -- inbound handling -----------------------------------------------------------

  auto on_heartbeat = [&](ContextTrack& t, const nlohmann::json& j) {
    if (j.contains("ack") && j.at("ack") == "create") {
      t.create_acks.insert(j.at("agent").get<AgentId>());
      if (t.phase == Phase::kCreating &&
          t.create_acks.size() == t.participants.size()) {
        t.phase = Phase::kRunning;
        send_all(t, MsgType::kHeartbeat, R"({"go":true})");
      }
      return;
    }
    if (j.contains("probe")) {
      if (t.phase != Phase::kRunning || !t.probe_outstanding) return;
      if (j.at("probe").get<std::uint64_t>() != t.probe_round) return;
      if (!j.contains("status")) return;
      t.round_status[j.at("agent").get<AgentId>()] =
          detail::status_from_json(j.at("status"));
    }
  };

  auto on_nack = [&](ContextTrack& t, const nlohmann::json& j) {
    std::string err = j.value("error", "agent rejected the context");
    if (t.phase == Phase::kCreating) {
      fail_context(t, RunReport::Outcome::kValidationError, err);
    } else if (j.value("deadlock", false)) {
      fail_context(t, RunReport::Outcome::kDeadlock, err);
    } else {
      fail_context(t, RunReport::Outcome::kRuntimeAbort, err);
    }
  };

  auto on_result = [&](ContextTrack& t, const nlohmann::json& j) {
    if (j.contains("records")) {
      for (const auto& rj : j.at("records")) {
        ResultRecord r;
        r.context_id = t.id;
        r.metric = rj.at("metric").get<std::string>();
        r.virtual_time = VirtualTime(rj.at("vt").get<std::int64_t>());
        r.value = rj.at("value").get<double>();
        for (const auto& tag : rj.at("tags")) {
          r.tags.emplace_back(tag.at(0).get<std::string>(),
                              tag.at(1).get<std::string>());
        }
        t.records.push_back(std::move(r));
      }
    }
    if (j.contains("trace")) {
      if (t.agent_traces.empty()) t.agent_traces.emplace_back();
      // Batches from one agent arrive contiguously (FIFO per sender) and
      // strictly ascending; a drop in key starts the next agent's trace.
      for (const auto& ej : j.at("trace")) {
        TraceEntry e;
        e.key.ts = VirtualTime(ej.at(0).get<std::int64_t>());
        e.key.src = ej.at(1).get<LpId>();
        e.key.seq = ej.at(2).get<std::uint64_t>();
        e.dst = ej.at(3).get<LpId>();
        e.kind = static_cast<EventKind>(ej.at(4).get<int>());
        auto& cur = t.agent_traces.back();
        if (!cur.empty() && !(cur.back().key < e.key)) {
          t.agent_traces.emplace_back();
        }
        t.agent_traces.back().push_back(e);
      }
    }
  };

  auto on_done = [&](ContextTrack& t, const nlohmann::json& j) {
    AgentId agent = j.at("agent").get<AgentId>();
    t.done_acks.insert(agent);
    t.expected_trace_len[agent] = j.at("trace_len").get<std::uint64_t>();
    t.report.events_processed += j.at("processed").get<std::uint64_t>();
    t.report.events_sent += j.at("sent").get<std::uint64_t>();
    t.report.events_received += j.at("received").get<std::uint64_t>();
    t.report.sync_messages += j.at("sync_sent").get<std::uint64_t>();
    t.report.lvt_requests += j.at("requests_sent").get<std::uint64_t>();
    t.report.blocking_episodes += j.at("episodes").get<std::uint64_t>();
    if (j.value("failed", false) && !t.failed_early) {
      fail_context(t, RunReport::Outcome::kRuntimeAbort,
                   "agent " + std::to_string(agent) +
                       " reported a failed context");
    }
  };

  auto handle_frame = [&](const Envelope& env) {
    auto it = tracks.find(env.frame.context_id);
    if (it == tracks.end()) return;
    ContextTrack& t = it->second;
    nlohmann::json j = nlohmann::json::parse(env.frame.payload);
    switch (env.frame.msg_type) {
      case MsgType::kHeartbeat: on_heartbeat(t, j); break;
      case MsgType::kNack: on_nack(t, j); break;
      case MsgType::kResult: on_result(t, j); break;
      case MsgType::kContextDestroy: on_done(t, j); break;
      default: break;
    }
  };

  // -- quiescence ----------------------------------------------------------------

  auto evaluate_round = [&](ContextTrack& t) {
    if (t.round_status.size() != t.participants.size()) return;
    t.probe_outstanding = false;
    auto snapshot = t.round_status;
    t.round_status.clear();

    bool idle = true;
    std::uint64_t sent = 0, received = 0, rq_s = 0, rq_r = 0, rs_s = 0,
                  rs_r = 0;
    for (const auto& [agent, s] : snapshot) {
      if (s.queued != 0 || s.held != 0 || s.blocked || s.failed) idle = false;
      sent += s.sent;
      received += s.received;
      rq_s += s.requests_sent;
      rq_r += s.requests_received;
      rs_s += s.responses_sent;
      rs_r += s.responses_received;
    }
    bool conserved = sent == received && rq_s == rq_r && rs_s == rs_r;
    bool stable = t.prev_snapshot && *t.prev_snapshot == snapshot;
    t.prev_snapshot = std::move(snapshot);
    if (idle && conserved && stable) {
      t.report.outcome = RunReport::Outcome::kCompleted;
      begin_collect(t);
    }
  };

  auto finalize_track = [&](ContextTrack& t) {
    t.phase = Phase::kDone;
    // Merge per-agent traces (each strictly ascending) into the global
    // dispatch order and verify keys stay strictly ascending across agents.
    std::vector<TraceEntry> merged;
    for (const auto& part : t.agent_traces) {
      std::vector<TraceEntry> next;
      next.reserve(merged.size() + part.size());
      std::merge(merged.begin(), merged.end(), part.begin(), part.end(),
                 std::back_inserter(next),
                 [](const TraceEntry& a, const TraceEntry& b) {
                   return a.key < b.key;
                 });
      merged = std::move(next);
    }
    std::uint64_t expected = 0;
    for (const auto& [agent, len] : t.expected_trace_len) expected += len;
    for (std::size_t i = 1; i < merged.size(); ++i) {
      if (!(merged[i - 1].key < merged[i].key)) {
        fail_context(t, RunReport::Outcome::kRuntimeAbort,
                     "duplicate event key across agents: " +
                         merged[i].key.str());
      }
    }
    if (!t.failed_early && merged.size() != expected) {
      t.report.outcome = RunReport::Outcome::kRuntimeAbort;
      t.report.diagnostic = "trace collection incomplete";
    }
    t.report.trace = std::move(merged);
    t.report.merged_trace_hash = trace_hash(t.report.trace);

    ResultManifest manifest;
    manifest.scenario_name = t.job.config.name;
    manifest.scenario_hash = fnv1a(t.job.scenario_text);
    manifest.seed = t.job.config.seed;
    manifest.context_id = t.id;
    manifest.agents = t.participants;
    ResultPool pool(manifest);
    sort_records_canonically(t.records);
    for (ResultRecord& r : t.records) pool.append(std::move(r));
    t.records.clear();
    t.report.pool = std::move(pool);
  };

  // -- main loop -----------------------------------------------------------------

  bool collect_grace_armed = false;
  std::int64_t collect_deadline = 0;
  for (;;) {
    bool all_done = true;
    for (auto& [id, t] : tracks) {
      if (t.phase != Phase::kDone) all_done = false;
    }
    if (all_done) break;

    bool progressed = fleet.pump();
    while (auto env = fleet.client->poll()) {
      handle_frame(*env);
      progressed = true;
    }
    if (!progressed && opts.mode != FleetMode::kInProc) {
      if (auto env = fleet.client->poll_wait(2)) {
        handle_frame(*env);
        progressed = true;
      }
    }

    std::int64_t now = detail::steady_ms();
    for (auto& [id, t] : tracks) {
      switch (t.phase) {
        case Phase::kRunning:
          if (!t.probe_outstanding) {
            ++t.probe_round;
            t.probe_outstanding = true;
            t.round_status.clear();
            nlohmann::json j{{"probe", t.probe_round}};
            send_all(t, MsgType::kHeartbeat, j.dump());
          } else {
            evaluate_round(t);
          }
          break;
        case Phase::kCollecting:
          if (t.done_acks.size() == t.participants.size()) finalize_track(t);
          break;
        default:
          break;
      }
    }

    if (now >= run_deadline) {
      if (!collect_grace_armed) {
        collect_grace_armed = true;
        collect_deadline = now + 5'000;
        for (auto& [id, t] : tracks) {
          if (t.phase == Phase::kCreating || t.phase == Phase::kRunning) {
            fail_context(t, RunReport::Outcome::kRuntimeAbort,
                         "wall-clock limit exceeded");
          }
        }
      } else if (now >= collect_deadline) {
        for (auto& [id, t] : tracks) {
          if (t.phase == Phase::kDone) continue;
          if (!t.failed_early) {
            t.report.outcome = RunReport::Outcome::kRuntimeAbort;
            t.report.diagnostic = "result collection timed out";
            t.failed_early = true;
          }
          finalize_track(t);
        }
      }
    }

    if (!opts.quiet && now >= next_progress_ms) {
      next_progress_ms = now + 500;
      std::uint64_t events = 0;
      std::size_t live = 0;
      for (const auto& [id, t] : tracks) {
        if (t.phase == Phase::kDone) continue;
        ++live;
        if (t.prev_snapshot) {
          for (const auto& [agent, s] : *t.prev_snapshot) {
            events += s.processed;
          }
        }
      }
      std::cerr << "[dsim] contexts=" << live << " events=" << events << "\n";
    }

    if (!progressed) {
      std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
  }

  fleet.shutdown();

  std::vector<RunReport> out;
  out.reserve(jobs.size());
  for (const ContextJob& job : jobs) {
    ContextId id = context_id_for(job.config.name, job.config.seed);
    out.push_back(std::move(tracks.at(id).report));
  }
  return out;
}

inline RunReport run_scenario(const RunOptions& opts, ContextJob job) {
  return std::move(run_contexts(opts, {std::move(job)}).front());
}

}  // namespace dsim
