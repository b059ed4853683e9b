#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsim/components.hpp"
#include "dsim/error.hpp"
#include "dsim/time.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Scenario files. One JSON document describes a run: virtual-time window,
// participants, metrics mode, and a model section selecting one of the
// built-in workload templates. Validation reports every problem it can find,
// not just the first.
// ---------------------------------------------------------------------------

struct CpuSpec {
  std::string id;
  std::int64_t power = 1;
};

struct LinkSpec {
  std::string id;
  std::int64_t bandwidth = 1;
  LinkKind kind = LinkKind::kLan;
};

struct DbSpec {
  std::string id;
  std::int64_t capacity = 1;
};

struct MassSpec {
  std::string id;
  std::int64_t tape_capacity = -1;  // negative: unbounded
  std::int64_t mount_latency = 0;
};

struct CenterSpec {
  std::string name;
  std::vector<CpuSpec> cpus;
  std::vector<LinkSpec> links;
  std::vector<DbSpec> dbs;
  std::vector<MassSpec> mass;
};

struct JobSpec {
  std::int64_t at = 0;
  JobKind kind = JobKind::kProcessing;
  std::int64_t demand = 0;
  std::vector<std::string> resources;
};

/// Workload template plus its parameters. Unused fields stay at their
/// defaults; validation only looks at what the selected kind uses.
struct ModelSpec {
  std::string kind;  // pingpong | cycle | stream | star | t0t1 | storage | jobs

  // pingpong
  std::int64_t rounds = 100;
  std::int64_t reply_delay = 3;
  std::int64_t wakeup_every = 0;  // 0: no self-wakeups

  // cycle (two self-clocked processes cross-feeding each other)
  // reuses `gap` below

  // stream (producer -> sink; the always-safe workload)
  std::int64_t messages = 100;
  std::int64_t gap = 5;

  // star
  std::int64_t consumers = 4;

  // t0t1
  std::int64_t t1_count = 2;
  std::int64_t bandwidth = 100'000'000;
  std::int64_t datasets = 100;
  std::int64_t dataset_bits = 10'000'000;
  std::int64_t interarrival = 100'000;
  std::int64_t db_capacity = 1'000'000'000;

  // storage
  std::int64_t events = 1000;
  std::int64_t objects = 50;
  std::int64_t max_object_size = 400;
  std::int64_t mass_tiers = 1;
  // storage reuses db_capacity above

  // jobs
  std::vector<CenterSpec> centers;
  std::vector<JobSpec> jobs;
};

struct SyntheticMetricsSpec {
  double cpu = 0.0;
  double mem = 0.0;
  double net = 0.0;
  std::uint64_t lp_count = 0;
  std::uint64_t lp_capacity = 16;
};

struct MetricsSpec {
  std::string mode = "synthetic";  // synthetic | host | replay
  std::string file;                // replay input
  std::vector<SyntheticMetricsSpec> synthetic;  // per agent, cycled
};

struct ScenarioConfig {
  std::string name;
  std::uint64_t seed = 1;
  VirtualTime horizon;
  VirtualTime lookahead{1};
  std::int64_t deadlock_timeout_ms = 5000;
  std::uint64_t local_agents = 1;            // participants = "local:N"
  std::vector<std::string> agent_addresses;  // or explicit endpoints
  std::uint64_t worker_pool = 4;
  MetricsSpec metrics;
  ModelSpec model;
  std::string import_results;  // optional prior-run record file
};

struct ScenarioParse {
  std::optional<ScenarioConfig> config;  // set iff errors is empty
  std::vector<std::string> errors;
};

namespace detail {

class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string prefix,
              std::vector<std::string>& errors)
      : j_(j), prefix_(std::move(prefix)), errors_(errors) {}

  template <typename T>
  T get(const char* key, T fallback, bool required = false) {
    if (!j_.contains(key)) {
      if (required) fail(key, "is required");
      return fallback;
    }
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(key, "has the wrong type");
      return fallback;
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  void fail(const std::string& key, const std::string& what) {
    errors_.push_back(prefix_ + key + " " + what);
  }

  const nlohmann::json& raw() const { return j_; }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
  std::vector<std::string>& errors_;
};

inline void parse_center(const nlohmann::json& j, std::size_t index,
                         CenterSpec& out, std::vector<std::string>& errors) {
  std::string prefix = "model.centers[" + std::to_string(index) + "].";
  FieldReader r(j, prefix, errors);
  out.name = r.get<std::string>("name", "", true);
  if (j.contains("cpus")) {
    for (const auto& c : j.at("cpus")) {
      FieldReader cr(c, prefix + "cpus.", errors);
      CpuSpec spec;
      spec.id = cr.get<std::string>("id", "", true);
      spec.power = cr.get<std::int64_t>("power", 1);
      if (spec.power <= 0) cr.fail(spec.id, "power must be positive");
      out.cpus.push_back(spec);
    }
  }
  if (j.contains("links")) {
    for (const auto& c : j.at("links")) {
      FieldReader cr(c, prefix + "links.", errors);
      LinkSpec spec;
      spec.id = cr.get<std::string>("id", "", true);
      spec.bandwidth = cr.get<std::int64_t>("bandwidth", 1);
      spec.kind = cr.get<std::string>("kind", "LAN") == "WAN" ? LinkKind::kWan
                                                              : LinkKind::kLan;
      if (spec.bandwidth <= 0) cr.fail(spec.id, "bandwidth must be positive");
      out.links.push_back(spec);
    }
  }
  if (j.contains("dbs")) {
    for (const auto& c : j.at("dbs")) {
      FieldReader cr(c, prefix + "dbs.", errors);
      DbSpec spec;
      spec.id = cr.get<std::string>("id", "", true);
      spec.capacity = cr.get<std::int64_t>("capacity", 1);
      if (spec.capacity <= 0) cr.fail(spec.id, "capacity must be positive");
      out.dbs.push_back(spec);
    }
  }
  if (j.contains("mass")) {
    for (const auto& c : j.at("mass")) {
      FieldReader cr(c, prefix + "mass.", errors);
      MassSpec spec;
      spec.id = cr.get<std::string>("id", "", true);
      spec.tape_capacity = cr.get<std::int64_t>("tape_capacity", -1);
      spec.mount_latency = cr.get<std::int64_t>("mount_latency", 0);
      out.mass.push_back(spec);
    }
  }
}

inline void validate_model(const ScenarioConfig& cfg, const ModelSpec& m,
                           std::vector<std::string>& errors) {
  static const std::set<std::string> kinds{"pingpong", "cycle",   "stream",
                                           "star",     "t0t1",    "storage",
                                           "jobs"};
  if (kinds.count(m.kind) == 0) {
    errors.push_back("model.kind '" + m.kind + "' is not a known workload");
    return;
  }
  auto positive = [&errors](std::int64_t v, const char* name) {
    if (v <= 0) {
      errors.push_back(std::string("model.") + name + " must be positive");
    }
  };
  if (m.kind == "pingpong") {
    positive(m.rounds, "rounds");
    positive(m.reply_delay, "reply_delay");
    if (m.wakeup_every < 0) errors.push_back("model.wakeup_every negative");
    if (m.reply_delay < cfg.lookahead.ticks()) {
      errors.push_back("model.reply_delay is below the lookahead");
    }
  } else if (m.kind == "cycle") {
    positive(m.gap, "gap");
    if (m.gap < cfg.lookahead.ticks()) {
      errors.push_back("model.gap is below the lookahead");
    }
  } else if (m.kind == "stream" || m.kind == "star") {
    if (m.kind == "star") positive(m.consumers, "consumers");
    positive(m.messages, "messages");
    positive(m.gap, "gap");
    if (m.gap < cfg.lookahead.ticks()) {
      errors.push_back("model.gap is below the lookahead");
    }
  } else if (m.kind == "t0t1") {
    positive(m.t1_count, "t1_count");
    positive(m.bandwidth, "bandwidth");
    positive(m.datasets, "datasets");
    positive(m.dataset_bits, "dataset_bits");
    positive(m.interarrival, "interarrival");
    positive(m.db_capacity, "db_capacity");
  } else if (m.kind == "storage") {
    positive(m.events, "events");
    positive(m.objects, "objects");
    positive(m.max_object_size, "max_object_size");
    positive(m.db_capacity, "db_capacity");
    if (m.mass_tiers < 0) errors.push_back("model.mass_tiers negative");
    if (m.max_object_size > m.db_capacity) {
      errors.push_back(
          "model.max_object_size exceeds db_capacity; writes could never fit");
    }
  } else if (m.kind == "jobs") {
    std::set<std::string> component_ids;
    std::set<std::string> center_names;
    for (const CenterSpec& c : m.centers) {
      if (!center_names.insert(c.name).second) {
        errors.push_back("model.centers duplicate center name '" + c.name +
                         "'");
      }
      auto claim = [&](const std::string& id) {
        if (id.empty()) return;
        if (!component_ids.insert(id).second) {
          errors.push_back("model.centers duplicate component id '" + id +
                           "'");
        }
      };
      for (const auto& s : c.cpus) claim(s.id);
      for (const auto& s : c.links) claim(s.id);
      for (const auto& s : c.dbs) claim(s.id);
      for (const auto& s : c.mass) claim(s.id);
    }
    if (m.centers.empty()) errors.push_back("model.centers must not be empty");
    for (std::size_t i = 0; i < m.jobs.size(); ++i) {
      const JobSpec& job = m.jobs[i];
      std::string where = "model.jobs[" + std::to_string(i) + "]";
      if (job.demand <= 0) errors.push_back(where + " demand must be positive");
      if (job.at < 0) errors.push_back(where + " time must be >= 0");
      if (cfg.horizon.ticks() > 0 && job.at > cfg.horizon.ticks()) {
        errors.push_back(where + " starts beyond the horizon");
      }
      if (job.resources.empty()) {
        errors.push_back(where + " references no resources");
      }
      for (const std::string& res : job.resources) {
        if (component_ids.count(res) == 0) {
          errors.push_back(where + " references undeclared resource '" + res +
                           "'");
        }
      }
    }
  }
}

}  // namespace detail

inline ScenarioParse parse_scenario_text(const std::string& text) {
  ScenarioParse out;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    out.errors.push_back(std::string("malformed scenario file: ") + e.what());
    return out;
  }
  if (!j.is_object()) {
    out.errors.push_back("scenario root must be a JSON object");
    return out;
  }

  ScenarioConfig cfg;
  detail::FieldReader r(j, "", out.errors);
  cfg.name = r.get<std::string>("name", "", true);
  cfg.seed = r.get<std::uint64_t>("seed", 1);
  auto horizon = r.get<std::int64_t>("horizon", 0, true);
  if (horizon <= 0) {
    out.errors.push_back("horizon must be a positive tick count");
  } else {
    cfg.horizon = VirtualTime(horizon);
  }
  auto lookahead = r.get<std::int64_t>("lookahead", 1);
  if (lookahead < 0) {
    out.errors.push_back("lookahead must be >= 0");
  } else {
    cfg.lookahead = VirtualTime(lookahead);
  }
  cfg.deadlock_timeout_ms = r.get<std::int64_t>("deadlock_timeout_ms", 5000);
  if (cfg.deadlock_timeout_ms <= 0) {
    out.errors.push_back("deadlock_timeout_ms must be positive");
  }
  cfg.worker_pool = r.get<std::uint64_t>("worker_pool", 4);
  if (cfg.worker_pool == 0) {
    out.errors.push_back("worker_pool must be positive");
  }

  if (j.contains("participants")) {
    const auto& p = j.at("participants");
    if (p.is_string()) {
      std::string s = p.get<std::string>();
      if (s.rfind("local:", 0) == 0) {
        try {
          long n = std::stol(s.substr(6));
          if (n <= 0) throw std::invalid_argument("nonpositive");
          cfg.local_agents = static_cast<std::uint64_t>(n);
        } catch (const std::exception&) {
          out.errors.push_back("participants 'local:N' needs positive N");
        }
      } else {
        out.errors.push_back(
            "participants string must look like 'local:N' (or use a list "
            "of addresses)");
      }
    } else if (p.is_array()) {
      for (const auto& a : p) {
        if (!a.is_string() || a.get<std::string>().empty()) {
          out.errors.push_back("participants entries must be 'host:port'");
          continue;
        }
        cfg.agent_addresses.push_back(a.get<std::string>());
      }
      if (cfg.agent_addresses.empty()) {
        out.errors.push_back("participants list is empty");
      }
    } else {
      out.errors.push_back("participants must be a string or a list");
    }
  }

  if (j.contains("metrics")) {
    detail::FieldReader mr(j.at("metrics"), "metrics.", out.errors);
    cfg.metrics.mode = mr.get<std::string>("mode", "synthetic");
    if (cfg.metrics.mode != "synthetic" && cfg.metrics.mode != "host" &&
        cfg.metrics.mode != "replay") {
      out.errors.push_back("metrics.mode must be synthetic, host, or replay");
    }
    cfg.metrics.file = mr.get<std::string>("file", "");
    if (cfg.metrics.mode == "replay" && cfg.metrics.file.empty()) {
      out.errors.push_back("metrics.mode replay needs metrics.file");
    }
    if (mr.raw().contains("synthetic")) {
      for (const auto& s : mr.raw().at("synthetic")) {
        detail::FieldReader sr(s, "metrics.synthetic.", out.errors);
        SyntheticMetricsSpec spec;
        spec.cpu = sr.get<double>("cpu", 0.0);
        spec.mem = sr.get<double>("mem", 0.0);
        spec.net = sr.get<double>("net", 0.0);
        spec.lp_count = sr.get<std::uint64_t>("lp_count", 0);
        spec.lp_capacity = sr.get<std::uint64_t>("lp_capacity", 16);
        if (spec.lp_capacity == 0) {
          out.errors.push_back("metrics.synthetic lp_capacity must be > 0");
        }
        cfg.metrics.synthetic.push_back(spec);
      }
    }
  }

  if (!j.contains("model") || !j.at("model").is_object()) {
    out.errors.push_back("model section is required");
  } else {
    detail::FieldReader mr(j.at("model"), "model.", out.errors);
    ModelSpec& m = cfg.model;
    m.kind = mr.get<std::string>("kind", "", true);
    m.rounds = mr.get<std::int64_t>("rounds", m.rounds);
    m.reply_delay = mr.get<std::int64_t>("reply_delay", m.reply_delay);
    m.wakeup_every = mr.get<std::int64_t>("wakeup_every", m.wakeup_every);
    m.messages = mr.get<std::int64_t>("messages", m.messages);
    m.gap = mr.get<std::int64_t>("gap", m.gap);
    m.consumers = mr.get<std::int64_t>("consumers", m.consumers);
    m.t1_count = mr.get<std::int64_t>("t1_count", m.t1_count);
    m.bandwidth = mr.get<std::int64_t>("bandwidth", m.bandwidth);
    m.datasets = mr.get<std::int64_t>("datasets", m.datasets);
    m.dataset_bits = mr.get<std::int64_t>("dataset_bits", m.dataset_bits);
    m.interarrival = mr.get<std::int64_t>("interarrival", m.interarrival);
    m.db_capacity = mr.get<std::int64_t>("db_capacity", m.db_capacity);
    m.events = mr.get<std::int64_t>("events", m.events);
    m.objects = mr.get<std::int64_t>("objects", m.objects);
    m.max_object_size =
        mr.get<std::int64_t>("max_object_size", m.max_object_size);
    m.mass_tiers = mr.get<std::int64_t>("mass_tiers", m.mass_tiers);
    if (mr.raw().contains("centers")) {
      const auto& cs = mr.raw().at("centers");
      if (!cs.is_array()) {
        out.errors.push_back("model.centers must be a list");
      } else {
        for (std::size_t i = 0; i < cs.size(); ++i) {
          CenterSpec center;
          detail::parse_center(cs[i], i, center, out.errors);
          m.centers.push_back(std::move(center));
        }
      }
    }
    if (mr.raw().contains("jobs")) {
      const auto& js = mr.raw().at("jobs");
      if (!js.is_array()) {
        out.errors.push_back("model.jobs must be a list");
      } else {
        for (const auto& job_json : js) {
          detail::FieldReader jr(job_json, "model.jobs.", out.errors);
          JobSpec job;
          job.at = jr.get<std::int64_t>("at", 0, true);
          std::string kind = jr.get<std::string>("kind", "PROCESSING");
          if (kind == "PROCESSING") {
            job.kind = JobKind::kProcessing;
          } else if (kind == "TRANSFER") {
            job.kind = JobKind::kTransfer;
          } else if (kind == "ANALYSIS") {
            job.kind = JobKind::kAnalysis;
          } else {
            out.errors.push_back("model.jobs kind '" + kind + "' unknown");
          }
          job.demand = jr.get<std::int64_t>("demand", 0, true);
          job.resources =
              jr.get<std::vector<std::string>>("resources", {}, true);
          m.jobs.push_back(std::move(job));
        }
      }
    }
    detail::validate_model(cfg, m, out.errors);
  }

  cfg.import_results = r.get<std::string>("import_results", "");

  if (out.errors.empty()) out.config = std::move(cfg);
  return out;
}

inline ScenarioParse parse_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ScenarioParse out;
    out.errors.push_back("cannot open scenario file: " + path);
    return out;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str());
}

/// Throwing wrapper used where a config is mandatory (the validate verb
/// reports the full list instead).
inline ScenarioConfig load_scenario_file(const std::string& path) {
  ScenarioParse p = parse_scenario_file(path);
  if (!p.config) {
    std::string all = "invalid scenario:";
    for (const std::string& e : p.errors) all += "\n  - " + e;
    throw ConfigError(all);
  }
  return *p.config;
}

}  // namespace dsim
