#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dsim/error.hpp"
#include "dsim/time.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Job placement: every agent publishes a scalar load value (lower = more
// capacity). The scheduler builds a complete weighted graph over the
// published values, runs all-pairs shortest paths, and scores each vertex by
// the mean distance to the agents already participating in the run. The job
// goes to the vertex with the smallest score.
// ---------------------------------------------------------------------------

struct PerfSample {
  double cpu_load_norm = 0.0;
  double mem_used_frac = 0.0;
  double net_load_norm = 0.0;
  std::uint64_t lp_count = 0;
  std::uint64_t lp_capacity = 1;
  // Listed by the model as a possible input; the default formula ignores it.
  std::set<std::string> components_cached;
};

struct PerfWeights {
  double cpu = 0.25;
  double mem = 0.25;
  double lp = 0.25;
  double net = 0.25;
};

struct PerfValue {
  AgentId agent = 0;
  double value = 0.0;  // in [0,1], lower is better
  std::int64_t sampled_at_ms = 0;
  bool stale = false;
};

inline double clamp01(double x) { return x < 0 ? 0.0 : (x > 1 ? 1.0 : x); }

/// Weighted clamped sum of the normalized load inputs.
inline double performance_value(const PerfSample& s,
                                const PerfWeights& w = PerfWeights{}) {
  if (w.cpu < 0 || w.mem < 0 || w.lp < 0 || w.net < 0) {
    throw ConfigError("negative performance weight");
  }
  double sum = w.cpu + w.mem + w.lp + w.net;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("performance weights must sum to 1");
  }
  if (s.lp_capacity == 0) throw ConfigError("lp_capacity must be positive");
  double lp_frac =
      std::min(1.0, static_cast<double>(s.lp_count) /
                        static_cast<double>(s.lp_capacity));
  return w.cpu * clamp01(s.cpu_load_norm) + w.mem * clamp01(s.mem_used_frac) +
         w.lp * lp_frac + w.net * clamp01(s.net_load_norm);
}

/// Complete undirected graph over agents; edge weight is the mean of the two
/// endpoint values, dist is all-pairs shortest path over those weights.
class PlacementGraph {
 public:
  static PlacementGraph build(const std::vector<PerfValue>& values) {
    if (values.empty()) throw PlacementError("no fresh performance values");
    PlacementGraph g;
    for (const PerfValue& v : values) {
      if (!std::isfinite(v.value) || v.value < 0) {
        throw PlacementError("performance value must be finite and >= 0");
      }
      if (!g.value_.emplace(v.agent, v.value).second) {
        throw PlacementError("duplicate performance value for agent " +
                             std::to_string(v.agent));
      }
    }
    for (const auto& [agent, value] : g.value_) g.agents_.push_back(agent);
    std::size_t n = g.agents_.size();
    g.dist_.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double w =
            (g.value_[g.agents_[i]] + g.value_[g.agents_[j]]) / 2.0;
        g.dist_[i][j] = g.dist_[j][i] = w;
      }
    }
    // Floyd-Warshall; the graphs are tiny (one vertex per agent).
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double via = g.dist_[i][k] + g.dist_[k][j];
          if (via < g.dist_[i][j]) g.dist_[i][j] = via;
        }
      }
    }
    return g;
  }

  const std::vector<AgentId>& agents() const { return agents_; }

  double value(AgentId a) const {
    auto it = value_.find(a);
    if (it == value_.end()) {
      throw PlacementError("agent " + std::to_string(a) + " not in graph");
    }
    return it->second;
  }

  double dist(AgentId a, AgentId b) const { return dist_[index(a)][index(b)]; }

 private:
  std::size_t index(AgentId a) const {
    auto it = std::lower_bound(agents_.begin(), agents_.end(), a);
    if (it == agents_.end() || *it != a) {
      throw PlacementError("agent " + std::to_string(a) + " not in graph");
    }
    return static_cast<std::size_t>(it - agents_.begin());
  }

  std::vector<AgentId> agents_;  // ascending
  std::map<AgentId, double> value_;
  std::vector<std::vector<double>> dist_;
};

/// Mean shortest-path distance to the participating agents (other than the
/// vertex itself); with nothing to compare against, the published value
/// itself. Distances are summed in ascending agent order so the result is
/// bit-reproducible.
inline double placement_score(const PlacementGraph& g, AgentId v,
                              const std::set<AgentId>& participating) {
  double sum = 0.0;
  std::size_t n = 0;
  for (AgentId u : g.agents()) {
    if (u == v || participating.count(u) == 0) continue;
    sum += g.dist(v, u);
    ++n;
  }
  if (n == 0) return g.value(v);
  return sum / static_cast<double>(n);
}

/// All vertices ordered by (score, agent id); the front is the placement
/// target, the rest is the retry order when a chosen agent is unreachable.
inline std::vector<AgentId> placement_ranking(
    const PlacementGraph& g, const std::set<AgentId>& participating) {
  std::vector<std::pair<double, AgentId>> ranked;
  ranked.reserve(g.agents().size());
  for (AgentId v : g.agents()) {
    ranked.emplace_back(placement_score(g, v, participating), v);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<AgentId> out;
  out.reserve(ranked.size());
  for (const auto& [score, agent] : ranked) out.push_back(agent);
  return out;
}

inline AgentId score_and_select(const PlacementGraph& g,
                                const std::set<AgentId>& participating) {
  return placement_ranking(g, participating).front();
}

/// Drops samples older than the freshness TTL; placement then works on the
/// survivors.
inline std::vector<PerfValue> fresh_values(const std::vector<PerfValue>& all,
                                           std::int64_t now_ms,
                                           std::int64_t ttl_ms) {
  std::vector<PerfValue> out;
  for (const PerfValue& v : all) {
    if (now_ms - v.sampled_at_ms <= ttl_ms) out.push_back(v);
  }
  return out;
}

}  // namespace dsim
