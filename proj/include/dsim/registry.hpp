#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "dsim/error.hpp"
#include "dsim/event.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Agent discovery. Agents register an endpoint and keep it alive with
// heartbeats; entries silently expire after `ttl_ms` (three missed beats at
// the default period). For offline runs a static peer file replaces the
// service entirely.
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kHeartbeatPeriodMs = 5000;
inline constexpr std::int64_t kDefaultRegistryTtlMs = 3 * kHeartbeatPeriodMs;

struct PeerInfo {
  AgentId id = 0;
  std::string address;

  friend bool operator==(const PeerInfo&, const PeerInfo&) = default;
};

class RegistryService {
 public:
  explicit RegistryService(std::int64_t ttl_ms = kDefaultRegistryTtlMs)
      : ttl_ms_(ttl_ms) {
    if (ttl_ms_ <= 0) throw ConfigError("registry TTL must be positive");
  }

  void register_agent(AgentId id, const std::string& address,
                      std::int64_t now_ms) {
    if (id == 0) throw ConfigError("agent id 0 is reserved");
    if (address.empty()) throw ConfigError("empty agent address");
    std::lock_guard lock(mu_);
    entries_[id] = Entry{address, now_ms};
  }

  /// Refreshes liveness. Returns false when the entry already expired (or
  /// never existed); the agent must then re-register.
  bool heartbeat(AgentId id, std::int64_t now_ms) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end() || now_ms - it->second.last_seen_ms > ttl_ms_) {
      entries_.erase(id);
      return false;
    }
    it->second.last_seen_ms = now_ms;
    return true;
  }

  void deregister(AgentId id) {
    std::lock_guard lock(mu_);
    entries_.erase(id);
  }

  /// Live agents, ascending by id. Expired entries are dropped as a side
  /// effect so lookups never hand out dead endpoints.
  std::vector<PeerInfo> lookup(std::int64_t now_ms) {
    std::lock_guard lock(mu_);
    std::vector<PeerInfo> out;
    for (auto it = entries_.begin(); it != entries_.end();) {
      if (now_ms - it->second.last_seen_ms > ttl_ms_) {
        it = entries_.erase(it);
        continue;
      }
      out.push_back(PeerInfo{it->first, it->second.address});
      ++it;
    }
    return out;
  }

  std::int64_t ttl_ms() const { return ttl_ms_; }

 private:
  struct Entry {
    std::string address;
    std::int64_t last_seen_ms = 0;
  };

  mutable std::mutex mu_;
  std::map<AgentId, Entry> entries_;
  std::int64_t ttl_ms_;
};

/// Static fallback used when no registry is reachable: one `<id> <address>`
/// pair per line, `#` comments allowed.
inline std::vector<PeerInfo> load_static_peers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open peer file: " + path);
  std::vector<PeerInfo> peers;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    PeerInfo p;
    if (!(ls >> p.id >> p.address) || p.id == 0) {
      throw ConfigError("bad peer file line " + std::to_string(lineno) + ": " +
                        line);
    }
    peers.push_back(std::move(p));
  }
  return peers;
}

}  // namespace dsim
