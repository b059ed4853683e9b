#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsim/error.hpp"
#include "dsim/event.hpp"
#include "dsim/time.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Run results. Agents report measurements as (metric, virtual_time, value,
// tags) records; the pool is an append-only journal with a manifest so an
// exported run can be re-imported and re-exported byte for byte.
// ---------------------------------------------------------------------------

using Tags = std::vector<std::pair<std::string, std::string>>;

struct ResultRecord {
  ContextId context_id = 0;
  std::string metric;
  VirtualTime virtual_time;
  double value = 0.0;
  Tags tags;  // kept sorted by key

  friend bool operator==(const ResultRecord&, const ResultRecord&) = default;
};

/// FNV-1a, 64 bit. Used for scenario and record-file fingerprints; this is a
/// corruption check, not a cryptographic one.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[v & 0xF];
    v >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf, 16);
}

namespace detail {

// CSV cells use a fixed character diet instead of quoting rules; rejecting
// the separators up front keeps export/import trivially reversible.
inline void check_cell(const std::string& s, const char* what) {
  for (char c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == ';' || c == '=') {
      throw ConfigError(std::string(what) + " may not contain ',;=' or " +
                        "newlines: " + s);
    }
  }
}

inline std::string format_value(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9.0e15) {
    // Whole numbers dominate the built-in metrics; print them plainly.
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf,
                                 static_cast<std::int64_t>(v));
    (void)ec;
    return std::string(buf, p);
  }
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw StateError("value not representable");
  return std::string(buf, p);
}

inline std::string format_tags(const Tags& tags) {
  std::string out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i) out += ';';
    out += tags[i].first;
    out += '=';
    out += tags[i].second;
  }
  return out;
}

inline Tags parse_tags(const std::string& field) {
  Tags tags;
  if (field.empty()) return tags;
  std::size_t start = 0;
  while (start <= field.size()) {
    std::size_t end = field.find(';', start);
    std::string item = field.substr(
        start, end == std::string::npos ? std::string::npos : end - start);
    std::size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw IntegrityError("malformed tag cell: " + field);
    }
    tags.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return tags;
}

inline std::vector<std::string> split_csv_line(const std::string& line,
                                               std::size_t expect) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (cells.size() + 1 < expect) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      throw IntegrityError("record line has too few columns: " + line);
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  cells.push_back(line.substr(start));
  if (cells.back().find(',') != std::string::npos) {
    throw IntegrityError("record line has too many columns: " + line);
  }
  return cells;
}

}  // namespace detail

inline const char* kResultsCsvHeader = "context_id,metric,virtual_time,value,tags";

struct ResultManifest {
  std::string scenario_name;
  std::uint64_t scenario_hash = 0;
  std::uint64_t seed = 0;
  ContextId context_id = 0;
  std::vector<AgentId> agents;

  friend bool operator==(const ResultManifest&,
                         const ResultManifest&) = default;
};

/// Append-only record journal. `append` rejects a record whose virtual time
/// runs backwards within its metric, so a pool is monotone per metric by
/// construction and exports are reproducible.
class ResultPool {
 public:
  ResultPool() = default;
  explicit ResultPool(ResultManifest manifest)
      : manifest_(std::move(manifest)) {}

  const ResultManifest& manifest() const { return manifest_; }
  ResultManifest& manifest() { return manifest_; }

  void append(ResultRecord rec) {
    detail::check_cell(rec.metric, "metric");
    if (rec.metric.empty()) throw ConfigError("metric name is empty");
    for (const auto& [k, v] : rec.tags) {
      detail::check_cell(k, "tag key");
      detail::check_cell(v, "tag value");
    }
    std::sort(rec.tags.begin(), rec.tags.end());
    auto it = last_time_.find(rec.metric);
    if (it != last_time_.end() && rec.virtual_time < it->second) {
      throw StateError("metric " + rec.metric + " ran backwards: " +
                       std::to_string(rec.virtual_time.ticks()) + " after " +
                       std::to_string(it->second.ticks()));
    }
    last_time_[rec.metric] = rec.virtual_time;
    records_.push_back(std::move(rec));
  }

  const std::vector<ResultRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  std::string export_csv() const {
    std::string out(kResultsCsvHeader);
    out += '\n';
    for (const ResultRecord& r : records_) {
      out += std::to_string(r.context_id);
      out += ',';
      out += r.metric;
      out += ',';
      out += std::to_string(r.virtual_time.ticks());
      out += ',';
      out += detail::format_value(r.value);
      out += ',';
      out += detail::format_tags(r.tags);
      out += '\n';
    }
    return out;
  }

  std::string export_manifest() const {
    std::string csv = export_csv();
    std::ostringstream out;
    out << "dsim-results v1\n";
    out << "scenario: " << manifest_.scenario_name << '\n';
    out << "scenario_hash: " << hex64(manifest_.scenario_hash) << '\n';
    out << "seed: " << manifest_.seed << '\n';
    out << "context: " << manifest_.context_id << '\n';
    out << "agents: ";
    for (std::size_t i = 0; i < manifest_.agents.size(); ++i) {
      if (i) out << ',';
      out << manifest_.agents[i];
    }
    out << '\n';
    out << "records: " << records_.size() << '\n';
    out << "records_hash: " << hex64(fnv1a(csv)) << '\n';
    return out.str();
  }

  void export_dir(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
      std::ofstream f(dir / "records.csv", std::ios::binary);
      if (!f) throw StateError("cannot write " + (dir / "records.csv").string());
      f << export_csv();
    }
    {
      std::ofstream f(dir / "manifest.txt", std::ios::binary);
      if (!f) throw StateError("cannot write " + (dir / "manifest.txt").string());
      f << export_manifest();
    }
  }

  /// Rebuilds a pool from exported text, verifying the manifest against the
  /// record bytes. Truncated or edited files fail the count / hash check.
  static ResultPool import_text(const std::string& manifest_text,
                                const std::string& csv_text) {
    ResultPool pool;
    std::istringstream mf(manifest_text);
    std::string line;
    std::size_t declared_records = 0;
    std::string declared_hash;
    bool saw_header = false;
    while (std::getline(mf, line)) {
      if (!saw_header) {
        if (line != "dsim-results v1") {
          throw IntegrityError("unrecognised manifest header: " + line);
        }
        saw_header = true;
        continue;
      }
      std::size_t colon = line.find(": ");
      std::string key = line.substr(0, colon);
      std::string value = colon == std::string::npos ? "" : line.substr(colon + 2);
      if (key == "scenario") {
        pool.manifest_.scenario_name = value;
      } else if (key == "scenario_hash") {
        pool.manifest_.scenario_hash = std::stoull(value, nullptr, 16);
      } else if (key == "seed") {
        pool.manifest_.seed = std::stoull(value);
      } else if (key == "context") {
        pool.manifest_.context_id = std::stoull(value);
      } else if (key == "agents") {
        std::istringstream as(value);
        std::string tok;
        while (std::getline(as, tok, ',')) {
          if (!tok.empty()) pool.manifest_.agents.push_back(std::stoull(tok));
        }
      } else if (key == "records") {
        declared_records = std::stoull(value);
      } else if (key == "records_hash") {
        declared_hash = value;
      }
    }
    if (!saw_header) throw IntegrityError("manifest is empty");
    if (declared_hash != hex64(fnv1a(csv_text))) {
      throw IntegrityError("record bytes do not match manifest hash");
    }

    std::istringstream cf(csv_text);
    if (!std::getline(cf, line) || line != kResultsCsvHeader) {
      throw IntegrityError("missing results header row");
    }
    while (std::getline(cf, line)) {
      if (line.empty()) continue;
      auto cells = detail::split_csv_line(line, 5);
      ResultRecord rec;
      try {
        rec.context_id = std::stoull(cells[0]);
        rec.virtual_time = VirtualTime(std::stoll(cells[2]));
        rec.value = std::stod(cells[3]);
      } catch (const std::exception&) {
        throw IntegrityError("unparseable record line: " + line);
      }
      rec.metric = cells[1];
      rec.tags = detail::parse_tags(cells[4]);
      pool.append(std::move(rec));
    }
    if (pool.size() != declared_records) {
      throw IntegrityError("manifest declares " +
                           std::to_string(declared_records) + " records, file has " +
                           std::to_string(pool.size()));
    }
    return pool;
  }

  static ResultPool import_dir(const std::filesystem::path& dir) {
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream f(p, std::ios::binary);
      if (!f) throw IntegrityError("cannot open " + p.string());
      std::ostringstream ss;
      ss << f.rdbuf();
      return ss.str();
    };
    return import_text(slurp(dir / "manifest.txt"), slurp(dir / "records.csv"));
  }

 private:
  ResultManifest manifest_;
  std::vector<ResultRecord> records_;
  std::map<std::string, VirtualTime> last_time_;
};

/// Canonical run order: layout-independent, so concurrent agents merge to the
/// same journal as a solo run. Sort key includes everything to break ties.
inline void sort_records_canonically(std::vector<ResultRecord>& records) {
  std::sort(records.begin(), records.end(),
            [](const ResultRecord& a, const ResultRecord& b) {
              if (a.metric != b.metric) return a.metric < b.metric;
              if (a.virtual_time != b.virtual_time) {
                return a.virtual_time < b.virtual_time;
              }
              if (a.tags != b.tags) return a.tags < b.tags;
              if (a.value != b.value) return a.value < b.value;
              return a.context_id < b.context_id;
            });
}

/// Final storage placements recorded by a run, keyed by database component,
/// in record order. Used to seed the next run's servers from an import.
inline std::map<std::string, std::vector<std::pair<std::string, std::int64_t>>>
extract_db_seed(const ResultPool& pool) {
  std::map<std::string, std::vector<std::pair<std::string, std::int64_t>>> out;
  for (const ResultRecord& r : pool.records()) {
    if (r.metric != "db_final_object") continue;
    std::string db, object;
    for (const auto& [k, v] : r.tags) {
      if (k == "db") db = v;
      if (k == "object") object = v;
    }
    if (db.empty() || object.empty()) {
      throw IntegrityError("db_final_object record missing db/object tags");
    }
    out[db].emplace_back(object, static_cast<std::int64_t>(r.value));
  }
  return out;
}

}  // namespace dsim
