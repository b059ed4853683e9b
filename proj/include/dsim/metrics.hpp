#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dsim/error.hpp"
#include "dsim/placement.hpp"
#include "dsim/scenario.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// Load sampling. A source produces raw PerfSamples; the publisher turns them
// into the scalar performance value fed to the scheduler and keeps the last
// good value around (marked stale) when sampling fails.
// ---------------------------------------------------------------------------

class MetricsSource {
 public:
  virtual ~MetricsSource() = default;
  /// May throw StateError when the underlying probe is unavailable.
  virtual PerfSample sample() = 0;
};

/// Fixed values from the scenario; the deterministic default for runs.
class SyntheticSource : public MetricsSource {
 public:
  explicit SyntheticSource(PerfSample fixed) : fixed_(std::move(fixed)) {}
  PerfSample sample() override { return fixed_; }

 private:
  PerfSample fixed_;
};

/// Replays a recorded sample file: one CSV line per sample,
/// `cpu,mem,net,lp_count,lp_capacity`. Samples are handed out in order and
/// the last one repeats forever, so long runs keep a defined value.
class ReplaySource : public MetricsSource {
 public:
  explicit ReplaySource(std::vector<PerfSample> samples)
      : samples_(std::move(samples)) {
    if (samples_.empty()) throw ConfigError("replay source has no samples");
  }

  static ReplaySource from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open metrics replay file: " + path);
    std::vector<PerfSample> samples;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      PerfSample s;
      char c;
      std::istringstream ls(line);
      if (!(ls >> s.cpu_load_norm >> c >> s.mem_used_frac >> c >>
            s.net_load_norm >> c >> s.lp_count >> c >> s.lp_capacity)) {
        throw ConfigError("bad metrics replay line: " + line);
      }
      if (s.lp_capacity == 0) s.lp_capacity = 1;
      samples.push_back(s);
    }
    return ReplaySource(std::move(samples));
  }

  PerfSample sample() override {
    PerfSample s = samples_[next_];
    if (next_ + 1 < samples_.size()) ++next_;
    return s;
  }

 private:
  std::vector<PerfSample> samples_;
  std::size_t next_ = 0;
};

/// Reads coarse load figures from the host: 1-minute load average scaled by
/// core count and the used fraction of physical memory. Network load has no
/// portable counterpart, so it reports zero.
class HostSource : public MetricsSource {
 public:
  explicit HostSource(std::uint64_t lp_count = 0, std::uint64_t lp_capacity = 16)
      : lp_count_(lp_count), lp_capacity_(lp_capacity) {}

  PerfSample sample() override {
    PerfSample s;
    s.lp_count = lp_count_;
    s.lp_capacity = lp_capacity_;
    {
      std::ifstream f("/proc/loadavg");
      double one_min = 0.0;
      if (!(f >> one_min)) throw StateError("cannot read /proc/loadavg");
      unsigned cores = std::max(1u, std::thread::hardware_concurrency());
      s.cpu_load_norm = clamp01(one_min / cores);
    }
    {
      std::ifstream f("/proc/meminfo");
      if (!f) throw StateError("cannot read /proc/meminfo");
      std::string key;
      std::int64_t value = 0, total = -1, avail = -1;
      std::string unit;
      while (f >> key >> value >> unit) {
        if (key == "MemTotal:") total = value;
        if (key == "MemAvailable:") avail = value;
      }
      if (total <= 0 || avail < 0) throw StateError("meminfo missing fields");
      s.mem_used_frac = clamp01(1.0 - static_cast<double>(avail) / total);
    }
    s.net_load_norm = 0.0;
    return s;
  }

 private:
  std::uint64_t lp_count_;
  std::uint64_t lp_capacity_;
};

inline std::unique_ptr<MetricsSource> make_metrics_source(
    const MetricsSpec& spec, std::size_t agent_index) {
  if (spec.mode == "host") return std::make_unique<HostSource>();
  if (spec.mode == "replay") {
    return std::make_unique<ReplaySource>(ReplaySource::from_file(spec.file));
  }
  PerfSample s;
  if (!spec.synthetic.empty()) {
    const SyntheticMetricsSpec& sm =
        spec.synthetic[agent_index % spec.synthetic.size()];
    s.cpu_load_norm = sm.cpu;
    s.mem_used_frac = sm.mem;
    s.net_load_norm = sm.net;
    s.lp_count = sm.lp_count;
    s.lp_capacity = sm.lp_capacity;
  }
  return std::make_unique<SyntheticSource>(s);
}

/// Wraps a source with the republish-on-failure rule: a sampling error keeps
/// the previous value alive but flags it stale so consumers can discount it.
class PerfPublisher {
 public:
  PerfPublisher(AgentId agent, PerfWeights weights = PerfWeights{})
      : agent_(agent), weights_(weights) {}

  PerfValue publish(MetricsSource& source, std::int64_t now_ms) {
    try {
      PerfSample s = source.sample();
      last_ = PerfValue{agent_, performance_value(s, weights_), now_ms, false};
      have_ = true;
    } catch (const Error&) {
      if (!have_) {
        // Nothing sampled yet: advertise worst-case load, stale.
        last_ = PerfValue{agent_, 1.0, now_ms, true};
        have_ = true;
      } else {
        last_.stale = true;
        last_.sampled_at_ms = now_ms;
      }
    }
    return last_;
  }

  const PerfValue& last() const { return last_; }

 private:
  AgentId agent_;
  PerfWeights weights_;
  PerfValue last_{};
  bool have_ = false;
};

}  // namespace dsim
