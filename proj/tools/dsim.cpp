// Command-line front end: validate scenarios, run them on a local or
// remote fleet, re-export result pools, and exercise metrics replay files.
//
// Exit codes: 0 success, 2 validation error, 3 runtime abort, 4 deadlock.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsim/client.hpp"
#include "dsim/metrics.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw dsim::ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop.store(true); }

int cmd_validate(const std::string& path) {
  dsim::ScenarioParse p = dsim::parse_scenario_text(slurp(path));
  if (!p.config) {
    for (const std::string& e : p.errors) std::cerr << "error: " << e << "\n";
    return kValidation;
  }
  const dsim::ScenarioConfig& cfg = *p.config;
  std::cout << "scenario '" << cfg.name << "' is valid\n"
            << "  seed       " << cfg.seed << "\n"
            << "  horizon    " << cfg.horizon.ticks() << "\n"
            << "  lookahead  " << cfg.lookahead.ticks() << "\n"
            << "  model      " << cfg.model.kind << "\n";
  if (!cfg.agent_addresses.empty()) {
    std::cout << "  agents     " << cfg.agent_addresses.size()
              << " remote endpoint(s)\n";
  } else {
    std::cout << "  agents     local:" << cfg.local_agents << "\n";
  }
  return kOk;
}

int cmd_run(const std::string& path, std::size_t local, std::size_t tcp,
            const std::string& agents_csv, const std::string& out_dir,
            const std::string& import_dir, std::int64_t timeout_ms,
            bool progress) {
  std::string text = slurp(path);
  dsim::ScenarioParse p = dsim::parse_scenario_text(text);
  if (!p.config) {
    for (const std::string& e : p.errors) std::cerr << "error: " << e << "\n";
    return kValidation;
  }

  dsim::RunOptions opts;
  opts.wall_timeout_ms = timeout_ms;
  opts.quiet = !progress;
  if (!agents_csv.empty()) {
    opts.mode = dsim::FleetMode::kRemote;
    opts.remote_agents = split_list(agents_csv);
  } else if (tcp > 0) {
    opts.mode = dsim::FleetMode::kTcp;
    opts.agents = tcp;
  } else if (local > 0) {
    opts.mode = dsim::FleetMode::kInProc;
    opts.agents = local;
  } else if (!p.config->agent_addresses.empty()) {
    opts.mode = dsim::FleetMode::kRemote;
    opts.remote_agents = p.config->agent_addresses;
  } else {
    opts.mode = dsim::FleetMode::kInProc;
    opts.agents = static_cast<std::size_t>(p.config->local_agents);
  }

  dsim::ContextJob job{*p.config, text, std::nullopt};
  if (!import_dir.empty()) {
    job.import = dsim::ResultPool::import_dir(import_dir);
  }

  dsim::RunReport r = dsim::run_scenario(opts, std::move(job));
  std::cout << "context  " << r.context_id << "\n"
            << "outcome  "
            << (r.outcome == dsim::RunReport::Outcome::kCompleted
                    ? "completed"
                : r.outcome == dsim::RunReport::Outcome::kValidationError
                    ? "validation-error"
                : r.outcome == dsim::RunReport::Outcome::kDeadlock
                    ? "deadlock"
                    : "runtime-abort")
            << "\n";
  if (!r.diagnostic.empty()) std::cout << "detail   " << r.diagnostic << "\n";
  std::cout << "events   " << r.events_processed << "\n"
            << "sync     " << r.sync_messages << "\n"
            << "trace    " << r.trace.size() << " entries, hash "
            << dsim::hex64(r.merged_trace_hash) << "\n"
            << "records  " << r.pool.size() << "\n";

  if (!out_dir.empty()) {
    std::filesystem::path dir(out_dir);
    r.pool.export_dir(dir);
    std::ofstream tf(dir / "trace.csv", std::ios::binary);
    if (!tf) throw dsim::StateError("cannot write " + (dir / "trace.csv").string());
    tf << "ts,src,seq,dst,kind\n";
    for (const dsim::TraceEntry& e : r.trace) {
      tf << e.key.ts.ticks() << ',' << e.key.src << ',' << e.key.seq << ','
         << e.dst << ',' << dsim::to_string(e.kind) << '\n';
    }
    std::cout << "wrote    " << out_dir << "\n";
  }
  return r.exit_code();
}

int cmd_export(const std::string& src, const std::string& dst) {
  dsim::ResultPool pool = dsim::ResultPool::import_dir(src);
  pool.export_dir(dst);
  std::cout << "re-exported " << pool.size() << " record(s) for scenario '"
            << pool.manifest().scenario_name << "' to " << dst << "\n";
  return kOk;
}

int cmd_replay_metrics(const std::string& path, std::size_t count) {
  dsim::ReplaySource src = dsim::ReplaySource::from_file(path);
  std::cout << "sample,cpu,mem,net,lp_count,lp_capacity,value\n";
  for (std::size_t i = 0; i < count; ++i) {
    dsim::PerfSample s = src.sample();
    std::cout << i << ',' << s.cpu_load_norm << ',' << s.mem_used_frac << ','
              << s.net_load_norm << ',' << s.lp_count << ',' << s.lp_capacity
              << ',' << dsim::performance_value(s) << "\n";
  }
  return kOk;
}

int cmd_agent(dsim::AgentId id, const std::string& listen,
              const std::string& peers_csv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  dsim::serve_agent(id, listen, split_list(peers_csv), g_stop,
                    [id](const std::string& addr) {
                      std::cout << "agent " << id << " listening on " << addr
                                << std::endl;
                    });
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed discrete-event simulation runner"};
  app.require_subcommand(1);

  std::string scenario;
  std::string out_dir;
  std::string import_dir;
  std::string agents_csv;
  std::size_t local = 0;
  std::size_t tcp = 0;
  std::int64_t timeout_ms = 120'000;
  bool progress = false;

  CLI::App* run = app.add_subcommand("run", "Run a scenario to completion");
  run->add_option("scenario", scenario, "Scenario JSON file")->required();
  auto* opt_local =
      run->add_option("--local", local, "Spin N in-process agents");
  auto* opt_tcp = run->add_option(
      "--tcp", tcp, "Spin N agents in-process over loopback TCP sockets");
  auto* opt_agents = run->add_option(
      "--agents", agents_csv,
      "Comma-separated addresses of running agents (first entry is agent 1)");
  opt_local->excludes(opt_tcp)->excludes(opt_agents);
  opt_tcp->excludes(opt_agents);
  run->add_option("--out", out_dir, "Directory for records, manifest, trace");
  run->add_option("--import", import_dir,
                  "Previously exported results whose final database contents "
                  "seed this run");
  run->add_option("--timeout-ms", timeout_ms, "Wall-clock limit");
  run->add_flag("--progress", progress, "Print a periodic progress line");

  std::string validate_path;
  CLI::App* val = app.add_subcommand(
      "validate", "Check a scenario file and report every problem");
  val->add_option("scenario", validate_path, "Scenario JSON file")->required();

  std::string export_src;
  std::string export_dst;
  CLI::App* exp =
      app.add_subcommand("export", "Re-export a results directory");
  exp->add_option("results", export_src, "Directory written by 'run --out'")
      ->required();
  exp->add_option("dest", export_dst, "Destination directory")->required();

  std::string replay_path;
  std::size_t replay_count = 10;
  CLI::App* rep = app.add_subcommand(
      "replay-metrics", "Play a metrics replay file through the sampler");
  rep->add_option("file", replay_path, "Replay file, one sample per line")
      ->required();
  rep->add_option("--count", replay_count, "Number of samples to draw");

  dsim::AgentId agent_id = 0;
  std::string listen = "127.0.0.1:0";
  std::string peers_csv;
  CLI::App* ag = app.add_subcommand(
      "agent", "Serve as a standalone agent until interrupted");
  ag->add_option("--id", agent_id, "Agent id (1-based)")->required();
  ag->add_option("--listen", listen, "host:port to bind");
  ag->add_option("--peers", peers_csv,
                 "Comma-separated addresses of all agents, entry i serving "
                 "agent i+1");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (run->parsed()) {
      return cmd_run(scenario, local, tcp, agents_csv, out_dir, import_dir,
                     timeout_ms, progress);
    }
    if (val->parsed()) return cmd_validate(validate_path);
    if (exp->parsed()) return cmd_export(export_src, export_dst);
    if (rep->parsed()) return cmd_replay_metrics(replay_path, replay_count);
    if (ag->parsed()) return cmd_agent(agent_id, listen, peers_csv);
  } catch (const dsim::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
