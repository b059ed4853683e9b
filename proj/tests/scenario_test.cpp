#include "dsim/scenario.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace dsim {
namespace {

bool has_error_containing(const std::vector<std::string>& errors,
                          const std::string& needle) {
  return std::any_of(errors.begin(), errors.end(),
                     [&needle](const std::string& e) {
                       return e.find(needle) != std::string::npos;
                     });
}

TEST(ScenarioParseTest, AcceptsCompletePingpongScenario) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": "pingpong-smoke",
    "seed": 7,
    "horizon": 100000,
    "lookahead": 1,
    "participants": "local:3",
    "worker_pool": 8,
    "metrics": {"mode": "synthetic",
                "synthetic": [{"cpu": 0.25, "mem": 0.5, "lp_count": 2}]},
    "model": {"kind": "pingpong", "rounds": 50, "reply_delay": 3,
              "wakeup_every": 10}
  })");
  ASSERT_TRUE(p.errors.empty()) << p.errors.front();
  ASSERT_TRUE(p.config.has_value());
  const ScenarioConfig& c = *p.config;
  EXPECT_EQ(c.name, "pingpong-smoke");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.horizon, VirtualTime(100000));
  EXPECT_EQ(c.lookahead, VirtualTime(1));
  EXPECT_EQ(c.local_agents, 3u);
  EXPECT_EQ(c.worker_pool, 8u);
  EXPECT_EQ(c.metrics.mode, "synthetic");
  ASSERT_EQ(c.metrics.synthetic.size(), 1u);
  EXPECT_DOUBLE_EQ(c.metrics.synthetic[0].cpu, 0.25);
  EXPECT_EQ(c.model.kind, "pingpong");
  EXPECT_EQ(c.model.rounds, 50);
  EXPECT_EQ(c.model.wakeup_every, 10);
}

TEST(ScenarioParseTest, DefaultsApplyWhenFieldsOmitted) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": "tiny", "horizon": 10,
    "model": {"kind": "stream"}
  })");
  ASSERT_TRUE(p.config.has_value());
  EXPECT_EQ(p.config->seed, 1u);
  EXPECT_EQ(p.config->lookahead, VirtualTime(1));
  EXPECT_EQ(p.config->local_agents, 1u);
  EXPECT_EQ(p.config->worker_pool, 4u);
  EXPECT_EQ(p.config->deadlock_timeout_ms, 5000);
  EXPECT_EQ(p.config->metrics.mode, "synthetic");
}

TEST(ScenarioParseTest, ReportsEveryProblemNotJustTheFirst) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": "broken",
    "horizon": -5,
    "lookahead": -1,
    "worker_pool": 0,
    "participants": "local:0",
    "model": {"kind": "warp-drive"}
  })");
  EXPECT_FALSE(p.config.has_value());
  EXPECT_GE(p.errors.size(), 5u);
  EXPECT_TRUE(has_error_containing(p.errors, "horizon"));
  EXPECT_TRUE(has_error_containing(p.errors, "lookahead"));
  EXPECT_TRUE(has_error_containing(p.errors, "worker_pool"));
  EXPECT_TRUE(has_error_containing(p.errors, "local:N"));
  EXPECT_TRUE(has_error_containing(p.errors, "warp-drive"));
}

TEST(ScenarioParseTest, MalformedJsonIsASingleClearError) {
  ScenarioParse p = parse_scenario_text("{\"name\": \"x\",,}");
  EXPECT_FALSE(p.config.has_value());
  ASSERT_EQ(p.errors.size(), 1u);
  EXPECT_TRUE(has_error_containing(p.errors, "malformed"));
}

TEST(ScenarioParseTest, MissingRequiredFieldsAreListed) {
  ScenarioParse p = parse_scenario_text(R"({"seed": 3})");
  EXPECT_FALSE(p.config.has_value());
  EXPECT_TRUE(has_error_containing(p.errors, "name is required"));
  EXPECT_TRUE(has_error_containing(p.errors, "horizon is required"));
  EXPECT_TRUE(has_error_containing(p.errors, "model section is required"));
}

TEST(ScenarioParseTest, ParticipantsAcceptAddressList) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": "netted", "horizon": 10,
    "participants": ["127.0.0.1:4001", "127.0.0.1:4002"],
    "model": {"kind": "pingpong"}
  })");
  ASSERT_TRUE(p.config.has_value());
  ASSERT_EQ(p.config->agent_addresses.size(), 2u);
  EXPECT_EQ(p.config->agent_addresses[0], "127.0.0.1:4001");
}

TEST(ScenarioParseTest, JobsModelChecksResourceReferences) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": "grid", "horizon": 1000,
    "model": {
      "kind": "jobs",
      "centers": [
        {"name": "c1",
         "cpus": [{"id": "cpu-1", "power": 10}],
         "links": [{"id": "lan-1", "bandwidth": 100, "kind": "LAN"}],
         "dbs": [{"id": "db-1", "capacity": 500}]}
      ],
      "jobs": [
        {"at": 10, "kind": "PROCESSING", "demand": 50, "resources": ["cpu-1"]},
        {"at": 20, "kind": "TRANSFER", "demand": 5, "resources": ["no-such"]},
        {"at": 2000, "kind": "PROCESSING", "demand": 1, "resources": ["cpu-1"]}
      ]
    }
  })");
  EXPECT_FALSE(p.config.has_value());
  EXPECT_TRUE(has_error_containing(p.errors, "undeclared resource 'no-such'"));
  EXPECT_TRUE(has_error_containing(p.errors, "beyond the horizon"));
}

TEST(ScenarioParseTest, JobsModelRejectsDuplicateComponentIds) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": "grid", "horizon": 1000,
    "model": {
      "kind": "jobs",
      "centers": [
        {"name": "c1", "cpus": [{"id": "cpu-1"}]},
        {"name": "c1", "links": [{"id": "cpu-1", "bandwidth": 5}]}
      ],
      "jobs": []
    }
  })");
  EXPECT_FALSE(p.config.has_value());
  EXPECT_TRUE(has_error_containing(p.errors, "duplicate center name 'c1'"));
  EXPECT_TRUE(has_error_containing(p.errors, "duplicate component id 'cpu-1'"));
}

TEST(ScenarioParseTest, StorageModelCrossChecksObjectSizeAgainstCapacity) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": "st", "horizon": 1000,
    "model": {"kind": "storage", "events": 10, "objects": 4,
              "max_object_size": 700, "db_capacity": 600}
  })");
  EXPECT_FALSE(p.config.has_value());
  EXPECT_TRUE(has_error_containing(p.errors, "max_object_size"));
}

TEST(ScenarioParseTest, ReplayMetricsRequireAFile) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": "m", "horizon": 10,
    "metrics": {"mode": "replay"},
    "model": {"kind": "stream"}
  })");
  EXPECT_FALSE(p.config.has_value());
  EXPECT_TRUE(has_error_containing(p.errors, "metrics.file"));
}

TEST(ScenarioParseTest, WrongTypesAreReportedPerField) {
  ScenarioParse p = parse_scenario_text(R"({
    "name": 12, "horizon": "wide",
    "model": {"kind": "pingpong", "rounds": "many"}
  })");
  EXPECT_FALSE(p.config.has_value());
  EXPECT_TRUE(has_error_containing(p.errors, "name has the wrong type"));
  EXPECT_TRUE(has_error_containing(p.errors, "horizon has the wrong type"));
  EXPECT_TRUE(has_error_containing(p.errors, "rounds has the wrong type"));
}

TEST(ScenarioParseTest, LoadFileThrowsWithAllErrorsJoined) {
  EXPECT_THROW(load_scenario_file("/nonexistent/path.json"), ConfigError);
  try {
    load_scenario_file("/nonexistent/path.json");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cannot open"), std::string::npos);
  }
}

}  // namespace
}  // namespace dsim
