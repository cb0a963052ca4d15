#include <doctest.h>

#include <filesystem>
#include <memory>

#include "clonemap/errors.hpp"
#include "clonemap/harness.hpp"
#include "clonemap/pipeline.hpp"
#include "oracles.hpp"

using namespace clonemap;

namespace {

GridLayout small_maze() { return parse_layout("######\n#..r.#\n#r.g.#\n#.r..#\n######\n"); }

struct Fixture {
  std::shared_ptr<ObsRegistry> reg;
  std::unique_ptr<TrialContext> ctx;

  Fixture() {
    reg = std::make_shared<ObsRegistry>();
    MazeEnv probe(reg, small_maze(), 1000000);
    *reg = exhaustive_registry(probe);
    auto model = std::make_shared<const CloneHmm>(oracle::ground_truth_model(probe, 1, 20000, 4));
    ctx = std::make_unique<TrialContext>(EnvKind::kMaze, small_maze(), reg, 15, model, 1e-3, 1e-4);
  }
};

std::vector<AgentSpec> all_agents() {
  AgentSpec r, g, a;
  r.kind = AgentKind::kRandom;
  g.kind = AgentKind::kGreedy;
  a.kind = AgentKind::kAif;
  a.aif.horizon = 2;
  return {r, g, a};
}

}  // namespace

TEST_CASE("trials are paired and reproducible") {
  Fixture f;
  RunOptions opts;
  opts.n_trials = 60;
  opts.base_seed = 7;
  const auto rep = run_trials(*f.ctx, all_agents(), opts);
  REQUIRE(rep.records.size() == 180);
  for (std::size_t i = 0; i < 60; ++i) {
    const auto& a = rep.records[3 * i];
    CHECK(a.seed == 7 + i);
    for (std::size_t k = 1; k < 3; ++k) {
      CHECK(rep.records[3 * i + k].trial_index == i);
      CHECK(rep.records[3 * i + k].initial_obs == a.initial_obs);
    }
  }
  const auto again = run_trials(*f.ctx, all_agents(), opts);
  for (std::size_t k = 0; k < rep.records.size(); ++k) {
    CHECK(again.records[k].steps == rep.records[k].steps);
    CHECK(again.records[k].success == rep.records[k].success);
  }
  opts.jobs = 3;
  const auto threaded = run_trials(*f.ctx, all_agents(), opts);
  for (std::size_t k = 0; k < rep.records.size(); ++k) {
    CHECK(threaded.records[k].steps == rep.records[k].steps);
  }
}

TEST_CASE("planners beat the random walk on the true model") {
  Fixture f;
  RunOptions opts;
  opts.n_trials = 100;
  const auto rep = run_trials(*f.ctx, all_agents(), opts);
  CHECK(rep.summary("greedy").success_rate == 1.0);
  CHECK(rep.summary("aif").success_rate == 1.0);
  CHECK(rep.summary("random").lengths.mean > rep.summary("greedy").lengths.mean);
  REQUIRE(rep.test("random", "greedy", "episode_length") != nullptr);
}

TEST_CASE("report JSON round-trip") {
  Fixture f;
  RunOptions opts;
  opts.n_trials = 20;
  const auto rep = run_trials(*f.ctx, all_agents(), opts);
  const auto back = report_from_json(report_to_json(rep));
  CHECK(report_to_json(back) == report_to_json(rep));
  CHECK(back.summaries.size() == 3);
  CHECK(back.tests.size() == 6);
  const auto dir = std::filesystem::temp_directory_path() / "clonemap_report_test";
  emit_report(rep, dir);
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "lengths_aif.csv"));
  CHECK(cmd_report(dir).find("aif") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checks compare report quantities") {
  TrialReport rep;
  rep.agents = {"a", "b"};
  for (std::size_t i = 0; i < 10; ++i) {
    rep.records.push_back({i, i, "a", 3 + i % 2, true, obs_id(0), ""});
    rep.records.push_back({i, i, "b", 8 + i % 3, i < 6, obs_id(0), ""});
  }
  summarize_report(rep);
  const auto checks = checks_from_json(nlohmann::json::parse(R"([
    {"agent": "a", "metric": "success_rate", "op": ">=", "value": 1.0},
    {"agent": "b", "metric": "success_rate", "op": ">", "value": 0.9},
    {"agents": ["a", "b"], "metric": "mean_length_diff", "op": "<", "value": 0},
    {"agents": ["a", "b"], "metric": "length_p", "op": "<", "value": 1e-3}
  ])"));
  const auto bad = evaluate_checks(rep, checks);
  REQUIRE(bad.size() == 1);
  CHECK(bad[0].find("success_rate(b)") != std::string::npos);
  CHECK_THROWS_AS(checks_from_json(nlohmann::json::parse(R"([{"agent": "a", "metric": "length_p", "op": "<", "value": 1}])")),
                  ConfigError);
  CHECK_THROWS_AS(checks_from_json(nlohmann::json::parse(R"([{"agent": "a", "metric": "success_rate", "op": "=", "value": 1}])")),
                  ConfigError);
}

TEST_CASE("config hash tracks every field") {
  const auto doc = nlohmann::json::parse(R"({
    "name": "t", "environment": {"kind": "maze"},
    "collect": {"steps": 100, "seed": 1},
    "model": {"clones_per_obs": 3, "em_iters": 5},
    "agents": [{"agent": "random"}],
    "eval": {"n_trials": 4}
  })");
  const auto a = config_from_json(doc);
  const auto b = config_from_json(doc);
  CHECK(config_hash(a) == config_hash(b));
  auto changed = doc;
  changed["collect"]["seed"] = 2;
  CHECK(config_hash(config_from_json(changed)) != config_hash(a));
  // Resolved configs reproduce themselves.
  CHECK(config_hash(config_from_json(config_to_json(a))) == config_hash(a));
  auto broken = doc;
  broken["model"]["restarts"] = 0;
  CHECK_THROWS_AS(config_from_json(broken), ConfigError);
}
