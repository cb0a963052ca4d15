#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clonemap/aif_model.hpp"
#include "clonemap/clone_hmm.hpp"
#include "clonemap/envs.hpp"
#include "clonemap/planners.hpp"
#include "clonemap/stats.hpp"

namespace clonemap {

enum class AgentKind { kRandom, kGreedy, kAif };

std::string_view to_string(AgentKind kind);
AgentKind agent_kind_from_string(std::string_view name);

struct AgentSpec {
  AgentKind kind = AgentKind::kRandom;
  /// Report label; defaults to the kind name.
  std::string name;
  PlannerConfig aif;
  GreedyConfig greedy;
  double preference_scale = 1.0;
};

/// Everything needed to instantiate environments and agents for one trial.
/// Preference-shaped generative models are cached per goal set.
class TrialContext {
 public:
  TrialContext(EnvKind kind, GridLayout layout, std::shared_ptr<ObsRegistry> registry,
               std::size_t step_cap, std::shared_ptr<const CloneHmm> model, double support_eps,
               double prune_threshold);

  /// Environment-only context for runs with nothing but random agents.
  TrialContext(EnvKind kind, GridLayout layout, std::shared_ptr<ObsRegistry> registry,
               std::size_t step_cap);

  std::unique_ptr<GridEnv> make_env() const;
  std::unique_ptr<Agent> make_agent(const AgentSpec& spec, const std::vector<ObsId>& goal_obs,
                                    std::uint64_t seed) const;

  EnvKind env_kind() const noexcept { return kind_; }
  std::size_t step_cap() const noexcept { return step_cap_; }
  const CloneHmm* model() const noexcept { return model_.get(); }
  const AifModel* base_aif() const noexcept { return aif_.get(); }
  /// Generative model with preferences for `goal_obs` at `scale`.
  std::shared_ptr<const AifModel> preferred_model(const std::vector<ObsId>& goal_obs,
                                                  double scale) const;

 private:
  EnvKind kind_;
  GridLayout layout_;
  std::shared_ptr<ObsRegistry> registry_;
  std::size_t step_cap_;
  std::shared_ptr<const CloneHmm> model_;
  std::shared_ptr<const AifModel> aif_;
  double support_eps_ = 1e-3;

  mutable std::mutex cache_mutex_;
  mutable std::map<std::pair<std::vector<ObsId>, double>, std::shared_ptr<const AifModel>> aif_cache_;
  mutable std::map<std::vector<ObsId>, std::vector<std::size_t>> goal_cache_;
};

struct TrialRecord {
  std::size_t trial_index = 0;
  std::uint64_t seed = 0;
  std::string agent;
  std::size_t steps = 0;
  bool success = false;
  ObsId initial_obs{};
  std::string trace_path;
};

struct AgentSummary {
  std::string agent;
  std::size_t n_trials = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  /// Episode lengths of successful trials only.
  Summary lengths;
};

struct PairwiseTest {
  std::string first;
  std::string second;
  std::string metric;  // "episode_length" or "success_rate"
  TestResult result;
};

struct TrialReport {
  int version = 1;
  std::string env;
  std::uint64_t base_seed = 0;
  std::size_t n_trials = 0;
  std::size_t step_cap = 0;
  std::string config_hash;
  std::vector<std::string> agents;
  std::vector<TrialRecord> records;  // ordered by (trial, agent)
  std::vector<AgentSummary> summaries;
  std::vector<PairwiseTest> tests;

  const AgentSummary& summary(const std::string& agent) const;
  const PairwiseTest* test(const std::string& a, const std::string& b,
                           const std::string& metric) const;
  /// Episode lengths of one agent's successful trials.
  std::vector<double> success_lengths(const std::string& agent) const;
};

struct RunOptions {
  std::size_t n_trials = 400;
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;
  bool welch = false;
  /// Per-step JSONL traces are written here when set.
  std::optional<std::filesystem::path> trace_dir;
};

/// Paired design: trial i resets every agent's environment with seed
/// base_seed + i. Throws ConfigError on an action-space mismatch.
TrialReport run_trials(const TrialContext& ctx, const std::vector<AgentSpec>& agents,
                       const RunOptions& opts);

/// Recomputes summaries and pairwise tests from `report.records`.
void summarize_report(TrialReport& report, bool welch = false);

nlohmann::json report_to_json(const TrialReport& report);
TrialReport report_from_json(const nlohmann::json& doc);

/// Human-readable fixed-width table.
std::string format_report_table(const TrialReport& report);

/// Writes summary.txt, report.json, trials.csv and lengths_<agent>.csv.
void emit_report(const TrialReport& report, const std::filesystem::path& out_dir);

/// A threshold on a report quantity, e.g. {"agent": "aif", "metric":
/// "success_rate", "op": ">=", "value": 0.99} or {"agents": ["aif", "greedy"],
/// "metric": "length_p", "op": "<", "value": 1e-3}.
struct Check {
  std::vector<std::string> agents;
  std::string metric;
  std::string op;
  double value = 0.0;
};

std::vector<Check> checks_from_json(const nlohmann::json& doc);
/// Returns one message per violated check.
std::vector<std::string> evaluate_checks(const TrialReport& report, const std::vector<Check>& checks);

}  // namespace clonemap
