#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clonemap/aif_model.hpp"
#include "clonemap/clone_hmm.hpp"
#include "clonemap/random.hpp"
#include "clonemap/types.hpp"

namespace clonemap {

struct Policy {
  std::vector<ActionId> actions;
  bool operator==(const Policy&) const = default;
};

/// Per-step decomposition of expected free energy for one policy.
/// total = sum over steps of (-epistemic - pragmatic).
struct EfeBreakdown {
  double total = 0.0;
  std::vector<double> epistemic;
  std::vector<double> pragmatic;
  std::size_t horizon = 0;
};

enum class ActionSelection { kSample, kArgmax };

struct PlannerConfig {
  double gamma = 16.0;
  std::size_t horizon = 3;
  ActionSelection action_selection = ActionSelection::kSample;
  std::uint64_t seed = 0;
  std::size_t max_policies = 100000;
};

struct GreedyConfig {
  double collapse_threshold = 0.99;
  std::size_t max_plan_len = 64;
  bool commit_until_contradicted = false;
  std::uint64_t seed = 0;
};

/// All n_actions^horizon policies in lexicographic order. Throws ConfigError
/// if that count exceeds `cap`.
std::vector<Policy> enumerate_policies(std::size_t n_actions, std::size_t horizon, std::size_t cap);

struct RolloutResult {
  std::vector<std::vector<double>> states;    // Q(s_tau | pi), tau = 1..T
  std::vector<std::vector<double>> outcomes;  // Q(o_tau | pi)
};

RolloutResult rollout(const AifModel& model, const Belief& belief, const Policy& policy);
EfeBreakdown efe(const AifModel& model, const Belief& belief, const Policy& policy);

/// softmax(-gamma * G), computed with max subtraction.
std::vector<double> policy_posterior(std::span<const double> g_values, double gamma);

// --- greedy clone-graph planning ----------------------------------------------

struct GreedyPlan {
  std::size_t start_state = 0;
  std::vector<ActionId> actions;
  /// States visited after each action; back() is a goal state.
  std::vector<std::size_t> states;
};

/// Forward max-product message passing from `start` over the transition
/// support until a goal state receives probability, then backtracking.
/// Only paths of length >= 1 are considered.
std::optional<GreedyPlan> plan_from_state(const CloneHmm& model, std::size_t start,
                                          std::span<const std::size_t> goals,
                                          std::size_t max_len);

struct GreedyPlanResult {
  std::optional<Policy> policy;
  std::size_t chosen_state = 0;
  /// Plan per start state with belief above 1e-9 (nullopt where none exists).
  std::vector<std::pair<std::size_t, std::optional<GreedyPlan>>> per_state;
};

/// Computes a plan for every plausible start state and adopts the plan of a
/// state sampled from the belief (or of the argmax state once the belief
/// exceeds `collapse_threshold`).
GreedyPlanResult greedy_plan(const CloneHmm& model, const Belief& belief,
                             std::span<const std::size_t> goals, std::size_t max_len, Rng& rng,
                             double collapse_threshold = 0.99);

// --- agents -----------------------------------------------------------------

struct StepTrace {
  double belief_entropy = 0.0;
  double g_min = std::numeric_limits<double>::quiet_NaN();
  std::vector<ActionId> chosen_policy;
  bool fallback = false;
};

/// Common agent contract: reset() with the first observation, then
/// alternate act() and observe().
class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::string_view name() const = 0;
  virtual void reset(ObsId first_obs) = 0;
  virtual void observe(ActionId action, ObsId obs) = 0;
  virtual ActionId act() = 0;
  virtual const StepTrace& last_trace() const { return trace_; }

 protected:
  StepTrace trace_;
};

class RandomAgent final : public Agent {
 public:
  RandomAgent(std::size_t n_actions, std::uint64_t seed);
  std::string_view name() const override { return "random"; }
  void reset(ObsId) override {}
  void observe(ActionId, ObsId) override {}
  ActionId act() override;

 private:
  std::size_t n_actions_;
  Rng rng_;
};

class GreedyAgent final : public Agent {
 public:
  GreedyAgent(std::shared_ptr<const CloneHmm> model, std::vector<std::size_t> goals,
              GreedyConfig config);
  std::string_view name() const override { return "greedy"; }
  void reset(ObsId first_obs) override;
  void observe(ActionId action, ObsId obs) override;
  ActionId act() override;

  const Belief& belief() const noexcept { return belief_; }
  std::size_t fallback_count() const noexcept { return fallbacks_; }

 private:
  struct Graph;
  std::shared_ptr<const CloneHmm> model_;
  std::shared_ptr<const Graph> graph_;
  std::vector<std::size_t> goals_;
  GreedyConfig config_;
  Rng rng_;
  Belief belief_;
  std::optional<GreedyPlan> committed_;
  std::size_t committed_step_ = 0;
  std::size_t fallbacks_ = 0;
};

namespace detail {
struct CompiledAif;
}

class AifAgent final : public Agent {
 public:
  /// `model` must already carry preferences.
  AifAgent(std::shared_ptr<const AifModel> model, PlannerConfig config);
  ~AifAgent() override;
  std::string_view name() const override { return "aif"; }
  void reset(ObsId first_obs) override;
  void observe(ActionId action, ObsId obs) override;
  ActionId act() override;

  const Belief& belief() const noexcept { return belief_; }
  /// G for every enumerated policy at the last act() call, lexicographic order.
  const std::vector<double>& last_g() const noexcept { return last_g_; }
  /// Marginal probability of each first action at the last act() call.
  const std::vector<double>& last_action_probs() const noexcept { return last_action_probs_; }

 private:
  std::shared_ptr<const AifModel> model_;
  PlannerConfig config_;
  std::unique_ptr<detail::CompiledAif> compiled_;
  std::size_t n_policies_ = 0;
  Rng rng_;
  Belief belief_;
  std::vector<double> last_g_;
  std::vector<double> last_action_probs_;
};

/// Bayes filter through A and B of a generative model; resets to the prior
/// restricted to states emitting `obs` when the update has mass below 1e-12.
Belief aif_filter(const AifModel& model, const Belief& prior, ActionId action, ObsId obs);
Belief aif_initial_belief(const AifModel& model, ObsId obs);

}  // namespace clonemap
