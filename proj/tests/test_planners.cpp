#include <doctest.h>

#include <cmath>
#include <memory>
#include <numeric>

#include "clonemap/aif_model.hpp"
#include "clonemap/envs.hpp"
#include "clonemap/errors.hpp"
#include "clonemap/planners.hpp"
#include "oracles.hpp"

using namespace clonemap;

namespace {

// Four symbols on a ring, one clone each; the single action steps to the
// previous index, so state k is k steps from state 0.
CloneHmm ring() {
  CloneHmm m({1, 1, 1, 1}, 1);
  for (std::size_t s = 0; s < 4; ++s) m.trans(0, s, (s + 3) % 4) = 1.0;
  return m;
}

// Two hidden states with distinct observations, identity dynamics.
AifModel two_state_identity() {
  CloneHmm m({1, 1}, 1);
  m.trans(0, 0, 0) = 1.0;
  m.trans(0, 1, 1) = 1.0;
  return to_aif(m);
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("conversion keeps the conditional transitions of every legal action") {
  Rng rng(21);
  for (int k = 0; k < 50; ++k) {
    CloneHmm m = oracle::random_model(rng, 6, 3);
    // Make one action illegal from state 0.
    if (m.n_actions() > 1) {
      for (std::size_t j = 0; j < m.n_states(); ++j) m.trans(1, 0, j) = 0.0;
      m.normalize_rows();
    }
    const AifModel g = to_aif(m);
    CHECK_NOTHROW(g.validate());
    REQUIRE(g.n_states == m.n_states() + 1);
    for (std::size_t a = 0; a < m.n_actions(); ++a) {
      for (std::size_t i = 0; i < m.n_states(); ++i) {
        const double mass = m.action_mass(a, i);
        if (mass < kIllegalActionMass) {
          CHECK(g.b(a, i, g.dispreferred_index) == 1.0);
          continue;
        }
        for (std::size_t j = 0; j < m.n_states(); ++j) {
          CHECK(std::abs(g.b(a, i, j) - m.trans(a, i, j) / mass) < 1e-12);
        }
      }
      CHECK(g.b(a, g.dispreferred_index, g.dispreferred_index) == 1.0);
    }
    for (std::size_t s = 0; s < m.n_states(); ++s) {
      CHECK(g.a(index(m.obs_of(s)), s) == 1.0);
      CHECK(g.d_vec[s] == doctest::Approx(1.0 / static_cast<double>(m.n_states())));
    }
    CHECK(g.d_vec[g.dispreferred_index] == 0.0);
  }
}

TEST_CASE("legal actions never reach the dispreferred state") {
  CloneHmm m({2, 1}, 2);
  m.trans(0, 0, 1) = 0.5;
  m.trans(0, 0, 2) = 0.5;
  m.trans(1, 1, 0) = 1.0;
  m.trans(0, 2, 0) = 0.3;
  m.trans(1, 2, 2) = 0.7;
  const AifModel g = to_aif(m);
  Rng rng(3);
  std::size_t s = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::size_t> legal;
    for (std::size_t a = 0; a < g.n_actions; ++a) {
      if (g.b(a, s, g.dispreferred_index) < 1.0) legal.push_back(a);
    }
    REQUIRE(!legal.empty());
    const std::size_t a = legal[rng.uniform_index(legal.size())];
    const auto row = g.b_row(a, s);
    s = rng.categorical(row);
    REQUIRE(s != g.dispreferred_index);
  }
  // The illegal action from clone 0 lands there and stays.
  CHECK(g.b(1, 0, g.dispreferred_index) == 1.0);
}

TEST_CASE("distances and preferences on a ring") {
  const AifModel g = to_aif(ring());
  const std::vector<std::size_t> goals{0};
  const DistanceMap d = distance_map(g, goals);
  CHECK(d.dist[0] == 0);
  CHECK(d.dist[1] == 1);
  CHECK(d.dist[2] == 2);
  CHECK(d.dist[3] == 3);
  CHECK(d.max_finite == 3);
  CHECK_FALSE(d.has_unreachable);
  const AifModel p = set_preference(g, d, 1.0);
  CHECK(p.c_vec == std::vector<double>{0.0, -1.0, -2.0, -3.0, -4.0});
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("unreachable states sit between the reachable ones and the dispreferred state") {
  // State 2 has no path to the goal.
  CloneHmm m({1, 1, 1}, 1);
  m.trans(0, 0, 0) = 1.0;
  m.trans(0, 1, 0) = 1.0;
  m.trans(0, 2, 2) = 1.0;
  const AifModel g = to_aif(m);
  const std::vector<std::size_t> goals{0};
  const DistanceMap d = distance_map(g, goals);
  CHECK(d.has_unreachable);
  CHECK(d.dist[2] == d.sentinel());
  const AifModel p = set_preference(g, d, 2.0);
  CHECK(p.c_vec[2] == -4.0);
  CHECK(p.c_vec[g.dispreferred_index] < p.c_vec[2]);
}

TEST_CASE("distance map satisfies the shortest-path recurrence") {
  Rng rng(22);
  for (int k = 0; k < 50; ++k) {
    CloneHmm m = oracle::random_model(rng, 7, 3);
    // Sparsify so distances are not all one.
    for (std::size_t a = 0; a < m.n_actions(); ++a) {
      for (std::size_t i = 0; i < m.n_states(); ++i) {
        for (std::size_t j = 0; j < m.n_states(); ++j) {
          if (rng.uniform() < 0.7 && i != j) m.trans(a, i, j) = 0.0;
        }
      }
    }
    m.normalize_rows();
    const AifModel g = to_aif(m);
    const std::vector<std::size_t> goals{0};
    const DistanceMap d = distance_map(g, goals);
    for (std::size_t s = 1; s + 1 < g.n_states; ++s) {
      if (!d.reachable(s)) continue;
      std::size_t best = static_cast<std::size_t>(-1);
      for (std::size_t t = 0; t + 1 < g.n_states; ++t) {
        bool edge = false;
        for (std::size_t a = 0; a < g.n_actions; ++a) edge = edge || g.b(a, s, t) > 1e-3;
        if (edge && d.reachable(t)) best = std::min(best, d.dist[t] + 1);
      }
      CHECK(d.dist[s] == best);
    }
  }
}

TEST_CASE("pruning drops rarely entered states") {
  CloneHmm m({2, 1}, 1);
  m.trans(0, 0, 0) = 0.5;
  m.trans(0, 0, 2) = 0.5;
  m.trans(0, 1, 0) = 1.0;
  m.trans(0, 2, 0) = 1.0 - 1e-6;
  m.trans(0, 2, 1) = 1e-6;
  // Clone 1 is only entered with probability 1e-6 from one source.
  const CloneHmm p = prune_states(m, 1e-4);
  CHECK_FALSE(p.active(1));
  CHECK(p.active(0));
  CHECK(p.active(2));
  CHECK(p.trans(0, 2, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(prune_states(m, 1.0), InvalidArgument);
}

TEST_CASE("rollout matches path enumeration") {
  Rng rng(23);
  for (int k = 0; k < 50; ++k) {
    const AifModel g = oracle::random_aif(rng, 5, 4, 3);
    const Belief b = oracle::random_belief(rng, g.n_states);
    Policy pi;
    for (std::size_t d = 0; d < 1 + rng.uniform_index(3); ++d) {
      pi.actions.push_back(action_id(rng.uniform_index(g.n_actions)));
    }
    const auto r = rollout(g, b, pi);
    REQUIRE(r.states.size() == pi.actions.size());
    // Brute force over every path of the full horizon.
    const std::size_t T = pi.actions.size();
    std::vector<std::size_t> path(T + 1, 0);
    std::vector<double> last(g.n_states, 0.0);
    while (true) {
      double w = b[path[0]];
      for (std::size_t t = 0; t < T; ++t) w *= g.b(index(pi.actions[t]), path[t], path[t + 1]);
      last[path[T]] += w;
      std::size_t i = 0;
      while (i <= T && ++path[i] == g.n_states) path[i++] = 0;
      if (i > T) break;
    }
    for (std::size_t s = 0; s < g.n_states; ++s) CHECK(std::abs(r.states.back()[s] - last[s]) < 1e-12);
    CHECK(sum(r.outcomes.back()) == doctest::Approx(1.0));
  }
}

TEST_CASE("expected free energy matches the enumeration oracle") {
  Rng rng(24);
  for (int k = 0; k < 100; ++k) {
    const AifModel g = oracle::random_aif(rng, 5, 4, 3);
    const Belief b = oracle::random_belief(rng, g.n_states);
    Policy pi;
    for (std::size_t d = 0; d < 1 + rng.uniform_index(4); ++d) {
      pi.actions.push_back(action_id(rng.uniform_index(g.n_actions)));
    }
    const auto got = efe(g, b, pi);
    const auto want = oracle::efe(g, b, pi);
    CAPTURE(k);
    CHECK(std::abs(got.total - want.total) < 1e-10);
    REQUIRE(got.epistemic.size() == pi.actions.size());
    for (std::size_t t = 0; t < pi.actions.size(); ++t) {
      CHECK(got.epistemic[t] >= -1e-12);
      CHECK(std::abs(got.epistemic[t] - want.epistemic[t]) < 1e-10);
      CHECK(std::abs(got.pragmatic[t] - want.pragmatic[t]) < 1e-10);
    }
  }
}

TEST_CASE("information gain of an even split is ln 2") {
  const AifModel g = two_state_identity();
  const Belief b{{0.5, 0.5, 0.0}};
  const auto r = efe(g, b, Policy{{action_id(0)}});
  CHECK(r.epistemic[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(r.pragmatic[0] == doctest::Approx(0.0));
  CHECK(r.total == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  // A certain belief gains nothing.
  const auto sure = efe(g, Belief{{1.0, 0.0, 0.0}}, Policy{{action_id(0)}});
  CHECK(std::abs(sure.epistemic[0]) < 1e-15);
}

TEST_CASE("policy posterior is a stable softmax") {
  const std::vector<double> g{0.0, 1.0};
  const auto q = policy_posterior(g, 1.0);
  const double e = std::exp(1.0);
  CHECK(q[0] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
  // Shifting every G leaves the posterior unchanged, even far from zero.
  const std::vector<double> shifted{1e4, 1e4 + 1.0};
  const auto qs = policy_posterior(shifted, 1.0);
  CHECK(qs[0] == doctest::Approx(q[0]).epsilon(1e-12));
  const auto flat = policy_posterior(g, 0.0);
  CHECK(flat[0] == doctest::Approx(0.5));
  const std::vector<double> bad{0.0, std::nan("")};
  CHECK_THROWS_AS(policy_posterior(bad, 1.0), InvalidArgument);
}

TEST_CASE("policy enumeration") {
  const auto p = enumerate_policies(3, 2, 100);
  REQUIRE(p.size() == 9);
  CHECK(p[0].actions == std::vector<ActionId>{action_id(0), action_id(0)});
  CHECK(p[1].actions == std::vector<ActionId>{action_id(0), action_id(1)});
  CHECK(p[8].actions == std::vector<ActionId>{action_id(2), action_id(2)});
  CHECK(enumerate_policies(4, 3, 1000).size() == 64);
  CHECK_THROWS_AS(enumerate_policies(4, 6, 1000), ConfigError);
  CHECK_THROWS_AS(enumerate_policies(3, 0, 100), ConfigError);
}

TEST_CASE("agent policy values agree with the reference expected free energy") {
  Rng rng(25);
  for (int k = 0; k < 30; ++k) {
    AifModel g = oracle::random_aif(rng, 5, 4, 3);
    auto shared = std::make_shared<const AifModel>(g);
    PlannerConfig cfg;
    cfg.horizon = 1 + rng.uniform_index(3);
    cfg.seed = static_cast<std::uint64_t>(k);
    AifAgent agent(shared, cfg);
    const ObsId first = obs_id(rng.uniform_index(g.n_obs));
    agent.reset(first);
    const Belief b = agent.belief();
    CHECK(b.probs == aif_initial_belief(g, first).probs);
    agent.act();
    const auto policies = enumerate_policies(g.n_actions, cfg.horizon, cfg.max_policies);
    REQUIRE(agent.last_g().size() == policies.size());
    for (std::size_t i = 0; i < policies.size(); ++i) {
      CHECK(std::abs(agent.last_g()[i] - efe(g, b, policies[i]).total) < 1e-10);
    }
    CHECK(sum(agent.last_action_probs()) == doctest::Approx(1.0));
  }
}

TEST_CASE("generative-model filter matches enumeration") {
  Rng rng(26);
  for (int k = 0; k < 100; ++k) {
    const AifModel g = oracle::random_aif(rng, 5, 4, 3);
    Belief b = oracle::random_belief(rng, g.n_states);
    const std::vector<double> prior = b.probs;
    std::vector<std::size_t> acts, obs;
    // Sample observations from the model so the update has support.
    std::size_t s = rng.categorical(prior);
    for (std::size_t t = 0; t < 1 + rng.uniform_index(4); ++t) {
      const std::size_t a = rng.uniform_index(g.n_actions);
      s = rng.categorical(g.b_row(a, s));
      std::vector<double> col(g.n_obs);
      for (std::size_t o = 0; o < g.n_obs; ++o) col[o] = g.a(o, s);
      const std::size_t o = rng.categorical(col);
      acts.push_back(a);
      obs.push_back(o);
      b = aif_filter(g, b, action_id(a), obs_id(o));
    }
    const auto want = oracle::aif_filter(g, prior, acts, obs);
    for (std::size_t i = 0; i < g.n_states; ++i) CHECK(std::abs(b[i] - want[i]) < 1e-10);
  }
}

TEST_CASE("greedy plans follow shortest paths") {
  const CloneHmm m = ring();
  const std::vector<std::size_t> goals{0};
  for (std::size_t s = 1; s < 4; ++s) {
    const auto plan = plan_from_state(m, s, goals, 10);
    REQUIRE(plan);
    CHECK(plan->actions.size() == s);
    CHECK(plan->states.back() == 0);
  }
  // Plans have at least one step even from a goal state.
  const auto loop = plan_from_state(m, 0, goals, 10);
  REQUIRE(loop);
  CHECK(loop->actions.size() == 4);
  CHECK_FALSE(plan_from_state(m, 3, goals, 2));
}

TEST_CASE("greedy plan length equals graph distance on random models") {
  Rng rng(27);
  for (int k = 0; k < 50; ++k) {
    CloneHmm m = oracle::random_model(rng, 7, 3);
    for (std::size_t a = 0; a < m.n_actions(); ++a) {
      for (std::size_t i = 0; i < m.n_states(); ++i) {
        for (std::size_t j = 0; j < m.n_states(); ++j) {
          if (rng.uniform() < 0.75 && i != j) m.trans(a, i, j) = 0.0;
        }
      }
    }
    m.normalize_rows();
    const std::vector<std::size_t> goals{0};
    const AifModel g = to_aif(m);
    const DistanceMap d = distance_map(g, goals, 0.0);
    for (std::size_t s = 1; s < m.n_states(); ++s) {
      const auto plan = plan_from_state(m, s, goals, 64);
      CHECK(static_cast<bool>(plan) == d.reachable(s));
      if (plan) CHECK(plan->actions.size() == d.dist[s]);
    }
  }
}

TEST_CASE("greedy start state is sampled from the belief") {
  const CloneHmm m = ring();
  const std::vector<std::size_t> goals{0};
  const Belief b{{0.0, 0.3, 0.7, 0.0}};
  Rng rng(5);
  int from_two = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const auto r = greedy_plan(m, b, goals, 10, rng);
    REQUIRE(r.policy);
    if (r.chosen_state == 2) {
      ++from_two;
      CHECK(r.policy->actions.size() == 2);
    }
  }
  CHECK(std::abs(from_two / static_cast<double>(n) - 0.7) < 0.04);
  // A collapsed belief always uses its peak.
  const auto sure = greedy_plan(m, Belief{{0.0, 0.995, 0.005, 0.0}}, goals, 10, rng);
  CHECK(sure.chosen_state == 1);
}

TEST_CASE("random agent is uniform and reproducible") {
  RandomAgent a(4, 9), b(4, 9);
  std::vector<int> counts(4, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const ActionId x = a.act();
    CHECK(x == b.act());
    ++counts[index(x)];
  }
  for (int c : counts) CHECK(std::abs(c / static_cast<double>(n) - 0.25) < 0.02);
  RandomAgent one(1, 0);
  CHECK(index(one.act()) == 0);
  CHECK_THROWS_AS(RandomAgent(0, 0), InvalidArgument);
}

TEST_CASE("on the true T-maze model the best first move looks for the cue") {
  auto reg = std::make_shared<ObsRegistry>();
  TMazeEnv env(reg, default_tmaze_layout(), 50);
  *reg = exhaustive_registry(env);
  const CloneHmm truth = oracle::ground_truth_model(env, 4000, 50, 1);
  const AifModel base = to_aif(truth);
  const auto goal_obs = std::vector<ObsId>{*reg->find(std::string(TMazeEnv::kRewardKey))};
  const auto goals = goal_states(base, goal_obs);
  auto model = std::make_shared<const AifModel>(set_preference(base, distance_map(base, goals), 0.2));

  PlannerConfig cfg;
  cfg.horizon = 3;
  cfg.action_selection = ActionSelection::kArgmax;
  AifAgent agent(model, cfg);
  const auto start = env.reset(0);
  agent.reset(start.obs);
  const ActionId a = agent.act();
  CHECK(a != action_id(TMazeEnv::kForward));
}

TEST_CASE("greedy agent walks the shortest path and falls back when stuck") {
  auto m = std::make_shared<const CloneHmm>(ring());
  for (bool commit : {false, true}) {
    GreedyConfig cfg;
    cfg.commit_until_contradicted = commit;
    GreedyAgent agent(m, {0}, cfg);
    agent.reset(obs_id(3));
    std::size_t s = 3, steps = 0;
    while (s != 0 && steps < 10) {
      const ActionId a = agent.act();
      s = (s + 3) % 4;
      agent.observe(a, obs_id(s));
      ++steps;
    }
    CHECK(steps == 3);
    CHECK(agent.fallback_count() == 0);
  }
  // State 1 cannot reach the goal: every act() is a logged random fallback.
  CloneHmm split({1, 1}, 2);
  split.trans(0, 0, 0) = 0.5;
  split.trans(1, 0, 0) = 0.5;
  split.trans(0, 1, 1) = 0.5;
  split.trans(1, 1, 1) = 0.5;
  GreedyAgent stuck(std::make_shared<const CloneHmm>(split), {0}, GreedyConfig{});
  stuck.reset(obs_id(1));
  stuck.act();
  CHECK(stuck.fallback_count() == 1);
  CHECK(stuck.last_trace().fallback);
}
