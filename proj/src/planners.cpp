#include "clonemap/planners.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "clonemap/errors.hpp"

namespace clonemap {

// --- generative model in sparse form -----------------------------------------

namespace detail {

struct CompiledAif {
  struct Entry {
    std::size_t state;
    double p;
  };
  std::size_t n_states = 0;
  std::size_t n_obs = 0;
  std::size_t n_actions = 0;
  std::vector<std::vector<Entry>> b_rows;      // [action * n_states + from] -> targets
  std::vector<std::vector<Entry>> emitters;    // [obs] -> states with A > 0
  std::vector<double> c_vec;

  explicit CompiledAif(const AifModel& m)
      : n_states(m.n_states), n_obs(m.n_obs), n_actions(m.n_actions), c_vec(m.c_vec) {
    b_rows.resize(n_actions * n_states);
    for (std::size_t a = 0; a < n_actions; ++a) {
      for (std::size_t s = 0; s < n_states; ++s) {
        const auto r = m.b_row(a, s);
        auto& out = b_rows[a * n_states + s];
        for (std::size_t t = 0; t < n_states; ++t) {
          if (r[t] > 0.0) out.push_back({t, r[t]});
        }
      }
    }
    emitters.resize(n_obs);
    for (std::size_t o = 0; o < n_obs; ++o) {
      for (std::size_t s = 0; s < n_states; ++s) {
        if (m.a(o, s) > 0.0) emitters[o].push_back({s, m.a(o, s)});
      }
    }
  }

  void predict(std::span<const double> qs, std::size_t action, std::vector<double>& out) const {
    out.assign(n_states, 0.0);
    for (std::size_t s = 0; s < n_states; ++s) {
      const double p = qs[s];
      if (p == 0.0) continue;
      for (const Entry& e : b_rows[action * n_states + s]) out[e.state] += p * e.p;
    }
  }

  void outcomes(std::span<const double> qs, std::vector<double>& qo) const {
    qo.assign(n_obs, 0.0);
    for (std::size_t o = 0; o < n_obs; ++o) {
      double acc = 0.0;
      for (const Entry& e : emitters[o]) acc += e.p * qs[e.state];
      qo[o] = acc;
    }
  }

  /// E_{Q(o)} KL[Q(s|o) || Q(s)].
  double epistemic(std::span<const double> qs, std::span<const double> qo) const {
    double total = 0.0;
    for (std::size_t o = 0; o < n_obs; ++o) {
      if (!(qo[o] > 0.0)) continue;
      double kl = 0.0;
      for (const Entry& e : emitters[o]) {
        const double prior = qs[e.state];
        if (!(prior > 0.0)) continue;
        const double post = e.p * prior / qo[o];
        if (post > 0.0) kl += post * std::log(post / prior);
      }
      total += qo[o] * kl;
    }
    return total;
  }

  double pragmatic(std::span<const double> qs) const {
    double total = 0.0;
    for (std::size_t s = 0; s < n_states; ++s) {
      if (qs[s] != 0.0) total += qs[s] * c_vec[s];
    }
    return total;
  }

  /// Depth-first evaluation of every policy below `prefix`, writing G in
  /// lexicographic order. Shared prefixes are rolled out once.
  void expand(std::span<const double> qs, std::size_t depth, std::size_t horizon, double g_prefix,
              std::vector<double>& g_out) const {
    std::vector<double> next, qo;
    for (std::size_t a = 0; a < n_actions; ++a) {
      predict(qs, a, next);
      outcomes(next, qo);
      const double g = g_prefix + (-epistemic(next, qo) - pragmatic(next));
      if (depth + 1 == horizon) {
        g_out.push_back(g);
      } else {
        expand(next, depth + 1, horizon, g, g_out);
      }
    }
  }
};

}  // namespace detail

namespace {

using Compiled = detail::CompiledAif;

void check_belief(const AifModel& model, const Belief& belief) {
  if (belief.size() != model.n_states) {
    throw InvalidArgument("belief size does not match generative model");
  }
}

void check_policy(const AifModel& model, const Policy& policy) {
  if (policy.actions.empty()) throw InvalidArgument("policy must contain at least one action");
  for (ActionId a : policy.actions) {
    if (index(a) >= model.n_actions) throw InvalidArgument("policy action out of range");
  }
}

struct Edge {
  std::size_t action;
  std::size_t to;
  double p;
};
using SupportGraph = std::vector<std::vector<Edge>>;

SupportGraph support_graph(const CloneHmm& model) {
  SupportGraph g(model.n_states());
  for (std::size_t i = 0; i < model.n_states(); ++i) {
    if (!model.active(i)) continue;
    for (std::size_t a = 0; a < model.n_actions(); ++a) {
      const auto r = model.row(a, i);
      for (std::size_t j = 0; j < model.n_states(); ++j) {
        if (r[j] > 0.0) g[i].push_back({a, j, r[j]});
      }
    }
  }
  return g;
}

std::optional<GreedyPlan> plan_on_graph(const SupportGraph& graph, std::size_t start,
                                        std::span<const std::size_t> goals, std::size_t max_len) {
  const std::size_t n = graph.size();
  std::vector<char> is_goal(n, 0);
  for (std::size_t g : goals) {
    if (g >= n) throw InvalidArgument("goal state out of range");
    is_goal[g] = 1;
  }
  struct Back {
    std::size_t prev;
    std::size_t action;
  };
  std::vector<std::vector<Back>> back;
  std::vector<double> msg(n, 0.0), next(n, 0.0);
  msg[start] = 1.0;

  for (std::size_t step = 1; step <= max_len; ++step) {
    std::fill(next.begin(), next.end(), 0.0);
    back.emplace_back(n, Back{0, 0});
    auto& bp = back.back();
    for (std::size_t i = 0; i < n; ++i) {
      if (msg[i] == 0.0) continue;
      for (const Edge& e : graph[i]) {
        const double v = msg[i] * e.p;
        if (v > next[e.to]) {
          next[e.to] = v;
          bp[e.to] = {i, e.action};
        }
      }
    }
    double peak = 0.0;
    std::size_t best_goal = n;
    double best_goal_p = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      peak = std::max(peak, next[j]);
      if (is_goal[j] && next[j] > best_goal_p) {
        best_goal_p = next[j];
        best_goal = j;
      }
    }
    if (peak == 0.0) return std::nullopt;
    if (best_goal < n) {
      GreedyPlan plan;
      plan.start_state = start;
      plan.actions.resize(step);
      plan.states.resize(step);
      std::size_t s = best_goal;
      for (std::size_t k = step; k-- > 0;) {
        plan.states[k] = s;
        plan.actions[k] = action_id(back[k][s].action);
        s = back[k][s].prev;
      }
      return plan;
    }
    for (std::size_t j = 0; j < n; ++j) next[j] /= peak;
    msg.swap(next);
  }
  return std::nullopt;
}

}  // namespace

// --- policies and expected free energy ----------------------------------------

std::vector<Policy> enumerate_policies(std::size_t n_actions, std::size_t horizon, std::size_t cap) {
  if (n_actions == 0) throw ConfigError("need at least one action to enumerate policies");
  if (horizon == 0) throw ConfigError("planning horizon must be at least 1");
  if (cap < n_actions) throw ConfigError("policy cap must be at least the number of actions");
  std::size_t count = 1;
  for (std::size_t d = 0; d < horizon; ++d) {
    if (count > cap / n_actions) {
      throw ConfigError(std::to_string(n_actions) + "^" + std::to_string(horizon) +
                        " policies exceed the cap of " + std::to_string(cap) +
                        "; lower the planning horizon");
    }
    count *= n_actions;
  }
  std::vector<Policy> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    out[k].actions.resize(horizon);
    std::size_t rest = k;
    for (std::size_t d = horizon; d-- > 0;) {
      out[k].actions[d] = action_id(rest % n_actions);
      rest /= n_actions;
    }
  }
  return out;
}

RolloutResult rollout(const AifModel& model, const Belief& belief, const Policy& policy) {
  check_belief(model, belief);
  check_policy(model, policy);
  const Compiled c(model);
  RolloutResult out;
  std::vector<double> qs = belief.probs, next, qo;
  for (ActionId a : policy.actions) {
    c.predict(qs, index(a), next);
    c.outcomes(next, qo);
    out.states.push_back(next);
    out.outcomes.push_back(qo);
    qs.swap(next);
  }
  return out;
}

EfeBreakdown efe(const AifModel& model, const Belief& belief, const Policy& policy) {
  check_belief(model, belief);
  check_policy(model, policy);
  const Compiled c(model);
  EfeBreakdown out;
  out.horizon = policy.actions.size();
  std::vector<double> qs = belief.probs, next, qo;
  for (ActionId a : policy.actions) {
    c.predict(qs, index(a), next);
    c.outcomes(next, qo);
    const double epi = c.epistemic(next, qo);
    const double prag = c.pragmatic(next);
    out.epistemic.push_back(epi);
    out.pragmatic.push_back(prag);
    out.total = out.total + (-epi - prag);
    qs.swap(next);
  }
  return out;
}

std::vector<double> policy_posterior(std::span<const double> g_values, double gamma) {
  if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be non-negative");
  std::vector<double> q(g_values.size());
  if (q.empty()) return q;
  double best = -std::numeric_limits<double>::infinity();
  for (double g : g_values) {
    if (!std::isfinite(g)) throw InvalidArgument("expected free energy must be finite");
    best = std::max(best, -gamma * g);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    q[k] = std::exp(-gamma * g_values[k] - best);
    total += q[k];
  }
  for (double& v : q) v /= total;
  return q;
}

// --- greedy planning ------------------------------------------------------------

std::optional<GreedyPlan> plan_from_state(const CloneHmm& model, std::size_t start,
                                          std::span<const std::size_t> goals,
                                          std::size_t max_len) {
  if (goals.empty()) throw InvalidArgument("goal state set is empty");
  if (start >= model.n_states()) throw InvalidArgument("start state out of range");
  return plan_on_graph(support_graph(model), start, goals, max_len);
}

GreedyPlanResult greedy_plan(const CloneHmm& model, const Belief& belief,
                             std::span<const std::size_t> goals, std::size_t max_len, Rng& rng,
                             double collapse_threshold) {
  if (goals.empty()) throw InvalidArgument("goal state set is empty");
  if (belief.size() != model.n_states()) throw InvalidArgument("belief size does not match model");
  const SupportGraph graph = support_graph(model);
  GreedyPlanResult out;
  for (std::size_t s = 0; s < belief.size(); ++s) {
    if (belief[s] > 1e-9) out.per_state.emplace_back(s, plan_on_graph(graph, s, goals, max_len));
  }
  const auto peak = std::max_element(belief.probs.begin(), belief.probs.end());
  out.chosen_state = *peak > collapse_threshold
                         ? static_cast<std::size_t>(peak - belief.probs.begin())
                         : rng.categorical(belief.probs);
  for (const auto& [s, plan] : out.per_state) {
    if (s == out.chosen_state && plan) out.policy = Policy{plan->actions};
  }
  return out;
}

// --- agents ---------------------------------------------------------------------

RandomAgent::RandomAgent(std::size_t n_actions, std::uint64_t seed)
    : n_actions_(n_actions), rng_(seed) {
  if (n_actions_ == 0) throw InvalidArgument("random agent needs at least one action");
}

ActionId RandomAgent::act() {
  const ActionId a = action_id(rng_.uniform_index(n_actions_));
  trace_.chosen_policy = {a};
  return a;
}

struct GreedyAgent::Graph {
  SupportGraph edges;
};

GreedyAgent::GreedyAgent(std::shared_ptr<const CloneHmm> model, std::vector<std::size_t> goals,
                         GreedyConfig config)
    : model_(std::move(model)), goals_(std::move(goals)), config_(config), rng_(config.seed) {
  if (!model_) throw InvalidArgument("greedy agent needs a model");
  if (goals_.empty()) throw InvalidArgument("greedy agent needs at least one goal state");
  graph_ = std::make_shared<const Graph>(Graph{support_graph(*model_)});
}

void GreedyAgent::reset(ObsId first_obs) {
  belief_ = initial_belief(*model_, first_obs);
  committed_.reset();
  committed_step_ = 0;
}

void GreedyAgent::observe(ActionId action, ObsId obs) {
  belief_ = filter_belief(*model_, belief_, action, obs);
}

ActionId GreedyAgent::act() {
  trace_ = StepTrace{};
  trace_.belief_entropy = belief_.entropy();

  if (config_.commit_until_contradicted && committed_ && committed_step_ > 0 &&
      committed_step_ < committed_->actions.size() &&
      belief_[committed_->states[committed_step_ - 1]] > 1e-9) {
    trace_.chosen_policy.assign(committed_->actions.begin() + static_cast<std::ptrdiff_t>(committed_step_),
                                committed_->actions.end());
    return committed_->actions[committed_step_++];
  }

  const auto peak = std::max_element(belief_.probs.begin(), belief_.probs.end());
  if (*peak > config_.collapse_threshold) {
    committed_ = plan_on_graph(graph_->edges, static_cast<std::size_t>(peak - belief_.probs.begin()),
                               goals_, config_.max_plan_len);
  } else {
    committed_ = plan_on_graph(graph_->edges, rng_.categorical(belief_.probs), goals_,
                               config_.max_plan_len);
  }
  if (!committed_) {
    ++fallbacks_;
    trace_.fallback = true;
    const ActionId a = action_id(rng_.uniform_index(model_->n_actions()));
    trace_.chosen_policy = {a};
    return a;
  }
  trace_.chosen_policy = committed_->actions;
  committed_step_ = 1;
  return committed_->actions.front();
}

AifAgent::AifAgent(std::shared_ptr<const AifModel> model, PlannerConfig config)
    : model_(std::move(model)), config_(config), rng_(config.seed) {
  if (!model_) throw InvalidArgument("active inference agent needs a model");
  n_policies_ = enumerate_policies(model_->n_actions, config_.horizon, config_.max_policies).size();
  compiled_ = std::make_unique<detail::CompiledAif>(*model_);
}

AifAgent::~AifAgent() = default;

void AifAgent::reset(ObsId first_obs) { belief_ = aif_initial_belief(*model_, first_obs); }

void AifAgent::observe(ActionId action, ObsId obs) {
  belief_ = aif_filter(*model_, belief_, action, obs);
}

ActionId AifAgent::act() {
  trace_ = StepTrace{};
  trace_.belief_entropy = belief_.entropy();
  last_g_.clear();
  last_g_.reserve(n_policies_);
  compiled_->expand(belief_.probs, 0, config_.horizon, 0.0, last_g_);

  const auto q = policy_posterior(last_g_, config_.gamma);
  const std::size_t n_act = model_->n_actions;
  const std::size_t per_first = n_policies_ / n_act;
  last_action_probs_.assign(n_act, 0.0);
  for (std::size_t k = 0; k < q.size(); ++k) last_action_probs_[k / per_first] += q[k];

  std::size_t chosen = 0;
  if (config_.action_selection == ActionSelection::kArgmax) {
    for (std::size_t a = 1; a < n_act; ++a) {
      if (last_action_probs_[a] > last_action_probs_[chosen]) chosen = a;
    }
  } else {
    chosen = rng_.categorical(last_action_probs_);
  }

  const auto best = std::min_element(last_g_.begin(), last_g_.end());
  trace_.g_min = *best;
  std::size_t rest = static_cast<std::size_t>(best - last_g_.begin());
  trace_.chosen_policy.assign(config_.horizon, action_id(0));
  for (std::size_t d = config_.horizon; d-- > 0;) {
    trace_.chosen_policy[d] = action_id(rest % n_act);
    rest /= n_act;
  }
  return action_id(chosen);
}

Belief aif_initial_belief(const AifModel& model, ObsId obs) {
  if (index(obs) >= model.n_obs) throw InvalidArgument("observation out of range");
  Belief b{std::vector<double>(model.n_states, 0.0)};
  double total = 0.0;
  for (std::size_t s = 0; s < model.n_states; ++s) {
    b.probs[s] = model.d_vec[s] * model.a(index(obs), s);
    total += b.probs[s];
  }
  if (total <= 0.0) return Belief{model.d_vec};
  for (double& p : b.probs) p /= total;
  return b;
}

Belief aif_filter(const AifModel& model, const Belief& prior, ActionId action, ObsId obs) {
  check_belief(model, prior);
  if (index(action) >= model.n_actions) throw InvalidArgument("action out of range");
  if (index(obs) >= model.n_obs) throw InvalidArgument("observation out of range");
  const std::size_t n = model.n_states;
  std::vector<double> predicted(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const double p = prior[s];
    if (p == 0.0) continue;
    const auto r = model.b_row(index(action), s);
    for (std::size_t t = 0; t < n; ++t) predicted[t] += p * r[t];
  }
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    predicted[t] *= model.a(index(obs), t);
    total += predicted[t];
  }
  if (total < 1e-12) return aif_initial_belief(model, obs);
  for (double& p : predicted) p /= total;
  return Belief{std::move(predicted)};
}

}  // namespace clonemap
