#include "clonemap/aif_model.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <string>

#include "clonemap/errors.hpp"
#include "clonemap/model_io.hpp"

namespace clonemap {

using nlohmann::json;

void AifModel::validate(double tol) const {
  if (a_mat.size() != n_obs * n_states || b_tensor.size() != n_actions * n_states * n_states ||
      c_vec.size() != n_states || d_vec.size() != n_states) {
    throw ValidationError("generative model arrays do not match declared sizes");
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    double col = 0.0;
    for (std::size_t o = 0; o < n_obs; ++o) col += a(o, s);
    if (std::abs(col - 1.0) > tol) {
      throw ValidationError("likelihood column " + std::to_string(s) + " sums to " +
                            std::to_string(col));
    }
  }
  for (std::size_t act = 0; act < n_actions; ++act) {
    for (std::size_t s = 0; s < n_states; ++s) {
      double total = 0.0;
      for (double p : b_row(act, s)) total += p;
      if (std::abs(total - 1.0) > tol) {
        throw ValidationError("transition row (action " + std::to_string(act) + ", state " +
                              std::to_string(s) + ") sums to " + std::to_string(total));
      }
    }
    if (b(act, dispreferred_index, dispreferred_index) != 1.0) {
      throw ValidationError("dispreferred state is not absorbing");
    }
  }
  if (a(dispreferred_obs, dispreferred_index) != 1.0) {
    throw ValidationError("dispreferred state does not emit the dispreferred observation");
  }
  double d_total = 0.0;
  for (double p : d_vec) {
    if (!(p >= 0.0)) throw ValidationError("prior has a negative entry");
    d_total += p;
  }
  if (std::abs(d_total - 1.0) > tol) throw ValidationError("prior does not sum to 1");
  for (double c : c_vec) {
    if (!std::isfinite(c)) throw ValidationError("preference vector has a non-finite entry");
  }
}

CloneHmm prune_states(const CloneHmm& model, double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw InvalidArgument("prune threshold must lie in [0, 1)");
  }
  const std::size_t s = model.n_states();
  const std::size_t n_act = model.n_actions();
  CloneHmm out = model;

  if (threshold > 0.0) {
    std::size_t n_src = 0;
    std::vector<double> incoming(s, 0.0);
    for (std::size_t i = 0; i < s; ++i) {
      if (!model.active(i)) continue;
      ++n_src;
      for (std::size_t a = 0; a < n_act; ++a) {
        const double mass = model.action_mass(a, i);
        if (mass < kIllegalActionMass) continue;
        const auto r = model.row(a, i);
        for (std::size_t j = 0; j < s; ++j) incoming[j] += r[j] / mass;
      }
    }
    const double norm = 1.0 / (static_cast<double>(std::max<std::size_t>(n_src, 1)) *
                               static_cast<double>(n_act));
    for (std::size_t j = 0; j < s; ++j) {
      if (out.active(j) && incoming[j] * norm <= threshold) out.set_active(j, false);
    }
  }

  // Removing targets can leave a state with nowhere to go; drop those too
  // until every survivor has outgoing mass.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < s; ++i) {
      if (!out.active(i)) continue;
      double kept = 0.0;
      for (std::size_t a = 0; a < n_act; ++a) {
        const auto r = out.row(a, i);
        for (std::size_t j = 0; j < s; ++j) {
          if (out.active(j)) kept += r[j];
        }
      }
      if (kept <= 0.0) {
        out.set_active(i, false);
        changed = true;
      }
    }
  }
  if (out.n_active() == 0) throw EmptyModelError("pruning removed every state");
  out.normalize_rows();
  return out;
}

AifModel to_aif(const CloneHmm& model) {
  AifModel m;
  for (std::size_t i = 0; i < model.n_states(); ++i) {
    if (model.active(i)) m.source_state.push_back(i);
  }
  if (m.source_state.empty()) throw EmptyModelError("model has no active states");
  const std::size_t n = m.source_state.size();
  m.n_states = n + 1;
  m.n_obs = model.n_obs() + 1;
  m.n_actions = model.n_actions();
  m.dispreferred_index = n;
  m.dispreferred_obs = model.n_obs();

  m.a_mat.assign(m.n_obs * m.n_states, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    m.a_mat[index(model.obs_of(m.source_state[k])) * m.n_states + k] = 1.0;
  }
  m.a_mat[m.dispreferred_obs * m.n_states + m.dispreferred_index] = 1.0;

  m.b_tensor.assign(m.n_actions * m.n_states * m.n_states, 0.0);
  for (std::size_t a = 0; a < m.n_actions; ++a) {
    for (std::size_t k = 0; k < n; ++k) {
      const auto src = model.row(a, m.source_state[k]);
      double* dst = m.b_tensor.data() + (a * m.n_states + k) * m.n_states;
      double mass = 0.0;
      for (std::size_t kk = 0; kk < n; ++kk) mass += src[m.source_state[kk]];
      if (mass < kIllegalActionMass) {
        dst[m.dispreferred_index] = 1.0;
        continue;
      }
      for (std::size_t kk = 0; kk < n; ++kk) dst[kk] = src[m.source_state[kk]] / mass;
    }
    m.b_tensor[(a * m.n_states + m.dispreferred_index) * m.n_states + m.dispreferred_index] = 1.0;
  }

  m.d_vec.assign(m.n_states, 1.0 / static_cast<double>(n));
  m.d_vec[m.dispreferred_index] = 0.0;
  m.c_vec.assign(m.n_states, 0.0);
  return m;
}

std::vector<std::size_t> goal_states(const AifModel& model, std::span<const ObsId> goal_obs) {
  if (goal_obs.empty()) throw InvalidArgument("goal observation set is empty");
  std::vector<std::size_t> goals;
  for (ObsId o : goal_obs) {
    if (index(o) >= model.n_obs - 1) throw InvalidArgument("goal observation out of range");
  }
  for (std::size_t s = 0; s < model.n_states; ++s) {
    if (s == model.dispreferred_index) continue;
    for (ObsId o : goal_obs) {
      if (model.a(index(o), s) == 1.0) {
        goals.push_back(s);
        break;
      }
    }
  }
  if (goals.empty()) throw NoGoalStateError("no state emits any goal observation");
  return goals;
}

std::vector<std::size_t> goal_states(const CloneHmm& model, std::span<const ObsId> goal_obs) {
  if (goal_obs.empty()) throw InvalidArgument("goal observation set is empty");
  std::vector<std::size_t> goals;
  for (ObsId o : goal_obs) {
    const auto [lo, hi] = model.clone_range(o);
    for (std::size_t s = lo; s < hi; ++s) {
      if (model.active(s)) goals.push_back(s);
    }
  }
  std::sort(goals.begin(), goals.end());
  goals.erase(std::unique(goals.begin(), goals.end()), goals.end());
  if (goals.empty()) throw NoGoalStateError("no active state emits any goal observation");
  return goals;
}

DistanceMap distance_map(const AifModel& model, std::span<const std::size_t> goals,
                         double support_eps) {
  if (goals.empty()) throw InvalidArgument("goal state set is empty");
  const std::size_t n = model.n_states;
  // Reverse adjacency: predecessors of each state.
  std::vector<std::vector<std::size_t>> preds(n);
  for (std::size_t s = 0; s < n; ++s) {
    if (s == model.dispreferred_index) continue;
    for (std::size_t t = 0; t < n; ++t) {
      if (t == model.dispreferred_index) continue;
      for (std::size_t a = 0; a < model.n_actions; ++a) {
        if (model.b(a, s, t) > support_eps) {
          preds[t].push_back(s);
          break;
        }
      }
    }
  }
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> dist(n, kUnset);
  std::deque<std::size_t> queue;
  for (std::size_t g : goals) {
    if (g >= n || g == model.dispreferred_index) throw InvalidArgument("invalid goal state");
    if (dist[g] == kUnset) {
      dist[g] = 0;
      queue.push_back(g);
    }
  }
  while (!queue.empty()) {
    const std::size_t t = queue.front();
    queue.pop_front();
    for (std::size_t s : preds[t]) {
      if (dist[s] == kUnset) {
        dist[s] = dist[t] + 1;
        queue.push_back(s);
      }
    }
  }
  DistanceMap out;
  for (std::size_t s = 0; s < n; ++s) {
    if (dist[s] != kUnset) out.max_finite = std::max(out.max_finite, dist[s]);
    else if (s != model.dispreferred_index) out.has_unreachable = true;
  }
  for (auto& d : dist) {
    if (d == kUnset) d = out.max_finite + 1;
  }
  out.dist = std::move(dist);
  return out;
}

AifModel set_preference(AifModel model, const DistanceMap& dmap, double scale) {
  if (!(scale > 0.0)) throw InvalidArgument("preference scale must be positive");
  if (dmap.dist.size() != model.n_states) {
    throw InvalidArgument("distance map does not match model state count");
  }
  for (std::size_t s = 0; s < model.n_states; ++s) {
    model.c_vec[s] = -scale * static_cast<double>(dmap.dist[s]);
  }
  const std::size_t floor = dmap.sentinel() + (dmap.has_unreachable ? 1 : 0);
  model.c_vec[model.dispreferred_index] = -scale * static_cast<double>(floor);
  model.params.preference_scale = scale;
  return model;
}

json aif_to_json(const AifModel& m) {
  return json{{"version", 1},
              {"header",
               {{"prune_threshold", m.params.prune_threshold},
                {"support_eps", m.params.support_eps},
                {"preference_scale", m.params.preference_scale}}},
              {"n_obs", m.n_obs},
              {"n_states", m.n_states},
              {"n_actions", m.n_actions},
              {"a_mat", m.a_mat},
              {"b_tensor", m.b_tensor},
              {"c_vec", m.c_vec},
              {"d_vec", m.d_vec},
              {"dispreferred_index", m.dispreferred_index},
              {"dispreferred_obs", m.dispreferred_obs},
              {"source_state", m.source_state}};
}

AifModel aif_from_json(const json& doc) {
  AifModel m;
  try {
    if (doc.at("version").get<int>() != 1) throw ValidationError("unsupported generative model version");
    const auto& h = doc.at("header");
    m.params.prune_threshold = h.at("prune_threshold").get<double>();
    m.params.support_eps = h.at("support_eps").get<double>();
    m.params.preference_scale = h.at("preference_scale").get<double>();
    m.n_obs = doc.at("n_obs").get<std::size_t>();
    m.n_states = doc.at("n_states").get<std::size_t>();
    m.n_actions = doc.at("n_actions").get<std::size_t>();
    m.a_mat = doc.at("a_mat").get<std::vector<double>>();
    m.b_tensor = doc.at("b_tensor").get<std::vector<double>>();
    m.c_vec = doc.at("c_vec").get<std::vector<double>>();
    m.d_vec = doc.at("d_vec").get<std::vector<double>>();
    m.dispreferred_index = doc.at("dispreferred_index").get<std::size_t>();
    m.dispreferred_obs = doc.at("dispreferred_obs").get<std::size_t>();
    m.source_state = doc.at("source_state").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed generative model: ") + e.what());
  }
  if (m.dispreferred_index >= m.n_states || m.dispreferred_obs >= m.n_obs ||
      m.source_state.size() + 1 != m.n_states) {
    throw ValidationError("generative model indices out of range");
  }
  m.validate();
  return m;
}

void save_aif(const AifModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << aif_to_json(model).dump() << '\n';
}

AifModel load_aif(const std::filesystem::path& path) { return aif_from_json(parse_json_file(path)); }

}  // namespace clonemap
