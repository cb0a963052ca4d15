#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "clonemap/clone_hmm.hpp"
#include "clonemap/types.hpp"

namespace clonemap {

/// Marginal action mass below which an action counts as never taken from a state.
inline constexpr double kIllegalActionMass = 1e-12;

/// Discrete POMDP generative model built from a CloneHmm. Hidden states are
/// the surviving clone states in ascending order followed by one absorbing
/// dispreferred state; observations are the model's alphabet followed by one
/// observation emitted only by that state.
struct AifModel {
  std::size_t n_obs = 0;      // including the dispreferred observation
  std::size_t n_states = 0;   // including the dispreferred state
  std::size_t n_actions = 0;
  std::vector<double> a_mat;     // [obs][state], columns sum to 1
  std::vector<double> b_tensor;  // [action][from][to], rows sum to 1
  std::vector<double> c_vec;     // log-preference per state
  std::vector<double> d_vec;     // initial-state prior
  std::size_t dispreferred_index = 0;
  std::size_t dispreferred_obs = 0;
  /// CloneHmm state for each non-dispreferred state.
  std::vector<std::size_t> source_state;

  /// Provenance of the conversion; written to the model file header.
  struct Params {
    double prune_threshold = 1e-4;
    double support_eps = 1e-3;
    double preference_scale = 1.0;
  } params;

  double a(std::size_t obs, std::size_t state) const { return a_mat[obs * n_states + state]; }
  double b(std::size_t action, std::size_t from, std::size_t to) const {
    return b_tensor[(action * n_states + from) * n_states + to];
  }
  std::span<const double> b_row(std::size_t action, std::size_t from) const {
    return {b_tensor.data() + (action * n_states + from) * n_states, n_states};
  }

  /// Throws ValidationError when a stochasticity or absorption invariant fails.
  void validate(double tol = 1e-9) const;
  bool operator==(const AifModel&) const = default;
};

/// Minimum number of actions from each state to any goal state.
struct DistanceMap {
  std::vector<std::size_t> dist;
  /// Largest finite distance; unreachable states carry max_finite + 1.
  std::size_t max_finite = 0;
  bool has_unreachable = false;

  std::size_t sentinel() const noexcept { return max_finite + 1; }
  bool reachable(std::size_t s) const { return dist[s] <= max_finite; }
};

/// Drops states whose action-averaged incoming probability from a uniformly
/// chosen active source does not exceed `threshold`, then renormalizes.
CloneHmm prune_states(const CloneHmm& model, double threshold = 1e-4);

AifModel to_aif(const CloneHmm& model);

/// Non-dispreferred states whose observation is in `goal_obs`.
std::vector<std::size_t> goal_states(const AifModel& model, std::span<const ObsId> goal_obs);
/// Active CloneHmm states whose observation is in `goal_obs`.
std::vector<std::size_t> goal_states(const CloneHmm& model, std::span<const ObsId> goal_obs);

/// Multi-source reverse BFS over edges with some action probability above
/// `support_eps`. The dispreferred state is always unreachable.
DistanceMap distance_map(const AifModel& model, std::span<const std::size_t> goals,
                         double support_eps = 1e-3);

/// c[s] = -scale * dist[s]; the dispreferred state sits strictly below every
/// other state.
AifModel set_preference(AifModel model, const DistanceMap& dmap, double scale = 1.0);

nlohmann::json aif_to_json(const AifModel& model);
AifModel aif_from_json(const nlohmann::json& doc);
void save_aif(const AifModel& model, const std::filesystem::path& path);
AifModel load_aif(const std::filesystem::path& path);

}  // namespace clonemap
