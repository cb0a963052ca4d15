#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "clonemap/types.hpp"

namespace clonemap {

/// Action-augmented HMM whose hidden states are grouped into clone blocks,
/// one block per observation symbol. State `s` always emits `obs_of(s)`.
///
/// Transitions are stored as the joint P(s', a | s) in a dense
/// [action][from][to] tensor, normalized over (a, s') for every active source
/// state. Inactive states (dropped by refinement or pruning) have no outgoing
/// or incoming mass.
class CloneHmm {
 public:
  CloneHmm() = default;
  /// All-zero transitions, every state active.
  CloneHmm(std::vector<std::uint32_t> clones_per_obs, std::size_t n_actions);

  std::size_t n_obs() const noexcept { return clones_per_obs_.size(); }
  std::size_t n_actions() const noexcept { return n_actions_; }
  std::size_t n_states() const noexcept { return state_to_obs_.size(); }

  std::span<const std::uint32_t> clones_per_obs() const noexcept { return clones_per_obs_; }
  std::span<const ObsId> state_to_obs() const noexcept { return state_to_obs_; }
  ObsId obs_of(std::size_t state) const { return state_to_obs_[state]; }

  /// Half-open state range [first, last) of the clones of `obs`.
  std::pair<std::size_t, std::size_t> clone_range(ObsId obs) const;

  double trans(std::size_t action, std::size_t from, std::size_t to) const {
    return trans_[(action * n_states() + from) * n_states() + to];
  }
  double& trans(std::size_t action, std::size_t from, std::size_t to) {
    return trans_[(action * n_states() + from) * n_states() + to];
  }
  /// Outgoing probabilities of `from` under `action`, indexed by target state.
  std::span<const double> row(std::size_t action, std::size_t from) const {
    return {trans_.data() + (action * n_states() + from) * n_states(), n_states()};
  }
  std::span<double> row(std::size_t action, std::size_t from) {
    return {trans_.data() + (action * n_states() + from) * n_states(), n_states()};
  }
  std::span<const double> trans_data() const noexcept { return trans_; }

  bool active(std::size_t state) const { return active_[state] != 0; }
  void set_active(std::size_t state, bool on) { active_[state] = on ? 1 : 0; }
  const std::vector<std::uint8_t>& active_mask() const noexcept { return active_; }
  std::size_t n_active() const;

  /// Sum over actions and targets of the joint transition from `from`.
  double source_mass(std::size_t from) const;
  /// Sum over targets for one action; zero marks an action never taken.
  double action_mass(std::size_t action, std::size_t from) const;

  /// Rescale every active row to total mass 1 and zero inactive rows and
  /// columns. Rows with no mass are left at zero.
  void normalize_rows();

  /// Checks the structural invariants; throws ValidationError naming the
  /// first offending source state.
  void validate(double tol = 1e-9) const;

  bool operator==(const CloneHmm&) const = default;

 private:
  std::size_t n_actions_ = 0;
  std::vector<std::uint32_t> clones_per_obs_;
  std::vector<std::size_t> block_start_;
  std::vector<ObsId> state_to_obs_;
  std::vector<double> trans_;
  std::vector<std::uint8_t> active_;
};

/// Randomly initialized model with the same clone count for every symbol.
CloneHmm new_cscg(std::size_t n_obs, std::uint32_t clones_per_obs, std::size_t n_actions,
                  std::uint64_t seed);
CloneHmm new_cscg(std::vector<std::uint32_t> clones_per_obs, std::size_t n_actions,
                  std::uint64_t seed);

/// log P(observations | actions). Each episode starts from a uniform prior
/// over the active clones of its first observation. Returns -infinity when the
/// sequence is impossible under the model.
double log_likelihood(const CloneHmm& model, const TrajectoryData& data);

struct EmOptions {
  std::size_t max_iters = 200;
  double pseudocount = 1e-2;
  /// Relative log-likelihood improvement below which training stops.
  double tol = 1e-6;
};

struct EmResult {
  CloneHmm model;
  /// Log-likelihood of the model entering each iteration's E-step.
  std::vector<double> trace;
  bool converged = false;
};

/// Baum-Welch with per-step rescaled forward/backward recursions.
EmResult train_em(const CloneHmm& model, const TrajectoryData& data, const EmOptions& opts = {});

/// Maximum-probability state path, episode by episode. Ties resolve to the
/// lowest state index. Throws DecodeFailure if the data is impossible.
std::vector<std::size_t> viterbi_decode(const CloneHmm& model, const TrajectoryData& data);

/// Keeps only the states on the decoded paths. With `reestimate`, transitions
/// are recounted along those paths; a state that is never left becomes
/// absorbing under every action. Without it, the trained rows are restricted
/// to the surviving states and renormalized.
CloneHmm refine_viterbi(const CloneHmm& model, const TrajectoryData& data, bool reestimate = true);

/// Uniform belief over the active clones of `obs` (all clones if none active).
Belief initial_belief(const CloneHmm& model, ObsId obs);

/// One Bayes filter step. Falls back to `initial_belief(model, obs)` when the
/// (action, obs) pair has probability below 1e-12 under the prior.
Belief filter_belief(const CloneHmm& model, const Belief& prior, ActionId action, ObsId obs);

}  // namespace clonemap
