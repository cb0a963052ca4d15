#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace clonemap {

enum class ObsId : std::uint32_t {};
enum class ActionId : std::uint32_t {};

constexpr std::size_t index(ObsId o) noexcept { return static_cast<std::size_t>(o); }
constexpr std::size_t index(ActionId a) noexcept { return static_cast<std::size_t>(a); }
constexpr ObsId obs_id(std::size_t i) noexcept { return static_cast<ObsId>(i); }
constexpr ActionId action_id(std::size_t i) noexcept { return static_cast<ActionId>(i); }

/// Observation/action sequence. `actions[t]` moves from `observations[t]` to
/// `observations[t + 1]`; the entry preceding an episode boundary is ignored.
/// `episode_boundaries` lists indices into `observations` where a new episode
/// starts (index 0 is implicit and may be omitted).
struct TrajectoryData {
  std::vector<ObsId> observations;
  std::vector<ActionId> actions;
  std::vector<std::size_t> episode_boundaries;

  std::size_t size() const noexcept { return observations.size(); }
  bool empty() const noexcept { return observations.empty(); }

  /// Half-open [begin, end) ranges of each episode.
  std::vector<std::pair<std::size_t, std::size_t>> episodes() const;

  /// Throws InvalidArgument when lengths or boundaries are inconsistent.
  void validate() const;
};

/// Categorical distribution over hidden states.
struct Belief {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }

  /// Throws InvalidArgument unless entries are non-negative and sum to 1.
  void validate(double tol = 1e-9) const;
  double entropy() const;
};

}  // namespace clonemap
