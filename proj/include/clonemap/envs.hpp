#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "clonemap/types.hpp"

namespace clonemap {

enum class EnvKind { kOpenRoom, kMaze, kTMaze };

std::string_view to_string(EnvKind kind);
EnvKind env_kind_from_string(std::string_view name);

/// Cell codes used in layout files and observation keys.
namespace cell {
inline constexpr char kWall = '#';
inline constexpr char kFloor = '.';  // white tile in the maze
inline constexpr char kRed = 'r';
inline constexpr char kGreen = 'g';
inline constexpr char kDoor = 'D';
inline constexpr char kCue = 'c';
inline constexpr char kCueRed = 'R';   // rendered cue, reward on the left
inline constexpr char kCueBlue = 'U';  // rendered cue, reward on the right
inline constexpr std::string_view kCornerColors = "byop";
}  // namespace cell

struct GridLayout {
  int width = 0;
  int height = 0;
  std::vector<char> cells;  // row-major, y down
  nlohmann::json metadata = nlohmann::json::object();

  char at(int x, int y) const;
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

/// Parses the plain-text grid (one character per cell, one row per line).
GridLayout parse_layout(std::string_view text);
/// Loads `path` and, when present, the JSON sidecar `path` + ".json".
GridLayout load_layout(const std::filesystem::path& path);
/// Throws LayoutError unless the layout is enclosed and uses only the cell
/// codes valid for `kind`.
void validate_layout(const GridLayout& layout, EnvKind kind);

GridLayout default_open_room_layout();
GridLayout default_maze_layout();
GridLayout default_tmaze_layout();
GridLayout default_layout(EnvKind kind);

/// Dense ids for canonical observation keys, assigned in first-seen order.
class ObsRegistry {
 public:
  /// Returns the id of `key`, registering it unless frozen. Throws
  /// InvalidArgument for an unknown key once frozen.
  ObsId intern(const std::string& key);
  std::optional<ObsId> find(const std::string& key) const;
  const std::string& key(ObsId id) const;
  std::size_t size() const noexcept { return keys_.size(); }
  void freeze() noexcept { frozen_ = true; }
  bool frozen() const noexcept { return frozen_; }

  nlohmann::json to_json() const;
  /// The returned registry is frozen.
  static ObsRegistry from_json(const nlohmann::json& doc);

 private:
  std::vector<std::string> keys_;
  std::map<std::string, ObsId, std::less<>> ids_;
  bool frozen_ = false;
};

struct StepResult {
  ObsId obs{};
  bool done = false;
  bool success = false;
  std::size_t t = 0;
};

enum class Heading { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };

struct EnvState {
  int x = 0;
  int y = 0;
  Heading heading = Heading::kNorth;
  std::size_t t = 0;
  /// Open room: goal corner index; T-maze: 0 reward left, 1 reward right.
  int episode_variant = 0;
};

/// Deterministic gridworld. All randomness comes from the reset seed.
class GridEnv {
 public:
  GridEnv(GridLayout layout, std::shared_ptr<ObsRegistry> registry, std::size_t step_cap);
  virtual ~GridEnv() = default;

  virtual EnvKind kind() const = 0;
  virtual std::size_t n_actions() const = 0;
  virtual std::vector<std::string> action_names() const = 0;
  virtual StepResult reset(std::uint64_t seed) = 0;
  /// Throws InvalidArgument for an action index outside the action set.
  virtual StepResult step(ActionId action) = 0;
  /// Observations counting as success in the current episode.
  virtual std::vector<ObsId> goal_observations() = 0;
  /// Every key the environment can emit, in a fixed enumeration order.
  virtual std::vector<std::string> enumerate_observation_keys() const = 0;
  /// True if the episode can continue after `done` (non-terminating walks).
  virtual bool supports_continuous_walk() const { return true; }

  const GridLayout& layout() const noexcept { return layout_; }
  ObsRegistry& registry() noexcept { return *registry_; }
  std::shared_ptr<ObsRegistry> registry_ptr() const noexcept { return registry_; }
  std::size_t step_cap() const noexcept { return step_cap_; }
  void set_step_cap(std::size_t cap) noexcept { step_cap_ = cap; }
  const EnvState& state() const noexcept { return state_; }

 protected:
  void check_action(ActionId action) const;

  GridLayout layout_;
  std::shared_ptr<ObsRegistry> registry_;
  std::size_t step_cap_;
  EnvState state_;
};

/// Egocentric 3x3 view: the agent sits at the bottom centre looking up, so the
/// view covers its own row and the two rows ahead. Row-major, 9 bytes.
std::string render_view(const GridLayout& layout, int x, int y, Heading heading,
                        char cue_override = 0);

class OpenRoomEnv final : public GridEnv {
 public:
  enum Action : std::uint32_t { kTurnLeft = 0, kTurnRight = 1, kForward = 2 };
  explicit OpenRoomEnv(std::shared_ptr<ObsRegistry> registry,
                       GridLayout layout = default_open_room_layout(), std::size_t step_cap = 25);

  EnvKind kind() const override { return EnvKind::kOpenRoom; }
  std::size_t n_actions() const override { return 3; }
  std::vector<std::string> action_names() const override;
  StepResult reset(std::uint64_t seed) override;
  StepResult step(ActionId action) override;
  std::vector<ObsId> goal_observations() override;
  std::vector<std::string> enumerate_observation_keys() const override;

  /// The two keys seen when arriving at the floor cell next to corner `k`.
  std::vector<std::string> corner_keys(int k) const;
  int n_corners() const noexcept { return static_cast<int>(corners_.size()); }

 private:
  StepResult emit(bool force_done = false);
  struct Corner {
    int wall_x, wall_y;    // coloured tile
    int floor_x, floor_y;  // adjacent floor cell
  };
  std::vector<Corner> corners_;
  std::vector<std::pair<int, int>> starts_;
  std::vector<std::string> goal_keys_;
};

class MazeEnv final : public GridEnv {
 public:
  enum Action : std::uint32_t { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
  explicit MazeEnv(std::shared_ptr<ObsRegistry> registry, GridLayout layout = default_maze_layout(),
                   std::size_t step_cap = 25);

  EnvKind kind() const override { return EnvKind::kMaze; }
  std::size_t n_actions() const override { return 4; }
  std::vector<std::string> action_names() const override;
  StepResult reset(std::uint64_t seed) override;
  StepResult step(ActionId action) override;
  std::vector<ObsId> goal_observations() override;
  std::vector<std::string> enumerate_observation_keys() const override;

  static std::string tile_key(char c);

 private:
  StepResult emit();
  std::vector<std::pair<int, int>> starts_;
};

class TMazeEnv final : public GridEnv {
 public:
  enum Action : std::uint32_t { kTurnLeft = 0, kTurnRight = 1, kForward = 2 };
  static constexpr std::string_view kRewardKey = "reward";

  explicit TMazeEnv(std::shared_ptr<ObsRegistry> registry,
                    GridLayout layout = default_tmaze_layout(), std::size_t step_cap = 25);

  EnvKind kind() const override { return EnvKind::kTMaze; }
  std::size_t n_actions() const override { return 3; }
  std::vector<std::string> action_names() const override;
  StepResult reset(std::uint64_t seed) override;
  StepResult step(ActionId action) override;
  std::vector<ObsId> goal_observations() override;
  std::vector<std::string> enumerate_observation_keys() const override;
  bool supports_continuous_walk() const override { return false; }

  bool reward_on_right() const noexcept { return state_.episode_variant == 1; }

 private:
  char cue_color() const;
  std::string landing_view(int x, int y, Heading heading) const;
  StepResult emit(std::string key, bool done, bool success);
  int start_x_ = 0, start_y_ = 0;
  int left_door_x_ = 0, right_door_x_ = 0, door_y_ = 0;
  bool finished_ = false;
};

std::unique_ptr<GridEnv> make_env(EnvKind kind, std::shared_ptr<ObsRegistry> registry,
                                  std::optional<GridLayout> layout = std::nullopt,
                                  std::optional<std::size_t> step_cap = std::nullopt);

/// Registry containing every key the environment can emit, in enumeration order.
ObsRegistry exhaustive_registry(const GridEnv& env);

struct CollectSpec {
  /// Exactly one of the two is non-zero.
  std::size_t steps = 0;
  std::size_t episodes = 0;
};

/// Uniform-random walk. With `steps`, a single non-terminating walk; with
/// `episodes`, one reset per episode and a boundary at each restart. The
/// env's registry is frozen afterwards.
TrajectoryData collect_random_walk(GridEnv& env, const CollectSpec& spec, std::uint64_t seed);

}  // namespace clonemap
