#include "clonemap/envs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "clonemap/errors.hpp"
#include "clonemap/model_io.hpp"
#include "clonemap/random.hpp"

namespace clonemap {

using nlohmann::json;

namespace {

constexpr int kDx[4] = {0, 1, 0, -1};
constexpr int kDy[4] = {-1, 0, 1, 0};

Heading turn(Heading h, int delta) {
  return static_cast<Heading>((static_cast<int>(h) + delta + 4) % 4);
}

bool is_corner_color(char c) { return cell::kCornerColors.find(c) != std::string_view::npos; }

}  // namespace

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::kOpenRoom: return "open_room";
    case EnvKind::kMaze: return "maze";
    case EnvKind::kTMaze: return "tmaze";
  }
  return "unknown";
}

EnvKind env_kind_from_string(std::string_view name) {
  if (name == "open_room") return EnvKind::kOpenRoom;
  if (name == "maze" || name == "ambiguous_maze") return EnvKind::kMaze;
  if (name == "tmaze" || name == "t_maze") return EnvKind::kTMaze;
  throw ConfigError("unknown environment kind '" + std::string(name) + "'");
}

// --- layouts --------------------------------------------------------------------

char GridLayout::at(int x, int y) const {
  if (!inside(x, y)) return cell::kWall;
  return cells[static_cast<std::size_t>(y * width + x)];
}

GridLayout parse_layout(std::string_view text) {
  GridLayout layout;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = eol + 1;
    if (line.empty()) continue;
    if (layout.width == 0) {
      layout.width = static_cast<int>(line.size());
    } else if (static_cast<int>(line.size()) != layout.width) {
      throw LayoutError("layout row " + std::to_string(layout.height) + " has width " +
                        std::to_string(line.size()) + ", expected " + std::to_string(layout.width));
    }
    layout.cells.insert(layout.cells.end(), line.begin(), line.end());
    ++layout.height;
  }
  if (layout.width == 0 || layout.height == 0) throw LayoutError("layout is empty");
  return layout;
}

GridLayout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open layout " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  GridLayout layout = parse_layout(buf.str());
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  if (std::filesystem::exists(sidecar)) layout.metadata = parse_json_file(sidecar);
  return layout;
}

void validate_layout(const GridLayout& layout, EnvKind kind) {
  std::string allowed;
  switch (kind) {
    case EnvKind::kOpenRoom: allowed = std::string("#.") + std::string(cell::kCornerColors); break;
    case EnvKind::kMaze: allowed = "#.rg"; break;
    case EnvKind::kTMaze: allowed = "#.Dc"; break;
  }
  int floor = 0, green = 0, cue = 0, doors = 0;
  for (int y = 0; y < layout.height; ++y) {
    for (int x = 0; x < layout.width; ++x) {
      const char c = layout.at(x, y);
      if (allowed.find(c) == std::string::npos) {
        throw LayoutError(std::string("cell '") + c + "' at (" + std::to_string(x) + ", " +
                          std::to_string(y) + ") is not valid for " + std::string(to_string(kind)));
      }
      const bool border = x == 0 || y == 0 || x == layout.width - 1 || y == layout.height - 1;
      const bool walkable = c == cell::kFloor || c == cell::kRed || c == cell::kGreen;
      if (border && walkable) {
        throw LayoutError("walkable cell on the border at (" + std::to_string(x) + ", " +
                          std::to_string(y) + ")");
      }
      floor += walkable;
      green += c == cell::kGreen;
      cue += c == cell::kCue;
      doors += c == cell::kDoor;
    }
  }
  if (floor == 0) throw LayoutError("layout has no walkable cell");
  if (kind == EnvKind::kMaze && green != 1) {
    throw LayoutError("maze needs exactly one green tile, found " + std::to_string(green));
  }
  if (kind == EnvKind::kTMaze && (cue != 1 || doors != 2)) {
    throw LayoutError("T-maze needs one cue tile and two doors");
  }
  if (kind == EnvKind::kOpenRoom) {
    std::string seen;
    for (char c : layout.cells) {
      if (is_corner_color(c)) {
        if (seen.find(c) != std::string::npos) throw LayoutError("corner colours must be unique");
        seen += c;
      }
    }
  }
}

GridLayout default_open_room_layout() {
  return parse_layout(
      "b####y\n"
      "#....#\n"
      "#....#\n"
      "#....#\n"
      "#....#\n"
      "o####p\n");
}

GridLayout default_maze_layout() {
  return parse_layout(
      "##########\n"
      "#r.r.rrrr#\n"
      "#r...r.rr#\n"
      "#r.......#\n"
      "#r..grr..#\n"
      "#....rr.r#\n"
      "#r.rr....#\n"
      "#rr.r.r..#\n"
      "#rrr...rr#\n"
      "##########\n");
}

GridLayout default_tmaze_layout() {
  return parse_layout(
      "#####\n"
      "#D.D#\n"
      "##.##\n"
      "##.##\n"
      "##c##\n"
      "#####\n");
}

GridLayout default_layout(EnvKind kind) {
  switch (kind) {
    case EnvKind::kOpenRoom: return default_open_room_layout();
    case EnvKind::kMaze: return default_maze_layout();
    case EnvKind::kTMaze: return default_tmaze_layout();
  }
  throw ConfigError("unknown environment kind");
}

// --- registry -------------------------------------------------------------------

ObsId ObsRegistry::intern(const std::string& key) {
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  if (frozen_) throw InvalidArgument("observation '" + key + "' is not in the frozen registry");
  const ObsId id = obs_id(keys_.size());
  keys_.push_back(key);
  ids_.emplace(key, id);
  return id;
}

std::optional<ObsId> ObsRegistry::find(const std::string& key) const {
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  return std::nullopt;
}

const std::string& ObsRegistry::key(ObsId id) const {
  if (index(id) >= keys_.size()) throw InvalidArgument("observation id out of range");
  return keys_[index(id)];
}

json ObsRegistry::to_json() const { return keys_; }

ObsRegistry ObsRegistry::from_json(const json& doc) {
  if (!doc.is_array()) throw ValidationError("registry must be a JSON array of keys");
  ObsRegistry reg;
  for (const auto& k : doc) {
    if (!k.is_string()) throw ValidationError("registry keys must be strings");
    const auto key = k.get<std::string>();
    if (reg.find(key)) throw ValidationError("duplicate registry key '" + key + "'");
    reg.intern(key);
  }
  reg.freeze();
  return reg;
}

// --- base environment ---------------------------------------------------------------

GridEnv::GridEnv(GridLayout layout, std::shared_ptr<ObsRegistry> registry, std::size_t step_cap)
    : layout_(std::move(layout)), registry_(std::move(registry)), step_cap_(step_cap) {
  if (!registry_) registry_ = std::make_shared<ObsRegistry>();
}

void GridEnv::check_action(ActionId action) const {
  if (index(action) >= n_actions()) {
    throw InvalidArgument("action " + std::to_string(index(action)) + " is outside the " +
                          std::to_string(n_actions()) + "-action set");
  }
}

std::string render_view(const GridLayout& layout, int x, int y, Heading heading, char cue_override) {
  const int h = static_cast<int>(heading);
  const int fx = kDx[h], fy = kDy[h];
  const int rx = kDx[(h + 1) % 4], ry = kDy[(h + 1) % 4];
  std::string key;
  key.reserve(9);
  for (int ahead = 2; ahead >= 0; --ahead) {
    for (int side = -1; side <= 1; ++side) {
      char c = layout.at(x + fx * ahead + rx * side, y + fy * ahead + ry * side);
      if (c == cell::kCue && cue_override != 0) c = cue_override;
      key.push_back(c);
    }
  }
  return key;
}

// --- open room ------------------------------------------------------------------------

OpenRoomEnv::OpenRoomEnv(std::shared_ptr<ObsRegistry> registry, GridLayout layout,
                         std::size_t step_cap)
    : GridEnv(std::move(layout), std::move(registry), step_cap) {
  validate_layout(layout_, EnvKind::kOpenRoom);
  for (int y = 0; y < layout_.height; ++y) {
    for (int x = 0; x < layout_.width; ++x) {
      if (!is_corner_color(layout_.at(x, y))) continue;
      // The floor cell diagonally inside the coloured tile.
      const int ix = x == 0 ? 1 : x - 1;
      const int iy = y == 0 ? 1 : y - 1;
      if (layout_.at(ix, iy) != cell::kFloor) {
        throw LayoutError("corner colour at (" + std::to_string(x) + ", " + std::to_string(y) +
                          ") has no adjacent floor cell");
      }
      corners_.push_back({x, y, ix, iy});
    }
  }
  if (corners_.empty()) throw LayoutError("open room needs at least one coloured corner");
  for (int y = 0; y < layout_.height; ++y) {
    for (int x = 0; x < layout_.width; ++x) {
      if (layout_.at(x, y) != cell::kFloor) continue;
      const bool corner = std::any_of(corners_.begin(), corners_.end(), [&](const Corner& c) {
        return c.floor_x == x && c.floor_y == y;
      });
      if (!corner) starts_.emplace_back(x, y);
    }
  }
  if (starts_.empty()) throw LayoutError("open room has no non-corner start cell");
}

std::vector<std::string> OpenRoomEnv::action_names() const {
  return {"turn_left", "turn_right", "forward"};
}

std::vector<std::string> OpenRoomEnv::corner_keys(int k) const {
  const Corner& c = corners_.at(static_cast<std::size_t>(k));
  const char color = layout_.at(c.wall_x, c.wall_y);
  std::vector<std::string> keys;
  for (int h = 0; h < 4; ++h) {
    std::string key = render_view(layout_, c.floor_x, c.floor_y, static_cast<Heading>(h));
    if (key.find(color) != std::string::npos) keys.push_back(std::move(key));
  }
  return keys;
}

StepResult OpenRoomEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  state_ = EnvState{};
  state_.episode_variant = static_cast<int>(rng.uniform_index(corners_.size()));
  const auto [x, y] = starts_[rng.uniform_index(starts_.size())];
  state_.x = x;
  state_.y = y;
  // Face the centre of the room along the dominant axis.
  const double dx = (layout_.width - 1) / 2.0 - x;
  const double dy = (layout_.height - 1) / 2.0 - y;
  const bool horizontal =
      std::abs(dx) > std::abs(dy) || (std::abs(dx) == std::abs(dy) && rng.uniform_index(2) == 0);
  if (horizontal) {
    state_.heading = dx > 0 ? Heading::kEast : Heading::kWest;
  } else {
    state_.heading = dy > 0 ? Heading::kSouth : Heading::kNorth;
  }
  goal_keys_ = corner_keys(state_.episode_variant);
  return emit();
}

StepResult OpenRoomEnv::step(ActionId action) {
  check_action(action);
  switch (index(action)) {
    case kTurnLeft: state_.heading = turn(state_.heading, -1); break;
    case kTurnRight: state_.heading = turn(state_.heading, 1); break;
    case kForward: {
      const int h = static_cast<int>(state_.heading);
      const int nx = state_.x + kDx[h], ny = state_.y + kDy[h];
      if (layout_.at(nx, ny) == cell::kFloor) {
        state_.x = nx;
        state_.y = ny;
      }
      break;
    }
  }
  ++state_.t;
  return emit();
}

StepResult OpenRoomEnv::emit(bool force_done) {
  const std::string key = render_view(layout_, state_.x, state_.y, state_.heading);
  StepResult r;
  r.obs = registry_->intern(key);
  r.t = state_.t;
  r.success = std::find(goal_keys_.begin(), goal_keys_.end(), key) != goal_keys_.end();
  r.done = force_done || r.success || state_.t >= step_cap_;
  return r;
}

std::vector<ObsId> OpenRoomEnv::goal_observations() {
  std::vector<ObsId> out;
  for (const auto& k : goal_keys_) out.push_back(registry_->intern(k));
  return out;
}

std::vector<std::string> OpenRoomEnv::enumerate_observation_keys() const {
  std::vector<std::string> keys;
  for (int y = 0; y < layout_.height; ++y) {
    for (int x = 0; x < layout_.width; ++x) {
      if (layout_.at(x, y) != cell::kFloor) continue;
      for (int h = 0; h < 4; ++h) keys.push_back(render_view(layout_, x, y, static_cast<Heading>(h)));
    }
  }
  return keys;
}

// --- ambiguous maze ---------------------------------------------------------------------

MazeEnv::MazeEnv(std::shared_ptr<ObsRegistry> registry, GridLayout layout, std::size_t step_cap)
    : GridEnv(std::move(layout), std::move(registry), step_cap) {
  validate_layout(layout_, EnvKind::kMaze);
  for (int y = 0; y < layout_.height; ++y) {
    for (int x = 0; x < layout_.width; ++x) {
      if (layout_.at(x, y) == cell::kFloor) starts_.emplace_back(x, y);
    }
  }
  if (starts_.empty()) throw LayoutError("maze has no white start tile");
}

std::vector<std::string> MazeEnv::action_names() const { return {"up", "down", "left", "right"}; }

std::string MazeEnv::tile_key(char c) {
  switch (c) {
    case cell::kRed: return "red";
    case cell::kGreen: return "green";
    default: return "white";
  }
}

StepResult MazeEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  state_ = EnvState{};
  const auto [x, y] = starts_[rng.uniform_index(starts_.size())];
  state_.x = x;
  state_.y = y;
  return emit();
}

StepResult MazeEnv::step(ActionId action) {
  check_action(action);
  static constexpr int kMoveX[4] = {0, 0, -1, 1};
  static constexpr int kMoveY[4] = {-1, 1, 0, 0};
  const int nx = state_.x + kMoveX[index(action)];
  const int ny = state_.y + kMoveY[index(action)];
  if (layout_.at(nx, ny) != cell::kWall) {
    state_.x = nx;
    state_.y = ny;
  }
  ++state_.t;
  return emit();
}

StepResult MazeEnv::emit() {
  const char c = layout_.at(state_.x, state_.y);
  StepResult r;
  r.obs = registry_->intern(tile_key(c));
  r.t = state_.t;
  r.success = c == cell::kGreen;
  r.done = r.success || state_.t >= step_cap_;
  return r;
}

std::vector<ObsId> MazeEnv::goal_observations() { return {registry_->intern(tile_key(cell::kGreen))}; }

std::vector<std::string> MazeEnv::enumerate_observation_keys() const {
  std::vector<std::string> keys;
  for (char c : layout_.cells) {
    if (c == cell::kWall) continue;
    std::string k = tile_key(c);
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(std::move(k));
  }
  return keys;
}

// --- T-maze ------------------------------------------------------------------------------

TMazeEnv::TMazeEnv(std::shared_ptr<ObsRegistry> registry, GridLayout layout, std::size_t step_cap)
    : GridEnv(std::move(layout), std::move(registry), step_cap) {
  validate_layout(layout_, EnvKind::kTMaze);
  std::vector<std::pair<int, int>> doors;
  for (int y = 0; y < layout_.height; ++y) {
    for (int x = 0; x < layout_.width; ++x) {
      const char c = layout_.at(x, y);
      if (c == cell::kCue) {
        start_x_ = x;
        start_y_ = y - 1;
      } else if (c == cell::kDoor) {
        doors.emplace_back(x, y);
      }
    }
  }
  if (layout_.at(start_x_, start_y_) != cell::kFloor) {
    throw LayoutError("T-maze cue must have a floor cell directly above it");
  }
  if (doors[0].second != doors[1].second || doors[0].first == doors[1].first) {
    throw LayoutError("T-maze doors must sit on the same row");
  }
  door_y_ = doors[0].second;
  left_door_x_ = std::min(doors[0].first, doors[1].first);
  right_door_x_ = std::max(doors[0].first, doors[1].first);
  for (const auto& [dx, dy] : doors) {
    for (int h = 0; h < 4; ++h) {
      if (layout_.at(dx - kDx[h], dy - kDy[h]) != cell::kFloor) continue;
      if (!layout_.inside(dx + kDx[h], dy + kDy[h]) || layout_.at(dx + kDx[h], dy + kDy[h]) != cell::kWall) {
        throw LayoutError("T-maze door needs a walled tile behind it");
      }
    }
  }
}

std::vector<std::string> TMazeEnv::action_names() const {
  return {"turn_left", "turn_right", "forward"};
}

char TMazeEnv::cue_color() const { return reward_on_right() ? cell::kCueBlue : cell::kCueRed; }

StepResult TMazeEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  state_ = EnvState{};
  state_.episode_variant = static_cast<int>(rng.uniform_index(2));
  state_.x = start_x_;
  state_.y = start_y_;
  state_.heading = Heading::kNorth;
  finished_ = false;
  return emit(render_view(layout_, state_.x, state_.y, state_.heading, cue_color()), false, false);
}

StepResult TMazeEnv::step(ActionId action) {
  check_action(action);
  if (finished_) throw InvalidArgument("T-maze episode already ended; call reset()");
  ++state_.t;
  switch (index(action)) {
    case kTurnLeft: state_.heading = turn(state_.heading, -1); break;
    case kTurnRight: state_.heading = turn(state_.heading, 1); break;
    case kForward: {
      const int h = static_cast<int>(state_.heading);
      const int nx = state_.x + kDx[h], ny = state_.y + kDy[h];
      const char c = layout_.at(nx, ny);
      if (c == cell::kDoor) {
        finished_ = true;
        const bool right = nx == right_door_x_;
        if (right == reward_on_right()) {
          return emit(std::string(kRewardKey), true, true);
        }
        state_.x = nx + kDx[h];
        state_.y = ny + kDy[h];
        return emit(landing_view(state_.x, state_.y, state_.heading), true, false);
      }
      if (c == cell::kFloor) {
        state_.x = nx;
        state_.y = ny;
      }
      break;
    }
  }
  const bool capped = state_.t >= step_cap_;
  if (capped) finished_ = true;
  return emit(render_view(layout_, state_.x, state_.y, state_.heading, cue_color()), capped, false);
}

// The tile behind a door is walled off from the corridor; render it as floor
// so the agent's own cell reads the same as anywhere else.
std::string TMazeEnv::landing_view(int x, int y, Heading heading) const {
  GridLayout pocket = layout_;
  pocket.cells[static_cast<std::size_t>(y * pocket.width + x)] = cell::kFloor;
  return render_view(pocket, x, y, heading, cue_color());
}

StepResult TMazeEnv::emit(std::string key, bool done, bool success) {
  StepResult r;
  r.obs = registry_->intern(key);
  r.t = state_.t;
  r.done = done;
  r.success = success;
  return r;
}

std::vector<ObsId> TMazeEnv::goal_observations() {
  return {registry_->intern(std::string(kRewardKey))};
}

std::vector<std::string> TMazeEnv::enumerate_observation_keys() const {
  std::vector<std::string> keys;
  for (char cue : {cell::kCueRed, cell::kCueBlue}) {
    for (int y = 0; y < layout_.height; ++y) {
      for (int x = 0; x < layout_.width; ++x) {
        if (layout_.at(x, y) != cell::kFloor) continue;
        for (int h = 0; h < 4; ++h) {
          keys.push_back(render_view(layout_, x, y, static_cast<Heading>(h), cue));
        }
      }
    }
  }
  for (int door_x : {left_door_x_, right_door_x_}) {
    for (int h = 0; h < 4; ++h) {
      const int px = door_x - kDx[h], py = door_y_ - kDy[h];
      if (layout_.at(px, py) != cell::kFloor) continue;
      keys.push_back(landing_view(door_x + kDx[h], door_y_ + kDy[h], static_cast<Heading>(h)));
    }
  }
  keys.emplace_back(kRewardKey);
  return keys;
}

// --- helpers ------------------------------------------------------------------------------

std::unique_ptr<GridEnv> make_env(EnvKind kind, std::shared_ptr<ObsRegistry> registry,
                                  std::optional<GridLayout> layout,
                                  std::optional<std::size_t> step_cap) {
  GridLayout l = layout ? std::move(*layout) : default_layout(kind);
  const std::size_t cap = step_cap.value_or(25);
  switch (kind) {
    case EnvKind::kOpenRoom: return std::make_unique<OpenRoomEnv>(std::move(registry), std::move(l), cap);
    case EnvKind::kMaze: return std::make_unique<MazeEnv>(std::move(registry), std::move(l), cap);
    case EnvKind::kTMaze: return std::make_unique<TMazeEnv>(std::move(registry), std::move(l), cap);
  }
  throw ConfigError("unknown environment kind");
}

ObsRegistry exhaustive_registry(const GridEnv& env) {
  ObsRegistry reg;
  for (const auto& k : env.enumerate_observation_keys()) reg.intern(k);
  reg.freeze();
  return reg;
}

TrajectoryData collect_random_walk(GridEnv& env, const CollectSpec& spec, std::uint64_t seed) {
  if ((spec.steps == 0) == (spec.episodes == 0)) {
    throw InvalidArgument("collection needs a positive step count or a positive episode count");
  }
  TrajectoryData data;
  Rng actions(splitmix64(seed ^ 0x5eedULL));
  if (spec.steps > 0) {
    if (!env.supports_continuous_walk()) {
      throw InvalidArgument(std::string(to_string(env.kind())) +
                            " walks terminate; collect by episodes");
    }
    const std::size_t saved_cap = env.step_cap();
    env.set_step_cap(static_cast<std::size_t>(-1));
    data.observations.push_back(env.reset(seed).obs);
    for (std::size_t k = 0; k < spec.steps; ++k) {
      const ActionId a = action_id(actions.uniform_index(env.n_actions()));
      data.actions.push_back(a);
      data.observations.push_back(env.step(a).obs);
    }
    env.set_step_cap(saved_cap);
  } else {
    for (std::size_t e = 0; e < spec.episodes; ++e) {
      const StepResult first = env.reset(derive_seed(seed, "episode", e));
      if (!data.observations.empty()) data.actions.push_back(action_id(0));
      data.episode_boundaries.push_back(data.observations.size());
      data.observations.push_back(first.obs);
      StepResult r = first;
      while (!r.done) {
        const ActionId a = action_id(actions.uniform_index(env.n_actions()));
        r = env.step(a);
        data.actions.push_back(a);
        data.observations.push_back(r.obs);
      }
    }
  }
  env.registry().freeze();
  return data;
}

}  // namespace clonemap
