#include <doctest.h>

#include <memory>
#include <set>

#include "clonemap/envs.hpp"
#include "clonemap/errors.hpp"

using namespace clonemap;

namespace {

std::shared_ptr<ObsRegistry> fresh() { return std::make_shared<ObsRegistry>(); }

std::size_t distinct(const std::vector<std::string>& keys) {
  return std::set<std::string>(keys.begin(), keys.end()).size();
}

// First reset seed whose episode puts the reward on the requested side.
std::uint64_t seed_for_side(TMazeEnv& env, bool right) {
  for (std::uint64_t s = 0;; ++s) {
    env.reset(s);
    if (env.reward_on_right() == right) return s;
  }
}

}  // namespace

TEST_CASE("forward view geometry") {
  // Agent at (2, 3) facing north sees rows 1..3 of columns 1..3.
  const GridLayout g = parse_layout("#####\n#abc#\n#def#\n#g.h#\n#####\n");
  CHECK(render_view(g, 2, 3, Heading::kNorth) == "abcdefg.h");
  // Facing south from (2, 1): the view is rotated, own row at the bottom.
  CHECK(render_view(g, 2, 1, Heading::kSouth) == "h.gfedcba");
  // Cells outside the grid read as wall.
  CHECK(render_view(g, 2, 1, Heading::kNorth) == "######abc");
}

TEST_CASE("open room alphabet") {
  OpenRoomEnv env(fresh());
  CHECK(distinct(env.enumerate_observation_keys()) == 21);
  CHECK(exhaustive_registry(env).size() == 21);
  // A long walk only ever produces enumerated keys.
  auto reg = std::make_shared<ObsRegistry>(exhaustive_registry(env));
  OpenRoomEnv walk(reg);
  CHECK_NOTHROW(collect_random_walk(walk, CollectSpec{20000, 0}, 3));
  CHECK(reg->size() == 21);
}

TEST_CASE("open room goal is the chosen corner") {
  OpenRoomEnv env(fresh());
  std::set<int> corners;
  for (std::uint64_t s = 0; s < 64; ++s) {
    const auto r = env.reset(s);
    CHECK_FALSE(r.done);
    corners.insert(env.state().episode_variant);
    const auto goals = env.goal_observations();
    CHECK(goals.size() == 2);
  }
  CHECK(corners.size() == 4);
}

TEST_CASE("maze moves and walls") {
  MazeEnv env(fresh());
  CHECK(distinct(env.enumerate_observation_keys()) == 3);
  env.reset(0);
  // Walking into the boundary wall leaves the agent in place.
  for (int i = 0; i < 12; ++i) env.step(action_id(MazeEnv::kUp));
  CHECK(env.state().y == 1);
  CHECK_THROWS_AS(env.step(action_id(7)), InvalidArgument);
}

TEST_CASE("maze reaches the green tile") {
  const GridLayout g = parse_layout("#####\n#.g.#\n#...#\n#####\n");
  MazeEnv env(fresh(), g, 10);
  env.reset(0);
  // Walk to the top row, then sweep toward the green tile.
  StepResult r = env.step(action_id(MazeEnv::kUp));
  for (int i = 0; i < 3 && !r.done; ++i) {
    r = env.step(action_id(env.state().x < 2 ? MazeEnv::kRight : MazeEnv::kLeft));
  }
  CHECK(r.done);
  CHECK(r.success);
}

TEST_CASE("T-maze alphabet") {
  TMazeEnv env(fresh());
  const auto keys = env.enumerate_observation_keys();
  const std::set<std::string> unique(keys.begin(), keys.end());
  CHECK(unique.size() == 18);
  CHECK(unique.count("reward") == 1);
  // The tile behind a wrong door looks the same from either door.
  CHECK(unique.count("#######.#") == 1);
  std::size_t with_cue = 0;
  for (const auto& k : unique) with_cue += k.find_first_of("RU") != std::string::npos;
  CHECK(with_cue == 8);
}

TEST_CASE("T-maze cue is visible only after turning around") {
  TMazeEnv env(fresh());
  std::string cue_view[2];
  for (bool right : {false, true}) {
    env.reset(seed_for_side(env, right));
    const StepResult start = env.step(action_id(TMazeEnv::kTurnRight));
    const StepResult back = env.step(action_id(TMazeEnv::kTurnRight));
    const std::string& k = env.registry().key(back.obs);
    CHECK(k.find(right ? 'U' : 'R') != std::string::npos);
    cue_view[right] = k;
    (void)start;
  }
  CHECK(cue_view[0] != cue_view[1]);
}

TEST_CASE("T-maze doors") {
  TMazeEnv env(fresh());
  for (bool right : {false, true}) {
    for (bool pick_right : {false, true}) {
      env.reset(seed_for_side(env, right));
      env.step(action_id(TMazeEnv::kForward));
      env.step(action_id(TMazeEnv::kForward));
      env.step(action_id(pick_right ? TMazeEnv::kTurnRight : TMazeEnv::kTurnLeft));
      const StepResult r = env.step(action_id(TMazeEnv::kForward));
      CHECK(r.done);
      CHECK(r.success == (right == pick_right));
      const std::string& k = env.registry().key(r.obs);
      CHECK((k == "reward") == (right == pick_right));
      CHECK_THROWS_AS(env.step(action_id(TMazeEnv::kForward)), InvalidArgument);
    }
  }
}

TEST_CASE("T-maze layouts need a walled tile behind each door") {
  CHECK_THROWS_AS(TMazeEnv(fresh(), parse_layout("#D.D#\n##.##\n##c##\n#####\n")), LayoutError);
}

TEST_CASE("episodic collection marks every episode start") {
  auto reg = std::make_shared<ObsRegistry>();
  TMazeEnv env(reg, default_tmaze_layout(), 50);
  const auto data = collect_random_walk(env, CollectSpec{0, 500}, 1);
  CHECK(data.episode_boundaries.size() == 500);
  CHECK(data.episode_boundaries.front() == 0);
  CHECK_NOTHROW(data.validate());
  CHECK(reg->frozen());
  CHECK(reg->size() <= 18);
  CHECK_THROWS_AS(collect_random_walk(env, CollectSpec{100, 0}, 1), InvalidArgument);
}

TEST_CASE("layout validation") {
  CHECK_THROWS_AS(validate_layout(parse_layout("###\n#.\n###\n"), EnvKind::kMaze), LayoutError);
  CHECK_THROWS_AS(validate_layout(parse_layout("###\n#x#\n###\n"), EnvKind::kMaze), LayoutError);
  CHECK_NOTHROW(validate_layout(default_maze_layout(), EnvKind::kMaze));
  CHECK_NOTHROW(validate_layout(default_open_room_layout(), EnvKind::kOpenRoom));
  CHECK_NOTHROW(validate_layout(default_tmaze_layout(), EnvKind::kTMaze));
}

TEST_CASE("registry round-trips and freezes") {
  ObsRegistry reg;
  const ObsId a = reg.intern("a");
  CHECK(reg.intern("a") == a);
  reg.intern("b");
  const ObsRegistry back = ObsRegistry::from_json(reg.to_json());
  CHECK(back.frozen());
  CHECK(back.key(a) == "a");
  reg.freeze();
  CHECK_THROWS_AS(reg.intern("c"), InvalidArgument);
}
