#include <doctest.h>

#include <cmath>
#include <sstream>

#include "clonemap/clone_hmm.hpp"
#include "clonemap/errors.hpp"
#include "clonemap/model_io.hpp"
#include "oracles.hpp"

using namespace clonemap;

namespace {

TrajectoryData make_data(std::vector<std::size_t> obs, std::vector<std::size_t> acts,
                         std::vector<std::size_t> bounds = {}) {
  TrajectoryData d;
  for (auto o : obs) d.observations.push_back(obs_id(o));
  for (auto a : acts) d.actions.push_back(action_id(a));
  d.episode_boundaries = std::move(bounds);
  return d;
}

// Two observations with one clone each, one action.
CloneHmm two_state() {
  CloneHmm m({1, 1}, 1);
  m.trans(0, 0, 0) = 0.3;
  m.trans(0, 0, 1) = 0.7;
  m.trans(0, 1, 0) = 0.6;
  m.trans(0, 1, 1) = 0.4;
  return m;
}

// A, A, B around a cycle: the two A clones are told apart by context only.
CloneHmm aliased_cycle() {
  CloneHmm m({2, 1}, 1);
  m.trans(0, 0, 1) = 1.0;
  m.trans(0, 1, 2) = 1.0;
  m.trans(0, 2, 0) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("likelihood of a hand-built two-state model") {
  const CloneHmm m = two_state();
  const auto d = make_data({0, 1, 1}, {0, 0});
  // Only the path 0 -> 1 -> 1 is consistent: 1 * 0.7 * 0.4.
  CHECK(log_likelihood(m, d) == doctest::Approx(std::log(0.28)).epsilon(1e-12));
  CHECK(std::abs(log_likelihood(m, d) - oracle::log_likelihood(m, d)) < 1e-10);
}

TEST_CASE("likelihood is -inf for an impossible sequence") {
  CloneHmm m = aliased_cycle();
  const auto d = make_data({1, 1}, {0});
  CHECK(std::isinf(log_likelihood(m, d)));
  CHECK_THROWS_AS(viterbi_decode(m, d), DecodeFailure);
}

TEST_CASE("forward pass matches path enumeration on random models") {
  Rng rng(11);
  for (int k = 0; k < 100; ++k) {
    const CloneHmm m = oracle::random_model(rng, 5, 3);
    const auto d = oracle::sample_trajectory(m, rng, 1 + rng.uniform_index(6), true);
    CAPTURE(k);
    CHECK(std::abs(log_likelihood(m, d) - oracle::log_likelihood(m, d)) < 1e-10);
  }
}

TEST_CASE("viterbi path is a most probable path") {
  Rng rng(12);
  for (int k = 0; k < 100; ++k) {
    const CloneHmm m = oracle::random_model(rng, 5, 3);
    const auto d = oracle::sample_trajectory(m, rng, 1 + rng.uniform_index(6), true);
    const auto path = viterbi_decode(m, d);
    REQUIRE(path.size() == d.size());
    for (std::size_t t = 0; t < d.size(); ++t) CHECK(m.obs_of(path[t]) == d.observations[t]);
    CAPTURE(k);
    CHECK(std::abs(oracle::path_log_prob(m, d, path) - oracle::best_path_log_prob(m, d)) < 1e-10);
  }
}

TEST_CASE("viterbi breaks ties toward the lowest state") {
  // Four states, two clones per symbol, every transition equally likely.
  CloneHmm m({2, 2}, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) m.trans(0, i, j) = 0.25;
  }
  const auto path = viterbi_decode(m, make_data({0, 1, 0, 1, 1}, {0, 0, 0, 0}));
  CHECK(path == std::vector<std::size_t>{0, 2, 0, 2, 2});
}

TEST_CASE("filtering matches the enumerated posterior") {
  Rng rng(13);
  for (int k = 0; k < 100; ++k) {
    const CloneHmm m = oracle::random_model(rng, 5, 3);
    const auto d = oracle::sample_trajectory(m, rng, 1 + rng.uniform_index(6), false);
    Belief b = initial_belief(m, d.observations[0]);
    for (std::size_t t = 1; t < d.size(); ++t) {
      b = filter_belief(m, b, d.actions[t - 1], d.observations[t]);
    }
    const auto expect = oracle::filter(m, d);
    CAPTURE(k);
    for (std::size_t s = 0; s < m.n_states(); ++s) CHECK(std::abs(b[s] - expect[s]) < 1e-10);
  }
}

TEST_CASE("filter update on an aliased pair") {
  // Clones 0 and 1 of symbol A; action 0 from clone 0 stays on A (clone 1),
  // from clone 1 goes to B.
  CloneHmm m({2, 1}, 2);
  m.trans(0, 0, 1) = 0.5;
  m.trans(1, 0, 0) = 0.5;
  m.trans(0, 1, 2) = 0.5;
  m.trans(1, 1, 0) = 0.5;
  m.trans(0, 2, 2) = 1.0;
  const Belief prior = initial_belief(m, obs_id(0));
  CHECK(prior[0] == doctest::Approx(0.5));
  CHECK(prior[1] == doctest::Approx(0.5));
  // Seeing A again after action 0 is only possible from clone 0.
  const Belief post = filter_belief(m, prior, action_id(0), obs_id(0));
  CHECK(post[1] == doctest::Approx(1.0));
  // Seeing B after action 1 is impossible: the filter falls back to the clones of B.
  const Belief reset = filter_belief(m, prior, action_id(1), obs_id(1));
  CHECK(reset[2] == doctest::Approx(1.0));
}

TEST_CASE("EM never decreases the likelihood without pseudocounts") {
  Rng rng(14);
  for (int k = 0; k < 20; ++k) {
    const CloneHmm truth = oracle::random_model(rng, 5, 3);
    const auto d = oracle::sample_trajectory(truth, rng, 60, true);
    std::vector<std::uint32_t> clones(truth.clones_per_obs().begin(), truth.clones_per_obs().end());
    for (auto& c : clones) c += 1;
    const CloneHmm init = new_cscg(clones, truth.n_actions(), rng.next());
    EmOptions opts;
    opts.pseudocount = 0.0;
    opts.max_iters = 30;
    opts.tol = 0.0;
    const auto em = train_em(init, d, opts);
    for (std::size_t i = 1; i < em.trace.size(); ++i) CHECK(em.trace[i] >= em.trace[i - 1] - 1e-8);
  }
}

TEST_CASE("EM recovers an aliased cycle") {
  const CloneHmm truth = aliased_cycle();
  Rng rng(3);
  const auto train = oracle::sample_trajectory(truth, rng, 300, false);
  const auto held_out = oracle::sample_trajectory(truth, rng, 90, false);
  EmOptions opts;
  opts.pseudocount = 0.0;
  opts.max_iters = 100;
  const auto em = train_em(new_cscg(std::vector<std::uint32_t>{2, 1}, 1, 5), train, opts);
  CHECK(std::abs(log_likelihood(em.model, held_out) - log_likelihood(truth, held_out)) < 1e-6);
}

TEST_CASE("EM validates its inputs") {
  const CloneHmm m = new_cscg(2, 2, 1, 0);
  CHECK_THROWS_AS(train_em(m, make_data({0, 3}, {0})), InvalidArgument);
  CHECK_THROWS_AS(train_em(m, make_data({0, 1}, {4})), InvalidArgument);
  EmOptions bad;
  bad.pseudocount = -1.0;
  CHECK_THROWS_AS(train_em(m, make_data({0, 1}, {0}), bad), InvalidArgument);
}

TEST_CASE("refinement keeps exactly the decoded states") {
  Rng rng(15);
  for (int k = 0; k < 20; ++k) {
    const CloneHmm truth = oracle::random_model(rng, 5, 2);
    const auto d = oracle::sample_trajectory(truth, rng, 40, true);
    const auto path = viterbi_decode(truth, d);
    for (bool reestimate : {true, false}) {
      const CloneHmm r = refine_viterbi(truth, d, reestimate);
      for (std::size_t s = 0; s < r.n_states(); ++s) {
        const bool used = std::find(path.begin(), path.end(), s) != path.end();
        CHECK(r.active(s) == used);
      }
      CHECK_NOTHROW(r.validate());
    }
  }
}

TEST_CASE("a state never left after refinement becomes absorbing") {
  const CloneHmm m = two_state();
  // State 1 only ever appears last.
  const CloneHmm r = refine_viterbi(m, make_data({0, 0, 1}, {0, 0}), true);
  CHECK(r.trans(0, 0, 0) == doctest::Approx(0.5));
  CHECK(r.trans(0, 0, 1) == doctest::Approx(0.5));
  CHECK(r.trans(0, 1, 1) == doctest::Approx(1.0));
}

TEST_CASE("model files round-trip and reject broken rows") {
  Rng rng(16);
  const CloneHmm m = oracle::random_model(rng, 5, 3);
  const CloneHmm back = model_from_json(model_to_json(m));
  CHECK(back == m);

  auto doc = model_to_json(m);
  // Bump one probability so its source row no longer sums to one.
  const std::size_t row = m.n_states() - 1;
  auto& cell = doc.at("trans")[0][row][0];
  cell = cell.get<double>() + 0.25;
  try {
    model_from_json(doc);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row " + std::to_string(row)) != std::string::npos);
  }
}

TEST_CASE("trajectory files round-trip with episode boundaries") {
  const auto d = make_data({0, 1, 2, 0, 1}, {1, 0, 2, 1}, {3});
  std::stringstream buf;
  write_trajectory(d, buf);
  const auto back = read_trajectory(buf);
  CHECK(back.observations == d.observations);
  // Episodic files list the first episode start explicitly.
  CHECK(back.episode_boundaries == std::vector<std::size_t>{0, 3});
  CHECK(back.actions[0] == d.actions[0]);
  CHECK(back.actions[1] == d.actions[1]);
  CHECK(back.actions[3] == d.actions[3]);

  std::stringstream broken("{\"obs\": 0, \"action\": null}\n{\"obs\": 1, \"act");
  CHECK_THROWS_AS(read_trajectory(broken), ParseError);
}
