#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "clonemap/aif_model.hpp"
#include "clonemap/clone_hmm.hpp"
#include "clonemap/envs.hpp"
#include "clonemap/errors.hpp"
#include "clonemap/model_io.hpp"
#include "clonemap/pipeline.hpp"
#include "clonemap/planners.hpp"
#include "clonemap/stats.hpp"

namespace py = pybind11;
using namespace clonemap;

namespace {

// Python sees observations and actions as plain ints.
TrajectoryData make_data(const std::vector<std::size_t>& obs, const std::vector<std::size_t>& acts,
                         const std::vector<std::size_t>& boundaries) {
  TrajectoryData d;
  for (auto o : obs) d.observations.push_back(obs_id(o));
  for (auto a : acts) d.actions.push_back(action_id(a));
  d.episode_boundaries = boundaries;
  d.validate();
  return d;
}

py::array_t<double> trans_array(const CloneHmm& m) {
  const auto a = static_cast<py::ssize_t>(m.n_actions());
  const auto s = static_cast<py::ssize_t>(m.n_states());
  py::array_t<double> out({a, s, s});
  auto v = out.mutable_unchecked<3>();
  for (py::ssize_t k = 0; k < a; ++k)
    for (py::ssize_t i = 0; i < s; ++i)
      for (py::ssize_t j = 0; j < s; ++j) v(k, i, j) = m.trans(k, i, j);
  return out;
}

py::dict test_dict(const TestResult& r) {
  py::dict d;
  d["test"] = std::string(to_string(r.kind));
  d["applicable"] = r.applicable;
  d["statistic"] = r.statistic;
  d["p_value"] = r.p_value;
  d["log10_p"] = r.log10_p;
  return d;
}

}  // namespace

PYBIND11_MODULE(_clonemap, m) {
  m.doc() = "Clone-structured cognitive maps with greedy and active-inference planners";

  // Translators run newest first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DecodeFailure>(m, "DecodeFailure", PyExc_RuntimeError);

  py::class_<TrajectoryData>(m, "Trajectory")
      .def(py::init(&make_data), py::arg("observations"), py::arg("actions"),
           py::arg("episode_boundaries") = std::vector<std::size_t>{})
      .def_property_readonly("observations",
                             [](const TrajectoryData& d) {
                               std::vector<std::size_t> v;
                               for (auto o : d.observations) v.push_back(index(o));
                               return v;
                             })
      .def_property_readonly("actions",
                             [](const TrajectoryData& d) {
                               std::vector<std::size_t> v;
                               for (auto a : d.actions) v.push_back(index(a));
                               return v;
                             })
      .def_readonly("episode_boundaries", &TrajectoryData::episode_boundaries)
      .def("__len__", &TrajectoryData::size);

  py::class_<CloneHmm>(m, "CloneHmm")
      .def_property_readonly("n_states", &CloneHmm::n_states)
      .def_property_readonly("n_obs", &CloneHmm::n_obs)
      .def_property_readonly("n_actions", &CloneHmm::n_actions)
      .def_property_readonly("n_active", &CloneHmm::n_active)
      .def("obs_of", [](const CloneHmm& h, std::size_t s) { return index(h.obs_of(s)); })
      .def("transitions", &trans_array, "Joint P(s', a | s) as an [action, from, to] array.");

  py::class_<EmResult>(m, "EmResult")
      .def_readonly("model", &EmResult::model)
      .def_readonly("trace", &EmResult::trace)
      .def_readonly("converged", &EmResult::converged);

  m.def("new_cscg",
        [](std::size_t n_obs, std::uint32_t clones, std::size_t n_actions, std::uint64_t seed) {
          return new_cscg(n_obs, clones, n_actions, seed);
        },
        py::arg("n_obs"), py::arg("clones_per_obs"), py::arg("n_actions"), py::arg("seed") = 0);
  m.def("log_likelihood", &log_likelihood);
  m.def("viterbi_decode", &viterbi_decode);
  m.def("refine_viterbi", &refine_viterbi, py::arg("model"), py::arg("data"),
        py::arg("reestimate") = true);
  m.def("train_em",
        [](const CloneHmm& model, const TrajectoryData& data, double pseudocount,
           std::size_t max_iters, double tol) {
          EmOptions o;
          o.pseudocount = pseudocount;
          o.max_iters = max_iters;
          o.tol = tol;
          py::gil_scoped_release release;
          return train_em(model, data, o);
        },
        py::arg("model"), py::arg("data"), py::arg("pseudocount") = 1e-2,
        py::arg("max_iters") = 200, py::arg("tol") = 1e-6);
  m.def("filter",
        [](const CloneHmm& model, const TrajectoryData& data) {
          Belief b = initial_belief(model, data.observations.at(0));
          for (std::size_t t = 1; t < data.size(); ++t) {
            b = filter_belief(model, b, data.actions[t - 1], data.observations[t]);
          }
          return b.probs;
        },
        "Belief over the last state of a single-episode sequence.");
  m.def("load_model", [](const std::filesystem::path& p) { return load_model(p); });
  m.def("save_model", [](const CloneHmm& h, const std::filesystem::path& p) { save_model(h, p); });

  py::class_<AifModel>(m, "AifModel")
      .def_readonly("n_states", &AifModel::n_states)
      .def_readonly("n_obs", &AifModel::n_obs)
      .def_readonly("n_actions", &AifModel::n_actions)
      .def_readonly("c", &AifModel::c_vec)
      .def_readonly("d", &AifModel::d_vec)
      .def_readonly("dispreferred_index", &AifModel::dispreferred_index)
      .def("b", &AifModel::b);
  m.def("to_aif", &to_aif);
  m.def("prune_states", &prune_states, py::arg("model"), py::arg("threshold") = 1e-4);
  m.def("with_goal_preference",
        [](const AifModel& g, const std::vector<std::size_t>& goal_obs, double scale) {
          std::vector<ObsId> ids;
          for (auto o : goal_obs) ids.push_back(obs_id(o));
          const auto goals = goal_states(g, ids);
          return set_preference(g, distance_map(g, goals), scale);
        },
        py::arg("model"), py::arg("goal_obs"), py::arg("scale") = 1.0);
  m.def("efe",
        [](const AifModel& g, const std::vector<double>& belief, const std::vector<std::size_t>& policy) {
          Policy pi;
          for (auto a : policy) pi.actions.push_back(action_id(a));
          const auto r = efe(g, Belief{belief}, pi);
          py::dict d;
          d["total"] = r.total;
          d["epistemic"] = r.epistemic;
          d["pragmatic"] = r.pragmatic;
          return d;
        });
  m.def("policy_posterior",
        [](const std::vector<double>& g, double gamma) { return policy_posterior(g, gamma); });

  m.def("t_test", [](const std::vector<double>& x, const std::vector<double>& y, bool welch) {
    return test_dict(t_test_independent(x, y, welch));
  }, py::arg("x"), py::arg("y"), py::arg("welch") = false);
  m.def("z_test", [](std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2) {
    return test_dict(z_test_proportions(k1, n1, k2, n2));
  });

  py::class_<GridEnv>(m, "Env")
      .def_property_readonly("n_actions", &GridEnv::n_actions)
      .def_property_readonly("action_names", &GridEnv::action_names)
      .def("observation_keys",
           [](const GridEnv& e) {
             const auto k = e.enumerate_observation_keys();
             return std::vector<std::string>(k.begin(), k.end());
           })
      .def("reset",
           [](GridEnv& e, std::uint64_t seed) { return index(e.reset(seed).obs); })
      .def("step",
           [](GridEnv& e, std::size_t a) {
             const auto r = e.step(action_id(a));
             return py::make_tuple(index(r.obs), r.done, r.success);
           })
      .def("key", [](GridEnv& e, std::size_t o) { return e.registry().key(obs_id(o)); });
  m.def("make_env",
        [](const std::string& kind) {
          return make_env(env_kind_from_string(kind), std::make_shared<ObsRegistry>());
        },
        py::arg("kind"));
  m.def("collect",
        [](GridEnv& env, std::size_t steps, std::size_t episodes, std::uint64_t seed) {
          return collect_random_walk(env, CollectSpec{steps, episodes}, seed);
        },
        py::arg("env"), py::arg("steps") = 0, py::arg("episodes") = 0, py::arg("seed") = 0);

  m.def("run_recipe",
        [](const std::filesystem::path& recipe, std::optional<std::filesystem::path> out) {
          ExperimentConfig cfg = load_config(recipe);
          RunFlags flags;
          flags.out = out;
          apply_flags(cfg, flags);
          py::gil_scoped_release release;
          cmd_collect(cfg);
          cmd_train(cfg);
          const auto ev = cmd_eval(cfg, flags);
          py::gil_scoped_acquire acquire;
          py::dict d;
          d["report_dir"] = ev.report_dir.string();
          d["violations"] = ev.violations;
          return d;
        },
        py::arg("recipe"), py::arg("out") = std::nullopt,
        "Collect, train and evaluate one recipe; returns the report directory and violations.");
}
