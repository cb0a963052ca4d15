#include "clonemap/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "clonemap/errors.hpp"
#include "clonemap/model_io.hpp"
#include "clonemap/random.hpp"

namespace clonemap {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.is_object() || !obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  if (!doc.contains(key)) return empty;
  if (!doc.at(key).is_object()) throw ConfigError(std::string("'") + key + "' must be an object");
  return doc.at(key);
}

ActionSelection selection_from(const std::string& s) {
  if (s == "sample") return ActionSelection::kSample;
  if (s == "argmax") return ActionSelection::kArgmax;
  throw ConfigError("action_selection must be 'sample' or 'argmax'");
}

AgentSpec agent_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("agent entry must be an object");
  AgentSpec a;
  a.kind = agent_kind_from_string(get_or<std::string>(j, "agent", ""));
  a.name = get_or<std::string>(j, "name", std::string(to_string(a.kind)));
  const auto seed = get_or<std::uint64_t>(j, "seed", 0);
  a.aif.gamma = get_or(j, "gamma", a.aif.gamma);
  a.aif.horizon = get_or(j, "horizon", a.aif.horizon);
  a.aif.action_selection = selection_from(get_or<std::string>(j, "action_selection", "sample"));
  a.aif.max_policies = get_or(j, "max_policies", a.aif.max_policies);
  a.aif.seed = seed;
  a.greedy.collapse_threshold = get_or(j, "collapse_threshold", a.greedy.collapse_threshold);
  a.greedy.max_plan_len = get_or(j, "max_plan_len", a.greedy.max_plan_len);
  a.greedy.commit_until_contradicted =
      get_or(j, "commit_until_contradicted", a.greedy.commit_until_contradicted);
  a.greedy.seed = seed;
  a.preference_scale = get_or(j, "preference_scale", a.preference_scale);
  if (!(a.aif.gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
  if (a.aif.horizon < 1) throw ConfigError("horizon must be at least 1");
  if (!(a.greedy.collapse_threshold > 0.0 && a.greedy.collapse_threshold <= 1.0)) {
    throw ConfigError("collapse_threshold must lie in (0, 1]");
  }
  if (!(a.preference_scale > 0.0)) throw ConfigError("preference_scale must be positive");
  return a;
}

json agent_to_json(const AgentSpec& a) {
  json j{{"agent", to_string(a.kind)}, {"name", a.name}, {"seed", a.aif.seed}};
  switch (a.kind) {
    case AgentKind::kRandom: break;
    case AgentKind::kGreedy:
      j["collapse_threshold"] = a.greedy.collapse_threshold;
      j["max_plan_len"] = a.greedy.max_plan_len;
      j["commit_until_contradicted"] = a.greedy.commit_until_contradicted;
      break;
    case AgentKind::kAif:
      j["gamma"] = a.aif.gamma;
      j["horizon"] = a.aif.horizon;
      j["action_selection"] = a.aif.action_selection == ActionSelection::kSample ? "sample" : "argmax";
      j["max_policies"] = a.aif.max_policies;
      j["preference_scale"] = a.preference_scale;
      break;
  }
  return j;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

fs::path output_dir(const ExperimentConfig& c) {
  const fs::path dir = c.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_manifest(const fs::path& dir, const std::string& stage, const ExperimentConfig& c,
                    json extra) {
  extra["stage"] = stage;
  extra["config_hash"] = config_hash(c);
  open_out(dir / (stage + "_manifest.json")) << extra.dump(2) << '\n';
  open_out(dir / "config.resolved.json") << config_to_json(c).dump(2) << '\n';
}

std::size_t env_actions(EnvKind kind) {
  auto reg = std::make_shared<ObsRegistry>();
  return make_env(kind, reg)->n_actions();
}

}  // namespace

ExperimentConfig config_from_json(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.name = get_or<std::string>(doc, "name", c.name);

  const auto& env = section(doc, "environment");
  c.env = env_kind_from_string(get_or<std::string>(env, "kind", "open_room"));
  c.layout_path = get_or<std::string>(env, "layout", "");

  const auto& col = section(doc, "collect");
  c.collect_steps = get_or(col, "steps", c.collect_steps);
  c.collect_episodes = get_or(col, "episodes", c.collect_episodes);
  c.collect_cap = get_or(col, "cap", c.collect_cap);
  c.collect_seed = get_or(col, "seed", c.collect_seed);

  const auto& model = section(doc, "model");
  c.clones_per_obs = get_or(model, "clones_per_obs", c.clones_per_obs);
  c.em_iters = get_or(model, "em_iters", c.em_iters);
  c.pseudocount = get_or(model, "pseudocount", c.pseudocount);
  c.tol = get_or(model, "tol", c.tol);
  c.model_seed = get_or(model, "seed", c.model_seed);
  c.reestimate = get_or(model, "reestimate", c.reestimate);
  c.restarts = get_or(model, "restarts", c.restarts);
  if (c.restarts == 0) throw ConfigError("model.restarts must be at least 1");

  const auto& conv = section(doc, "convert");
  c.prune_threshold = get_or(conv, "prune_threshold", c.prune_threshold);
  c.support_eps = get_or(conv, "support_eps", c.support_eps);

  if (doc.contains("agents")) {
    if (!doc.at("agents").is_array()) throw ConfigError("'agents' must be an array");
    for (const auto& a : doc.at("agents")) c.agents.push_back(agent_from_json(a));
  }

  const auto& ev = section(doc, "eval");
  c.n_trials = get_or(ev, "n_trials", c.n_trials);
  c.base_seed = get_or(ev, "base_seed", c.base_seed);
  c.eval_cap = get_or(ev, "cap", c.eval_cap);
  c.welch = get_or(ev, "welch", c.welch);

  c.output_dir = get_or<std::string>(doc, "output_dir", "runs/" + c.name);
  if (doc.contains("checks")) c.checks = checks_from_json(doc.at("checks"));

  if ((c.collect_steps > 0) == (c.collect_episodes > 0) && (c.collect_steps || c.collect_episodes)) {
    throw ConfigError("collect needs exactly one of 'steps' and 'episodes'");
  }
  if (c.clones_per_obs < 1) throw ConfigError("clones_per_obs must be at least 1");
  if (c.em_iters < 1) throw ConfigError("em_iters must be at least 1");
  if (!(c.pseudocount >= 0.0)) throw ConfigError("pseudocount must be non-negative");
  if (!(c.tol >= 0.0)) throw ConfigError("tol must be non-negative");
  if (!(c.prune_threshold >= 0.0 && c.prune_threshold < 1.0)) {
    throw ConfigError("prune_threshold must lie in [0, 1)");
  }
  if (!(c.support_eps >= 0.0 && c.support_eps < 1.0)) throw ConfigError("support_eps must lie in [0, 1)");
  if (c.eval_cap < 1 || c.collect_cap < 1) throw ConfigError("step caps must be at least 1");
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  return config_from_json(parse_json_file(path), path.parent_path());
}

json config_to_json(const ExperimentConfig& c) {
  json agents = json::array();
  for (const auto& a : c.agents) agents.push_back(agent_to_json(a));
  json checks = json::array();
  for (const auto& k : c.checks) {
    checks.push_back(json{{"agents", k.agents}, {"metric", k.metric}, {"op", k.op}, {"value", k.value}});
  }
  return json{
      {"name", c.name},
      {"environment", {{"kind", to_string(c.env)}, {"layout", c.layout_path}}},
      {"collect",
       {{"steps", c.collect_steps}, {"episodes", c.collect_episodes}, {"cap", c.collect_cap},
        {"seed", c.collect_seed}}},
      {"model",
       {{"clones_per_obs", c.clones_per_obs}, {"em_iters", c.em_iters}, {"pseudocount", c.pseudocount},
        {"tol", c.tol}, {"seed", c.model_seed}, {"reestimate", c.reestimate},
        {"restarts", c.restarts}}},
      {"convert", {{"prune_threshold", c.prune_threshold}, {"support_eps", c.support_eps}}},
      {"agents", std::move(agents)},
      {"eval",
       {{"n_trials", c.n_trials}, {"base_seed", c.base_seed}, {"cap", c.eval_cap}, {"welch", c.welch}}},
      {"output_dir", c.output_dir},
      {"checks", std::move(checks)}};
}

std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_to_json(c).dump())));
  return buf;
}

GridLayout resolve_layout(const ExperimentConfig& c) {
  if (c.layout_path.empty()) return default_layout(c.env);
  fs::path p = c.layout_path;
  if (p.is_relative()) p = c.base_dir / p;
  if (!fs::exists(p)) throw IoError("layout file not found: " + p.string());
  GridLayout layout = load_layout(p);
  validate_layout(layout, c.env);
  return layout;
}

void apply_flags(ExperimentConfig& c, const RunFlags& flags) {
  if (flags.out) c.output_dir = flags.out->string();
  if (flags.seed) c.base_seed = *flags.seed;
}

CollectOutput cmd_collect(const ExperimentConfig& c) {
  if (c.collect_steps == 0 && c.collect_episodes == 0) {
    throw InvalidArgument("collect needs a positive step or episode count");
  }
  const fs::path dir = output_dir(c);
  auto registry = std::make_shared<ObsRegistry>();
  auto env = make_env(c.env, registry, resolve_layout(c), c.collect_cap);
  spdlog::info("collecting {} {} in {}", c.collect_steps ? c.collect_steps : c.collect_episodes,
               c.collect_steps ? "steps" : "episodes", to_string(c.env));
  const TrajectoryData data =
      collect_random_walk(*env, CollectSpec{c.collect_steps, c.collect_episodes}, c.collect_seed);

  CollectOutput out;
  out.trajectory = dir / "trajectory.jsonl";
  out.registry = dir / "registry.json";
  save_trajectory(data, out.trajectory);
  open_out(out.registry) << registry->to_json().dump() << '\n';
  out.n_observations = data.observations.size();
  out.n_symbols = registry->size();
  write_manifest(dir, "collect", c,
                 json{{"observations", out.n_observations},
                      {"symbols", out.n_symbols},
                      {"episodes", data.episode_boundaries.size()}});
  spdlog::info("{} observations, {} symbols", out.n_observations, out.n_symbols);
  return out;
}

TrainOutput cmd_train(const ExperimentConfig& c) {
  const fs::path dir = output_dir(c);
  const fs::path traj = dir / "trajectory.jsonl";
  const fs::path reg_path = dir / "registry.json";
  if (!fs::exists(traj)) throw IoError("trajectory file not found: " + traj.string());
  if (!fs::exists(reg_path)) throw IoError("registry file not found: " + reg_path.string());
  const TrajectoryData data = load_trajectory(traj);
  const ObsRegistry registry = ObsRegistry::from_json(parse_json_file(reg_path));

  EmOptions opts;
  opts.max_iters = c.em_iters;
  opts.pseudocount = c.pseudocount;
  opts.tol = c.tol;
  // Independent restarts; the one with the highest final likelihood wins.
  std::optional<EmResult> em;
  std::size_t best = 0;
  std::vector<double> restart_ll;
  for (std::size_t r = 0; r < c.restarts; ++r) {
    CloneHmm init = new_cscg(registry.size(), static_cast<std::uint32_t>(c.clones_per_obs),
                             env_actions(c.env), c.model_seed + r);
    if (r == 0) spdlog::info("training {} states on {} steps", init.n_states(), data.size());
    EmResult run = train_em(init, data, opts);
    const double ll = log_likelihood(run.model, data);
    spdlog::info("restart {}: log-likelihood {:.3f} after {} iterations", r, ll, run.trace.size());
    if (!run.converged) spdlog::warn("EM did not converge within {} iterations", c.em_iters);
    if (!em || ll > restart_ll[best]) {
      em = std::move(run);
      best = r;
    }
    restart_ll.push_back(ll);
  }
  const CloneHmm refined = refine_viterbi(em->model, data, c.reestimate);

  TrainOutput out;
  out.model = dir / "model.json";
  out.log = dir / "training_log.csv";
  out.iterations = em->trace.size();
  out.converged = em->converged;
  out.n_states = refined.n_states();
  out.n_active = refined.n_active();

  json doc = model_to_json(refined);
  doc["config_hash"] = config_hash(c);
  open_out(out.model) << doc.dump() << '\n';
  {
    auto log = open_out(out.log);
    log << "iteration,log_likelihood\n";
    log.precision(17);
    for (std::size_t i = 0; i < em->trace.size(); ++i) log << i << ',' << em->trace[i] << '\n';
  }
  json manifest{{"iterations", out.iterations},
                {"converged", out.converged},
                {"n_states", out.n_states},
                {"n_active", out.n_active},
                {"restart", best},
                {"restart_log_likelihoods", restart_ll},
                {"final_log_likelihood", log_likelihood(refined, data)}};
  if (!em->converged) manifest["warning"] = "EM did not converge within max_iters";
  write_manifest(dir, "train", c, std::move(manifest));
  spdlog::info("{} of {} states active after refinement", out.n_active, out.n_states);
  return out;
}

EvalOutput cmd_eval(const ExperimentConfig& c, const RunFlags& flags) {
  if (c.n_trials == 0) throw ConfigError("n_trials must be at least 1");
  if (c.agents.empty()) throw ConfigError("no agents configured");
  const fs::path dir = output_dir(c);
  const fs::path reg_path = dir / "registry.json";
  if (!fs::exists(reg_path)) throw IoError("registry file not found: " + reg_path.string());
  auto registry = std::make_shared<ObsRegistry>(ObsRegistry::from_json(parse_json_file(reg_path)));

  bool needs_model = false;
  for (const auto& a : c.agents) needs_model |= a.kind != AgentKind::kRandom;
  std::unique_ptr<TrialContext> ctx;
  if (needs_model) {
    const fs::path model_path = dir / "model.json";
    if (!fs::exists(model_path)) throw IoError("model file not found: " + model_path.string());
    auto model = std::make_shared<const CloneHmm>(load_model(model_path));
    ctx = std::make_unique<TrialContext>(c.env, resolve_layout(c), registry, c.eval_cap, model,
                                         c.support_eps, c.prune_threshold);
    json aif = aif_to_json(*ctx->base_aif());
    aif["config_hash"] = config_hash(c);
    open_out(dir / "aif_model.json") << aif.dump() << '\n';
    spdlog::info("generative model: {} states after pruning", ctx->base_aif()->n_states);
  } else {
    ctx = std::make_unique<TrialContext>(c.env, resolve_layout(c), registry, c.eval_cap);
  }

  RunOptions opts;
  opts.n_trials = c.n_trials;
  opts.base_seed = c.base_seed;
  opts.jobs = flags.jobs;
  opts.welch = c.welch;
  EvalOutput out;
  out.report_dir = dir / "report";
  if (flags.trace) opts.trace_dir = out.report_dir / "traces";
  spdlog::info("running {} trials with {} agents", c.n_trials, c.agents.size());
  out.report = run_trials(*ctx, c.agents, opts);
  out.report.config_hash = config_hash(c);
  emit_report(out.report, out.report_dir);
  out.violations = evaluate_checks(out.report, c.checks);
  write_manifest(dir, "eval", c, json{{"violations", out.violations}});
  for (const auto& v : out.violations) spdlog::warn("threshold violated: {}", v);
  return out;
}

std::string cmd_report(const fs::path& path) {
  fs::path file = path;
  if (fs::is_directory(file)) file /= "report.json";
  if (!fs::exists(file)) throw IoError("report file not found: " + file.string());
  return format_report_table(report_from_json(parse_json_file(file)));
}

}  // namespace clonemap
