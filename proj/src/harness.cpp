#include "clonemap/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "clonemap/errors.hpp"
#include "clonemap/random.hpp"

namespace clonemap {

using nlohmann::json;

std::string_view to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kRandom: return "random";
    case AgentKind::kGreedy: return "greedy";
    case AgentKind::kAif: return "aif";
  }
  return "?";
}

AgentKind agent_kind_from_string(std::string_view name) {
  if (name == "random") return AgentKind::kRandom;
  if (name == "greedy") return AgentKind::kGreedy;
  if (name == "aif") return AgentKind::kAif;
  throw ConfigError("unknown agent kind '" + std::string(name) + "'");
}

// --- context ------------------------------------------------------------------

TrialContext::TrialContext(EnvKind kind, GridLayout layout, std::shared_ptr<ObsRegistry> registry,
                           std::size_t step_cap, std::shared_ptr<const CloneHmm> model,
                           double support_eps, double prune_threshold)
    : kind_(kind),
      layout_(std::move(layout)),
      registry_(std::move(registry)),
      step_cap_(step_cap),
      support_eps_(support_eps) {
  if (!model) throw InvalidArgument("trial context needs a model");
  if (model->n_obs() != registry_->size()) {
    throw ConfigError("model alphabet (" + std::to_string(model->n_obs()) +
                      ") does not match the observation registry (" +
                      std::to_string(registry_->size()) + ")");
  }
  auto pruned = std::make_shared<CloneHmm>(prune_states(*model, prune_threshold));
  auto aif = std::make_shared<AifModel>(to_aif(*pruned));
  aif->params.prune_threshold = prune_threshold;
  aif->params.support_eps = support_eps;
  model_ = std::move(pruned);
  aif_ = std::move(aif);
}

TrialContext::TrialContext(EnvKind kind, GridLayout layout, std::shared_ptr<ObsRegistry> registry,
                           std::size_t step_cap)
    : kind_(kind), layout_(std::move(layout)), registry_(std::move(registry)), step_cap_(step_cap) {}

std::unique_ptr<GridEnv> TrialContext::make_env() const {
  return clonemap::make_env(kind_, registry_, layout_, step_cap_);
}

std::shared_ptr<const AifModel> TrialContext::preferred_model(const std::vector<ObsId>& goal_obs,
                                                              double scale) const {
  if (!aif_) throw ConfigError("planning agents need a trained model");
  std::vector<ObsId> key = goal_obs;
  std::sort(key.begin(), key.end());
  std::lock_guard lock(cache_mutex_);
  auto it = aif_cache_.find({key, scale});
  if (it != aif_cache_.end()) return it->second;
  const auto goals = goal_states(*aif_, key);
  const auto dmap = distance_map(*aif_, goals, support_eps_);
  auto model = std::make_shared<const AifModel>(set_preference(*aif_, dmap, scale));
  aif_cache_.emplace(std::make_pair(key, scale), model);
  return model;
}

std::unique_ptr<Agent> TrialContext::make_agent(const AgentSpec& spec,
                                                const std::vector<ObsId>& goal_obs,
                                                std::uint64_t seed) const {
  switch (spec.kind) {
    case AgentKind::kRandom: {
      const std::size_t n = model_ ? model_->n_actions() : make_env()->n_actions();
      return std::make_unique<RandomAgent>(n, seed);
    }
    case AgentKind::kGreedy: {
      if (!model_) throw ConfigError("greedy agent needs a trained model");
      std::vector<ObsId> key = goal_obs;
      std::sort(key.begin(), key.end());
      std::vector<std::size_t> goals;
      {
        std::lock_guard lock(cache_mutex_);
        auto it = goal_cache_.find(key);
        if (it == goal_cache_.end()) it = goal_cache_.emplace(key, goal_states(*model_, key)).first;
        goals = it->second;
      }
      GreedyConfig cfg = spec.greedy;
      cfg.seed = seed;
      return std::make_unique<GreedyAgent>(model_, std::move(goals), cfg);
    }
    case AgentKind::kAif: {
      PlannerConfig cfg = spec.aif;
      cfg.seed = seed;
      return std::make_unique<AifAgent>(preferred_model(goal_obs, spec.preference_scale), cfg);
    }
  }
  throw ConfigError("unknown agent kind");
}

// --- trials -------------------------------------------------------------------

namespace {

std::string agent_label(const AgentSpec& spec) {
  return spec.name.empty() ? std::string(to_string(spec.kind)) : spec.name;
}

std::uint64_t agent_seed(const AgentSpec& spec, std::uint64_t base_seed, std::size_t trial) {
  const std::uint64_t user = spec.kind == AgentKind::kAif      ? spec.aif.seed
                             : spec.kind == AgentKind::kGreedy ? spec.greedy.seed
                                                               : 0;
  const std::uint64_t base = user == 0 ? base_seed : base_seed ^ splitmix64(user);
  return derive_seed(base, agent_label(spec), trial);
}

json trace_line(std::size_t t, ObsId obs, ActionId action, const StepTrace& tr) {
  json policy = json::array();
  for (ActionId a : tr.chosen_policy) policy.push_back(index(a));
  json j{{"t", t},
         {"obs", index(obs)},
         {"action", index(action)},
         {"belief_entropy", tr.belief_entropy},
         {"G_min", nullptr},
         {"chosen_policy", std::move(policy)}};
  if (std::isfinite(tr.g_min)) j["G_min"] = tr.g_min;
  if (tr.fallback) j["fallback"] = true;
  return j;
}

TrialRecord run_one(const TrialContext& ctx, const AgentSpec& spec, std::size_t trial,
                    const RunOptions& opts) {
  TrialRecord rec;
  rec.trial_index = trial;
  rec.seed = opts.base_seed + trial;
  rec.agent = agent_label(spec);

  auto env = ctx.make_env();
  StepResult r = env->reset(rec.seed);
  rec.initial_obs = r.obs;
  auto agent = ctx.make_agent(spec, env->goal_observations(),
                              agent_seed(spec, opts.base_seed, trial));
  agent->reset(r.obs);

  std::ofstream trace;
  if (opts.trace_dir) {
    std::ostringstream name;
    name << rec.agent << "_trial" << std::setw(4) << std::setfill('0') << trial << ".jsonl";
    const auto path = *opts.trace_dir / name.str();
    trace.open(path, std::ios::binary);
    if (!trace) throw IoError("cannot write " + path.string());
    rec.trace_path = path.string();
  }

  std::size_t steps = 0;
  while (!r.done && steps < ctx.step_cap()) {
    const ActionId a = agent->act();
    r = env->step(a);
    ++steps;
    if (trace) trace << trace_line(steps, r.obs, a, agent->last_trace()).dump() << '\n';
    if (!r.done) agent->observe(a, r.obs);
  }
  rec.steps = steps;
  rec.success = r.success;
  return rec;
}

}  // namespace

TrialReport run_trials(const TrialContext& ctx, const std::vector<AgentSpec>& agents,
                       const RunOptions& opts) {
  if (opts.n_trials == 0) throw ConfigError("n_trials must be at least 1");
  if (agents.empty()) throw ConfigError("no agents configured");
  const std::size_t env_actions = ctx.make_env()->n_actions();
  if (ctx.model() && ctx.model()->n_actions() != env_actions) {
    throw ConfigError("model has " + std::to_string(ctx.model()->n_actions()) +
                      " actions but the environment has " + std::to_string(env_actions));
  }
  std::vector<std::string> labels;
  for (const auto& spec : agents) {
    const auto label = agent_label(spec);
    if (std::find(labels.begin(), labels.end(), label) != labels.end()) {
      throw ConfigError("duplicate agent name '" + label + "'");
    }
    labels.push_back(label);
  }
  if (opts.trace_dir) std::filesystem::create_directories(*opts.trace_dir);

  const std::size_t n_agents = agents.size();
  std::vector<TrialRecord> records(opts.n_trials * n_agents);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t trial = next.fetch_add(1);
      if (trial >= opts.n_trials) return;
      try {
        for (std::size_t k = 0; k < n_agents; ++k) {
          records[trial * n_agents + k] = run_one(ctx, agents[k], trial, opts);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(opts.n_trials);
        return;
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, opts.n_trials);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t trial = 0; trial < opts.n_trials; ++trial) {
    const ObsId first = records[trial * n_agents].initial_obs;
    for (std::size_t k = 1; k < n_agents; ++k) {
      if (records[trial * n_agents + k].initial_obs != first) {
        throw Error("paired seeding violated at trial " + std::to_string(trial));
      }
    }
  }

  TrialReport report;
  report.env = std::string(to_string(ctx.env_kind()));
  report.base_seed = opts.base_seed;
  report.n_trials = opts.n_trials;
  report.step_cap = ctx.step_cap();
  report.agents = std::move(labels);
  report.records = std::move(records);
  summarize_report(report, opts.welch);
  return report;
}

// --- report -------------------------------------------------------------------

const AgentSummary& TrialReport::summary(const std::string& agent) const {
  for (const auto& s : summaries) {
    if (s.agent == agent) return s;
  }
  throw InvalidArgument("no agent '" + agent + "' in report");
}

const PairwiseTest* TrialReport::test(const std::string& a, const std::string& b,
                                      const std::string& metric) const {
  for (const auto& t : tests) {
    if (t.metric == metric && ((t.first == a && t.second == b) || (t.first == b && t.second == a))) {
      return &t;
    }
  }
  return nullptr;
}

std::vector<double> TrialReport::success_lengths(const std::string& agent) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.agent == agent && r.success) out.push_back(static_cast<double>(r.steps));
  }
  return out;
}

void summarize_report(TrialReport& report, bool welch) {
  report.summaries.clear();
  report.tests.clear();
  for (const auto& agent : report.agents) {
    AgentSummary s;
    s.agent = agent;
    for (const auto& r : report.records) {
      if (r.agent != agent) continue;
      ++s.n_trials;
      if (r.success) ++s.successes;
    }
    s.success_rate = s.n_trials ? static_cast<double>(s.successes) / static_cast<double>(s.n_trials) : 0.0;
    s.lengths = summarize(report.success_lengths(agent));
    report.summaries.push_back(std::move(s));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < report.agents.size(); ++i) {
    for (std::size_t j = i + 1; j < report.agents.size(); ++j) {
      const auto& a = report.summaries[i];
      const auto& b = report.summaries[j];
      PairwiseTest len{a.agent, b.agent, "episode_length", {}};
      len.result = t_test_independent(report.success_lengths(a.agent),
                                      report.success_lengths(b.agent), welch);
      PairwiseTest rate{a.agent, b.agent, "success_rate", {}};
      if (a.n_trials >= 2 && b.n_trials >= 2) {
        rate.result = z_test_proportions(a.successes, a.n_trials, b.successes, b.n_trials);
      } else {
        rate.result = TestResult{TestKind::kZProportions, false, nan, nan, nan};
      }
      report.tests.push_back(std::move(len));
      report.tests.push_back(std::move(rate));
    }
  }
}

namespace {

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double num_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json summary_json(const Summary& s) {
  return json{{"n", s.n},         {"mean", num(s.mean)}, {"stddev", num(s.stddev)},
              {"min", num(s.min)}, {"q1", num(s.q1)},     {"median", num(s.median)},
              {"q3", num(s.q3)},   {"max", num(s.max)}};
}

Summary summary_from(const json& j) {
  Summary s;
  s.n = j.at("n").get<std::size_t>();
  s.mean = num_from(j.at("mean"));
  s.stddev = num_from(j.at("stddev"));
  s.min = num_from(j.at("min"));
  s.q1 = num_from(j.at("q1"));
  s.median = num_from(j.at("median"));
  s.q3 = num_from(j.at("q3"));
  s.max = num_from(j.at("max"));
  return s;
}

TestKind test_kind_from(std::string_view name) {
  for (TestKind k : {TestKind::kStudentT, TestKind::kWelchT, TestKind::kZProportions}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown test kind '" + std::string(name) + "'");
}

}  // namespace

json report_to_json(const TrialReport& report) {
  json records = json::array();
  for (const auto& r : report.records) {
    json j{{"trial", r.trial_index},
           {"seed", r.seed},
           {"agent", r.agent},
           {"steps", r.steps},
           {"success", r.success},
           {"initial_obs", index(r.initial_obs)}};
    if (!r.trace_path.empty()) j["trace"] = r.trace_path;
    records.push_back(std::move(j));
  }
  json summaries = json::array();
  for (const auto& s : report.summaries) {
    summaries.push_back(json{{"agent", s.agent},
                             {"n_trials", s.n_trials},
                             {"successes", s.successes},
                             {"success_rate", s.success_rate},
                             {"lengths", summary_json(s.lengths)}});
  }
  json tests = json::array();
  for (const auto& t : report.tests) {
    tests.push_back(json{{"first", t.first},
                         {"second", t.second},
                         {"metric", t.metric},
                         {"kind", to_string(t.result.kind)},
                         {"applicable", t.result.applicable},
                         {"statistic", num(t.result.statistic)},
                         {"p_value", num(t.result.p_value)},
                         {"log10_p", num(t.result.log10_p)}});
  }
  return json{{"version", report.version},     {"env", report.env},
              {"base_seed", report.base_seed}, {"n_trials", report.n_trials},
              {"step_cap", report.step_cap},   {"config_hash", report.config_hash},
              {"agents", report.agents},       {"summaries", std::move(summaries)},
              {"tests", std::move(tests)},     {"records", std::move(records)}};
}

TrialReport report_from_json(const json& doc) {
  TrialReport report;
  try {
    report.version = doc.at("version").get<int>();
    if (report.version != 1) throw ValidationError("unsupported report version");
    report.env = doc.at("env").get<std::string>();
    report.base_seed = doc.at("base_seed").get<std::uint64_t>();
    report.n_trials = doc.at("n_trials").get<std::size_t>();
    report.step_cap = doc.at("step_cap").get<std::size_t>();
    report.config_hash = doc.value("config_hash", std::string());
    report.agents = doc.at("agents").get<std::vector<std::string>>();
    for (const auto& j : doc.at("records")) {
      TrialRecord r;
      r.trial_index = j.at("trial").get<std::size_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.agent = j.at("agent").get<std::string>();
      r.steps = j.at("steps").get<std::size_t>();
      r.success = j.at("success").get<bool>();
      r.initial_obs = obs_id(j.at("initial_obs").get<std::size_t>());
      r.trace_path = j.value("trace", std::string());
      report.records.push_back(std::move(r));
    }
    for (const auto& j : doc.at("summaries")) {
      AgentSummary s;
      s.agent = j.at("agent").get<std::string>();
      s.n_trials = j.at("n_trials").get<std::size_t>();
      s.successes = j.at("successes").get<std::size_t>();
      s.success_rate = j.at("success_rate").get<double>();
      s.lengths = summary_from(j.at("lengths"));
      report.summaries.push_back(std::move(s));
    }
    for (const auto& j : doc.at("tests")) {
      PairwiseTest t;
      t.first = j.at("first").get<std::string>();
      t.second = j.at("second").get<std::string>();
      t.metric = j.at("metric").get<std::string>();
      t.result.kind = test_kind_from(j.at("kind").get<std::string>());
      t.result.applicable = j.at("applicable").get<bool>();
      t.result.statistic = num_from(j.at("statistic"));
      t.result.p_value = num_from(j.at("p_value"));
      t.result.log10_p = num_from(j.at("log10_p"));
      report.tests.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
  return report;
}

namespace {

std::string fmt_num(double x, int prec = 2) {
  if (!std::isfinite(x)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << x;
  return os.str();
}

std::string fmt_p(const TestResult& r) {
  if (!r.applicable) return "n/a";
  std::ostringstream os;
  if (r.p_value > 0.0) {
    os << std::scientific << std::setprecision(3) << r.p_value;
  } else {
    os << "10^" << std::fixed << std::setprecision(1) << r.log10_p;
  }
  return os.str();
}

}  // namespace

std::string format_report_table(const TrialReport& report) {
  std::ostringstream os;
  os << "env " << report.env << ", " << report.n_trials << " trials, cap " << report.step_cap
     << ", base seed " << report.base_seed;
  if (!report.config_hash.empty()) os << ", config " << report.config_hash;
  os << "\n\n";
  os << std::left << std::setw(12) << "agent" << std::right << std::setw(9) << "success"
     << std::setw(9) << "n_succ" << std::setw(8) << "mean" << std::setw(8) << "sd" << std::setw(7)
     << "q1" << std::setw(7) << "median" << std::setw(7) << "q3" << '\n';
  for (const auto& s : report.summaries) {
    os << std::left << std::setw(12) << s.agent << std::right << std::setw(8)
       << fmt_num(100.0 * s.success_rate, 1) << '%' << std::setw(9) << s.successes << std::setw(8)
       << fmt_num(s.lengths.mean) << std::setw(8) << fmt_num(s.lengths.stddev) << std::setw(7)
       << fmt_num(s.lengths.q1, 1) << std::setw(7) << fmt_num(s.lengths.median, 1) << std::setw(7)
       << fmt_num(s.lengths.q3, 1) << '\n';
  }
  if (!report.tests.empty()) {
    os << '\n'
       << std::left << std::setw(30) << "pair" << std::setw(16) << "metric" << std::setw(10)
       << "test" << std::right << std::setw(10) << "stat" << std::setw(14) << "p" << '\n';
    for (const auto& t : report.tests) {
      os << std::left << std::setw(30) << (t.first + " vs " + t.second) << std::setw(16) << t.metric
         << std::setw(10) << to_string(t.result.kind) << std::right << std::setw(10)
         << fmt_num(t.result.statistic, 3) << std::setw(14) << fmt_p(t.result) << '\n';
    }
  }
  return os.str();
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void write_csv_rows(std::ostream& out, const TrialReport& report, const std::string* agent) {
  out << "trial,seed,agent,steps,success\n";
  for (const auto& r : report.records) {
    if (agent && r.agent != *agent) continue;
    out << r.trial_index << ',' << r.seed << ',' << r.agent << ',' << r.steps << ','
        << (r.success ? 1 : 0) << '\n';
  }
}

}  // namespace

void emit_report(const TrialReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  open_out(out_dir / "summary.txt") << format_report_table(report);
  open_out(out_dir / "report.json") << report_to_json(report).dump(2) << '\n';
  {
    auto out = open_out(out_dir / "trials.csv");
    write_csv_rows(out, report, nullptr);
  }
  for (const auto& agent : report.agents) {
    auto out = open_out(out_dir / ("lengths_" + agent + ".csv"));
    write_csv_rows(out, report, &agent);
  }
}

// --- checks -------------------------------------------------------------------

std::vector<Check> checks_from_json(const json& doc) {
  std::vector<Check> out;
  if (doc.is_null()) return out;
  if (!doc.is_array()) throw ConfigError("checks must be an array");
  for (const auto& j : doc) {
    Check c;
    try {
      if (j.contains("agent")) c.agents.push_back(j.at("agent").get<std::string>());
      if (j.contains("agents")) c.agents = j.at("agents").get<std::vector<std::string>>();
      c.metric = j.at("metric").get<std::string>();
      c.op = j.at("op").get<std::string>();
      c.value = j.at("value").get<double>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("malformed check: ") + e.what());
    }
    const bool pair_metric = c.metric == "length_p" || c.metric == "success_p" || c.metric == "mean_length_diff";
    const bool agent_metric =
        c.metric == "success_rate" || c.metric == "mean_length" || c.metric == "median_length";
    if (!pair_metric && !agent_metric) throw ConfigError("unknown check metric '" + c.metric + "'");
    if (c.agents.size() != (pair_metric ? 2u : 1u)) {
      throw ConfigError("check '" + c.metric + "' names the wrong number of agents");
    }
    if (c.op != "<" && c.op != "<=" && c.op != ">" && c.op != ">=") {
      throw ConfigError("unknown check operator '" + c.op + "'");
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::string> evaluate_checks(const TrialReport& report, const std::vector<Check>& checks) {
  std::vector<std::string> failures;
  for (const auto& c : checks) {
    double actual = std::numeric_limits<double>::quiet_NaN();
    std::string label = c.metric + "(" + c.agents.front();
    if (c.agents.size() == 2) label += ", " + c.agents[1];
    label += ")";
    try {
      if (c.metric == "success_rate") actual = report.summary(c.agents[0]).success_rate;
      else if (c.metric == "mean_length") actual = report.summary(c.agents[0]).lengths.mean;
      else if (c.metric == "median_length") actual = report.summary(c.agents[0]).lengths.median;
      else if (c.metric == "mean_length_diff") {
        actual = report.summary(c.agents[0]).lengths.mean - report.summary(c.agents[1]).lengths.mean;
      } else {
        const auto* t = report.test(c.agents[0], c.agents[1],
                                    c.metric == "length_p" ? "episode_length" : "success_rate");
        if (t && t->result.applicable) actual = t->result.p_value;
      }
    } catch (const InvalidArgument& e) {
      failures.push_back(label + ": " + e.what());
      continue;
    }
    bool ok = false;
    if (std::isfinite(actual)) {
      if (c.op == "<") ok = actual < c.value;
      else if (c.op == "<=") ok = actual <= c.value;
      else if (c.op == ">") ok = actual > c.value;
      else ok = actual >= c.value;
    }
    if (!ok) {
      std::ostringstream os;
      os << label << " = " << actual << ", required " << c.op << ' ' << c.value;
      failures.push_back(os.str());
    }
  }
  return failures;
}

}  // namespace clonemap
