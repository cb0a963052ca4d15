#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clonemap/envs.hpp"
#include "clonemap/harness.hpp"

namespace clonemap {

/// Experiment recipe. Stored as JSON; see recipes/ for the committed ones.
struct ExperimentConfig {
  std::string name = "experiment";
  EnvKind env = EnvKind::kOpenRoom;
  /// Relative paths resolve against `base_dir`. Empty means the built-in layout.
  std::string layout_path;

  std::size_t collect_steps = 0;
  std::size_t collect_episodes = 0;
  std::size_t collect_cap = 50;
  std::uint64_t collect_seed = 0;

  std::size_t clones_per_obs = 20;
  std::size_t em_iters = 200;
  double pseudocount = 1e-2;
  double tol = 1e-6;
  std::uint64_t model_seed = 0;
  bool reestimate = true;
  /// EM runs from seeds model_seed, model_seed + 1, ...; the best likelihood is kept.
  std::size_t restarts = 1;

  double prune_threshold = 1e-4;
  double support_eps = 1e-3;

  std::vector<AgentSpec> agents;

  std::size_t n_trials = 400;
  std::uint64_t base_seed = 0;
  std::size_t eval_cap = 25;
  bool welch = false;

  std::string output_dir = "runs/experiment";
  std::vector<Check> checks;

  std::filesystem::path base_dir = ".";
};

/// Fills defaults and validates ranges. Throws ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc,
                                  const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON of every resolved field (paths as written).
nlohmann::json config_to_json(const ExperimentConfig& config);
/// Hex FNV-1a of the canonical JSON dump.
std::string config_hash(const ExperimentConfig& config);

GridLayout resolve_layout(const ExperimentConfig& config);

struct RunFlags {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool trace = false;
};

/// Applies --out and --seed overrides.
void apply_flags(ExperimentConfig& config, const RunFlags& flags);

struct CollectOutput {
  std::filesystem::path trajectory;
  std::filesystem::path registry;
  std::size_t n_observations = 0;
  std::size_t n_symbols = 0;
};
CollectOutput cmd_collect(const ExperimentConfig& config);

struct TrainOutput {
  std::filesystem::path model;
  std::filesystem::path log;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t n_states = 0;
  std::size_t n_active = 0;
};
TrainOutput cmd_train(const ExperimentConfig& config);

struct EvalOutput {
  TrialReport report;
  std::filesystem::path report_dir;
  /// Violated acceptance thresholds from the config.
  std::vector<std::string> violations;
};
EvalOutput cmd_eval(const ExperimentConfig& config, const RunFlags& flags = {});

/// Loads report.json (file or directory) and renders the summary table.
std::string cmd_report(const std::filesystem::path& path);

}  // namespace clonemap
