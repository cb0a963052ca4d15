// Command-line entry point: collect, train, eval, report.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>
#include <spdlog/sinks/stdout_color_sinks.h>

#include "clonemap/errors.hpp"
#include "clonemap/pipeline.hpp"

namespace {

void init_logging() {
  auto logger = spdlog::stderr_color_mt("clonemap");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("CLONEMAP_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to "off"; only honour that when asked for.
    if (parsed != spdlog::level::off || std::string(level) == "off") spdlog::set_level(parsed);
  }
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Clone-structured cognitive maps with greedy and active-inference planners"};
  app.require_subcommand(1);

  std::string config_path;
  clonemap::RunFlags flags;
  std::string out;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "Output directory (overrides output_dir)");
    cmd->add_option("--seed", seed, "Overrides eval.base_seed");
  };
  auto* collect = app.add_subcommand("collect", "Random-walk data collection");
  add_common(collect);
  auto* train = app.add_subcommand("train", "EM training and Viterbi refinement");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "Run paired trials and write the report");
  add_common(eval);
  eval->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_flag("--trace", flags.trace, "Write per-step JSONL traces");
  auto* run = app.add_subcommand("run", "collect, train and eval in sequence");
  add_common(run);
  run->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--trace", flags.trace, "Write per-step JSONL traces");

  std::string report_path;
  auto* report = app.add_subcommand("report", "Print the summary table of a report");
  report->add_option("report", report_path, "report.json or its directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      std::cout << clonemap::cmd_report(report_path);
      return 0;
    }
    auto config = clonemap::load_config(config_path);
    if (!out.empty()) flags.out = out;
    for (auto* cmd : {collect, train, eval, run}) {
      if (cmd->parsed() && cmd->count("--seed") > 0) flags.seed = seed;
    }
    clonemap::apply_flags(config, flags);
    spdlog::info("config {} ({})", config.name, clonemap::config_hash(config));

    if (collect->parsed() || run->parsed()) clonemap::cmd_collect(config);
    if (train->parsed() || run->parsed()) clonemap::cmd_train(config);
    if (eval->parsed() || run->parsed()) {
      const auto result = clonemap::cmd_eval(config, flags);
      std::cout << clonemap::format_report_table(result.report);
      if (!result.violations.empty()) {
        for (const auto& v : result.violations) std::cerr << "threshold violated: " << v << '\n';
        return 3;
      }
    }
  } catch (const clonemap::ParseError& e) {
    spdlog::error("{} (byte {})", e.what(), e.offset());
    return 2;
  } catch (const clonemap::Error& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
