#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mcpradar/orchestrator.hpp"

namespace {

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  // Logs go to stderr so stdout stays parseable.
  spdlog::set_default_logger(spdlog::stderr_color_mt("mcpradar"));
  spdlog::set_level(spdlog::level::warn);
  spdlog::cfg::load_env_levels();

  CLI::App app{"MCP tool-use evaluation harness"};
  app.require_subcommand(1);
  std::string log_level;
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

  std::string config_path, models, domains, baseline, out_dir;
  std::optional<std::size_t> concurrency;
  bool resume = false;
  auto* run = app.add_subcommand("run", "Evaluate the configured models");
  run->add_option("--config", config_path, "Run configuration (JSON)")->required();
  run->add_flag("--resume", resume, "Continue existing archives");
  run->add_option("--concurrency", concurrency, "Episodes in flight")->check(CLI::PositiveNumber);
  run->add_option("--models", models, "Comma-separated model names to run");
  run->add_option("--domains", domains, "Comma-separated domains (math, coding, general)");
  run->add_option("--out", out_dir, "Output directory");

  std::vector<std::string> archives;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "Tables and radar charts from archives");
  report->add_option("archives", archives, "Archive directories (searched recursively)")->required();
  report->add_option("--baseline", baseline, "Reference model for CRE/RTE ratios");
  report->add_option("--out", report_out, "Output directory");

  std::string dataset, pool;
  auto* validate = app.add_subcommand("validate", "Check a dataset and/or an mcp_pool file");
  validate->add_option("--dataset", dataset, "Task dataset (JSONL)");
  validate->add_option("--pool", pool, "mcp_pool JSON");
  validate->add_option("--config", config_path, "Take dataset and pool from a run configuration");

  std::string replay_archive;
  auto* replay = app.add_subcommand("replay", "Recompute success and metrics from stored traces");
  replay->add_option("archive", replay_archive, "Archive directory")->required();
  replay->add_option("--dataset", dataset, "Take ground truth and answer specs from this dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return mcpradar::exit_code::kUsage;
  }
  if (!log_level.empty()) spdlog::set_level(spdlog::level::from_str(log_level));

  using namespace mcpradar;
  if (*run) {
    EvalConfig cfg;
    try {
      cfg = load_eval_config(config_path);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_code::kConfig;
    }
    RunOptions opts;
    opts.resume = resume;
    opts.concurrency = concurrency;
    opts.models = split(models);
    try {
      opts.domains = parse_domain_list(split(domains));
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_code::kConfig;
    }
    if (!out_dir.empty()) opts.out = out_dir;
    return cmd_run(cfg, opts, std::cout);
  }
  if (*report) {
    std::vector<std::filesystem::path> paths(archives.begin(), archives.end());
    return cmd_report(paths, baseline.empty() ? std::nullopt : std::optional(baseline), report_out, std::cout);
  }
  if (*validate) {
    std::optional<std::filesystem::path> ds, pl;
    if (!config_path.empty()) {
      try {
        auto cfg = load_eval_config(config_path);
        ds = cfg.dataset;
        pl = cfg.mcp_pool;
      } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code::kConfig;
      }
    }
    if (!dataset.empty()) ds = dataset;
    if (!pool.empty()) pl = pool;
    if (!ds && !pl) {
      std::cerr << "validate needs --dataset, --pool or --config\n";
      return exit_code::kUsage;
    }
    return cmd_validate(ds, pl, std::cout);
  }
  if (*replay) {
    return cmd_replay(replay_archive, dataset.empty() ? std::nullopt : std::optional<std::filesystem::path>(dataset), std::cout);
  }
  return exit_code::kUsage;
}
