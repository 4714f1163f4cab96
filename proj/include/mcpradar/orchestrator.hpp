#pragma once

// Command implementations behind the mcpradar CLI. Every cmd_* returns a
// process exit code and writes human output to the given stream.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mcpradar/answer_checker.hpp"
#include "mcpradar/error.hpp"
#include "mcpradar/mcp_client.hpp"
#include "mcpradar/mcp_pool.hpp"
#include "mcpradar/metrics.hpp"
#include "mcpradar/openai_provider.hpp"
#include "mcpradar/report.hpp"
#include "mcpradar/runner.hpp"
#include "mcpradar/sim/policy.hpp"
#include "mcpradar/task.hpp"
#include "mcpradar/trace.hpp"

namespace mcpradar {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kDiffs = 1;         // validate found violations / replay found diffs
inline constexpr int kUsage = 2;
inline constexpr int kConfig = 64;
inline constexpr int kDataset = 65;
inline constexpr int kUnavailable = 69;  // MCP servers could not be started
inline constexpr int kSoftware = 70;     // run produced no records
inline constexpr int kIo = 74;
inline constexpr int kAuth = 77;
}  // namespace exit_code

inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Config:
    case ErrorCode::InvalidArgument: return exit_code::kConfig;
    case ErrorCode::Dataset:
    case ErrorCode::Parse:
    case ErrorCode::DuplicateId:
    case ErrorCode::Schema: return exit_code::kDataset;
    case ErrorCode::Auth: return exit_code::kAuth;
    case ErrorCode::SpawnFailed:
    case ErrorCode::StartupTimeout:
    case ErrorCode::HandshakeRejected:
    case ErrorCode::ProtocolVersion: return exit_code::kUnavailable;
    case ErrorCode::Io: return exit_code::kIo;
    default: return exit_code::kSoftware;
  }
}

// ---------------------------------------------------------------------------
// Configuration

struct ProviderEntry {
  std::string kind = "openai";  // "openai" | "scripted"
  ProviderConfig openai;        // model is filled per model entry
  sim::PolicySpec policy;       // kind == "scripted"
};

struct ModelEntry {
  std::string name;      // label used in archives and reports
  std::string provider;  // key into EvalConfig::providers
  std::string model_id;  // provider-side model name
};

/// The run configuration file (JSON). Strings may reference ${ENV_VAR};
/// relative paths resolve against the config file's directory.
struct EvalConfig {
  std::filesystem::path dataset;
  std::filesystem::path mcp_pool;
  std::map<std::string, ProviderEntry> providers;
  std::vector<ModelEntry> models;
  std::vector<Domain> domains;  // empty = all
  int runs_per_model = 3;
  std::size_t concurrency = 1;
  EpisodeConfig episode;
  SessionOptions session;
  std::optional<std::string> baseline;
  std::filesystem::path output = "out";
  std::uint64_t seed = 0;
  std::string digest;  // of the raw config text, so resolved secrets never enter it
};

/// Replaces ${NAME} with `vars[NAME]` or the environment. Unknown names are
/// a Config error so a missing secret never turns into an empty string.
inline std::string interpolate(std::string_view s, const std::map<std::string, std::string>& vars = {}) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
      auto close = s.find('}', i + 2);
      if (close == std::string_view::npos) throw Error(ErrorCode::Config, fmt::format("unterminated ${{ in '{}'", s));
      std::string name(s.substr(i + 2, close - i - 2));
      if (auto it = vars.find(name); it != vars.end()) {
        out += it->second;
      } else if (const char* v = std::getenv(name.c_str())) {
        out += v;
      } else {
        throw Error(ErrorCode::Config, fmt::format("environment variable {} is not set", name));
      }
      i = close + 1;
    } else {
      out.push_back(s[i++]);
    }
  }
  return out;
}

namespace detail {

// api_key values stay raw until a model actually needs them.
inline void interpolate_json(Json& j, const std::map<std::string, std::string>& vars) {
  if (j.is_string()) {
    j = interpolate(j.get<std::string>(), vars);
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "api_key") interpolate_json(it.value(), vars);
  } else if (j.is_array()) {
    for (auto& v : j) interpolate_json(v, vars);
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

template <typename T>
T cfg_get(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::Config, fmt::format("config key '{}' has the wrong type", key));
  }
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = std::string(detail::trim(item));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace detail

inline std::vector<Domain> parse_domain_list(const std::vector<std::string>& names) {
  std::vector<Domain> out;
  for (const auto& n : names) {
    auto d = parse_domain(n);
    if (!d) throw Error(ErrorCode::Config, fmt::format("unknown domain '{}'", n));
    out.push_back(*d);
  }
  return out;
}

inline EvalConfig parse_eval_config(std::string_view text, const std::filesystem::path& base_dir) {
  Json raw = Json::parse(text, nullptr, false);
  if (raw.is_discarded() || !raw.is_object()) throw Error(ErrorCode::Config, "config is not a JSON object");
  EvalConfig c;
  // Digest before interpolation so resolved secrets never reach archives.
  c.digest = fnv1a_hex(raw.dump());
  Json j = raw;
  detail::interpolate_json(j, {});
  using detail::cfg_get;

  if (!j.contains("dataset") || !j["dataset"].is_string()) throw Error(ErrorCode::Config, "config needs a 'dataset' path");
  if (!j.contains("mcp_pool") || !j["mcp_pool"].is_string()) throw Error(ErrorCode::Config, "config needs an 'mcp_pool' path");
  c.dataset = detail::resolve(base_dir, j["dataset"].get<std::string>());
  c.mcp_pool = detail::resolve(base_dir, j["mcp_pool"].get<std::string>());

  if (!j.contains("providers") || !j["providers"].is_object() || j["providers"].empty()) {
    throw Error(ErrorCode::Config, "config needs a non-empty 'providers' object");
  }
  for (auto it = j["providers"].begin(); it != j["providers"].end(); ++it) {
    const auto& p = it.value();
    if (!p.is_object()) throw Error(ErrorCode::Config, fmt::format("provider '{}' must be an object", it.key()));
    ProviderEntry e;
    e.kind = cfg_get<std::string>(p, "kind", "openai");
    if (e.kind == "openai") {
      e.openai.base_url = cfg_get<std::string>(p, "base_url", e.openai.base_url);
      e.openai.api_key = cfg_get<std::string>(p, "api_key", "");
      e.openai.temperature = cfg_get<double>(p, "temperature", 0.0);
      e.openai.max_retries = cfg_get<int>(p, "max_retries", e.openai.max_retries);
      e.openai.request_timeout = std::chrono::milliseconds(cfg_get<std::int64_t>(p, "request_timeout_ms", e.openai.request_timeout.count()));
      e.openai.retry_backoff = std::chrono::milliseconds(cfg_get<std::int64_t>(p, "retry_backoff_ms", e.openai.retry_backoff.count()));
      e.openai.requests_per_second = cfg_get<double>(p, "requests_per_second", 0.0);
    } else if (e.kind == "scripted") {
      e.policy.label = sim::parse_policy_label(cfg_get<std::string>(p, "policy", "perfect"));
      e.policy.k = cfg_get<std::size_t>(p, "k", 1);
      e.policy.failing_tool = cfg_get<std::string>(p, "failing_tool", "fail");
    } else {
      throw Error(ErrorCode::Config, fmt::format("provider '{}' has unknown kind '{}'", it.key(), e.kind));
    }
    c.providers.emplace(it.key(), std::move(e));
  }

  if (!j.contains("models") || !j["models"].is_array() || j["models"].empty()) throw Error(ErrorCode::Config, "config needs a non-empty 'models' list");
  for (const auto& m : j["models"]) {
    ModelEntry e;
    if (m.is_string()) {
      if (c.providers.size() != 1) throw Error(ErrorCode::Config, "bare model names need exactly one provider");
      e.name = e.model_id = m.get<std::string>();
      e.provider = c.providers.begin()->first;
    } else if (m.is_object()) {
      e.name = cfg_get<std::string>(m, "name", "");
      e.model_id = cfg_get<std::string>(m, "model", e.name);
      e.provider = cfg_get<std::string>(m, "provider", c.providers.size() == 1 ? c.providers.begin()->first : std::string());
      if (e.name.empty()) e.name = e.model_id;
    } else {
      throw Error(ErrorCode::Config, "each model must be a string or an object");
    }
    if (e.name.empty()) throw Error(ErrorCode::Config, "model without a name");
    if (!c.providers.count(e.provider)) throw Error(ErrorCode::Config, fmt::format("model '{}' uses unknown provider '{}'", e.name, e.provider));
    for (const auto& prev : c.models)
      if (prev.name == e.name) throw Error(ErrorCode::Config, fmt::format("model '{}' listed twice", e.name));
    c.models.push_back(std::move(e));
  }

  if (j.contains("domains")) c.domains = parse_domain_list(cfg_get<std::vector<std::string>>(j, "domains", {}));
  c.runs_per_model = cfg_get<int>(j, "runs_per_model", 3);
  if (c.runs_per_model < 1) throw Error(ErrorCode::Config, "runs_per_model must be >= 1");
  auto conc = cfg_get<std::int64_t>(j, "concurrency", 1);
  if (conc < 1) throw Error(ErrorCode::Config, "concurrency must be >= 1");
  c.concurrency = static_cast<std::size_t>(conc);

  if (j.contains("episode")) {
    const auto& e = j["episode"];
    if (!e.is_object()) throw Error(ErrorCode::Config, "'episode' must be an object");
    c.episode.max_rounds = cfg_get<int>(e, "max_rounds", c.episode.max_rounds);
    c.episode.per_call_timeout = std::chrono::milliseconds(cfg_get<std::int64_t>(e, "per_call_timeout_ms", c.episode.per_call_timeout.count()));
    c.episode.overall_deadline = std::chrono::milliseconds(cfg_get<std::int64_t>(e, "overall_deadline_ms", c.episode.overall_deadline.count()));
    c.episode.answer_required = cfg_get<bool>(e, "answer_required", true);
    if (e.contains("workdir") && e["workdir"].is_string()) c.episode.workdir = detail::resolve(base_dir, e["workdir"].get<std::string>());
    c.session.handshake_timeout = std::chrono::milliseconds(cfg_get<std::int64_t>(e, "handshake_timeout_ms", c.session.handshake_timeout.count()));
    c.session.call_timeout = c.episode.per_call_timeout;
    c.session.shutdown_grace = std::chrono::milliseconds(cfg_get<std::int64_t>(e, "shutdown_grace_ms", c.session.shutdown_grace.count()));
    auto problems = validate_episode_config(c.episode);
    if (!problems.empty()) throw Error(ErrorCode::Config, fmt::format("episode: {}", problems.front()));
  }
  if (j.contains("baseline") && j["baseline"].is_string()) c.baseline = j["baseline"].get<std::string>();
  c.output = detail::resolve(base_dir, cfg_get<std::string>(j, "output", "out"));
  c.seed = cfg_get<std::uint64_t>(j, "seed", 0);
  return c;
}

inline EvalConfig load_eval_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Config, fmt::format("cannot open config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_eval_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

/// Reads the pool and resolves ${...} in commands and env values.
/// MCPRADAR_WORKDIR and MCPRADAR_SEED are provided by the harness.
inline std::vector<McpServerSpec> load_pool(const std::filesystem::path& path, const std::map<std::string, std::string>& vars) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Config, fmt::format("cannot open mcp_pool '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  auto specs = parse_mcp_pool(ss.str());
  for (auto& s : specs) {
    for (auto& rc : s.run_configs) {
      rc.command = interpolate(rc.command, vars);
      for (auto& [k, v] : rc.env) v = interpolate(v, vars);
    }
  }
  return specs;
}

inline std::string model_dir_name(std::string_view model) {
  std::string out;
  for (char c : model) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_' ? c : '_');
  return out.empty() ? "_" : out;
}

inline std::string utc_timestamp() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
}

inline std::string file_digest(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  bool resume = false;
  std::optional<std::size_t> concurrency;
  std::vector<std::string> models;   // filter by model name; empty = all
  std::vector<Domain> domains;       // overrides the config filter when set
  std::optional<std::filesystem::path> out;
  // Test hook: forwarded to every RunPlan.
  std::function<void(const EvalRecord&, std::size_t)> on_commit;
  // Test hook: replaces the pool-based session factory.
  std::optional<SessionSetFactory> session_factory;
};

inline std::unique_ptr<Provider> make_provider(const ProviderEntry& e, const ModelEntry& m, const std::vector<Task>& tasks) {
  if (e.kind == "scripted") return std::make_unique<sim::PolicyProvider>(e.policy, tasks);
  ProviderConfig cfg = e.openai;
  cfg.model = m.model_id;
  try {
    cfg.api_key = interpolate(cfg.api_key);
  } catch (const Error& e) {
    throw Error(ErrorCode::Auth, fmt::format("provider for model '{}': {}", m.name, e.what()));
  }
  if (cfg.api_key.empty()) throw Error(ErrorCode::Auth, fmt::format("provider for model '{}' has no api_key", m.name));
  return std::make_unique<OpenAiCompatibleProvider>(std::move(cfg));
}

inline int cmd_report(const std::vector<std::filesystem::path>& archives, const std::optional<std::string>& baseline,
               const std::filesystem::path& out_dir, std::ostream& out);

inline int cmd_run(const EvalConfig& config, const RunOptions& opts, std::ostream& out) {
  namespace fs = std::filesystem;
  try {
    const fs::path out_root = opts.out.value_or(config.output);
    const std::size_t concurrency = opts.concurrency.value_or(config.concurrency);
    if (concurrency < 1) throw Error(ErrorCode::Config, "concurrency must be >= 1");
    const auto domains = opts.domains.empty() ? config.domains : opts.domains;

    std::vector<ModelEntry> models;
    for (const auto& m : config.models)
      if (opts.models.empty() || std::find(opts.models.begin(), opts.models.end(), m.name) != opts.models.end()) models.push_back(m);
    if (models.empty()) throw Error(ErrorCode::Config, "no configured model matches --models");

    std::vector<Task> tasks;
    try {
      for (auto& t : load_dataset(config.dataset.string()))
        if (domains.empty() || std::find(domains.begin(), domains.end(), t.domain) != domains.end()) tasks.push_back(std::move(t));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Io) throw Error(ErrorCode::Dataset, e.what());
      throw;
    }
    if (tasks.empty()) throw Error(ErrorCode::Dataset, "no tasks left after the domain filter");

    EpisodeConfig episode = config.episode;
    if (episode.workdir) fs::create_directories(*episode.workdir);
    std::map<std::string, std::string> vars{{"MCPRADAR_SEED", std::to_string(config.seed)}};
    if (episode.workdir) vars["MCPRADAR_WORKDIR"] = fs::absolute(*episode.workdir).string();
    if (const char* bin = std::getenv("MCPRADAR_BIN_DIR")) vars["MCPRADAR_BIN_DIR"] = bin;
    else if (std::error_code ec; fs::exists("/proc/self/exe", ec)) vars["MCPRADAR_BIN_DIR"] = fs::read_symlink("/proc/self/exe", ec).parent_path().string();

    // Providers are built before any server starts so config errors surface first.
    std::vector<std::unique_ptr<Provider>> providers;
    for (const auto& m : models) providers.push_back(make_provider(config.providers.at(m.provider), m, tasks));

    SessionSetFactory factory;
    if (opts.session_factory) {
      factory = *opts.session_factory;
    } else {
      auto specs = load_pool(config.mcp_pool, vars);
      factory = [specs, session = config.session] {
        std::vector<Session> sessions;
        for (const auto& s : specs) sessions.push_back(connect(s, session));
        return make_session_set(std::move(sessions));
      };
    }
    LeasePool pool(factory, concurrency);

    ArchiveHeader base;
    base.dataset_path = config.dataset.string();
    base.dataset_id = file_digest(config.dataset);
    base.config_digest = config.digest;

    std::size_t produced = 0;
    std::vector<fs::path> archives;
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      const auto& m = models[mi];
      for (int k = 1; k <= config.runs_per_model; ++k) {
        RunPlan plan;
        plan.model = m.name;
        plan.run_id = fmt::format("run-{}", k);
        plan.tasks = tasks;
        plan.episode = episode;
        plan.archive_dir = out_root / model_dir_name(m.name) / plan.run_id;
        plan.header = base;
        plan.header.created_at = utc_timestamp();
        plan.concurrency = concurrency;
        plan.resume = opts.resume;
        plan.on_commit = opts.on_commit;
        auto summary = execute_run(plan, pool, *providers[mi]);
        produced += summary.records.size();
        archives.push_back(plan.archive_dir);
        if (summary.metrics) {
          const auto& mm = *summary.metrics;
          out << fmt::format("{} {}: {} records ({} new, {} resumed, {} provider errors)  RA={:.2f} DTSR={:.2f} FEP={:.2f} CRE={:.0f} RTE={:.0f}\n",
                             m.name, plan.run_id, summary.records.size(), summary.executed, summary.skipped, summary.provider_errors,
                             mm.ra, mm.dtsr, mm.fep, mm.cre_raw, mm.rte_raw);
        }
      }
    }
    pool.shutdown();
    if (produced == 0) {
      out << "no records were produced\n";
      return exit_code::kSoftware;
    }
    std::ostringstream report_out;
    int rc = cmd_report(archives, config.baseline, out_root / "report", report_out);
    if (rc != exit_code::kOk) spdlog::warn("report step failed: {}", report_out.str());
    else out << "report written to " << (out_root / "report").string() << "\n";
    return exit_code::kOk;
  } catch (const Error& e) {
    out << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

// ---------------------------------------------------------------------------
// report

/// Archive directories under `p` (p itself if it holds a header).
inline std::vector<std::filesystem::path> find_archives(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(p)) return {p.parent_path()};
  if (fs::exists(p / kHeaderFile)) return {p};
  std::vector<fs::path> out;
  if (!fs::is_directory(p)) throw Error(ErrorCode::Io, fmt::format("no archive at '{}'", p.string()));
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file() && e.path().filename() == kHeaderFile) out.push_back(e.path().parent_path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Averaged per-(model, domain) cells from archives; models keep first-seen
/// order. With a baseline, ratios are baseline mean / model mean per domain.
inline std::vector<RunMetrics> aggregate_archives(const std::vector<RunArchive>& archives, const std::optional<std::string>& baseline) {
  if (archives.empty()) throw Error(ErrorCode::InvalidArgument, "no archives to report");
  for (const auto& a : archives) {
    if (a.header.dataset_id != archives.front().header.dataset_id) {
      throw Error(ErrorCode::Dataset, fmt::format("archives mix datasets: {} (model {}) vs {} (model {})", a.header.dataset_id, a.header.model,
                                                  archives.front().header.dataset_id, archives.front().header.model));
    }
  }
  std::vector<std::string> models;
  std::map<std::pair<std::string, Domain>, std::vector<RunMetrics>> runs;
  for (const auto& a : archives) {
    if (std::find(models.begin(), models.end(), a.header.model) == models.end()) models.push_back(a.header.model);
    for (Domain d : kAllDomains) {
      std::vector<TaskOutcome> sub;
      for (const auto& r : a.records)
        if (r.ext.domain == d) sub.push_back(outcome_from_record(r));
      if (sub.empty()) continue;
      auto m = compute_run_metrics(sub);
      m.model = a.header.model;
      m.domain = d;
      runs[{a.header.model, d}].push_back(m);
    }
  }
  if (baseline && std::find(models.begin(), models.end(), *baseline) == models.end()) {
    throw Error(ErrorCode::Config, fmt::format("baseline model '{}' is not among the archives", *baseline));
  }
  std::vector<RunMetrics> cells;
  for (Domain d : kAllDomains) {
    std::optional<Baseline> base;
    if (baseline) {
      auto it = runs.find({*baseline, d});
      if (it != runs.end()) base = baseline_from_runs(it->second);
    }
    for (const auto& model : models) {
      auto it = runs.find({model, d});
      if (it == runs.end()) continue;
      auto cell = mean_runs(it->second);
      if (base) {
        if (cell.cre_raw > 0.0) cell.cre_ratio = base->tokens_mean / cell.cre_raw;
        if (cell.rte_raw > 0.0) cell.rte_ratio = base->elapsed_mean_ms / cell.rte_raw;
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

inline int cmd_report(const std::vector<std::filesystem::path>& paths, const std::optional<std::string>& baseline,
                      const std::filesystem::path& out_dir, std::ostream& out) {
  try {
    std::vector<RunArchive> archives;
    for (const auto& p : paths)
      for (const auto& dir : find_archives(p)) archives.push_back(load_archive(dir));
    if (archives.empty()) throw Error(ErrorCode::Io, "no archives found");
    auto cells = aggregate_archives(archives, baseline);
    auto bundle = build_report(cells);
    write_report(out_dir, bundle);
    out << bundle.markdown;
    return exit_code::kOk;
  } catch (const Error& e) {
    out << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

// ---------------------------------------------------------------------------
// validate

inline int cmd_validate(const std::optional<std::filesystem::path>& dataset, const std::optional<std::filesystem::path>& pool,
                        std::ostream& out) {
  std::size_t violations = 0;
  try {
    if (dataset) {
      auto scan = scan_dataset(dataset->string());
      for (const auto& issue : scan.issues) out << dataset->string() << ": " << format_issue(issue) << "\n";
      violations += scan.issues.size();
      out << fmt::format("{}: {} tasks, {} issues\n", dataset->string(), scan.tasks.size(), scan.issues.size());
    }
    if (pool) {
      std::ifstream in(*pool, std::ios::binary);
      if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open mcp_pool '{}'", pool->string()));
      std::stringstream ss;
      ss << in.rdbuf();
      try {
        auto specs = parse_mcp_pool(ss.str());
        out << fmt::format("{}: {} servers ok\n", pool->string(), specs.size());
      } catch (const Error& e) {
        out << pool->string() << ": " << e.what() << "\n";
        ++violations;
      }
    }
  } catch (const Error& e) {
    out << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
  return violations == 0 ? exit_code::kOk : exit_code::kDiffs;
}

// ---------------------------------------------------------------------------
// replay

struct ReplayDiff {
  std::string unique_id;
  bool stored = false;
  bool recomputed = false;
};

struct ReplayResult {
  std::vector<ReplayDiff> diffs;
  RunMetrics metrics;
  bool metrics_match = true;  // against the stored metrics.json, when present
};

/// Re-checks every stored prediction offline. With a dataset, tasks (ground
/// truth and answer spec) come from it; otherwise from the records.
inline ReplayResult replay_archive(const RunArchive& a, const std::optional<std::vector<Task>>& dataset,
                                   const std::optional<Json>& stored_metrics) {
  std::map<std::string, const Task*> by_id;
  if (dataset)
    for (const auto& t : *dataset) by_id.emplace(t.unique_id, &t);
  ReplayResult res;
  std::vector<EvalRecord> records = a.records;
  for (auto& r : records) {
    Task t;
    if (auto it = by_id.find(r.unique_id); it != by_id.end()) {
      t = *it->second;
    } else {
      t.unique_id = r.unique_id;
      t.domain = r.ext.domain;
      t.prompt = r.question;
      t.ground_truth = r.ground_truth;
    }
    bool ok = !r.prediction.empty() && check(r.prediction, t).success;
    if (ok != r.success) res.diffs.push_back({r.unique_id, r.success, ok});
    r.success = ok;
  }
  if (!records.empty()) {
    res.metrics = compute_run_metrics(outcomes_from_records(records));
    res.metrics.model = a.header.model;
  }
  if (stored_metrics && stored_metrics->contains("overall") && !(*stored_metrics)["overall"].is_null()) {
    res.metrics_match = run_metrics_to_json(res.metrics).dump() == (*stored_metrics)["overall"].dump();
  }
  return res;
}

inline int cmd_replay(const std::filesystem::path& archive, const std::optional<std::filesystem::path>& dataset, std::ostream& out) {
  try {
    int rc = exit_code::kOk;
    for (const auto& dir : find_archives(archive)) {
      auto a = load_archive(dir);
      std::optional<std::vector<Task>> tasks;
      if (dataset) tasks = load_dataset(dataset->string());
      std::optional<Json> stored;
      if (std::ifstream in(dir / kMetricsFile); in) {
        Json j = Json::parse(in, nullptr, false);
        if (!j.is_discarded()) stored = j;
      }
      auto res = replay_archive(a, tasks, stored);
      for (const auto& d : res.diffs) {
        out << fmt::format("{}: {} stored success={} recomputed={}\n", dir.string(), d.unique_id, d.stored, d.recomputed);
      }
      out << fmt::format("{}: {} records, {} diffs, metrics {}\n", dir.string(), a.records.size(), res.diffs.size(),
                         !stored ? "not stored" : (res.metrics_match ? "identical" : "DIFFER"));
      out << "  " << run_metrics_to_json(res.metrics).dump() << "\n";
      if (!res.diffs.empty() || !res.metrics_match) rc = exit_code::kDiffs;
    }
    return rc;
  } catch (const Error& e) {
    out << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

}  // namespace mcpradar
