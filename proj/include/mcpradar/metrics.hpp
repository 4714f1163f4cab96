#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mcpradar/error.hpp"
#include "mcpradar/task.hpp"
#include "mcpradar/trace.hpp"

namespace mcpradar {

/// Per-task inputs of the five metrics.
struct TaskOutcome {
  bool success = false;
  std::vector<bool> call_error_flags;
  std::int64_t total_tokens = 0;
  double elapsed_ms = 0.0;

  std::size_t call_count() const { return call_error_flags.size(); }
};

inline TaskOutcome outcome_from_record(const EvalRecord& r) {
  return {r.success, r.ext.call_error_flags, r.token_usage.total_tokens, static_cast<double>(r.ext.elapsed_ms)};
}

inline std::vector<TaskOutcome> outcomes_from_records(std::span<const EvalRecord> records) {
  std::vector<TaskOutcome> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(outcome_from_record(r));
  return out;
}

/// Reference model means used by the ratio forms of CRE and RTE.
struct Baseline {
  double tokens_mean = 0.0;
  double elapsed_mean_ms = 0.0;
};

struct RunMetrics {
  std::string model;
  std::optional<Domain> domain;
  std::size_t n_tasks = 0;
  double ra = 0.0;
  double dtsr = 0.0;
  double fep = 0.0;
  double cre_raw = 0.0;  // mean total tokens per task
  double rte_raw = 0.0;  // mean elapsed ms per task
  std::optional<double> cre_ratio;
  std::optional<double> rte_ratio;
};

struct EfficiencyValue {
  double raw = 0.0;
  std::optional<double> ratio;
};

namespace detail {

inline void require_nonempty(std::span<const TaskOutcome> outcomes, const char* metric) {
  if (outcomes.empty()) throw Error(ErrorCode::InvalidArgument, fmt::format("{} of an empty outcome list", metric));
}

}  // namespace detail

// -- per-task terms --------------------------------------------------------

/// Share of erroneous calls. A task without calls counts as fully wrong
/// when it failed and fully clean when it succeeded.
inline double error_rate(const TaskOutcome& t) {
  const auto n = t.call_count();
  if (n == 0) return t.success ? 0.0 : 1.0;
  std::size_t errors = 0;
  for (bool f : t.call_error_flags) errors += f ? 1 : 0;
  return static_cast<double>(errors) / static_cast<double>(n);
}

/// Depth of the first erroneous call. Successful tasks score 1. A failed
/// task whose first error is call k of n scores (k-1)/n; a failed task with
/// n clean calls scores n/(n+1); a failed task with no calls scores 0.
inline double first_error_depth(const TaskOutcome& t) {
  if (t.success) return 1.0;
  const auto n = t.call_count();
  if (n == 0) return 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (t.call_error_flags[k]) return static_cast<double>(k) / static_cast<double>(n);
  }
  return static_cast<double>(n) / static_cast<double>(n + 1);
}

// -- the five metrics --------------------------------------------------------

inline double result_accuracy(std::span<const TaskOutcome> outcomes) {
  detail::require_nonempty(outcomes, "result_accuracy");
  std::size_t ok = 0;
  for (const auto& t : outcomes) ok += t.success ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(outcomes.size());
}

inline double dynamic_tool_selection_rate(std::span<const TaskOutcome> outcomes) {
  detail::require_nonempty(outcomes, "dynamic_tool_selection_rate");
  double sum = 0.0;
  for (const auto& t : outcomes) sum += error_rate(t);
  return 1.0 - sum / static_cast<double>(outcomes.size());
}

inline double first_error_position(std::span<const TaskOutcome> outcomes) {
  detail::require_nonempty(outcomes, "first_error_position");
  double sum = 0.0;
  for (const auto& t : outcomes) sum += first_error_depth(t);
  return sum / static_cast<double>(outcomes.size());
}

namespace detail {

inline EfficiencyValue efficiency(double raw, std::optional<double> baseline_mean, const char* metric) {
  EfficiencyValue v{raw, std::nullopt};
  if (baseline_mean) {
    if (!(*baseline_mean > 0.0)) throw Error(ErrorCode::InvalidArgument, fmt::format("{} baseline must be > 0", metric));
    if (raw == 0.0) throw Error(ErrorCode::Division, fmt::format("{} ratio undefined: mean is 0", metric));
    v.ratio = *baseline_mean / raw;
  }
  return v;
}

}  // namespace detail

/// raw = mean tokens per task; ratio = baseline mean / raw (> 1 is better).
inline EfficiencyValue cre(std::span<const TaskOutcome> outcomes, std::optional<Baseline> baseline = std::nullopt) {
  detail::require_nonempty(outcomes, "cre");
  double sum = 0.0;
  for (const auto& t : outcomes) sum += static_cast<double>(t.total_tokens);
  double raw = sum / static_cast<double>(outcomes.size());
  return detail::efficiency(raw, baseline ? std::optional(baseline->tokens_mean) : std::nullopt, "cre");
}

/// raw = mean elapsed ms per task; ratio = baseline mean / raw.
inline EfficiencyValue rte(std::span<const TaskOutcome> outcomes, std::optional<Baseline> baseline = std::nullopt) {
  detail::require_nonempty(outcomes, "rte");
  double sum = 0.0;
  for (const auto& t : outcomes) sum += t.elapsed_ms;
  double raw = sum / static_cast<double>(outcomes.size());
  return detail::efficiency(raw, baseline ? std::optional(baseline->elapsed_mean_ms) : std::nullopt, "rte");
}

inline RunMetrics compute_run_metrics(std::span<const TaskOutcome> outcomes, std::optional<Baseline> baseline = std::nullopt) {
  RunMetrics m;
  m.n_tasks = outcomes.size();
  m.ra = result_accuracy(outcomes);
  m.dtsr = dynamic_tool_selection_rate(outcomes);
  m.fep = first_error_position(outcomes);
  auto c = cre(outcomes, baseline);
  auto t = rte(outcomes, baseline);
  m.cre_raw = c.raw;
  m.rte_raw = t.raw;
  m.cre_ratio = c.ratio;
  m.rte_ratio = t.ratio;
  return m;
}

// -- multi-run averaging -----------------------------------------------------

/// Round half away from zero at `decimals` places. The nudge absorbs binary
/// representation error so 0.885 rounds to 0.89.
inline double round_half_away(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double scaled = x * scale;
  const double nudged = scaled + std::copysign(1e-9 * std::max(1.0, std::fabs(scaled)), scaled);
  return std::round(nudged) / scale;
}

/// Per-field arithmetic mean, unrounded.
inline RunMetrics mean_runs(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw Error(ErrorCode::InvalidArgument, "average of zero runs");
  for (const auto& r : runs) {
    if (r.model != runs.front().model || r.domain != runs.front().domain) {
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("runs mix model/domain: '{}' vs '{}'", runs.front().model, r.model));
    }
  }
  const double n = static_cast<double>(runs.size());
  RunMetrics out;
  out.model = runs.front().model;
  out.domain = runs.front().domain;
  bool all_cre = true, all_rte = true;
  double cre_ratio = 0.0, rte_ratio = 0.0;
  for (const auto& r : runs) {
    out.n_tasks += r.n_tasks;
    out.ra += r.ra;
    out.dtsr += r.dtsr;
    out.fep += r.fep;
    out.cre_raw += r.cre_raw;
    out.rte_raw += r.rte_raw;
    if (r.cre_ratio) cre_ratio += *r.cre_ratio;
    else all_cre = false;
    if (r.rte_ratio) rte_ratio += *r.rte_ratio;
    else all_rte = false;
  }
  out.ra /= n;
  out.dtsr /= n;
  out.fep /= n;
  out.cre_raw /= n;
  out.rte_raw /= n;
  if (all_cre) out.cre_ratio = cre_ratio / n;
  if (all_rte) out.rte_ratio = rte_ratio / n;
  return out;
}

/// Report form: ra/dtsr/fep to 2 decimals, raw CRE/RTE to integers.
inline RunMetrics round_for_report(RunMetrics m) {
  m.ra = round_half_away(m.ra, 2);
  m.dtsr = round_half_away(m.dtsr, 2);
  m.fep = round_half_away(m.fep, 2);
  m.cre_raw = round_half_away(m.cre_raw, 0);
  m.rte_raw = round_half_away(m.rte_raw, 0);
  if (m.cre_ratio) m.cre_ratio = round_half_away(*m.cre_ratio, 2);
  if (m.rte_ratio) m.rte_ratio = round_half_away(*m.rte_ratio, 2);
  return m;
}

/// Mean over runs, then report rounding.
inline RunMetrics average_runs(std::span<const RunMetrics> runs) { return round_for_report(mean_runs(runs)); }

inline Baseline baseline_from_runs(std::span<const RunMetrics> runs) {
  auto m = mean_runs(runs);
  return {m.cre_raw, m.rte_raw};
}

inline Json run_metrics_to_json(const RunMetrics& m) {
  Json j;
  j["model"] = m.model;
  j["domain"] = m.domain ? Json(std::string(to_string(*m.domain))) : Json(nullptr);
  j["n_tasks"] = m.n_tasks;
  j["ra"] = m.ra;
  j["dtsr"] = m.dtsr;
  j["fep"] = m.fep;
  j["cre_raw"] = m.cre_raw;
  j["rte_raw"] = m.rte_raw;
  j["cre_ratio"] = m.cre_ratio ? Json(*m.cre_ratio) : Json(nullptr);
  j["rte_ratio"] = m.rte_ratio ? Json(*m.rte_ratio) : Json(nullptr);
  return j;
}

inline RunMetrics run_metrics_from_json(const Json& j) {
  RunMetrics m;
  m.model = j.value("model", std::string());
  if (j.contains("domain") && j["domain"].is_string()) m.domain = parse_domain(j["domain"].get<std::string>());
  m.n_tasks = j.value("n_tasks", std::size_t{0});
  m.ra = j.at("ra").get<double>();
  m.dtsr = j.at("dtsr").get<double>();
  m.fep = j.at("fep").get<double>();
  m.cre_raw = j.at("cre_raw").get<double>();
  m.rte_raw = j.at("rte_raw").get<double>();
  if (j.contains("cre_ratio") && j["cre_ratio"].is_number()) m.cre_ratio = j["cre_ratio"].get<double>();
  if (j.contains("rte_ratio") && j["rte_ratio"].is_number()) m.rte_ratio = j["rte_ratio"].get<double>();
  return m;
}

}  // namespace mcpradar
