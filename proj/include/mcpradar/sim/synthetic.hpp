#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mcpradar/error.hpp"
#include "mcpradar/metrics.hpp"
#include "mcpradar/task.hpp"
#include "mcpradar/trace.hpp"

namespace mcpradar::sim {

struct SyntheticShape {
  std::size_t tasks = 100;
  std::size_t calls_per_task = 100;
};

/// Builds records whose metrics equal `target` exactly: ra, dtsr and fep must
/// be multiples of 1/tasks, 1/(tasks*calls) and 1/(tasks*calls) respectively;
/// cre_raw/rte_raw become every record's total tokens / elapsed ms.
///
/// Successful tasks score D=1. Failed task i gets its first error at call
/// d_i+1 (so D=d_i/m), with the d_i summing to m*(tasks*fep - successes).
/// Remaining errors are spread after the first-error positions, then over
/// successful tasks, which does not move fep.
inline std::vector<EvalRecord> synthesize_records(const RunMetrics& target, Domain domain, const std::string& run_id,
                                                  SyntheticShape shape = {}) {
  const auto n = static_cast<std::int64_t>(shape.tasks);
  const auto m = static_cast<std::int64_t>(shape.calls_per_task);
  if (n <= 0 || m <= 0) throw Error(ErrorCode::InvalidArgument, "synthetic shape needs tasks and calls > 0");
  auto as_int = [](double x, const char* what) {
    double r = std::round(x);
    if (std::fabs(x - r) > 1e-6) throw Error(ErrorCode::InvalidArgument, fmt::format("{} is not representable in this shape", what));
    return static_cast<std::int64_t>(r);
  };
  const std::int64_t s = as_int(target.ra * n, "ra");
  const std::int64_t errors = as_int((1.0 - target.dtsr) * n * m, "dtsr");
  const std::int64_t depth_sum = as_int((target.fep * n - s) * m, "fep");
  const std::int64_t f = n - s;
  if (s < 0 || s > n) throw Error(ErrorCode::InvalidArgument, "ra out of range");
  if (depth_sum < 0 || depth_sum > f * (m - 1)) throw Error(ErrorCode::InvalidArgument, "fep not reachable with these ra/shape");
  if (errors < f) throw Error(ErrorCode::InvalidArgument, "dtsr too high: every failed task needs an error");

  std::vector<std::int64_t> depth(static_cast<std::size_t>(f), 0);
  for (std::int64_t i = 0; i < f; ++i) depth[i] = depth_sum / f + (i < depth_sum % f ? 1 : 0);

  std::vector<std::vector<bool>> flags(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(m), false));
  std::int64_t left = errors;
  for (std::int64_t i = 0; i < f; ++i) {
    flags[s + i][depth[i]] = true;
    --left;
  }
  for (std::int64_t i = 0; i < f && left > 0; ++i) {
    for (std::int64_t k = depth[i] + 1; k < m && left > 0; ++k, --left) flags[s + i][k] = true;
  }
  for (std::int64_t i = 0; i < s && left > 0; ++i) {
    for (std::int64_t k = 0; k < m && left > 0; ++k, --left) flags[i][k] = true;
  }
  if (left > 0) throw Error(ErrorCode::InvalidArgument, "dtsr too low for this shape");

  const auto tokens = as_int(target.cre_raw, "cre_raw");
  const auto elapsed = as_int(target.rte_raw, "rte_raw");
  std::vector<EvalRecord> out;
  for (std::int64_t i = 0; i < n; ++i) {
    EvalRecord r;
    r.unique_id = fmt::format("{}-{:04}", to_string(domain), i + 1);
    r.question = fmt::format("synthetic {} task {}", to_string(domain), i + 1);
    r.ground_truth = "1";
    r.success = i < s;
    r.prediction = r.success ? "1" : "0";
    for (std::int64_t k = 0; k < m; ++k) {
      r.tool_usage.tool_calls.push_back({"tool", "{}"});
      r.ext.call_error_flags.push_back(flags[i][k]);
    }
    r.tool_usage.total_tool_count = m;
    r.tool_usage.tool_names = {"tool"};
    r.token_usage.prompt_tokens = tokens;
    r.token_usage.completion_tokens = 0;
    r.token_usage.total_tokens = tokens;
    r.ext.model = target.model;
    r.ext.domain = domain;
    r.ext.run_id = run_id;
    r.ext.elapsed_ms = elapsed;
    r.ext.outcome = "answered";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mcpradar::sim
