#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "mcpradar/error.hpp"

namespace mcpradar {

using Json = nlohmann::ordered_json;

enum class Domain { Math, Coding, General };

inline constexpr Domain kAllDomains[] = {Domain::Math, Domain::Coding, Domain::General};

inline std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::Math: return "math";
    case Domain::Coding: return "coding";
    case Domain::General: return "general";
  }
  return "general";
}

inline std::optional<Domain> parse_domain(std::string_view s) {
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "math") return Domain::Math;
  if (lower == "coding" || lower == "code") return Domain::Coding;
  if (lower == "general") return Domain::General;
  return std::nullopt;
}

enum class ComplexityLevel { L1 = 1, L2 = 2, L3 = 3 };

inline std::string_view to_string(ComplexityLevel c) {
  switch (c) {
    case ComplexityLevel::L1: return "L1";
    case ComplexityLevel::L2: return "L2";
    case ComplexityLevel::L3: return "L3";
  }
  return "L1";
}

inline std::optional<ComplexityLevel> parse_complexity(std::string_view s) {
  if (s == "L1" || s == "l1" || s == "1") return ComplexityLevel::L1;
  if (s == "L2" || s == "l2" || s == "2") return ComplexityLevel::L2;
  if (s == "L3" || s == "l3" || s == "3") return ComplexityLevel::L3;
  return std::nullopt;
}

/// Level grading by number of tool calls: one call is L1, two to four is L2,
/// anything longer is L3.
inline ComplexityLevel classify_complexity(std::int64_t tool_call_count) {
  if (tool_call_count < 1) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("tool call count must be >= 1, got {}", tool_call_count));
  }
  if (tool_call_count == 1) return ComplexityLevel::L1;
  if (tool_call_count <= 4) return ComplexityLevel::L2;
  return ComplexityLevel::L3;
}

struct NormalizationOptions {
  bool case_fold = true;
  bool collapse_whitespace = true;
  bool strip_latex = true;

  friend bool operator==(const NormalizationOptions&, const NormalizationOptions&) = default;
};

struct ExactCheck {
  friend bool operator==(const ExactCheck&, const ExactCheck&) = default;
};
struct NormalizedCheck {
  friend bool operator==(const NormalizedCheck&, const NormalizedCheck&) = default;
};
struct NumericCheck {
  double abs_tolerance = 1e-6;
  friend bool operator==(const NumericCheck&, const NumericCheck&) = default;
};
struct RegexCheck {
  std::string pattern;
  friend bool operator==(const RegexCheck&, const RegexCheck&) = default;
};

using Checker = std::variant<ExactCheck, NormalizedCheck, NumericCheck, RegexCheck>;

struct AnswerSpec {
  Checker checker = NormalizedCheck{};
  NormalizationOptions normalization;

  friend bool operator==(const AnswerSpec&, const AnswerSpec&) = default;
};

struct Task {
  std::string unique_id;
  Domain domain = Domain::General;
  ComplexityLevel complexity = ComplexityLevel::L1;
  std::string prompt;
  std::string ground_truth;
  // Absent means "use the domain default" (see answer_checker.hpp).
  std::optional<AnswerSpec> answer_spec;
  std::optional<std::int64_t> expected_tool_count;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const Task&, const Task&) = default;
};

inline std::vector<std::string> validate_answer_spec(const AnswerSpec& spec) {
  std::vector<std::string> out;
  if (const auto* num = std::get_if<NumericCheck>(&spec.checker)) {
    if (!(num->abs_tolerance >= 0.0)) out.push_back("answer_spec numeric tolerance negative");
  } else if (const auto* re = std::get_if<RegexCheck>(&spec.checker)) {
    try {
      std::regex compiled(re->pattern);
    } catch (const std::regex_error& e) {
      out.push_back(fmt::format("answer_spec regex does not compile: {}", e.what()));
    }
  }
  return out;
}

/// Every invariant violation of a single task, in a fixed order.
inline std::vector<std::string> validate_task(const Task& task) {
  std::vector<std::string> out;
  if (task.unique_id.empty()) out.push_back("unique_id empty");
  if (task.prompt.empty()) out.push_back("prompt empty");
  if (task.ground_truth.empty()) out.push_back("ground_truth empty");
  if (task.expected_tool_count) {
    if (*task.expected_tool_count < 1) {
      out.push_back(fmt::format("expected_tool_count must be >= 1, got {}", *task.expected_tool_count));
    } else {
      auto implied = classify_complexity(*task.expected_tool_count);
      if (implied != task.complexity) {
        out.push_back(fmt::format("complexity mismatch: expected_tool_count={} implies {} but task says {}",
                                  *task.expected_tool_count, to_string(implied), to_string(task.complexity)));
      }
    }
  }
  if (task.answer_spec) {
    for (auto& v : validate_answer_spec(*task.answer_spec)) out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON mapping. Field names are the on-disk contract.

inline Json answer_spec_to_json(const AnswerSpec& spec) {
  Json j;
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ExactCheck>) {
          j["checker"] = "exact";
        } else if constexpr (std::is_same_v<T, NormalizedCheck>) {
          j["checker"] = "normalized";
        } else if constexpr (std::is_same_v<T, NumericCheck>) {
          j["checker"] = "numeric";
          j["abs_tolerance"] = c.abs_tolerance;
        } else {
          j["checker"] = "regex";
          j["pattern"] = c.pattern;
        }
      },
      spec.checker);
  if (spec.normalization != NormalizationOptions{}) {
    j["case_fold"] = spec.normalization.case_fold;
    j["collapse_whitespace"] = spec.normalization.collapse_whitespace;
    j["strip_latex"] = spec.normalization.strip_latex;
  }
  return j;
}

inline AnswerSpec answer_spec_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Schema, "answer_spec must be an object");
  AnswerSpec spec;
  auto kind = j.value("checker", std::string("normalized"));
  if (kind == "exact") {
    spec.checker = ExactCheck{};
  } else if (kind == "normalized") {
    spec.checker = NormalizedCheck{};
  } else if (kind == "numeric") {
    const auto& tol = j.contains("abs_tolerance") ? j.at("abs_tolerance") : Json(1e-6);
    if (!tol.is_number()) throw Error(ErrorCode::Schema, "answer_spec.abs_tolerance must be a number");
    spec.checker = NumericCheck{tol.get<double>()};
  } else if (kind == "regex") {
    if (!j.contains("pattern") || !j.at("pattern").is_string()) {
      throw Error(ErrorCode::Schema, "answer_spec.pattern missing for regex checker");
    }
    spec.checker = RegexCheck{j.at("pattern").get<std::string>()};
  } else {
    throw Error(ErrorCode::Schema, fmt::format("unknown answer_spec.checker '{}'", kind));
  }
  auto flag = [&](const char* key, bool& dst) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_boolean()) throw Error(ErrorCode::Schema, fmt::format("answer_spec.{} must be boolean", key));
    dst = j.at(key).get<bool>();
  };
  flag("case_fold", spec.normalization.case_fold);
  flag("collapse_whitespace", spec.normalization.collapse_whitespace);
  flag("strip_latex", spec.normalization.strip_latex);
  return spec;
}

inline Json task_to_json(const Task& t) {
  Json j;
  j["unique_id"] = t.unique_id;
  j["domain"] = std::string(to_string(t.domain));
  j["complexity"] = std::string(to_string(t.complexity));
  j["prompt"] = t.prompt;
  j["ground_truth"] = t.ground_truth;
  if (t.answer_spec) j["answer_spec"] = answer_spec_to_json(*t.answer_spec);
  if (t.expected_tool_count) j["expected_tool_count"] = *t.expected_tool_count;
  if (!t.metadata.empty()) {
    Json meta = Json::object();
    for (const auto& [k, v] : t.metadata) meta[k] = v;
    j["metadata"] = std::move(meta);
  }
  return j;
}

namespace detail {

inline const Json& require_string(const Json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::Schema, fmt::format("missing required key '{}'", key));
  const auto& v = j.at(key);
  if (!v.is_string()) throw Error(ErrorCode::Schema, fmt::format("key '{}' must be a string", key));
  return v;
}

}  // namespace detail

inline Task task_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Schema, "task must be a JSON object");
  Task t;
  t.unique_id = detail::require_string(j, "unique_id").get<std::string>();

  auto domain = detail::require_string(j, "domain").get<std::string>();
  auto d = parse_domain(domain);
  if (!d) throw Error(ErrorCode::Schema, fmt::format("task {}: unknown domain '{}'", t.unique_id, domain));
  t.domain = *d;

  if (!j.contains("complexity")) throw Error(ErrorCode::Schema, fmt::format("task {}: missing required key 'complexity'", t.unique_id));
  const auto& cj = j.at("complexity");
  std::optional<ComplexityLevel> c;
  if (cj.is_string()) c = parse_complexity(cj.get<std::string>());
  else if (cj.is_number_integer()) c = parse_complexity(std::to_string(cj.get<std::int64_t>()));
  if (!c) throw Error(ErrorCode::Schema, fmt::format("task {}: bad complexity label {}", t.unique_id, cj.dump()));
  t.complexity = *c;

  t.prompt = detail::require_string(j, "prompt").get<std::string>();
  t.ground_truth = detail::require_string(j, "ground_truth").get<std::string>();
  if (j.contains("answer_spec") && !j.at("answer_spec").is_null()) {
    t.answer_spec = answer_spec_from_json(j.at("answer_spec"));
  }
  if (j.contains("expected_tool_count") && !j.at("expected_tool_count").is_null()) {
    const auto& n = j.at("expected_tool_count");
    if (!n.is_number_integer() || n.get<std::int64_t>() < 0) {
      throw Error(ErrorCode::Schema, fmt::format("task {}: expected_tool_count must be a non-negative integer", t.unique_id));
    }
    t.expected_tool_count = n.get<std::int64_t>();
  }
  if (j.contains("metadata") && !j.at("metadata").is_null()) {
    const auto& m = j.at("metadata");
    if (!m.is_object()) throw Error(ErrorCode::Schema, fmt::format("task {}: metadata must be an object", t.unique_id));
    for (auto it = m.begin(); it != m.end(); ++it) {
      if (!it.value().is_string()) {
        throw Error(ErrorCode::Schema, fmt::format("task {}: metadata.{} must be a string", t.unique_id, it.key()));
      }
      t.metadata[it.key()] = it.value().get<std::string>();
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Dataset files: JSON-Lines, one task per line, blank lines skipped.

struct DatasetIssue {
  std::size_t line = 0;  // 1-based
  std::string unique_id;  // empty when the line could not be parsed far enough
  std::string message;
};

struct DatasetScan {
  std::vector<Task> tasks;
  std::vector<DatasetIssue> issues;
};

/// Reads every line and collects all problems instead of stopping at the
/// first one. Invalid lines are reported and left out of `tasks`.
inline DatasetScan scan_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open dataset '{}'", path));
  DatasetScan scan;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      scan.issues.push_back({lineno, "", fmt::format("malformed JSON: {}", e.what())});
      continue;
    }
    Task task;
    try {
      task = task_from_json(j);
    } catch (const Error& e) {
      std::string id = (j.is_object() && j.contains("unique_id") && j["unique_id"].is_string())
                           ? j["unique_id"].get<std::string>()
                           : std::string();
      scan.issues.push_back({lineno, id, e.what()});
      continue;
    }
    for (auto& v : validate_task(task)) scan.issues.push_back({lineno, task.unique_id, std::move(v)});
    auto [it, inserted] = first_line.emplace(task.unique_id, lineno);
    if (!inserted) {
      scan.issues.push_back({lineno, task.unique_id,
                             fmt::format("duplicate unique_id '{}' on lines {} and {}", task.unique_id,
                                         it->second, lineno)});
      continue;
    }
    scan.tasks.push_back(std::move(task));
  }
  if (in.bad()) throw Error(ErrorCode::Io, fmt::format("read failure on '{}'", path));
  return scan;
}

inline std::string format_issue(const DatasetIssue& issue) {
  if (issue.unique_id.empty()) return fmt::format("line {}: {}", issue.line, issue.message);
  return fmt::format("line {} (task {}): {}", issue.line, issue.unique_id, issue.message);
}

/// Strict loader: any issue aborts the load.
inline std::vector<Task> load_dataset(const std::string& path) {
  auto scan = scan_dataset(path);
  if (!scan.issues.empty()) {
    const auto& first = scan.issues.front();
    auto code = ErrorCode::Dataset;
    if (first.message.starts_with("malformed JSON")) code = ErrorCode::Parse;
    else if (first.message.starts_with("duplicate unique_id")) code = ErrorCode::DuplicateId;
    std::string msg = fmt::format("{}: {}", path, format_issue(first));
    if (scan.issues.size() > 1) msg += fmt::format(" (+{} more)", scan.issues.size() - 1);
    throw Error(code, msg);
  }
  return std::move(scan.tasks);
}

inline void save_dataset(const std::string& path, const std::vector<Task>& tasks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write dataset '{}'", path));
  for (const auto& t : tasks) out << task_to_json(t).dump() << '\n';
  if (!out) throw Error(ErrorCode::Io, fmt::format("write failure on '{}'", path));
}

}  // namespace mcpradar
