#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "mcpradar/agent.hpp"
#include "mcpradar/error.hpp"
#include "mcpradar/llm_provider.hpp"
#include "mcpradar/task.hpp"

namespace mcpradar {

struct TraceToolCall {
  std::string name;
  std::string arguments;  // JSON-encoded string, stored verbatim

  friend bool operator==(const TraceToolCall&, const TraceToolCall&) = default;
};

struct ToolUsage {
  std::vector<TraceToolCall> tool_calls;
  std::int64_t total_tool_count = 0;
  std::vector<std::string> tool_names;  // distinct, first-appearance order

  friend bool operator==(const ToolUsage&, const ToolUsage&) = default;
};

/// Harness fields kept under the single "ext" key.
struct RecordExt {
  std::string model;
  Domain domain = Domain::General;
  std::string run_id;
  std::int64_t elapsed_ms = 0;
  std::vector<bool> call_error_flags;
  std::string outcome = std::string(to_string(Outcome::Answered));

  friend bool operator==(const RecordExt&, const RecordExt&) = default;
};

struct EvalRecord {
  std::string unique_id;
  std::string question;
  std::string ground_truth;
  std::string prediction;
  bool success = false;
  ToolUsage tool_usage;
  TokenUsage token_usage;
  RecordExt ext;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

inline std::vector<std::string> distinct_names(const std::vector<TraceToolCall>& calls) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& c : calls)
    if (seen.insert(c.name).second) out.push_back(c.name);
  return out;
}

inline std::vector<std::string> validate_record(const EvalRecord& r) {
  std::vector<std::string> out;
  const auto n = static_cast<std::int64_t>(r.tool_usage.tool_calls.size());
  if (r.tool_usage.total_tool_count != n) {
    out.push_back(fmt::format("total_tool_count={} but {} tool_calls", r.tool_usage.total_tool_count, n));
  }
  if (r.tool_usage.tool_names != distinct_names(r.tool_usage.tool_calls)) {
    out.push_back("tool_names is not the distinct tool_calls names in order");
  }
  if (static_cast<std::int64_t>(r.ext.call_error_flags.size()) != n) {
    out.push_back(fmt::format("ext.call_error_flags has {} entries for {} tool_calls", r.ext.call_error_flags.size(), n));
  }
  if (!r.token_usage.consistent()) {
    out.push_back(fmt::format("total_tokens={} but prompt_tokens + completion_tokens = {}", r.token_usage.total_tokens,
                              r.token_usage.prompt_tokens + r.token_usage.completion_tokens));
  }
  if (r.token_usage.prompt_tokens < 0 || r.token_usage.completion_tokens < 0) out.push_back("negative token count");
  if (r.ext.elapsed_ms < 0) out.push_back("ext.elapsed_ms negative");
  return out;
}

inline EvalRecord record_from_episode(const Episode& ep, bool success, const std::string& model, const std::string& run_id) {
  EvalRecord r;
  r.unique_id = ep.task.unique_id;
  r.question = ep.task.prompt;
  r.ground_truth = ep.task.ground_truth;
  r.prediction = ep.prediction.value_or("");
  r.success = success;
  for (const auto& ev : ep.tool_events) {
    r.tool_usage.tool_calls.push_back({ev.name, ev.arguments});
    r.ext.call_error_flags.push_back(ev.result.is_error);
  }
  r.tool_usage.total_tool_count = static_cast<std::int64_t>(r.tool_usage.tool_calls.size());
  r.tool_usage.tool_names = distinct_names(r.tool_usage.tool_calls);
  r.token_usage = ep.usage_total;
  r.ext.model = model;
  r.ext.domain = ep.task.domain;
  r.ext.run_id = run_id;
  r.ext.elapsed_ms = static_cast<std::int64_t>(ep.elapsed_ms + 0.5);
  r.ext.outcome = std::string(to_string(ep.outcome));
  return r;
}

// ---------------------------------------------------------------------------
// JSON. Core keys and their order are fixed; serialization is compact.

inline Json record_core_to_json(const EvalRecord& r) {
  Json j;
  j["unique_id"] = r.unique_id;
  j["question"] = r.question;
  j["ground_truth"] = r.ground_truth;
  j["prediction"] = r.prediction;
  j["success"] = r.success;
  Json calls = Json::array();
  for (const auto& c : r.tool_usage.tool_calls) {
    Json call;
    call["name"] = c.name;
    call["arguments"] = c.arguments;
    calls.push_back(std::move(call));
  }
  Json tu;
  tu["tool_calls"] = std::move(calls);
  tu["total_tool_count"] = r.tool_usage.total_tool_count;
  tu["tool_names"] = r.tool_usage.tool_names;
  j["tool_usage"] = std::move(tu);
  Json tok;
  tok["prompt_tokens"] = r.token_usage.prompt_tokens;
  tok["completion_tokens"] = r.token_usage.completion_tokens;
  tok["total_tokens"] = r.token_usage.total_tokens;
  j["token_usage"] = std::move(tok);
  return j;
}

inline Json record_to_json(const EvalRecord& r) {
  Json j = record_core_to_json(r);
  Json ext;
  ext["model"] = r.ext.model;
  ext["domain"] = std::string(to_string(r.ext.domain));
  ext["run_id"] = r.ext.run_id;
  ext["elapsed_ms"] = r.ext.elapsed_ms;
  ext["call_error_flags"] = r.ext.call_error_flags;
  ext["outcome"] = r.ext.outcome;
  j["ext"] = std::move(ext);
  return j;
}

inline std::string serialize_record(const EvalRecord& r) { return record_to_json(r).dump(); }
inline std::string serialize_record_core(const EvalRecord& r) { return record_core_to_json(r).dump(); }

namespace detail {

template <typename T>
T record_get(const Json& obj, const char* key, const char* where) {
  if (!obj.is_object() || !obj.contains(key)) throw Error(ErrorCode::Schema, fmt::format("{}: missing key '{}'", where, key));
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::Schema, fmt::format("{}: key '{}' has wrong type", where, key));
  }
}

}  // namespace detail

/// Parses one record; missing "ext" yields defaults (no error flags set).
/// Invariant violations are reported as Schema errors.
inline EvalRecord record_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Schema, "record is not a JSON object");
  EvalRecord r;
  r.unique_id = detail::record_get<std::string>(j, "unique_id", "record");
  const std::string where = fmt::format("record {}", r.unique_id);
  const char* w = where.c_str();
  r.question = detail::record_get<std::string>(j, "question", w);
  r.ground_truth = detail::record_get<std::string>(j, "ground_truth", w);
  r.prediction = detail::record_get<std::string>(j, "prediction", w);
  r.success = detail::record_get<bool>(j, "success", w);

  if (!j.contains("tool_usage") || !j["tool_usage"].is_object()) throw Error(ErrorCode::Schema, fmt::format("{}: missing tool_usage", where));
  const auto& tu = j["tool_usage"];
  if (!tu.contains("tool_calls") || !tu["tool_calls"].is_array()) throw Error(ErrorCode::Schema, fmt::format("{}: tool_usage.tool_calls missing", where));
  for (const auto& c : tu["tool_calls"]) {
    TraceToolCall call;
    call.name = detail::record_get<std::string>(c, "name", w);
    if (c.contains("arguments") && !c["arguments"].is_string()) call.arguments = c["arguments"].dump();
    else call.arguments = c.contains("arguments") ? c["arguments"].get<std::string>() : std::string();
    r.tool_usage.tool_calls.push_back(std::move(call));
  }
  r.tool_usage.total_tool_count = detail::record_get<std::int64_t>(tu, "total_tool_count", w);
  r.tool_usage.tool_names = detail::record_get<std::vector<std::string>>(tu, "tool_names", w);

  if (!j.contains("token_usage") || !j["token_usage"].is_object()) throw Error(ErrorCode::Schema, fmt::format("{}: missing token_usage", where));
  const auto& tok = j["token_usage"];
  r.token_usage.prompt_tokens = detail::record_get<std::int64_t>(tok, "prompt_tokens", w);
  r.token_usage.completion_tokens = detail::record_get<std::int64_t>(tok, "completion_tokens", w);
  r.token_usage.total_tokens = detail::record_get<std::int64_t>(tok, "total_tokens", w);

  if (j.contains("ext") && j["ext"].is_object()) {
    const auto& ext = j["ext"];
    if (ext.contains("model")) r.ext.model = detail::record_get<std::string>(ext, "model", w);
    if (ext.contains("domain")) {
      auto d = parse_domain(detail::record_get<std::string>(ext, "domain", w));
      if (!d) throw Error(ErrorCode::Schema, fmt::format("{}: ext.domain unknown", where));
      r.ext.domain = *d;
    }
    if (ext.contains("run_id")) r.ext.run_id = detail::record_get<std::string>(ext, "run_id", w);
    if (ext.contains("elapsed_ms")) r.ext.elapsed_ms = detail::record_get<std::int64_t>(ext, "elapsed_ms", w);
    if (ext.contains("call_error_flags")) r.ext.call_error_flags = detail::record_get<std::vector<bool>>(ext, "call_error_flags", w);
    else r.ext.call_error_flags.assign(r.tool_usage.tool_calls.size(), false);
    if (ext.contains("outcome")) r.ext.outcome = detail::record_get<std::string>(ext, "outcome", w);
  } else {
    r.ext.call_error_flags.assign(r.tool_usage.tool_calls.size(), false);
  }

  auto problems = validate_record(r);
  if (!problems.empty()) throw Error(ErrorCode::Schema, fmt::format("{}: {}", where, problems.front()));
  return r;
}

inline EvalRecord parse_record(std::string_view line) {
  Json j = Json::parse(line, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::Parse, "record line is not valid JSON", std::string(line));
  return record_from_json(j);
}

/// Undoes typesetting damage to hand-copied JSON: inside string literals a
/// raw line break plus the indentation after it is dropped, and an unknown
/// escape such as \p keeps its backslash literally. Text outside strings
/// is untouched, so structurally broken input still fails to parse.
inline std::string repair_typeset_json(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_str = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (!in_str) {
      if (c == '"') in_str = true;
      out += c;
      continue;
    }
    if (c == '"') {
      in_str = false;
      out += c;
    } else if (c == '\\') {
      char nx = i + 1 < text.size() ? text[i + 1] : '\0';
      if (std::strchr("\"\\/bfnrtu", nx) && nx != '\0') {
        out += c;
        out += nx;
        ++i;
      } else {
        out += "\\\\";
      }
    } else if (c == '\n' || c == '\r') {
      while (i + 1 < text.size() && (text[i + 1] == ' ' || text[i + 1] == '\t' || text[i + 1] == '\n' || text[i + 1] == '\r')) ++i;
    } else {
      out += c;
    }
  }
  return out;
}

/// parse_record for pasted documents (e.g. from a report); strict on structure.
inline EvalRecord parse_record_lenient(std::string_view text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) j = Json::parse(repair_typeset_json(text), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::Parse, "record is not valid JSON even after repairing line wraps", std::string(text));
  return record_from_json(j);
}

// ---------------------------------------------------------------------------
// JSONL files.

/// Appends one line with a single O_APPEND write and fsyncs, so a completed
/// append survives a crash and concurrent appenders never interleave bytes.
inline void append_line_durable(const std::filesystem::path& path, std::string line) {
  line.push_back('\n');
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::Io, fmt::format("cannot open '{}' for append: {}", path.string(), std::strerror(errno)));
  std::size_t off = 0;
  while (off < line.size()) {
    ssize_t n = ::write(fd, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      throw Error(ErrorCode::Io, fmt::format("write to '{}' failed: {}", path.string(), std::strerror(err)));
    }
    off += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

inline void append_jsonl(const std::filesystem::path& path, const EvalRecord& record) {
  auto problems = validate_record(record);
  if (!problems.empty()) throw Error(ErrorCode::Schema, fmt::format("record {}: {}", record.unique_id, problems.front()));
  append_line_durable(path, serialize_record(record));
}

/// Blank lines are skipped; anything else that fails to parse or validate
/// raises with its line number.
inline std::vector<EvalRecord> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("{}:{}: {}", path.string(), lineno, e.what()), e.raw());
    }
  }
  if (in.bad()) throw Error(ErrorCode::Io, fmt::format("read failure on '{}'", path.string()));
  return out;
}

/// Drops an unterminated final line left behind by a crash mid-append.
/// Returns true if the file was shortened.
inline bool repair_torn_tail(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return false;
  std::string content;
  {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  if (content.empty() || content.back() == '\n') return false;
  auto keep = content.rfind('\n');
  std::filesystem::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
  return true;
}

// ---------------------------------------------------------------------------
// Run archives: <dir>/header.json + <dir>/records.jsonl

inline constexpr std::string_view kArchiveSchema = "mcpradar.archive/1";
inline constexpr std::string_view kRecordsFile = "records.jsonl";
inline constexpr std::string_view kHeaderFile = "header.json";

struct ArchiveHeader {
  std::string dataset_id;
  std::string dataset_path;
  std::string model;
  std::string run_id;
  std::string created_at;
  std::string config_digest;

  friend bool operator==(const ArchiveHeader&, const ArchiveHeader&) = default;
};

struct RunArchive {
  ArchiveHeader header;
  std::vector<EvalRecord> records;
};

inline Json header_to_json(const ArchiveHeader& h) {
  Json j;
  j["schema"] = std::string(kArchiveSchema);
  j["dataset_id"] = h.dataset_id;
  j["dataset_path"] = h.dataset_path;
  j["model"] = h.model;
  j["run_id"] = h.run_id;
  j["created_at"] = h.created_at;
  j["config_digest"] = h.config_digest;
  return j;
}

inline ArchiveHeader header_from_json(const Json& j) {
  ArchiveHeader h;
  const char* w = "archive header";
  h.dataset_id = detail::record_get<std::string>(j, "dataset_id", w);
  h.dataset_path = j.value("dataset_path", std::string());
  h.model = detail::record_get<std::string>(j, "model", w);
  h.run_id = detail::record_get<std::string>(j, "run_id", w);
  h.created_at = j.value("created_at", std::string());
  h.config_digest = j.value("config_digest", std::string());
  return h;
}

inline void write_header(const std::filesystem::path& dir, const ArchiveHeader& h) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / kHeaderFile, std::ios::binary | std::ios::trunc);
  out << header_to_json(h).dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write header in '{}'", dir.string()));
}

inline ArchiveHeader read_header(const std::filesystem::path& dir) {
  std::ifstream in(dir / kHeaderFile, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("no {} in '{}'", kHeaderFile, dir.string()));
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::Parse, fmt::format("{} in '{}' is not valid JSON", kHeaderFile, dir.string()));
  return header_from_json(j);
}

/// Accepts an archive directory or its records.jsonl path.
inline RunArchive load_archive(std::filesystem::path path) {
  if (std::filesystem::is_regular_file(path)) path = path.parent_path();
  RunArchive a;
  a.header = read_header(path);
  auto records = path / kRecordsFile;
  if (std::filesystem::exists(records)) a.records = load_jsonl(records);
  std::set<std::string> seen;
  for (const auto& r : a.records) {
    if (!seen.insert(r.unique_id).second) {
      throw Error(ErrorCode::DuplicateId, fmt::format("archive '{}' holds two records for task {}", path.string(), r.unique_id));
    }
  }
  return a;
}

/// FNV-1a 64, hex. Used for dataset and config identity, not security.
inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace mcpradar
