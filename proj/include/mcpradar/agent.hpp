#pragma once

#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mcpradar/answer_checker.hpp"
#include "mcpradar/error.hpp"
#include "mcpradar/llm_provider.hpp"
#include "mcpradar/mcp_client.hpp"
#include "mcpradar/task.hpp"

namespace mcpradar {

inline constexpr std::string_view kAnswerFormat = "Format answer as: <answer>[YOUR FINAL ANSWER]</answer>";

/// The per-domain system prompt, verbatim.
inline std::string build_system_prompt(Domain domain) {
  std::string_view opening;
  switch (domain) {
    case Domain::Coding:
      opening = "You are a code assistant that MUST use available tools to solve code problems.";
      break;
    case Domain::Math:
      opening = "You are an math assistant that MUST use available tools to solve math problems.";
      break;
    case Domain::General:
      opening = "You are an assistant that MUST use available tools to solve problems.";
      break;
  }
  return fmt::format(
      "{} Never try to solve problems directly when tools can help.\n"
      "\n"
      "Process:\n"
      "\n"
      "Analyze the problem\n"
      "Choose appropriate tool(s)\n"
      "Call tool(s) with correct parameters\n"
      "Interpret results and use additional tools if needed\n"
      "Provide final answer\n"
      "\n"
      "Important:\n"
      "\n"
      "Always use available tools\n"
      "Show your tool-calling process\n"
      "{}\n"
      "Use appropriate number formats or LaTeX for mathematical answers",
      opening, kAnswerFormat);
}

/// Content of the last complete <answer>...</answer> span, trimmed.
inline std::optional<std::string> extract_answer(std::string_view text) {
  static constexpr std::string_view kOpen = "<answer>";
  static constexpr std::string_view kClose = "</answer>";
  auto close = text.rfind(kClose);
  if (close == std::string_view::npos) return std::nullopt;
  auto open = text.rfind(kOpen, close);
  if (open == std::string_view::npos) return std::nullopt;
  auto body = text.substr(open + kOpen.size(), close - open - kOpen.size());
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.front()))) body.remove_prefix(1);
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.back()))) body.remove_suffix(1);
  return std::string(body);
}

// ---------------------------------------------------------------------------

/// Exposes the tools of several sessions under one namespace. A name offered
/// by more than one server is exposed as "<server>__<tool>" for each of them.
class ToolRouter {
 public:
  static constexpr std::string_view kSeparator = "__";

  ToolRouter() = default;

  explicit ToolRouter(std::vector<Session*> sessions) : sessions_(std::move(sessions)) {
    std::map<std::string, int> counts;
    for (auto* s : sessions_)
      for (const auto& d : s->list_tools()) ++counts[d.tool_name];
    for (std::size_t i = 0; i < sessions_.size(); ++i) {
      for (const auto& d : sessions_[i]->list_tools()) {
        std::string exposed = counts[d.tool_name] > 1 ? qualified(sessions_[i]->server().name, d.tool_name) : d.tool_name;
        routes_.emplace(exposed, Route{i, d});
        order_.push_back(exposed);
      }
    }
  }

  static std::string qualified(std::string_view server, std::string_view tool) {
    return fmt::format("{}{}{}", server, kSeparator, tool);
  }

  std::vector<ToolSchema> schemas() const {
    std::vector<ToolSchema> out;
    for (const auto& name : order_) {
      auto s = tool_schema_from_descriptor(routes_.at(name).descriptor);
      s.name = name;
      out.push_back(std::move(s));
    }
    return out;
  }

  bool knows(std::string_view name) const { return find(name) != nullptr; }

  /// Never throws for tool-level problems: unknown names, unparsable or
  /// schema-violating arguments and transport failures all come back as
  /// is_error results.
  ToolCallResult dispatch(const std::string& name, const std::string& raw_arguments,
                          std::optional<std::chrono::milliseconds> timeout = std::nullopt) {
    const Route* route = find(name);
    if (!route) return ToolCallResult::error_text(fmt::format("Error: unknown tool '{}'", name));
    Json args = raw_arguments.empty() ? Json::object() : Json::parse(raw_arguments, nullptr, false);
    if (args.is_discarded()) return ToolCallResult::error_text(fmt::format("Error: arguments for '{}' are not valid JSON", name));
    auto problems = validate_arguments(route->descriptor, args);
    if (!problems.empty()) {
      std::string msg = fmt::format("Error: invalid arguments for '{}':", name);
      for (const auto& p : problems) msg += " " + p + ";";
      return ToolCallResult::error_text(msg);
    }
    try {
      return sessions_[route->session]->call_tool(route->descriptor.tool_name, args, timeout);
    } catch (const Error& e) {
      return ToolCallResult::error_text(fmt::format("Error: call to '{}' failed: {}", name, e.what()));
    }
  }

 private:
  struct Route {
    std::size_t session;
    ToolDescriptor descriptor;
  };

  const Route* find(std::string_view name) const {
    auto it = routes_.find(std::string(name));
    if (it != routes_.end()) return &it->second;
    // Accept "server.tool" as an alias of the qualified form.
    if (auto dot = name.find('.'); dot != std::string_view::npos) {
      it = routes_.find(qualified(name.substr(0, dot), name.substr(dot + 1)));
      if (it != routes_.end()) return &it->second;
      it = routes_.find(std::string(name.substr(dot + 1)));
      if (it != routes_.end() && sessions_[it->second.session]->server().name == name.substr(0, dot)) return &it->second;
    }
    return nullptr;
  }

  std::vector<Session*> sessions_;
  std::map<std::string, Route> routes_;
  std::vector<std::string> order_;
};

// ---------------------------------------------------------------------------

struct EpisodeConfig {
  int max_rounds = 12;
  std::chrono::milliseconds per_call_timeout{60000};
  std::chrono::milliseconds overall_deadline{600000};
  bool answer_required = true;
  // Directory where file-writing tools put answer.jsonl for coding tasks.
  std::optional<std::filesystem::path> workdir;
};

inline std::vector<std::string> validate_episode_config(const EpisodeConfig& c) {
  std::vector<std::string> out;
  if (c.max_rounds < 1) out.push_back("max_rounds must be >= 1");
  if (c.per_call_timeout.count() <= 0) out.push_back("per_call_timeout must be positive");
  if (c.overall_deadline.count() <= 0) out.push_back("overall_deadline must be positive");
  return out;
}

enum class Outcome { Answered, RoundLimit, Deadline, ProviderError };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Answered: return "answered";
    case Outcome::RoundLimit: return "round_limit";
    case Outcome::Deadline: return "deadline";
    case Outcome::ProviderError: return "provider_error";
  }
  return "provider_error";
}

inline std::optional<Outcome> parse_outcome(std::string_view s) {
  for (auto o : {Outcome::Answered, Outcome::RoundLimit, Outcome::Deadline, Outcome::ProviderError})
    if (to_string(o) == s) return o;
  return std::nullopt;
}

struct ToolEvent {
  std::size_t index = 0;  // 1-based, contiguous
  std::string name;
  std::string arguments;  // raw JSON text as the model emitted it
  ToolCallResult result;
};

struct Episode {
  Task task;
  std::vector<ChatMessage> transcript;
  std::vector<ToolEvent> tool_events;
  TokenUsage usage_total;
  std::vector<TokenUsage> completion_usages;
  std::chrono::system_clock::time_point started;
  std::chrono::system_clock::time_point ended;
  double elapsed_ms = 0.0;  // first provider request to final answer
  Outcome outcome = Outcome::RoundLimit;
  std::optional<std::string> prediction;
  std::string error;  // set for ProviderError
  std::optional<ErrorCode> error_code;
  int rounds = 0;
  bool usage_flagged = false;  // some completion had missing or repaired usage
};

inline constexpr std::string_view kAnswerFile = "answer.jsonl";

inline std::uintmax_t answer_file_size(const std::filesystem::path& workdir) {
  std::error_code ec;
  auto n = std::filesystem::file_size(workdir / kAnswerFile, ec);
  return ec ? 0 : n;
}

/// Looks up {"unique_id": id, "Answer": ...} in <workdir>/answer.jsonl,
/// ignoring the first `from_offset` bytes (written before this episode).
/// The last matching line wins.
inline std::optional<std::string> read_answer_file(const std::filesystem::path& workdir, const std::string& unique_id,
                                                   std::uintmax_t from_offset = 0) {
  std::ifstream in(workdir / kAnswerFile, std::ios::binary);
  if (!in) return std::nullopt;
  if (from_offset > 0) {
    in.seekg(static_cast<std::streamoff>(from_offset));
    if (!in) return std::nullopt;
  }
  std::optional<std::string> found;
  std::string line;
  while (std::getline(in, line)) {
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    if (j.contains("unique_id") && j["unique_id"].is_string() && j["unique_id"].get<std::string>() != unique_id) continue;
    for (const char* key : {"Answer", "answer"}) {
      if (j.contains(key)) {
        found = j[key].is_string() ? j[key].get<std::string>() : j[key].dump();
        break;
      }
    }
  }
  return found;
}

inline constexpr std::string_view kContinueNudge =
    "Continue. When you are done, give the final answer in the required format: <answer>[YOUR FINAL ANSWER]</answer>";

/// Runs one task: model turn, dispatch every requested tool call in order,
/// feed results back, repeat until an answer or a budget runs out.
inline Episode run_episode(const Task& task, ToolRouter& tools, Provider& provider, const EpisodeConfig& cfg) {
  auto problems = validate_episode_config(cfg);
  if (!problems.empty()) throw Error(ErrorCode::Config, problems.front());

  Episode ep;
  ep.task = task;
  ep.transcript.push_back(ChatMessage::system(build_system_prompt(task.domain)));
  ep.transcript.push_back(ChatMessage::user(task.prompt));
  const auto schemas = tools.schemas();
  const std::uintmax_t answer_offset = cfg.workdir ? answer_file_size(*cfg.workdir) : 0;
  ep.started = std::chrono::system_clock::now();
  const auto t0 = Clock::now();
  const auto deadline = t0 + cfg.overall_deadline;
  bool finished = false;

  auto finish = [&](Outcome o) {
    ep.outcome = o;
    finished = true;
  };

  while (!finished) {
    if (ep.rounds >= cfg.max_rounds) {
      finish(Outcome::RoundLimit);
      break;
    }
    if (Clock::now() >= deadline) {
      finish(Outcome::Deadline);
      break;
    }
    Completion c;
    try {
      c = provider.complete(ep.transcript, schemas);
    } catch (const Error& e) {
      ep.error = e.what();
      ep.error_code = e.code();
      finish(Outcome::ProviderError);
      break;
    } catch (const std::exception& e) {
      ep.error = e.what();
      ep.error_code = ErrorCode::Provider;
      finish(Outcome::ProviderError);
      break;
    }
    ++ep.rounds;
    ep.usage_total += c.usage;
    ep.completion_usages.push_back(c.usage);
    ep.usage_flagged |= c.usage_missing || c.usage_repaired;
    ep.transcript.push_back(c.message);

    if (!c.message.tool_calls.empty()) {
      for (const auto& call : c.message.tool_calls) {
        auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
        auto timeout = std::max(std::chrono::milliseconds(1), std::min(cfg.per_call_timeout, remaining));
        ToolEvent ev;
        ev.index = ep.tool_events.size() + 1;
        ev.name = call.name;
        ev.arguments = call.arguments;
        ev.result = tools.dispatch(call.name, call.arguments, timeout);
        std::string text = ev.result.text();
        if (ev.result.is_error && !text.starts_with("Error")) text = "Error: " + text;
        ep.transcript.push_back(ChatMessage::tool(call.id, std::move(text)));
        ep.tool_events.push_back(std::move(ev));
      }
      continue;
    }

    if (auto answer = extract_answer(c.message.content)) {
      ep.prediction = std::move(answer);
      finish(Outcome::Answered);
      break;
    }
    if (cfg.workdir) {
      if (auto from_file = read_answer_file(*cfg.workdir, task.unique_id, answer_offset)) {
        ep.prediction = std::move(from_file);
        finish(Outcome::Answered);
        break;
      }
    }
    if (!cfg.answer_required) {
      auto trimmed = std::string(detail::trim(c.message.content));
      ep.prediction = trimmed;
      finish(Outcome::Answered);
      break;
    }
    ep.transcript.push_back(ChatMessage::user(std::string(kContinueNudge)));
  }

  ep.elapsed_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  ep.ended = std::chrono::system_clock::now();
  if (!ep.prediction && cfg.workdir) ep.prediction = read_answer_file(*cfg.workdir, task.unique_id, answer_offset);
  return ep;
}

}  // namespace mcpradar
