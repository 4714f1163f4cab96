#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "mcpradar/error.hpp"
#include "mcpradar/llm_provider.hpp"
#include "mcpradar/task.hpp"

namespace mcpradar::sim {

enum class PolicyLabel { Perfect, WrongAnswer, ErrorAtK, NoAnswer };

inline std::string_view to_string(PolicyLabel l) {
  switch (l) {
    case PolicyLabel::Perfect: return "perfect";
    case PolicyLabel::WrongAnswer: return "wrong_answer";
    case PolicyLabel::ErrorAtK: return "error_at_k";
    case PolicyLabel::NoAnswer: return "no_answer";
  }
  return "perfect";
}

inline PolicyLabel parse_policy_label(std::string_view s) {
  for (auto l : {PolicyLabel::Perfect, PolicyLabel::WrongAnswer, PolicyLabel::ErrorAtK, PolicyLabel::NoAnswer})
    if (to_string(l) == s) return l;
  throw Error(ErrorCode::Config, fmt::format("unknown policy '{}' (perfect, wrong_answer, error_at_k, no_answer)", s));
}

/// Label plus its parameter; the reply list is derived per task.
struct PolicySpec {
  PolicyLabel label = PolicyLabel::Perfect;
  std::size_t k = 1;                  // ErrorAtK: 1-based position of the failing call
  std::string failing_tool = "fail";  // ErrorAtK: tool that always errors
};

struct ReferenceCall {
  std::string tool;
  Json arguments = Json::object();
};

inline constexpr std::string_view kReferenceCallsKey = "reference_calls";

/// Task metadata "reference_calls": JSON text of [{"tool": ..., "arguments": {...}}].
inline std::vector<ReferenceCall> reference_calls(const Task& task) {
  auto it = task.metadata.find(std::string(kReferenceCallsKey));
  if (it == task.metadata.end()) return {};
  Json j = Json::parse(it->second, nullptr, false);
  if (j.is_discarded() || !j.is_array()) {
    throw Error(ErrorCode::Dataset, fmt::format("task {}: metadata.reference_calls is not a JSON array", task.unique_id));
  }
  std::vector<ReferenceCall> out;
  for (const auto& c : j) {
    if (!c.is_object() || !c.contains("tool") || !c["tool"].is_string()) {
      throw Error(ErrorCode::Dataset, fmt::format("task {}: reference call without a tool name", task.unique_id));
    }
    ReferenceCall rc{c["tool"].get<std::string>(), c.value("arguments", Json::object())};
    if (!rc.arguments.is_object()) throw Error(ErrorCode::Dataset, fmt::format("task {}: reference call arguments must be an object", task.unique_id));
    out.push_back(std::move(rc));
  }
  return out;
}

/// The concrete reply list a policy produces for one task.
struct ScriptedPolicy {
  PolicySpec spec;
  std::vector<ScriptedReply> replies;
};

inline std::string wrong_answer_for(const Task& task) { return "not " + task.ground_truth; }

inline constexpr std::string_view kNoAnswerText = "I am still working on it.";

inline ScriptedPolicy make_policy(const PolicySpec& spec, const Task& task) {
  auto calls = reference_calls(task);
  ScriptedPolicy p{spec, {}};
  if (spec.label == PolicyLabel::ErrorAtK) {
    if (spec.k < 1) throw Error(ErrorCode::Config, "error_at_k needs k >= 1");
    if (spec.k > calls.size() + (calls.empty() ? 1 : 0)) {
      throw Error(ErrorCode::Config, fmt::format("error_at_k k={} but task {} has {} reference calls", spec.k, task.unique_id, calls.size()));
    }
    ReferenceCall bad{spec.failing_tool, Json::object()};
    if (calls.empty()) calls.push_back(bad);
    else calls[spec.k - 1] = bad;
  }
  for (const auto& c : calls) p.replies.push_back(ScriptedReply::call(c.tool, c.arguments.dump()));
  switch (spec.label) {
    case PolicyLabel::Perfect: p.replies.push_back(ScriptedReply::answer(fmt::format("<answer>{}</answer>\nfinish!", task.ground_truth))); break;
    case PolicyLabel::WrongAnswer:
    case PolicyLabel::ErrorAtK: p.replies.push_back(ScriptedReply::answer(fmt::format("<answer>{}</answer>", wrong_answer_for(task)))); break;
    case PolicyLabel::NoAnswer: p.replies.push_back(ScriptedReply::answer(std::string(kNoAnswerText))); break;
  }
  return p;
}

/// Stateless scripted provider keyed by the task prompt: round r of an
/// episode gets reply r of that task's policy. Safe to share across threads.
class PolicyProvider final : public Provider {
 public:
  PolicyProvider(const PolicySpec& spec, const std::vector<Task>& tasks) : spec_(spec) {
    for (const auto& t : tasks) policies_.emplace(t.prompt, make_policy(spec, t));
  }

  const PolicySpec& spec() const { return spec_; }

  Completion complete(const std::vector<ChatMessage>& messages, const std::vector<ToolSchema>&) override {
    check_completion_request(messages);
    const ChatMessage* user = nullptr;
    std::size_t round = 0;
    for (const auto& m : messages) {
      if (m.role == Role::User && !user) user = &m;
      if (m.role == Role::Assistant) ++round;
    }
    if (!user) throw Error(ErrorCode::Provider, "no user message in request");
    auto it = policies_.find(user->content);
    if (it == policies_.end()) throw Error(ErrorCode::Provider, "no scripted policy for this prompt");
    const auto& replies = it->second.replies;
    const ScriptedReply* r = nullptr;
    if (round < replies.size()) r = &replies[round];
    else if (spec_.label == PolicyLabel::NoAnswer) r = &replies.back();
    else throw Error(ErrorCode::ScriptExhausted, fmt::format("policy script of {} replies exhausted", replies.size()));

    Completion c;
    c.message = ChatMessage::assistant(r->text, r->tool_calls);
    for (std::size_t i = 0; i < c.message.tool_calls.size(); ++i) {
      c.message.tool_calls[i].id = fmt::format("call_{}_{}", round + 1, i + 1);
    }
    c.usage = estimate_usage(messages, c.message);
    return c;
  }

 private:
  PolicySpec spec_;
  std::map<std::string, ScriptedPolicy> policies_;
};

}  // namespace mcpradar::sim
