#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "mcpradar/error.hpp"
#include "mcpradar/mcp_pool.hpp"

namespace mcpradar {

enum class Role { System, User, Assistant, Tool };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
  }
  return "user";
}

inline std::optional<Role> parse_role(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  if (s == "tool") return Role::Tool;
  return std::nullopt;
}

/// One model-initiated call. `arguments` is kept as the raw JSON text the
/// model produced and only parsed at dispatch.
struct ToolCall {
  std::string id;
  std::string name;
  std::string arguments;

  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct ChatMessage {
  Role role = Role::User;
  std::string content;
  std::vector<ToolCall> tool_calls;         // Assistant only
  std::optional<std::string> tool_call_id;  // Tool only

  static ChatMessage system(std::string text) { return {Role::System, std::move(text), {}, std::nullopt}; }
  static ChatMessage user(std::string text) { return {Role::User, std::move(text), {}, std::nullopt}; }
  static ChatMessage assistant(std::string text, std::vector<ToolCall> calls = {}) {
    return {Role::Assistant, std::move(text), std::move(calls), std::nullopt};
  }
  static ChatMessage tool(std::string call_id, std::string text) {
    return {Role::Tool, std::move(text), {}, std::move(call_id)};
  }

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

inline std::vector<std::string> validate_message(const ChatMessage& m) {
  std::vector<std::string> out;
  if (m.role == Role::Tool && !m.tool_call_id) out.push_back("tool message without tool_call_id");
  if (m.role != Role::Tool && m.tool_call_id) out.push_back("tool_call_id on a non-tool message");
  if (m.role != Role::Assistant && !m.tool_calls.empty()) out.push_back("tool_calls on a non-assistant message");
  return out;
}

struct ToolSchema {
  std::string name;
  std::string description;
  Json parameters;
};

inline ToolSchema tool_schema_from_descriptor(const ToolDescriptor& d) {
  return {d.tool_name, d.tool_description, input_schema_from_descriptor(d)};
}

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t total_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    total_tokens += o.total_tokens;
    return *this;
  }
  bool consistent() const { return total_tokens == prompt_tokens + completion_tokens; }

  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct ProviderConfig {
  std::string base_url = "https://openrouter.ai/api/v1";
  std::string api_key;
  std::string model;
  double temperature = 0.0;
  int max_retries = 2;
  std::chrono::milliseconds request_timeout{120000};
  std::chrono::milliseconds retry_backoff{1000};
  double requests_per_second = 0.0;  // 0 = unlimited
};

inline std::vector<std::string> validate_provider_config(const ProviderConfig& c) {
  std::vector<std::string> out;
  if (!(c.temperature >= 0.0)) out.push_back("temperature must be >= 0");
  if (c.max_retries < 0) out.push_back("max_retries must be >= 0");
  if (c.model.empty()) out.push_back("model is empty");
  if (c.base_url.empty()) out.push_back("base_url is empty");
  return out;
}

struct Completion {
  ChatMessage message;
  TokenUsage usage;
  double latency_ms = 0.0;
  bool usage_missing = false;   // provider sent no usage; zeros filled in
  bool usage_repaired = false;  // total was not prompt + completion; corrected
};

/// Forces total = prompt + completion. Returns true if a change was needed.
inline bool repair_usage(TokenUsage& u) {
  if (u.consistent()) return false;
  u.total_tokens = u.prompt_tokens + u.completion_tokens;
  return true;
}

class Provider {
 public:
  virtual ~Provider() = default;
  /// Must not modify `messages`. Thread-safe.
  virtual Completion complete(const std::vector<ChatMessage>& messages, const std::vector<ToolSchema>& tools) = 0;
};

inline void check_completion_request(const std::vector<ChatMessage>& messages) {
  if (messages.empty()) throw Error(ErrorCode::InvalidArgument, "complete() needs at least one message");
  if (messages.front().role != Role::System) throw Error(ErrorCode::InvalidArgument, "first message must be the system prompt");
}

// ---------------------------------------------------------------------------
// Scripted provider: replies come from a fixed list, in order.

struct ScriptedReply {
  std::string text;
  std::vector<ToolCall> tool_calls;
  std::optional<TokenUsage> usage;  // nullopt = derived from message sizes
  double latency_ms = 0.0;
  // When set, complete() throws this instead of replying.
  std::optional<ErrorCode> fail_with;

  static ScriptedReply answer(std::string text) { return {std::move(text), {}, std::nullopt, 0.0, std::nullopt}; }
  static ScriptedReply call(std::string name, std::string arguments, std::string id = {}) {
    ScriptedReply r;
    r.tool_calls.push_back({std::move(id), std::move(name), std::move(arguments)});
    return r;
  }
};

/// Deterministic usage estimate: four characters per token.
inline TokenUsage estimate_usage(const std::vector<ChatMessage>& messages, const ChatMessage& reply) {
  auto count = [](const ChatMessage& m) {
    std::size_t n = m.content.size();
    for (const auto& c : m.tool_calls) n += c.name.size() + c.arguments.size();
    return static_cast<std::int64_t>((n + 3) / 4);
  };
  TokenUsage u;
  for (const auto& m : messages) u.prompt_tokens += count(m);
  u.completion_tokens = count(reply);
  u.total_tokens = u.prompt_tokens + u.completion_tokens;
  return u;
}

class ScriptedProvider final : public Provider {
 public:
  explicit ScriptedProvider(std::vector<ScriptedReply> script) : script_(std::move(script)) {
    if (script_.empty()) throw Error(ErrorCode::InvalidArgument, "scripted provider needs a non-empty script");
  }

  Completion complete(const std::vector<ChatMessage>& messages, const std::vector<ToolSchema>& tools) override {
    check_completion_request(messages);
    std::lock_guard lock(mu_);
    received_.push_back(messages);
    tool_lists_.push_back(tools);
    if (next_ >= script_.size()) {
      throw Error(ErrorCode::ScriptExhausted, fmt::format("script of {} replies exhausted", script_.size()));
    }
    const auto& r = script_[next_++];
    if (r.fail_with) throw Error(*r.fail_with, "scripted failure");
    Completion c;
    c.message = ChatMessage::assistant(r.text, r.tool_calls);
    for (std::size_t i = 0; i < c.message.tool_calls.size(); ++i) {
      auto& call = c.message.tool_calls[i];
      if (call.id.empty()) call.id = fmt::format("call_{}_{}", next_, i + 1);
    }
    c.usage = r.usage ? *r.usage : estimate_usage(messages, c.message);
    c.usage_repaired = repair_usage(c.usage);
    c.latency_ms = r.latency_ms;
    return c;
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return next_;
  }
  std::vector<std::vector<ChatMessage>> received() const {
    std::lock_guard lock(mu_);
    return received_;
  }
  std::vector<std::vector<ToolSchema>> tool_lists() const {
    std::lock_guard lock(mu_);
    return tool_lists_;
  }

 private:
  std::vector<ScriptedReply> script_;
  mutable std::mutex mu_;
  std::size_t next_ = 0;
  std::vector<std::vector<ChatMessage>> received_;
  std::vector<std::vector<ToolSchema>> tool_lists_;
};

// ---------------------------------------------------------------------------
// OpenAI-compatible wire format.

inline Json message_to_wire(const ChatMessage& m) {
  Json j;
  j["role"] = std::string(to_string(m.role));
  if (m.role == Role::Assistant && !m.tool_calls.empty()) {
    j["content"] = m.content.empty() ? Json(nullptr) : Json(m.content);
    Json calls = Json::array();
    for (const auto& c : m.tool_calls) {
      calls.push_back({{"id", c.id}, {"type", "function"}, {"function", {{"name", c.name}, {"arguments", c.arguments}}}});
    }
    j["tool_calls"] = std::move(calls);
  } else {
    j["content"] = m.content;
  }
  if (m.tool_call_id) j["tool_call_id"] = *m.tool_call_id;
  return j;
}

inline Json chat_request_body(const ProviderConfig& cfg, const std::vector<ChatMessage>& messages,
                              const std::vector<ToolSchema>& tools) {
  Json body;
  body["model"] = cfg.model;
  Json msgs = Json::array();
  for (const auto& m : messages) msgs.push_back(message_to_wire(m));
  body["messages"] = std::move(msgs);
  if (!tools.empty()) {
    Json ts = Json::array();
    for (const auto& t : tools) {
      ts.push_back({{"type", "function"},
                    {"function", {{"name", t.name}, {"description", t.description}, {"parameters", t.parameters}}}});
    }
    body["tools"] = std::move(ts);
  }
  body["temperature"] = cfg.temperature;
  body["stream"] = false;
  return body;
}

/// Decodes a chat-completions response body. Error payloads raise Provider.
inline Completion parse_chat_response(const Json& body) {
  if (!body.is_object()) throw Error(ErrorCode::Provider, "response body is not an object", body.dump());
  if (body.contains("error") && !body["error"].is_null()) {
    throw Error(ErrorCode::Provider, fmt::format("provider error: {}", body["error"].dump()), body.dump());
  }
  if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) {
    throw Error(ErrorCode::Provider, "response has no choices", body.dump());
  }
  const auto& choice = body["choices"][0];
  if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) {
    throw Error(ErrorCode::Provider, "choice has no message", body.dump());
  }
  const auto& msg = choice["message"];
  Completion c;
  c.message.role = Role::Assistant;
  if (msg.contains("content") && msg["content"].is_string()) c.message.content = msg["content"].get<std::string>();
  if (msg.contains("tool_calls") && msg["tool_calls"].is_array()) {
    for (const auto& tc : msg["tool_calls"]) {
      if (!tc.is_object() || !tc.contains("function") || !tc["function"].is_object()) {
        throw Error(ErrorCode::Provider, "malformed tool_call entry", body.dump());
      }
      const auto& fn = tc["function"];
      ToolCall call;
      if (tc.contains("id") && tc["id"].is_string()) call.id = tc["id"].get<std::string>();
      if (!fn.contains("name") || !fn["name"].is_string()) throw Error(ErrorCode::Provider, "tool_call without a name", body.dump());
      call.name = fn["name"].get<std::string>();
      if (fn.contains("arguments")) {
        // Some gateways send the arguments already decoded.
        call.arguments = fn["arguments"].is_string() ? fn["arguments"].get<std::string>() : fn["arguments"].dump();
      } else {
        call.arguments = "{}";
      }
      c.message.tool_calls.push_back(std::move(call));
    }
  }
  for (std::size_t i = 0; i < c.message.tool_calls.size(); ++i) {
    if (c.message.tool_calls[i].id.empty()) c.message.tool_calls[i].id = fmt::format("call_{}", i + 1);
  }
  if (body.contains("usage") && body["usage"].is_object()) {
    const auto& u = body["usage"];
    auto get = [&](const char* k) -> std::int64_t {
      return u.contains(k) && u[k].is_number_integer() ? std::max<std::int64_t>(0, u[k].get<std::int64_t>()) : 0;
    };
    c.usage = {get("prompt_tokens"), get("completion_tokens"), get("total_tokens")};
    c.usage_repaired = repair_usage(c.usage);
  } else {
    c.usage_missing = true;
    spdlog::warn("provider response carried no usage; recording zero tokens");
  }
  return c;
}

/// Transport failures, 429 and 5xx are retried; everything else is final.
inline bool is_retryable(ErrorCode code) {
  return code == ErrorCode::Transport || code == ErrorCode::RateLimited || code == ErrorCode::Timeout;
}

/// Simple blocking token bucket; rate <= 0 disables it.
class TokenBucket {
 public:
  explicit TokenBucket(double rate_per_second, double burst = 1.0)
      : rate_(rate_per_second), capacity_(std::max(1.0, burst)), tokens_(capacity_), last_(Clock::now()) {}

  void acquire() {
    if (rate_ <= 0.0) return;
    std::unique_lock lock(mu_);
    for (;;) {
      auto now = Clock::now();
      tokens_ = std::min(capacity_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
      last_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
      lock.unlock();
      std::this_thread::sleep_for(wait);
      lock.lock();
    }
  }

 private:
  using Clock = std::chrono::steady_clock;
  double rate_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
  std::mutex mu_;
};

}  // namespace mcpradar
