#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "mcpradar/error.hpp"
#include "mcpradar/mcp_pool.hpp"
#include "mcpradar/subprocess.hpp"

namespace mcpradar {

inline constexpr std::string_view kProtocolVersion = "2025-06-18";
inline constexpr std::string_view kSupportedProtocolVersions[] = {"2024-11-05", "2025-03-26", "2025-06-18"};

// ---------------------------------------------------------------------------
// Transports move newline-delimited JSON-RPC messages. send() takes a line
// without its terminator.

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(std::string_view line) = 0;
  /// nullopt when the deadline passes; throws Transport once the peer is gone.
  virtual std::optional<std::string> receive(Clock::time_point deadline) = 0;
  /// Graceful stop, then forceful after `grace`. Idempotent.
  virtual void close(std::chrono::milliseconds grace) = 0;
};

class ProcessTransport final : public Transport {
 public:
  ProcessTransport(const std::vector<std::string>& argv, const std::map<std::string, std::string>& env)
      : proc_(std::make_unique<Subprocess>(argv, env)) {}

  void send(std::string_view line) override {
    if (!proc_) throw Error(ErrorCode::Transport, "transport closed");
    std::string buf(line);
    buf.push_back('\n');
    proc_->write_all(buf);
  }

  std::optional<std::string> receive(Clock::time_point deadline) override {
    if (!proc_) throw Error(ErrorCode::Transport, "transport closed");
    return proc_->reader().next_line(deadline);
  }

  void close(std::chrono::milliseconds grace) override {
    if (!proc_) return;
    // stdio shutdown: close the server's input, then SIGTERM, then SIGKILL.
    proc_->close_stdin();
    if (!proc_->wait_exit(Clock::now() + grace)) {
      proc_->signal_group(SIGTERM);
      if (!proc_->wait_exit(Clock::now() + grace)) {
        spdlog::warn("mcp server pid {} ignored SIGTERM; killing", proc_->pid());
        proc_->signal_group(SIGKILL);
        proc_->wait_exit(Clock::now() + std::chrono::seconds(5));
      }
    }
    proc_.reset();
  }

  Subprocess* process() { return proc_.get(); }

 private:
  std::unique_ptr<Subprocess> proc_;
};

/// In-process transport: every sent line is handed to `handler`, whose
/// returned lines become the server's output. A handler that returns
/// nothing behaves like a stalled server (receive times out immediately).
class LoopbackTransport final : public Transport {
 public:
  using Handler = std::function<std::vector<std::string>(std::string_view)>;

  explicit LoopbackTransport(Handler handler) : handler_(std::move(handler)) {}

  void send(std::string_view line) override {
    if (closed_) throw Error(ErrorCode::Transport, "transport closed");
    for (auto& out : handler_(line)) {
      // A returned chunk may hold several lines or none; split like a pipe would.
      std::size_t start = 0;
      for (auto nl = out.find('\n'); nl != std::string::npos; nl = out.find('\n', start)) {
        pending_.push_back(out.substr(start, nl - start));
        start = nl + 1;
      }
      if (start < out.size()) pending_.push_back(out.substr(start));
    }
  }

  std::optional<std::string> receive(Clock::time_point) override {
    if (closed_) throw Error(ErrorCode::Transport, "transport closed");
    if (pending_.empty()) return std::nullopt;
    auto line = std::move(pending_.front());
    pending_.pop_front();
    return line;
  }

  void close(std::chrono::milliseconds) override { closed_ = true; }

 private:
  Handler handler_;
  std::deque<std::string> pending_;
  bool closed_ = false;
};

// ---------------------------------------------------------------------------

enum class SessionState { Spawned, Initialized, Closed };

inline std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::Spawned: return "spawned";
    case SessionState::Initialized: return "initialized";
    case SessionState::Closed: return "closed";
  }
  return "closed";
}

struct SessionOptions {
  std::chrono::milliseconds handshake_timeout{15000};
  std::chrono::milliseconds call_timeout{60000};
  std::chrono::milliseconds shutdown_grace{2000};
  std::string client_name = "mcpradar";
  std::string client_version = "1.0.0";
};

struct ServerInfo {
  std::string protocol_version;
  std::string name;
  std::string version;
  Json capabilities = Json::object();
};

struct ContentBlock {
  std::string type;
  std::string text;  // empty for non-text blocks
  Json raw;
};

struct ToolCallResult {
  std::vector<ContentBlock> content;
  bool is_error = false;
  double elapsed_ms = 0.0;
  Json raw;

  /// Concatenated text blocks, newline-separated.
  std::string text() const {
    std::string out;
    for (const auto& b : content) {
      if (b.type != "text") continue;
      if (!out.empty()) out.push_back('\n');
      out += b.text;
    }
    return out;
  }

  static ToolCallResult error_text(std::string message) {
    ToolCallResult r;
    r.is_error = true;
    Json block;
    block["type"] = "text";
    block["text"] = message;
    r.content.push_back({"text", std::move(message), block});
    Json raw;
    raw["content"] = Json::array({block});
    raw["isError"] = true;
    r.raw = std::move(raw);
    return r;
  }
};

/// A JSON-RPC session with one MCP server. Calls are strictly sequential;
/// one Session must not be used from two threads at once.
class Session {
 public:
  Session(McpServerSpec spec, std::unique_ptr<Transport> transport, SessionOptions opts = {})
      : spec_(std::move(spec)), transport_(std::move(transport)), opts_(std::move(opts)) {
    if (!transport_) state_ = SessionState::Closed;
  }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;
  Session(Session&&) noexcept = default;
  Session& operator=(Session&&) noexcept = default;
  ~Session() {
    if (transport_) shutdown();
  }

  const McpServerSpec& server() const { return spec_; }
  SessionState state() const { return state_; }
  std::int64_t next_request_id() const { return next_id_; }
  const ServerInfo& server_info() const { return info_; }
  const SessionOptions& options() const { return opts_; }

  ServerInfo initialize() {
    require_state(SessionState::Spawned, "initialize");
    Json params;
    params["protocolVersion"] = std::string(kProtocolVersion);
    params["capabilities"] = Json::object();
    params["clientInfo"] = {{"name", opts_.client_name}, {"version", opts_.client_version}};
    auto resp = request("initialize", params, opts_.handshake_timeout);
    if (resp.contains("error")) {
      throw Error(ErrorCode::HandshakeRejected, fmt::format("server '{}' rejected initialize: {}", spec_.name, resp["error"].dump()),
                  resp.dump());
    }
    const auto& result = resp["result"];
    if (!result.is_object() || !result.contains("protocolVersion") || !result["protocolVersion"].is_string()) {
      throw Error(ErrorCode::MalformedResponse, "initialize result lacks protocolVersion", resp.dump());
    }
    ServerInfo info;
    info.protocol_version = result["protocolVersion"].get<std::string>();
    bool supported = false;
    for (auto v : kSupportedProtocolVersions) supported |= v == info.protocol_version;
    if (!supported) {
      throw Error(ErrorCode::ProtocolVersion,
                  fmt::format("server '{}' speaks protocol {}, client supports up to {}", spec_.name, info.protocol_version, kProtocolVersion),
                  resp.dump());
    }
    if (result.contains("serverInfo") && result["serverInfo"].is_object()) {
      const auto& si = result["serverInfo"];
      if (si.contains("name") && si["name"].is_string()) info.name = si["name"].get<std::string>();
      if (si.contains("version") && si["version"].is_string()) info.version = si["version"].get<std::string>();
    }
    if (result.contains("capabilities") && result["capabilities"].is_object()) info.capabilities = result["capabilities"];
    Json note;
    note["jsonrpc"] = "2.0";
    note["method"] = "notifications/initialized";
    transport_->send(note.dump());
    info_ = info;
    state_ = SessionState::Initialized;
    return info;
  }

  /// Cached after the first successful call.
  const std::vector<ToolDescriptor>& list_tools() {
    require_state(SessionState::Initialized, "tools/list");
    if (tools_) return *tools_;
    std::vector<ToolDescriptor> tools;
    Json params = Json::object();
    for (int page = 0; page < 1000; ++page) {
      auto resp = request("tools/list", params, opts_.call_timeout);
      if (resp.contains("error")) throw Error(ErrorCode::MalformedResponse, fmt::format("tools/list failed: {}", resp["error"].dump()), resp.dump());
      const auto& result = resp["result"];
      if (!result.is_object() || !result.contains("tools") || !result["tools"].is_array()) {
        throw Error(ErrorCode::MalformedResponse, "tools/list result lacks a tools array", resp.dump());
      }
      const auto& arr = result["tools"];
      for (std::size_t i = 0; i < arr.size(); ++i) {
        tools.push_back(descriptor_from_mcp_tool(arr[i], fmt::format("tools[{}]", tools.size())));
      }
      if (result.contains("nextCursor") && result["nextCursor"].is_string() && !result["nextCursor"].get<std::string>().empty()) {
        params["cursor"] = result["nextCursor"];
        continue;
      }
      break;
    }
    tools_ = std::move(tools);
    return *tools_;
  }

  /// Tool-level failures (unknown tool, bad arguments, JSON-RPC error replies)
  /// come back as is_error results; only transport and protocol failures throw.
  ToolCallResult call_tool(const std::string& name, const Json& arguments,
                           std::optional<std::chrono::milliseconds> timeout = std::nullopt) {
    if (state_ == SessionState::Closed) throw Error(ErrorCode::InvalidState, fmt::format("session '{}' is closed", spec_.name));
    require_state(SessionState::Initialized, "tools/call");
    if (!arguments.is_object()) throw Error(ErrorCode::InvalidArgument, "tool arguments must be a JSON object");
    Json params;
    params["name"] = name;
    params["arguments"] = arguments;
    auto start = Clock::now();
    auto resp = request("tools/call", params, timeout.value_or(opts_.call_timeout));
    ToolCallResult out;
    out.elapsed_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    out.raw = resp;
    if (resp.contains("error")) {
      const auto& err = resp["error"];
      std::string msg = err.is_object() && err.contains("message") && err["message"].is_string()
                            ? err["message"].get<std::string>()
                            : err.dump();
      auto e = ToolCallResult::error_text(fmt::format("tool '{}' failed: {}", name, msg));
      e.elapsed_ms = out.elapsed_ms;
      e.raw = resp;
      return e;
    }
    const auto& result = resp["result"];
    if (!result.is_object()) throw Error(ErrorCode::MalformedResponse, "tools/call result is not an object", resp.dump());
    if (result.contains("isError")) {
      if (!result["isError"].is_boolean()) throw Error(ErrorCode::MalformedResponse, "tools/call isError is not boolean", resp.dump());
      out.is_error = result["isError"].get<bool>();
    }
    if (!result.contains("content") || !result["content"].is_array()) {
      throw Error(ErrorCode::MalformedResponse, "tools/call result lacks a content array", resp.dump());
    }
    for (const auto& block : result["content"]) {
      if (!block.is_object() || !block.contains("type") || !block["type"].is_string()) {
        throw Error(ErrorCode::MalformedResponse, "content block lacks a type", resp.dump());
      }
      ContentBlock b;
      b.type = block["type"].get<std::string>();
      if (b.type == "text") {
        if (!block.contains("text") || !block["text"].is_string()) {
          throw Error(ErrorCode::MalformedResponse, "text block lacks text", resp.dump());
        }
        b.text = block["text"].get<std::string>();
      }
      b.raw = block;
      out.content.push_back(std::move(b));
    }
    if (out.is_error && out.content.empty()) out.content.push_back({"text", "tool reported an error without a message", Json()});
    return out;
  }

  /// Best effort; never throws. A second call is a no-op.
  void shutdown() noexcept {
    if (transport_) {
      try {
        transport_->close(opts_.shutdown_grace);
      } catch (const std::exception& e) {
        spdlog::warn("shutdown of mcp server '{}': {}", spec_.name, e.what());
      }
      transport_.reset();
    }
    state_ = SessionState::Closed;
  }

 private:
  void require_state(SessionState want, std::string_view op) const {
    if (state_ != want) {
      throw Error(ErrorCode::InvalidState,
                  fmt::format("{} on session '{}' requires state {}, but it is {}", op, spec_.name, to_string(want), to_string(state_)));
    }
  }

  /// Sends one request and waits for the response with the same id. Stale
  /// replies to earlier (timed-out) requests are dropped; server-initiated
  /// notifications are ignored; server requests get method-not-found.
  Json request(const std::string& method, const Json& params, std::chrono::milliseconds timeout) {
    const std::int64_t id = next_id_++;
    Json req;
    req["jsonrpc"] = "2.0";
    req["id"] = id;
    req["method"] = method;
    req["params"] = params;
    transport_->send(req.dump());
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      auto line = transport_->receive(deadline);
      if (!line) {
        if (!heard_from_server_) {
          throw Error(ErrorCode::StartupTimeout,
                      fmt::format("server '{}' produced no output within {} ms", spec_.name, timeout.count()));
        }
        throw Error(ErrorCode::Timeout, fmt::format("{} (id {}) on '{}' timed out after {} ms", method, id, spec_.name, timeout.count()));
      }
      heard_from_server_ = true;
      if (line->find_first_not_of(" \t\r") == std::string::npos) continue;
      Json msg = Json::parse(*line, nullptr, /*allow_exceptions=*/false);
      if (msg.is_discarded()) throw Error(ErrorCode::MalformedResponse, fmt::format("non-JSON output from '{}'", spec_.name), *line);
      if (!msg.is_object()) throw Error(ErrorCode::MalformedResponse, "JSON-RPC message is not an object", *line);
      if (msg.contains("method")) {
        if (msg.contains("id") && !msg["id"].is_null()) {
          Json reply;
          reply["jsonrpc"] = "2.0";
          reply["id"] = msg["id"];
          reply["error"] = {{"code", -32601}, {"message", "method not supported by client"}};
          transport_->send(reply.dump());
        }
        continue;
      }
      if (!msg.contains("jsonrpc") || msg["jsonrpc"] != "2.0") throw Error(ErrorCode::MalformedResponse, "missing jsonrpc 2.0 marker", *line);
      if (!msg.contains("id")) throw Error(ErrorCode::MalformedResponse, "response without id", *line);
      const auto& rid = msg["id"];
      if (rid.is_null()) {
        // Error replies to requests the server could not parse carry id null.
        if (msg.contains("error")) return msg;
        throw Error(ErrorCode::MalformedResponse, "response with null id", *line);
      }
      if (!rid.is_number_integer()) throw Error(ErrorCode::MalformedResponse, "response id is not an integer", *line);
      auto got = rid.get<std::int64_t>();
      if (got >= 1 && got < id) {
        spdlog::debug("dropping stale response id {} from '{}'", got, spec_.name);
        continue;
      }
      if (got != id) throw Error(ErrorCode::MalformedResponse, fmt::format("response id {} was never issued", got), *line);
      bool has_result = msg.contains("result");
      bool has_error = msg.contains("error");
      if (has_result == has_error) throw Error(ErrorCode::MalformedResponse, "response needs exactly one of result/error", *line);
      return msg;
    }
  }

  McpServerSpec spec_;
  std::unique_ptr<Transport> transport_;
  SessionOptions opts_;
  SessionState state_ = SessionState::Spawned;
  std::int64_t next_id_ = 1;
  bool heard_from_server_ = false;
  ServerInfo info_;
  std::optional<std::vector<ToolDescriptor>> tools_;
};

/// Launches run_config[0] with its env overlaid on ours. The session starts
/// in Spawned; the startup deadline is enforced on the first exchange.
inline Session spawn(const McpServerSpec& spec, SessionOptions opts = {}) {
  if (spec.run_configs.empty()) throw Error(ErrorCode::Config, fmt::format("server '{}' has no run_config", spec.name));
  const auto& rc = spec.run_config();
  auto argv = split_command(rc.command);
  if (argv.empty()) throw Error(ErrorCode::SpawnFailed, fmt::format("server '{}' has an empty command", spec.name));
  auto transport = std::make_unique<ProcessTransport>(argv, rc.env);
  return Session(spec, std::move(transport), std::move(opts));
}

/// spawn + initialize.
inline Session connect(const McpServerSpec& spec, SessionOptions opts = {}) {
  auto session = spawn(spec, std::move(opts));
  session.initialize();
  return session;
}

}  // namespace mcpradar
