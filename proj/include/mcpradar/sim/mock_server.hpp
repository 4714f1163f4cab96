#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "mcpradar/error.hpp"
#include "mcpradar/mcp_client.hpp"
#include "mcpradar/mcp_pool.hpp"
#include "mcpradar/sim/calculator.hpp"

namespace mcpradar::sim {

enum class HandlerKind { Arithmetic, FileSandbox, CannedResponse, AlwaysError, StallForever };

struct MockToolBehavior {
  ToolDescriptor descriptor;
  HandlerKind kind = HandlerKind::CannedResponse;
  Json parameters = Json::object();
};

/// How the server treats the protocol as a whole, independent of tools.
enum class ServerBehavior {
  Normal,
  HandshakeError,    // initialize answered with a JSON-RPC error
  GarbageHandshake,  // initialize answered with non-JSON bytes
  Stall,             // never answers anything
  IgnoreTerm,        // normal replies; the subprocess ignores SIGTERM and stdin EOF
  Fuzz,              // one random line per request, sometimes followed by a valid reply
  Chatty,            // interleaves notifications and server->client requests
};

inline std::string_view to_string(ServerBehavior b) {
  switch (b) {
    case ServerBehavior::Normal: return "normal";
    case ServerBehavior::HandshakeError: return "handshake-error";
    case ServerBehavior::GarbageHandshake: return "garbage-handshake";
    case ServerBehavior::Stall: return "stall";
    case ServerBehavior::IgnoreTerm: return "ignore-term";
    case ServerBehavior::Fuzz: return "fuzz";
    case ServerBehavior::Chatty: return "chatty";
  }
  return "normal";
}

inline ServerBehavior parse_server_behavior(std::string_view s) {
  for (auto b : {ServerBehavior::Normal, ServerBehavior::HandshakeError, ServerBehavior::GarbageHandshake, ServerBehavior::Stall,
                 ServerBehavior::IgnoreTerm, ServerBehavior::Fuzz, ServerBehavior::Chatty})
    if (to_string(b) == s) return b;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown server behavior '{}'", s));
}

struct MockServerOptions {
  std::string name = "mock";
  std::string version = "1.0.0";
  std::vector<MockToolBehavior> tools;
  ServerBehavior behavior = ServerBehavior::Normal;
  std::uint64_t seed = 0;
  std::string protocol_version = std::string(kProtocolVersion);
  std::filesystem::path sandbox;  // root for FileSandbox tools
  std::size_t page_size = 0;      // tools/list page size, 0 = single page
};

// ---------------------------------------------------------------------------
// Tool sets

namespace detail {

inline ToolInput input(std::string name, std::string type, bool required, std::string description) {
  return {std::move(name), std::move(type), required, std::move(description)};
}

inline MockToolBehavior tool(std::string name, std::string description, std::vector<ToolInput> inputs, HandlerKind kind,
                             Json params = Json::object()) {
  return {{std::move(name), std::move(description), std::move(inputs)}, kind, std::move(params)};
}

}  // namespace detail

inline std::vector<MockToolBehavior> calculator_tools() {
  using detail::input;
  using detail::tool;
  auto expr = input("expression", "string", true, "Arithmetic expression, e.g. \"-29/3\" or \"12/7 * -10\"");
  return {
      tool("floor", "Largest integer not greater than the value of the expression", {expr}, HandlerKind::Arithmetic, {{"op", "floor"}}),
      tool("ceiling", "Smallest integer not less than the value of the expression", {expr}, HandlerKind::Arithmetic, {{"op", "ceiling"}}),
      tool("add", "Exact sum of two numbers", {input("a", "string", true, "First addend"), input("b", "string", true, "Second addend")},
           HandlerKind::Arithmetic, {{"op", "add"}}),
      tool("mul", "Exact product of two numbers", {input("a", "string", true, "First factor"), input("b", "string", true, "Second factor")},
           HandlerKind::Arithmetic, {{"op", "mul"}}),
      tool("evaluate", "Exact value of an arithmetic expression (+ - * / ^, floor, ceil, abs)", {expr}, HandlerKind::Arithmetic,
           {{"op", "evaluate"}}),
  };
}

inline std::vector<MockToolBehavior> filesystem_tools() {
  using detail::input;
  using detail::tool;
  auto path = input("path", "string", true, "Path relative to the sandbox root");
  return {
      tool("read_file", "Read a text file", {path}, HandlerKind::FileSandbox, {{"op", "read"}}),
      tool("write_file", "Write a text file, replacing it unless append is true",
           {path, input("content", "string", true, "File content"), input("append", "boolean", false, "Append instead of replace")},
           HandlerKind::FileSandbox, {{"op", "write"}}),
      tool("list_directory", "List directory entries", {input("path", "string", false, "Directory, default the root")},
           HandlerKind::FileSandbox, {{"op", "list"}}),
      tool("create_directory", "Create a directory and its parents", {path}, HandlerKind::FileSandbox, {{"op", "mkdir"}}),
  };
}

inline Json default_search_responses() {
  Json r = Json::object();
  r["nature articles 2020"] = "Nature published 1002 research articles in 2020.";
  r["boiling point of water"] = "Water boils at 100 degrees Celsius at sea level.";
  r["capital of france"] = "Paris is the capital of France.";
  return r;
}

inline std::vector<MockToolBehavior> search_tools(Json responses = default_search_responses()) {
  return {detail::tool("search", "Search the (canned) web", {detail::input("query", "string", true, "Search query")},
                       HandlerKind::CannedResponse, {{"responses", std::move(responses)}, {"default", "No results."}})};
}

inline std::vector<MockToolBehavior> failing_tools() {
  return {detail::tool("fail", "Always fails", {detail::input("input", "string", false, "Ignored")}, HandlerKind::AlwaysError,
                       {{"message", "simulated tool failure"}})};
}

inline std::vector<MockToolBehavior> stalling_tools() {
  return {detail::tool("stall", "Never answers", {detail::input("input", "string", false, "Ignored")}, HandlerKind::StallForever)};
}

/// Tool-set names accepted by the mock server binary.
inline std::vector<MockToolBehavior> tools_for_sets(const std::vector<std::string>& sets) {
  std::vector<MockToolBehavior> out;
  for (const auto& s : sets) {
    std::vector<MockToolBehavior> add;
    if (s == "calculator") add = calculator_tools();
    else if (s == "filesystem") add = filesystem_tools();
    else if (s == "search") add = search_tools();
    else if (s == "fail") add = failing_tools();
    else if (s == "stall") add = stalling_tools();
    else throw Error(ErrorCode::InvalidArgument, fmt::format("unknown tool set '{}'", s));
    out.insert(out.end(), add.begin(), add.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

struct ToolOutput {
  std::string text;
  bool is_error = false;
};

/// Single-session MCP server over newline-delimited JSON-RPC. handle() takes
/// one input line and returns the output lines (possibly none).
class MockMcpServer {
 public:
  explicit MockMcpServer(MockServerOptions opts) : opts_(std::move(opts)), rng_(opts_.seed) {
    for (std::size_t i = 0; i < opts_.tools.size(); ++i) {
      const auto& name = opts_.tools[i].descriptor.tool_name;
      if (!index_.emplace(name, i).second) throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate mock tool '{}'", name));
    }
  }

  const MockServerOptions& options() const { return opts_; }
  std::vector<ToolDescriptor> descriptors() const {
    std::vector<ToolDescriptor> out;
    for (const auto& t : opts_.tools) out.push_back(t.descriptor);
    return out;
  }
  std::size_t requests_seen() const { return requests_; }

  std::vector<std::string> handle(std::string_view line) {
    Json msg = Json::parse(line, nullptr, false);
    if (msg.is_discarded() || !msg.is_object()) return {error_line(Json(nullptr), -32700, "parse error")};
    if (!msg.contains("method") || !msg["method"].is_string()) return {};  // a response to one of our requests
    if (!msg.contains("id")) return {};                                     // notification
    ++requests_;
    const Json id = msg["id"];
    const std::string method = msg["method"].get<std::string>();
    const Json params = msg.contains("params") ? msg["params"] : Json::object();

    switch (opts_.behavior) {
      case ServerBehavior::Stall: return {};
      case ServerBehavior::Fuzz: return fuzz_reply(id, method, params);
      case ServerBehavior::HandshakeError:
        if (method == "initialize") return {error_line(id, -32603, "initialization refused")};
        break;
      case ServerBehavior::GarbageHandshake:
        if (method == "initialize") return {"\x01\x02 this is not json {"};
        break;
      default: break;
    }

    auto reply = dispatch(id, method, params);
    if (!reply) return {};
    if (opts_.behavior == ServerBehavior::Chatty) {
      Json note{{"jsonrpc", "2.0"}, {"method", "notifications/message"}, {"params", {{"level", "info"}, {"data", "working"}}}};
      Json ask{{"jsonrpc", "2.0"}, {"id", fmt::format("srv-{}", requests_)}, {"method", "roots/list"}};
      return {note.dump(), ask.dump(), "", *reply};
    }
    return {*reply};
  }

  /// Runs a tool handler directly; nullopt means the tool never answers.
  std::optional<ToolOutput> run_tool(const std::string& name, const Json& args) {
    auto it = index_.find(name);
    if (it == index_.end()) return ToolOutput{fmt::format("Unknown tool: {}", name), true};
    const auto& t = opts_.tools[it->second];
    try {
      switch (t.kind) {
        case HandlerKind::Arithmetic: return arithmetic(t, args);
        case HandlerKind::FileSandbox: return filesystem(t, args);
        case HandlerKind::CannedResponse: return canned(t, args);
        case HandlerKind::AlwaysError: return ToolOutput{t.parameters.value("message", std::string("tool failure")), true};
        case HandlerKind::StallForever: return std::nullopt;
      }
    } catch (const Error& e) {
      return ToolOutput{fmt::format("Error: {}", e.what()), true};
    } catch (const std::exception& e) {
      return ToolOutput{fmt::format("Error: {}", e.what()), true};
    }
    return ToolOutput{"unreachable", true};
  }

 private:
  static std::string result_line(const Json& id, Json result) {
    Json j{{"jsonrpc", "2.0"}, {"id", id}, {"result", std::move(result)}};
    return j.dump();
  }

  static std::string error_line(const Json& id, int code, std::string_view message) {
    Json j{{"jsonrpc", "2.0"}, {"id", id}, {"error", {{"code", code}, {"message", message}}}};
    return j.dump();
  }

  Json initialize_result() const {
    return {{"protocolVersion", opts_.protocol_version},
            {"capabilities", {{"tools", {{"listChanged", false}}}}},
            {"serverInfo", {{"name", opts_.name}, {"version", opts_.version}}}};
  }

  Json tools_page(const Json& params) const {
    std::size_t start = 0;
    if (params.is_object() && params.contains("cursor") && params["cursor"].is_string()) {
      start = std::stoul(params["cursor"].get<std::string>());
    }
    std::size_t end = opts_.page_size == 0 ? opts_.tools.size() : std::min(opts_.tools.size(), start + opts_.page_size);
    Json tools = Json::array();
    for (std::size_t i = start; i < end; ++i) {
      const auto& d = opts_.tools[i].descriptor;
      tools.push_back({{"name", d.tool_name}, {"description", d.tool_description}, {"inputSchema", input_schema_from_descriptor(d)}});
    }
    Json result{{"tools", std::move(tools)}};
    if (end < opts_.tools.size()) result["nextCursor"] = std::to_string(end);
    return result;
  }

  static Json tool_result(const ToolOutput& out) {
    return {{"content", Json::array({{{"type", "text"}, {"text", out.text}}})}, {"isError", out.is_error}};
  }

  std::optional<std::string> dispatch(const Json& id, const std::string& method, const Json& params) {
    if (method == "initialize") {
      initialized_ = true;
      return result_line(id, initialize_result());
    }
    if (method == "ping") return result_line(id, Json::object());
    if (method == "tools/list") {
      try {
        return result_line(id, tools_page(params));
      } catch (const std::exception&) {
        return error_line(id, -32602, "bad cursor");
      }
    }
    if (method == "tools/call") {
      if (!params.is_object() || !params.contains("name") || !params["name"].is_string()) {
        return error_line(id, -32602, "tools/call needs a name");
      }
      Json args = params.contains("arguments") ? params["arguments"] : Json::object();
      if (!args.is_object()) return error_line(id, -32602, "arguments must be an object");
      auto out = run_tool(params["name"].get<std::string>(), args);
      if (!out) return std::nullopt;
      return result_line(id, tool_result(*out));
    }
    return error_line(id, -32601, fmt::format("method not found: {}", method));
  }

  // -- handlers --------------------------------------------------------------

  static std::string string_arg(const Json& args, const char* key) {
    if (!args.contains(key)) throw Error(ErrorCode::InvalidArgument, fmt::format("missing argument '{}'", key));
    const auto& v = args[key];
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) return v.dump();
    throw Error(ErrorCode::InvalidArgument, fmt::format("argument '{}' must be a string", key));
  }

  static ToolOutput arithmetic(const MockToolBehavior& t, const Json& args) {
    const std::string op = t.parameters.value("op", std::string());
    if (op == "add" || op == "mul") {
      auto a = evaluate_expression(string_arg(args, "a"));
      auto b = evaluate_expression(string_arg(args, "b"));
      return {format_rational(op == "add" ? Rational(a + b) : Rational(a * b)), false};
    }
    auto v = evaluate_expression(string_arg(args, "expression"));
    if (op == "floor") return {floor_of(v).str(), false};
    if (op == "ceiling") return {ceil_of(v).str(), false};
    return {format_rational(v), false};
  }

  std::filesystem::path sandbox_path(const std::string& rel) const {
    if (opts_.sandbox.empty()) throw Error(ErrorCode::Config, "no sandbox directory configured");
    std::filesystem::path p(rel);
    if (p.is_absolute()) throw Error(ErrorCode::InvalidArgument, fmt::format("absolute path '{}' not allowed", rel));
    for (const auto& part : p)
      if (part == "..") throw Error(ErrorCode::InvalidArgument, fmt::format("path '{}' escapes the sandbox", rel));
    return opts_.sandbox / p;
  }

  ToolOutput filesystem(const MockToolBehavior& t, const Json& args) const {
    namespace fs = std::filesystem;
    const std::string op = t.parameters.value("op", std::string());
    if (op == "read") {
      auto p = sandbox_path(string_arg(args, "path"));
      std::ifstream in(p, std::ios::binary);
      if (!in) return {fmt::format("Error: cannot read '{}'", string_arg(args, "path")), true};
      std::ostringstream ss;
      ss << in.rdbuf();
      return {ss.str(), false};
    }
    if (op == "write") {
      auto p = sandbox_path(string_arg(args, "path"));
      bool append = args.contains("append") && args["append"].is_boolean() && args["append"].get<bool>();
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      std::ofstream out(p, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
      out << string_arg(args, "content");
      if (!out) return {fmt::format("Error: cannot write '{}'", string_arg(args, "path")), true};
      return {fmt::format("wrote {}", string_arg(args, "path")), false};
    }
    if (op == "list") {
      auto p = sandbox_path(args.contains("path") ? string_arg(args, "path") : std::string("."));
      std::error_code ec;
      std::vector<std::string> names;
      for (const auto& e : fs::directory_iterator(p, ec)) names.push_back(e.path().filename().string() + (e.is_directory() ? "/" : ""));
      if (ec) return {fmt::format("Error: cannot list directory: {}", ec.message()), true};
      std::sort(names.begin(), names.end());
      std::string out;
      for (const auto& n : names) out += n + "\n";
      return {out, false};
    }
    if (op == "mkdir") {
      auto p = sandbox_path(string_arg(args, "path"));
      fs::create_directories(p);
      return {fmt::format("created {}", string_arg(args, "path")), false};
    }
    return {fmt::format("Error: unknown filesystem op '{}'", op), true};
  }

  static ToolOutput canned(const MockToolBehavior& t, const Json& args) {
    std::string q = string_arg(args, "query");
    std::string key;
    for (char c : q) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    const auto& responses = t.parameters.contains("responses") ? t.parameters["responses"] : Json::object();
    for (auto it = responses.begin(); it != responses.end(); ++it) {
      if (key.find(it.key()) != std::string::npos) return {it.value().get<std::string>(), false};
    }
    return {t.parameters.value("default", std::string("No results.")), false};
  }

  // -- fuzzing ---------------------------------------------------------------

  std::string random_bytes(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
      char c = static_cast<char>(rng_() % 256);
      s.push_back(c == '\n' ? ' ' : c);
    }
    return s;
  }

  Json random_json(int depth) {
    switch (rng_() % (depth > 2 ? 5 : 7)) {
      case 0: return nullptr;
      case 1: return static_cast<bool>(rng_() % 2);
      case 2: return static_cast<std::int64_t>(rng_() % 2000) - 1000;
      case 3: return static_cast<double>(rng_() % 10000) / 7.0;
      case 4: return random_bytes(rng_() % 8);
      case 5: {
        Json a = Json::array();
        for (std::size_t i = 0, n = rng_() % 4; i < n; ++i) a.push_back(random_json(depth + 1));
        return a;
      }
      default: {
        static const char* keys[] = {"jsonrpc", "id", "result", "error", "method", "content", "tools", "type", "text",
                                     "isError", "protocolVersion", "name", "x"};
        Json o = Json::object();
        for (std::size_t i = 0, n = rng_() % 4; i < n; ++i) o[keys[rng_() % std::size(keys)]] = random_json(depth + 1);
        return o;
      }
    }
  }

  // One noisy line per request. Categories that leave the client waiting
  // (notifications, stale ids, server requests) are followed by a valid reply.
  std::vector<std::string> fuzz_reply(const Json& id, const std::string& method, const Json& params) {
    auto valid = dispatch(id, method, params);
    std::string good = valid ? *valid : result_line(id, Json::object());
    Json resp = Json::parse(good);
    std::string noise;
    bool then_valid = false;
    switch (rng_() % 16) {
      case 0: noise = random_bytes(1 + rng_() % 64); break;
      case 1: noise = random_json(0).dump(); break;
      case 2: noise = good.substr(0, rng_() % std::max<std::size_t>(good.size(), 1)); break;  // truncated
      case 3: resp.erase("jsonrpc"); noise = resp.dump(); break;
      case 4: resp["jsonrpc"] = "1.0"; noise = resp.dump(); break;
      case 5: resp["id"] = id.is_number_integer() ? Json(id.get<std::int64_t>() + 1 + static_cast<std::int64_t>(rng_() % 5)) : Json(7); noise = resp.dump(); break;
      case 6: resp["id"] = random_json(2); noise = resp.dump(); break;
      case 7: resp["error"] = random_json(1); noise = resp.dump(); break;  // both result and error
      case 8: resp.erase("result"); noise = resp.dump(); break;           // neither
      case 9: resp["result"] = random_json(0); noise = resp.dump(); break;  // wrong shape
      case 10: noise = error_line(id, static_cast<int>(rng_() % 40000) - 32768, random_bytes(rng_() % 12)); break;
      case 11: {
        noise = Json{{"jsonrpc", "2.0"}, {"method", "notifications/progress"}, {"params", random_json(1)}}.dump();
        then_valid = true;
        break;
      }
      case 12: {
        noise = Json{{"jsonrpc", "2.0"}, {"id", random_json(2)}, {"method", "sampling/createMessage"}}.dump();
        then_valid = true;
        break;
      }
      case 13: {
        if (id.is_number_integer() && id.get<std::int64_t>() > 1) {
          Json stale = resp;
          stale["id"] = id.get<std::int64_t>() - 1;
          noise = stale.dump();
          then_valid = true;
        } else {
          noise = good;
        }
        break;
      }
      case 14: noise = std::string(rng_() % 3, ' '); then_valid = true; break;
      default: noise = good; break;
    }
    if (then_valid) return {noise, good};
    return {noise};
  }

  MockServerOptions opts_;
  std::map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
  std::size_t requests_ = 0;
  bool initialized_ = false;
};

// ---------------------------------------------------------------------------

/// Pool entry for a mock server; `command` is what spawn() would launch.
inline McpServerSpec mock_server_spec(const MockServerOptions& opts, std::string command = {}) {
  McpServerSpec spec;
  spec.name = opts.name;
  spec.description = fmt::format("mock server ({})", to_string(opts.behavior));
  for (const auto& t : opts.tools) spec.tools.push_back(t.descriptor);
  RunConfig rc;
  rc.command = command.empty() ? fmt::format("inprocess:{}", opts.name) : std::move(command);
  spec.run_configs.push_back(std::move(rc));
  return spec;
}

/// Session wired to an in-process mock through LoopbackTransport.
inline Session inprocess_session(std::shared_ptr<MockMcpServer> server, SessionOptions opts = {}) {
  auto spec = mock_server_spec(server->options());
  auto transport = std::make_unique<LoopbackTransport>([server](std::string_view line) { return server->handle(line); });
  return Session(std::move(spec), std::move(transport), std::move(opts));
}

}  // namespace mcpradar::sim
