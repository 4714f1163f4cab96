#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "mcpradar/error.hpp"

namespace mcpradar {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kInputTypes[] = {"string", "number", "integer", "boolean", "object", "array"};

inline bool is_known_input_type(std::string_view t) {
  for (auto k : kInputTypes)
    if (k == t) return true;
  return false;
}

struct ToolInput {
  std::string name;
  std::string type;
  bool required = false;
  std::string description;

  friend bool operator==(const ToolInput&, const ToolInput&) = default;
};

struct ToolDescriptor {
  std::string tool_name;
  std::string tool_description;
  std::vector<ToolInput> inputs;

  friend bool operator==(const ToolDescriptor&, const ToolDescriptor&) = default;
};

struct RunConfig {
  std::string command;
  std::map<std::string, std::string> env;
  // Kept for the socket transport; the stdio transport ignores it. Non-integer
  // placeholders ("your port") are carried verbatim in port_placeholder.
  std::optional<std::int64_t> port;
  std::string port_placeholder;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct McpServerSpec {
  std::string name;
  std::string description;
  std::vector<ToolDescriptor> tools;
  std::vector<RunConfig> run_configs;  // never empty once parsed; element 0 is used

  const RunConfig& run_config() const { return run_configs.at(0); }

  friend bool operator==(const McpServerSpec&, const McpServerSpec&) = default;
};

namespace detail {

inline const Json& pool_field(const Json& obj, const std::string& path, const char* key, Json::value_t type) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw Error(ErrorCode::Schema, fmt::format("missing required key {}.{}", path, key));
  }
  const auto& v = obj.at(key);
  bool ok = type == Json::value_t::string    ? v.is_string()
            : type == Json::value_t::array   ? v.is_array()
            : type == Json::value_t::boolean ? v.is_boolean()
            : type == Json::value_t::object  ? v.is_object()
                                             : true;
  if (!ok) throw Error(ErrorCode::Schema, fmt::format("{}.{} has wrong type", path, key));
  return v;
}

inline std::string optional_string(const Json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key) || obj.at(key).is_null()) return {};
  if (!obj.at(key).is_string()) throw Error(ErrorCode::Schema, fmt::format("{}.{} must be a string", path, key));
  return obj.at(key).get<std::string>();
}

}  // namespace detail

inline ToolDescriptor tool_descriptor_from_json(const Json& t, const std::string& path) {
  using VT = Json::value_t;
  ToolDescriptor d;
  d.tool_name = detail::pool_field(t, path, "tool_name", VT::string).get<std::string>();
  if (d.tool_name.empty()) throw Error(ErrorCode::Schema, fmt::format("{}.tool_name is empty", path));
  d.tool_description = detail::optional_string(t, path, "tool_description");
  if (t.contains("inputs") && !t.at("inputs").is_null()) {
    const auto& inputs = detail::pool_field(t, path, "inputs", VT::array);
    std::set<std::string> seen;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto ipath = fmt::format("{}.inputs[{}]", path, k);
      ToolInput in;
      in.name = detail::pool_field(inputs[k], ipath, "name", VT::string).get<std::string>();
      in.type = detail::pool_field(inputs[k], ipath, "type", VT::string).get<std::string>();
      if (!is_known_input_type(in.type)) {
        throw Error(ErrorCode::Schema, fmt::format("{}.type: unknown input type '{}'", ipath, in.type));
      }
      if (inputs[k].contains("required")) in.required = detail::pool_field(inputs[k], ipath, "required", VT::boolean).get<bool>();
      in.description = detail::optional_string(inputs[k], ipath, "description");
      if (!seen.insert(in.name).second) {
        throw Error(ErrorCode::Schema, fmt::format("{}.name: duplicate input '{}'", ipath, in.name));
      }
      d.inputs.push_back(std::move(in));
    }
  }
  return d;
}

inline Json tool_descriptor_to_json(const ToolDescriptor& d) {
  Json t;
  t["tool_name"] = d.tool_name;
  t["tool_description"] = d.tool_description;
  Json inputs = Json::array();
  for (const auto& in : d.inputs) {
    Json i;
    i["name"] = in.name;
    i["type"] = in.type;
    i["required"] = in.required;
    i["description"] = in.description;
    inputs.push_back(std::move(i));
  }
  t["inputs"] = std::move(inputs);
  return t;
}

inline McpServerSpec server_spec_from_json(const Json& s, const std::string& path) {
  using VT = Json::value_t;
  McpServerSpec spec;
  spec.name = detail::pool_field(s, path, "name", VT::string).get<std::string>();
  if (spec.name.empty()) throw Error(ErrorCode::Schema, fmt::format("{}.name is empty", path));
  spec.description = detail::optional_string(s, path, "description");

  if (s.contains("tools") && !s.at("tools").is_null()) {
    const auto& tools = detail::pool_field(s, path, "tools", VT::array);
    std::set<std::string> seen;
    for (std::size_t k = 0; k < tools.size(); ++k) {
      auto tpath = fmt::format("{}.tools[{}]", path, k);
      auto d = tool_descriptor_from_json(tools[k], tpath);
      if (!seen.insert(d.tool_name).second) {
        throw Error(ErrorCode::Schema, fmt::format("{}.tool_name: duplicate tool '{}'", tpath, d.tool_name));
      }
      spec.tools.push_back(std::move(d));
    }
  }

  if (!s.contains("run_config")) throw Error(ErrorCode::Schema, fmt::format("missing required key {}.run_config", path));
  Json configs = s.at("run_config");
  if (configs.is_object()) configs = Json::array({configs});
  if (!configs.is_array() || configs.empty()) {
    throw Error(ErrorCode::Schema, fmt::format("{}.run_config must be a non-empty array", path));
  }
  for (std::size_t k = 0; k < configs.size(); ++k) {
    auto rpath = fmt::format("{}.run_config[{}]", path, k);
    const auto& rc = configs[k];
    RunConfig cfg;
    cfg.command = detail::pool_field(rc, rpath, "command", VT::string).get<std::string>();
    if (cfg.command.empty()) throw Error(ErrorCode::Schema, fmt::format("{}.command is empty", rpath));
    if (rc.contains("env") && !rc.at("env").is_null()) {
      const auto& env = detail::pool_field(rc, rpath, "env", VT::object);
      for (auto it = env.begin(); it != env.end(); ++it) {
        if (!it.value().is_string()) throw Error(ErrorCode::Schema, fmt::format("{}.env.{} must be a string", rpath, it.key()));
        cfg.env[it.key()] = it.value().get<std::string>();
      }
    }
    if (rc.contains("port") && !rc.at("port").is_null()) {
      const auto& port = rc.at("port");
      if (port.is_number_integer()) cfg.port = port.get<std::int64_t>();
      else if (port.is_string()) cfg.port_placeholder = port.get<std::string>();
      else throw Error(ErrorCode::Schema, fmt::format("{}.port must be an integer", rpath));
    }
    spec.run_configs.push_back(std::move(cfg));
  }
  return spec;
}

inline Json server_spec_to_json(const McpServerSpec& spec) {
  Json s;
  s["name"] = spec.name;
  s["description"] = spec.description;
  Json tools = Json::array();
  for (const auto& t : spec.tools) tools.push_back(tool_descriptor_to_json(t));
  s["tools"] = std::move(tools);
  Json configs = Json::array();
  for (const auto& rc : spec.run_configs) {
    Json c;
    c["command"] = rc.command;
    Json env = Json::object();
    for (const auto& [k, v] : rc.env) env[k] = v;
    c["env"] = std::move(env);
    if (rc.port) c["port"] = *rc.port;
    else if (!rc.port_placeholder.empty()) c["port"] = rc.port_placeholder;
    configs.push_back(std::move(c));
  }
  s["run_config"] = std::move(configs);
  return s;
}

/// Accepts `{"mcp_pool": [...]}` or the bare `"mcp_pool": [...]` member as it
/// is usually quoted in docs.
inline std::vector<McpServerSpec> parse_mcp_pool(std::string_view document) {
  Json root;
  try {
    root = Json::parse(document);
  } catch (const Json::parse_error& first) {
    auto start = document.find_first_not_of(" \t\r\n");
    if (start == std::string_view::npos || document.substr(start).rfind("\"mcp_pool\"", 0) != 0) {
      throw Error(ErrorCode::Parse, fmt::format("mcp_pool document is not valid JSON: {}", first.what()));
    }
    try {
      root = Json::parse("{" + std::string(document) + "}");
    } catch (const Json::parse_error& e) {
      throw Error(ErrorCode::Parse, fmt::format("mcp_pool document is not valid JSON: {}", e.what()));
    }
  }
  if (!root.is_object() || !root.contains("mcp_pool")) {
    throw Error(ErrorCode::Schema, "missing required key mcp_pool");
  }
  const auto& pool = root.at("mcp_pool");
  if (!pool.is_array()) throw Error(ErrorCode::Schema, "mcp_pool must be an array");
  std::vector<McpServerSpec> specs;
  specs.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) specs.push_back(server_spec_from_json(pool[i], fmt::format("mcp_pool[{}]", i)));
  return specs;
}

inline Json mcp_pool_to_json(const std::vector<McpServerSpec>& specs) {
  Json pool = Json::array();
  for (const auto& s : specs) pool.push_back(server_spec_to_json(s));
  Json root;
  root["mcp_pool"] = std::move(pool);
  return root;
}

inline std::string serialize_mcp_pool(const std::vector<McpServerSpec>& specs) {
  return mcp_pool_to_json(specs).dump(2);
}

// ---------------------------------------------------------------------------
// Mapping between descriptors and the JSON-Schema shape used on the wire by
// MCP tools/list and by chat-completion tool definitions.

/// {"type":"object","properties":{...},"required":[...]}
inline Json input_schema_from_descriptor(const ToolDescriptor& d) {
  Json props = Json::object();
  Json required = Json::array();
  for (const auto& in : d.inputs) {
    if (!is_known_input_type(in.type)) {
      throw Error(ErrorCode::Schema, fmt::format("tool {}: input '{}' has unmappable type '{}'", d.tool_name, in.name, in.type));
    }
    Json p;
    p["type"] = in.type;
    if (!in.description.empty()) p["description"] = in.description;
    props[in.name] = std::move(p);
    if (in.required) required.push_back(in.name);
  }
  Json schema;
  schema["type"] = "object";
  schema["properties"] = std::move(props);
  schema["required"] = std::move(required);
  return schema;
}

/// Reads one entry of a tools/list result. Schema types outside the six
/// known ones (unions, missing "type") are recorded as "object", which the
/// argument validator treats as "any JSON value".
inline ToolDescriptor descriptor_from_mcp_tool(const Json& tool, const std::string& path) {
  if (!tool.is_object()) throw Error(ErrorCode::MalformedResponse, fmt::format("{} is not an object", path), tool.dump());
  if (!tool.contains("name") || !tool.at("name").is_string() || tool.at("name").get<std::string>().empty()) {
    throw Error(ErrorCode::MalformedResponse, fmt::format("{}.name missing", path), tool.dump());
  }
  ToolDescriptor d;
  d.tool_name = tool.at("name").get<std::string>();
  if (tool.contains("description") && tool.at("description").is_string()) {
    d.tool_description = tool.at("description").get<std::string>();
  }
  if (!tool.contains("inputSchema") || tool.at("inputSchema").is_null()) return d;
  const auto& schema = tool.at("inputSchema");
  if (!schema.is_object()) throw Error(ErrorCode::MalformedResponse, fmt::format("{}.inputSchema is not an object", path), tool.dump());
  std::set<std::string> required;
  if (schema.contains("required")) {
    const auto& req = schema.at("required");
    if (!req.is_array()) throw Error(ErrorCode::MalformedResponse, fmt::format("{}.inputSchema.required is not an array", path), tool.dump());
    for (const auto& r : req) {
      if (!r.is_string()) throw Error(ErrorCode::MalformedResponse, fmt::format("{}.inputSchema.required has a non-string", path), tool.dump());
      required.insert(r.get<std::string>());
    }
  }
  if (schema.contains("properties")) {
    const auto& props = schema.at("properties");
    if (!props.is_object()) throw Error(ErrorCode::MalformedResponse, fmt::format("{}.inputSchema.properties is not an object", path), tool.dump());
    for (auto it = props.begin(); it != props.end(); ++it) {
      ToolInput in;
      in.name = it.key();
      in.type = "object";
      if (it.value().is_object()) {
        const auto& p = it.value();
        if (p.contains("type") && p.at("type").is_string() && is_known_input_type(p.at("type").get<std::string>())) {
          in.type = p.at("type").get<std::string>();
        }
        if (p.contains("description") && p.at("description").is_string()) in.description = p.at("description").get<std::string>();
      }
      in.required = required.count(in.name) > 0;
      d.inputs.push_back(std::move(in));
    }
  }
  return d;
}

/// Checks call arguments against a descriptor. Empty result means valid.
inline std::vector<std::string> validate_arguments(const ToolDescriptor& d, const Json& args) {
  std::vector<std::string> out;
  if (!args.is_object()) {
    out.push_back("arguments must be a JSON object");
    return out;
  }
  for (const auto& in : d.inputs) {
    if (!args.contains(in.name)) {
      if (in.required) out.push_back(fmt::format("missing required argument '{}'", in.name));
      continue;
    }
    const auto& v = args.at(in.name);
    bool ok = true;
    if (in.type == "string") ok = v.is_string();
    else if (in.type == "number") ok = v.is_number();
    else if (in.type == "integer") ok = v.is_number_integer() || (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>())));
    else if (in.type == "boolean") ok = v.is_boolean();
    else if (in.type == "array") ok = v.is_array();
    if (!ok) out.push_back(fmt::format("argument '{}' must be of type {}", in.name, in.type));
  }
  return out;
}

}  // namespace mcpradar
