#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "support.hpp"

using namespace mcpradar;
using namespace testing_support;
using namespace std::chrono_literals;

// ---------------------------------------------------------------------------
// parse_mcp_pool

TEST(McpPool, FireCrawlDocument) {
  auto specs = parse_mcp_pool(read_file(data_dir() / "fixtures" / "firecrawl_pool.json"));
  ASSERT_EQ(specs.size(), 1u);
  const auto& s = specs[0];
  EXPECT_EQ(s.name, "FireCrawl");
  ASSERT_EQ(s.tools.size(), 1u);
  EXPECT_EQ(s.tools[0].tool_name, "firecrawl_search");
  ASSERT_EQ(s.tools[0].inputs.size(), 1u);
  EXPECT_EQ(s.tools[0].inputs[0].name, "query");
  EXPECT_EQ(s.tools[0].inputs[0].type, "string");
  EXPECT_TRUE(s.tools[0].inputs[0].required);
  EXPECT_EQ(s.run_config().command, "npx -y firecrawl-mcp");
  EXPECT_EQ(s.run_config().env.at("FIRECRAWL_API_KEY"), "your key");
  EXPECT_EQ(s.run_config().port_placeholder, "your port");
  EXPECT_FALSE(s.run_config().port);
}

TEST(McpPool, Empty) { EXPECT_TRUE(parse_mcp_pool(R"({"mcp_pool": []})").empty()); }

TEST(McpPool, MissingCommandNamesPath) {
  try {
    parse_mcp_pool(R"({"mcp_pool": [{"name": "x", "run_config": [{"env": {}}]}]})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Schema);
    EXPECT_NE(std::string(e.what()).find("mcp_pool[0].run_config[0].command"), std::string::npos) << e.what();
  }
}

TEST(McpPool, UnknownInputType) {
  auto doc = R"({"mcp_pool": [{"name": "x", "tools": [{"tool_name": "t", "inputs": [{"name": "a", "type": "date"}]}],
                 "run_config": [{"command": "c"}]}]})";
  try {
    parse_mcp_pool(doc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Schema);
    EXPECT_NE(std::string(e.what()).find("date"), std::string::npos);
  }
}

TEST(McpPool, DuplicateToolAndInputNames) {
  EXPECT_THROW(parse_mcp_pool(R"({"mcp_pool": [{"name": "x", "tools": [{"tool_name": "t"}, {"tool_name": "t"}], "run_config": [{"command": "c"}]}]})"),
               Error);
  EXPECT_THROW(parse_mcp_pool(R"({"mcp_pool": [{"name": "x", "tools": [{"tool_name": "t", "inputs": [{"name": "a", "type": "string"},
               {"name": "a", "type": "string"}]}], "run_config": [{"command": "c"}]}]})"),
               Error);
}

TEST(McpPool, SerializeParseIdentity) {
  auto specs = parse_mcp_pool(read_file(data_dir() / "fixtures" / "firecrawl_pool.json"));
  auto more = parse_mcp_pool(read_file(data_dir() / "mcp_pool.sample.json"));
  specs.insert(specs.end(), more.begin(), more.end());
  McpServerSpec numeric_port = specs[0];
  numeric_port.name = "WithPort";
  numeric_port.run_configs[0].port = 8080;
  numeric_port.run_configs[0].port_placeholder.clear();
  specs.push_back(numeric_port);
  EXPECT_EQ(parse_mcp_pool(serialize_mcp_pool(specs)), specs);
}

TEST(McpPool, RandomSpecsRoundTrip) {
  std::mt19937_64 rng(5);
  auto word = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + rng() % 26));
    return s;
  };
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<McpServerSpec> specs(rng() % 4);
    for (auto& s : specs) {
      s.name = word(5);
      s.description = word(rng() % 20);
      for (std::size_t t = 0, nt = rng() % 4; t < nt; ++t) {
        ToolDescriptor d{word(3) + std::to_string(t), word(8), {}};
        for (std::size_t k = 0, nk = rng() % 4; k < nk; ++k)
          d.inputs.push_back({word(2) + std::to_string(k), std::string(kInputTypes[rng() % 6]), rng() % 2 == 0, word(4)});
        s.tools.push_back(d);
      }
      RunConfig rc;
      rc.command = word(6);
      if (rng() % 2) rc.env[word(3)] = word(5);
      if (rng() % 3 == 0) rc.port = static_cast<std::int64_t>(rng() % 65535);
      s.run_configs.push_back(rc);
    }
    EXPECT_EQ(parse_mcp_pool(serialize_mcp_pool(specs)), specs);
  }
}

// ---------------------------------------------------------------------------
// sessions over the subprocess mock

TEST(SpawnSession, MockCalculatorIsSpawned) {
  auto s = spawn(subprocess_mock("calc", "--tools calculator"), fast_session());
  EXPECT_EQ(s.state(), SessionState::Spawned);
  s.shutdown();
  EXPECT_EQ(s.state(), SessionState::Closed);
}

TEST(SpawnSession, NonexistentCommand) {
  McpServerSpec spec;
  spec.name = "ghost";
  spec.run_configs.push_back({"/nonexistent", {}, std::nullopt, {}});
  try {
    spawn(spec, fast_session());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SpawnFailed);
  }
}

TEST(SpawnSession, SilentServerStartupTimeout) {
  auto opts = fast_session();
  opts.handshake_timeout = 300ms;
  auto s = spawn(subprocess_mock("mute", "--behavior stall"), opts);
  auto t0 = std::chrono::steady_clock::now();
  try {
    s.initialize();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StartupTimeout);
  }
  EXPECT_GE(std::chrono::steady_clock::now() - t0, 300ms);
  EXPECT_EQ(s.state(), SessionState::Spawned);
}

TEST(SpawnSession, SandboxedFilesystem) {
  TempDir dir;
  auto s = connect(subprocess_mock("fs", "--tools filesystem --sandbox " + dir.path().string()), fast_session());
  auto r = s.call_tool("write_file", {{"path", "a.txt"}, {"content", "hi"}});
  EXPECT_FALSE(r.is_error) << r.text();
  EXPECT_EQ(read_file(dir / "a.txt"), "hi");
  EXPECT_TRUE(s.call_tool("read_file", {{"path", "../escape"}}).is_error);
}

TEST(Initialize, MatchingVersion) {
  auto s = spawn(subprocess_mock("calc", "--tools calculator"), fast_session());
  auto info = s.initialize();
  EXPECT_EQ(s.state(), SessionState::Initialized);
  EXPECT_EQ(info.name, "calc");
  EXPECT_EQ(info.protocol_version, kProtocolVersion);
}

TEST(Initialize, OlderSupportedVersion) {
  auto s = spawn(subprocess_mock("calc", "--protocol-version 2024-11-05"), fast_session());
  EXPECT_EQ(s.initialize().protocol_version, "2024-11-05");
}

TEST(Initialize, VersionMismatch) {
  auto s = spawn(subprocess_mock("calc", "--protocol-version 1999-01-01"), fast_session());
  try {
    s.initialize();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ProtocolVersion);
  }
  EXPECT_EQ(s.state(), SessionState::Spawned);
}

TEST(Initialize, JsonRpcErrorIsHandshakeError) {
  auto s = spawn(subprocess_mock("calc", "--behavior handshake-error"), fast_session());
  try {
    s.initialize();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HandshakeRejected);
  }
  EXPECT_EQ(s.state(), SessionState::Spawned);
}

TEST(Initialize, GarbageCarriesRawBytes) {
  auto s = spawn(subprocess_mock("calc", "--behavior garbage-handshake"), fast_session());
  try {
    s.initialize();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedResponse);
    EXPECT_NE(e.raw().find("this is not json"), std::string::npos);
  }
}

TEST(Initialize, ServerChatterIsTolerated) {
  auto s = connect(subprocess_mock("calc", "--tools calculator --behavior chatty"), fast_session());
  auto r = s.call_tool("floor", {{"expression", "-29/3"}});
  EXPECT_EQ(r.text(), "-10");
}

TEST(Initialize, StderrDoesNotInterfere) {
  auto s = connect(subprocess_mock("calc", "--tools calculator --stderr noisy-banner"), fast_session());
  EXPECT_EQ(s.call_tool("add", {{"a", "1/2"}, {"b", "1/3"}}).text(), "5/6");
}

TEST(ListTools, CalculatorHasFloorAndCeiling) {
  auto s = connect(subprocess_mock("calc", "--tools calculator"), fast_session());
  std::vector<std::string> names;
  for (const auto& d : s.list_tools()) names.push_back(d.tool_name);
  EXPECT_NE(std::find(names.begin(), names.end(), "floor"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "ceiling"), names.end());
}

TEST(ListTools, EmptyList) {
  auto s = connect(subprocess_mock("none", "--tools \"\""), fast_session());
  EXPECT_TRUE(s.list_tools().empty());
}

TEST(ListTools, PaginatedAndCached) {
  auto s = connect(subprocess_mock("calc", "--tools calculator,search --page-size 2"), fast_session());
  auto before = s.next_request_id();
  EXPECT_EQ(s.list_tools().size(), 6u);
  auto after = s.next_request_id();
  EXPECT_EQ(after - before, 3);  // 2 + 2 + 2
  s.list_tools();
  EXPECT_EQ(s.next_request_id(), after);
}

namespace {
/// In-process server whose tools/list carries a malformed entry.
Session session_with_tools(Json tools) {
  auto handler = [tools](std::string_view line) -> std::vector<std::string> {
    Json m = Json::parse(line);
    if (!m.contains("id")) return {};
    Json r{{"jsonrpc", "2.0"}, {"id", m["id"]}};
    if (m["method"] == "initialize") r["result"] = {{"protocolVersion", std::string(kProtocolVersion)}};
    else r["result"] = {{"tools", tools}};
    return {r.dump()};
  };
  McpServerSpec spec;
  spec.name = "inline";
  Session s(spec, std::make_unique<LoopbackTransport>(handler));
  s.initialize();
  return s;
}
}  // namespace

TEST(ListTools, MissingNameIsMalformed) {
  auto s = session_with_tools(Json::array({{{"description", "nameless"}, {"inputSchema", {{"type", "object"}}}}}));
  try {
    s.list_tools();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedResponse);
  }
}

TEST(ListTools, RequiresInitialized) {
  auto s = spawn(subprocess_mock("calc", ""), fast_session());
  try {
    s.list_tools();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidState);
  }
}

TEST(CallTool, FloorOfMinus29Over3) {
  auto s = connect(subprocess_mock("calc", "--tools calculator"), fast_session());
  auto r = s.call_tool("floor", {{"expression", "-29/3"}});
  EXPECT_FALSE(r.is_error);
  EXPECT_EQ(r.text(), "-10");
  EXPECT_GE(r.elapsed_ms, 0.0);
  EXPECT_TRUE(r.raw.contains("result"));
}

TEST(CallTool, CeilingOfProduct) {
  auto s = connect(subprocess_mock("calc", "--tools calculator"), fast_session());
  EXPECT_EQ(s.call_tool("ceiling", {{"expression", "12/7 * -29/3"}}).text(), "-16");
  // -348/21 by hand: -16.571..., ceiling -16
  EXPECT_EQ(s.call_tool("ceiling", {{"expression", "-348/21"}}).text(), "-16");
}

TEST(CallTool, UnknownToolIsErrorResult) {
  auto s = connect(subprocess_mock("calc", "--tools calculator"), fast_session());
  auto r = s.call_tool("no_such_tool", Json::object());
  EXPECT_TRUE(r.is_error);
  EXPECT_NE(r.text().find("no_such_tool"), std::string::npos);
  EXPECT_EQ(s.state(), SessionState::Initialized);
  EXPECT_EQ(s.call_tool("floor", {{"expression", "7/2"}}).text(), "3");
}

TEST(CallTool, BadExpressionIsErrorResult) {
  auto s = connect(subprocess_mock("calc", "--tools calculator"), fast_session());
  auto r = s.call_tool("evaluate", {{"expression", "1/0"}});
  EXPECT_TRUE(r.is_error);
  EXPECT_FALSE(r.text().empty());
}

TEST(CallTool, PerCallTimeoutThenRecovers) {
  auto s = connect(subprocess_mock("slow", "--tools calculator,stall"), fast_session());
  try {
    s.call_tool("stall", Json::object(), 200ms);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Timeout);
  }
  EXPECT_EQ(s.call_tool("floor", {{"expression", "5/2"}}).text(), "2");
}

TEST(CallTool, RequestIdsStrictlyIncrease) {
  auto s = connect(subprocess_mock("calc", "--tools calculator"), fast_session());
  auto prev = s.next_request_id();
  for (int i = 0; i < 20; ++i) {
    s.call_tool("add", {{"a", std::to_string(i)}, {"b", "1"}});
    EXPECT_EQ(s.next_request_id(), prev + 1);
    prev = s.next_request_id();
  }
}

TEST(CallTool, BeforeInitializeAndAfterClose) {
  auto s = spawn(subprocess_mock("calc", "--tools calculator"), fast_session());
  EXPECT_THROW(s.call_tool("floor", {{"expression", "1"}}), Error);
  s.initialize();
  s.shutdown();
  try {
    s.call_tool("floor", {{"expression", "1"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidState);
  }
}

TEST(CallTool, ServerDeathIsTransportError) {
  auto victim = connect(subprocess_mock("calc-death-marker", "--tools calculator"), fast_session());
  ASSERT_EQ(std::system("pkill -KILL -f -- '--name [c]alc-death-marker' >/dev/null 2>&1"), 0);
  std::this_thread::sleep_for(100ms);
  try {
    victim.call_tool("floor", {{"expression", "1"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Transport) << e.what();
  }
}

TEST(Shutdown, Idempotent) {
  auto s = connect(subprocess_mock("calc", "--tools calculator"), fast_session());
  s.shutdown();
  EXPECT_EQ(s.state(), SessionState::Closed);
  s.shutdown();
  EXPECT_EQ(s.state(), SessionState::Closed);
}

TEST(Shutdown, HungServerIsKilled) {
  auto opts = fast_session();
  opts.shutdown_grace = 150ms;
  auto s = connect(subprocess_mock("hung", "--tools calculator --behavior ignore-term"), opts);
  auto t0 = std::chrono::steady_clock::now();
  s.shutdown();
  auto took = std::chrono::steady_clock::now() - t0;
  EXPECT_EQ(s.state(), SessionState::Closed);
  EXPECT_GE(took, 300ms);  // stdin close + SIGTERM both ignored
  EXPECT_LT(took, 5s);
}

TEST(Shutdown, NeverSpawned) {
  McpServerSpec spec;
  spec.name = "none";
  Session s(spec, nullptr);
  s.shutdown();
  EXPECT_EQ(s.state(), SessionState::Closed);
}

// ---------------------------------------------------------------------------
// robustness against arbitrary server output (in-process, raw bytes)

TEST(Robustness, ArbitraryBytesGiveResultOrTypedError) {
  std::mt19937_64 rng(99);
  std::size_t typed = 0, ok = 0;
  for (int i = 0; i < 3000; ++i) {
    std::string noise;
    for (std::size_t k = 0, n = rng() % 80; k < n; ++k) noise.push_back(static_cast<char>(rng() % 256));
    bool handshake_ok = false;
    auto handler = [&](std::string_view line) -> std::vector<std::string> {
      Json m = Json::parse(line);
      if (!m.contains("id")) return {};
      if (!handshake_ok) {
        handshake_ok = true;
        return {Json{{"jsonrpc", "2.0"}, {"id", m["id"]}, {"result", {{"protocolVersion", std::string(kProtocolVersion)}}}}.dump()};
      }
      return {noise};
    };
    McpServerSpec spec;
    spec.name = "noise";
    Session s(spec, std::make_unique<LoopbackTransport>(handler), fast_session());
    s.initialize();
    try {
      s.call_tool("x", Json::object());
      ++ok;
    } catch (const Error&) {
      ++typed;
    }
  }
  EXPECT_EQ(ok + typed, 3000u);
}
