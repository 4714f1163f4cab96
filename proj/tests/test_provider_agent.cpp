#include <gtest/gtest.h>

#include <thread>

#include <httplib.h>

#include "support.hpp"

using namespace mcpradar;
using namespace testing_support;
using namespace std::chrono_literals;

// ---------------------------------------------------------------------------
// tool schemas

TEST(ToolSchema, FireCrawlSearch) {
  auto pool = parse_mcp_pool(read_file(data_dir() / "fixtures" / "firecrawl_pool.json"));
  auto s = tool_schema_from_descriptor(pool[0].tools[0]);
  EXPECT_EQ(s.name, "firecrawl_search");
  EXPECT_EQ(s.parameters["type"], "object");
  EXPECT_EQ(s.parameters["properties"]["query"]["type"], "string");
  EXPECT_EQ(s.parameters["required"], Json::array({"query"}));
}

TEST(ToolSchema, NoInputs) {
  auto s = tool_schema_from_descriptor({"ping", "no args", {}});
  EXPECT_EQ(s.parameters["type"], "object");
  EXPECT_TRUE(s.parameters["properties"].empty());
  EXPECT_TRUE(!s.parameters.contains("required") || s.parameters["required"].empty());
}

TEST(ToolSchema, OptionalInteger) {
  auto s = tool_schema_from_descriptor({"page", "", {{"n", "integer", false, "page number"}}});
  EXPECT_EQ(s.parameters["properties"]["n"]["type"], "integer");
  EXPECT_EQ(s.parameters["properties"]["n"]["description"], "page number");
  EXPECT_TRUE(!s.parameters.contains("required") || s.parameters["required"].empty());
}

// ---------------------------------------------------------------------------
// scripted provider

namespace {
std::vector<ChatMessage> convo() { return {ChatMessage::system("sys"), ChatMessage::user("hi")}; }
}  // namespace

TEST(ScriptedProvider, RepliesInOrderThenExhausts) {
  ScriptedProvider p({ScriptedReply::call("floor", R"({"expression":"1"})"), ScriptedReply::answer("<answer>1</answer>")});
  auto a = p.complete(convo(), {});
  ASSERT_EQ(a.message.tool_calls.size(), 1u);
  EXPECT_EQ(a.message.tool_calls[0].name, "floor");
  EXPECT_FALSE(a.message.tool_calls[0].id.empty());
  EXPECT_EQ(p.complete(convo(), {}).message.content, "<answer>1</answer>");
  try {
    p.complete(convo(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScriptExhausted);
  }
}

TEST(ScriptedProvider, DeterministicUsage) {
  auto run = [] {
    ScriptedProvider p({ScriptedReply::answer("<answer>42</answer>")});
    return p.complete(convo(), {}).usage;
  };
  auto u = run();
  EXPECT_EQ(u, run());
  EXPECT_TRUE(u.consistent());
  // sys(3) + hi(2) -> 1 + 1 prompt, 18 chars -> 5 completion
  EXPECT_EQ(u.prompt_tokens, 2);
  EXPECT_EQ(u.completion_tokens, 5);
}

TEST(ScriptedProvider, RequiresSystemFirst) {
  ScriptedProvider p({ScriptedReply::answer("x")});
  EXPECT_THROW(p.complete({ChatMessage::user("hi")}, {}), Error);
  EXPECT_THROW(p.complete({}, {}), Error);
}

TEST(ScriptedProvider, InconsistentUsageRepaired) {
  ScriptedReply r = ScriptedReply::answer("x");
  r.usage = TokenUsage{10, 5, 99};
  ScriptedProvider p({r});
  auto c = p.complete(convo(), {});
  EXPECT_TRUE(c.usage_repaired);
  EXPECT_EQ(c.usage.total_tokens, 15);
}

TEST(Wire, RequestBodyShape) {
  ProviderConfig cfg;
  cfg.model = "m";
  std::vector<ChatMessage> msgs = convo();
  msgs.push_back(ChatMessage::assistant("", {{"c1", "floor", R"({"expression":"1"})"}}));
  msgs.push_back(ChatMessage::tool("c1", "1"));
  auto body = chat_request_body(cfg, msgs, {tool_schema_from_descriptor({"floor", "", {{"expression", "string", true, ""}}})});
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["messages"].size(), 4u);
  EXPECT_EQ(body["messages"][2]["tool_calls"][0]["function"]["name"], "floor");
  EXPECT_EQ(body["messages"][3]["role"], "tool");
  EXPECT_EQ(body["messages"][3]["tool_call_id"], "c1");
  EXPECT_EQ(body["tools"][0]["function"]["name"], "floor");
  EXPECT_EQ(body["temperature"], 0.0);
}

TEST(Wire, ParseResponseVariants) {
  auto c = parse_chat_response(Json::parse(R"({"choices":[{"message":{"content":null,"tool_calls":[
      {"id":"a","function":{"name":"t","arguments":{"x":1}}}]}}],"usage":{"prompt_tokens":820,"completion_tokens":610,"total_tokens":1430}})"));
  ASSERT_EQ(c.message.tool_calls.size(), 1u);
  EXPECT_EQ(c.message.tool_calls[0].arguments, R"({"x":1})");
  EXPECT_EQ(c.usage, (TokenUsage{820, 610, 1430}));
  EXPECT_FALSE(c.usage_repaired);
  auto missing = parse_chat_response(Json::parse(R"({"choices":[{"message":{"content":"hi"}}]})"));
  EXPECT_TRUE(missing.usage_missing);
  EXPECT_EQ(missing.usage, TokenUsage{});
  EXPECT_THROW(parse_chat_response(Json::parse(R"({"error":{"message":"bad"}})")), Error);
  EXPECT_THROW(parse_chat_response(Json::parse(R"({"choices":[]})")), Error);
}

TEST(RateLimit, TokenBucketSpacing) {
  TokenBucket b(20.0);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 5; ++i) b.acquire();
  EXPECT_GE(std::chrono::steady_clock::now() - t0, 180ms);  // first is free, 4 x 50 ms
}

// ---------------------------------------------------------------------------
// OpenAI-compatible client against a local server

namespace {

class FakeGateway {
 public:
  explicit FakeGateway(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeGateway() {
    server_.stop();
    thread_.join();
  }
  ProviderConfig config() const {
    ProviderConfig c;
    c.base_url = fmt::format("http://127.0.0.1:{}/v1", port_);
    c.api_key = "sk-test";
    c.model = "test-model";
    c.retry_backoff = 10ms;
    c.request_timeout = 5000ms;
    return c;
  }
  int hits() const { return hits_; }
  std::string last_body() const { return last_body_; }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::string last_body_, last_auth_;
};

const char* kOkBody =
    R"({"choices":[{"message":{"role":"assistant","content":"<answer>2</answer>"}}],
        "usage":{"prompt_tokens":820,"completion_tokens":610,"total_tokens":1430}})";

}  // namespace

TEST(OpenAiProvider, UsagePropagates) {
  FakeGateway gw([](const httplib::Request&, httplib::Response& res) { res.set_content(kOkBody, "application/json"); });
  OpenAiCompatibleProvider p(gw.config());
  auto c = p.complete(convo(), {});
  EXPECT_EQ(c.message.content, "<answer>2</answer>");
  EXPECT_EQ(c.usage, (TokenUsage{820, 610, 1430}));
  EXPECT_EQ(gw.last_auth(), "Bearer sk-test");
  auto sent = Json::parse(gw.last_body());
  EXPECT_EQ(sent["model"], "test-model");
  EXPECT_EQ(sent["messages"][1]["content"], "hi");
}

TEST(OpenAiProvider, UnauthorizedIsAuthAndNotRetried) {
  FakeGateway gw([](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
    res.set_content(R"({"error":"bad key"})", "application/json");
  });
  OpenAiCompatibleProvider p(gw.config());
  try {
    p.complete(convo(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Auth);
  }
  EXPECT_EQ(gw.hits(), 1);
}

TEST(OpenAiProvider, ServerErrorRetriedThenSucceeds) {
  std::atomic<int> n{0};
  FakeGateway gw([&](const httplib::Request&, httplib::Response& res) {
    if (n++ == 0) {
      res.status = 503;
      return;
    }
    res.set_content(kOkBody, "application/json");
  });
  OpenAiCompatibleProvider p(gw.config());
  EXPECT_EQ(p.complete(convo(), {}).usage.total_tokens, 1430);
  EXPECT_EQ(gw.hits(), 2);
}

TEST(OpenAiProvider, RetriesAreBounded) {
  FakeGateway gw([](const httplib::Request&, httplib::Response& res) { res.status = 429; });
  auto cfg = gw.config();
  cfg.max_retries = 2;
  OpenAiCompatibleProvider p(cfg);
  try {
    p.complete(convo(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RateLimited);
  }
  EXPECT_EQ(gw.hits(), 3);
}

TEST(OpenAiProvider, BadRequestIsProviderError) {
  FakeGateway gw([](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  OpenAiCompatibleProvider p(gw.config());
  try {
    p.complete(convo(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Provider);
  }
  EXPECT_EQ(gw.hits(), 1);
}

TEST(OpenAiProvider, InconsistentUsageFlagged) {
  FakeGateway gw([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"message":{"content":"x"}}],"usage":{"prompt_tokens":5,"completion_tokens":5,"total_tokens":7}})",
                    "application/json");
  });
  OpenAiCompatibleProvider p(gw.config());
  auto c = p.complete(convo(), {});
  EXPECT_TRUE(c.usage_repaired);
  EXPECT_EQ(c.usage.total_tokens, 10);
}

TEST(OpenAiProvider, UnreachableIsTransport) {
  ProviderConfig cfg;
  cfg.base_url = "http://127.0.0.1:1/v1";
  cfg.model = "m";
  cfg.max_retries = 0;
  OpenAiCompatibleProvider p(cfg);
  try {
    p.complete(convo(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Transport);
  }
}

// ---------------------------------------------------------------------------
// agent loop

TEST(SystemPrompt, PerDomainOpening) {
  EXPECT_TRUE(build_system_prompt(Domain::Math).starts_with("You are an math assistant that MUST use available tools"));
  EXPECT_TRUE(build_system_prompt(Domain::Coding).starts_with("You are a code assistant"));
  EXPECT_TRUE(build_system_prompt(Domain::General).starts_with("You are an assistant that MUST"));
  for (auto d : kAllDomains) EXPECT_NE(build_system_prompt(d).find(kAnswerFormat), std::string::npos);
}

TEST(ExtractAnswer, Examples) {
  EXPECT_EQ(extract_answer("so <answer> 2 </answer>"), "2");
  EXPECT_EQ(extract_answer("<answer>1</answer> then <answer>41</answer>"), "41");
  EXPECT_EQ(extract_answer("no tags"), std::nullopt);
  EXPECT_EQ(extract_answer("<answer>open only"), std::nullopt);
  EXPECT_EQ(extract_answer("<answer></answer>"), "");
}

namespace {

struct CalcFixture {
  std::shared_ptr<sim::MockMcpServer> server;
  Session session;
  ToolRouter router;

  static std::shared_ptr<sim::MockMcpServer> make(std::string name = "Calculator") {
    sim::MockServerOptions o;
    o.name = std::move(name);
    o.tools = sim::calculator_tools();
    return std::make_shared<sim::MockMcpServer>(o);
  }
  CalcFixture() : server(make()), session(sim::inprocess_session(server)) {
    session.initialize();
    router = ToolRouter({&session});
  }
};

EpisodeConfig quick() {
  EpisodeConfig c;
  c.per_call_timeout = 2000ms;
  c.overall_deadline = 10000ms;
  return c;
}

}  // namespace

TEST(RunEpisode, MathFlowTwoCalls) {
  CalcFixture f;
  auto task = sample_task("math-0001");
  ScriptedProvider p({ScriptedReply::call("floor", R"({"expression":"-29/3"})"),
                      ScriptedReply::call("ceiling", R"({"expression":"-348/21"})"),
                      ScriptedReply::answer("Step 3: -16 - (-18) = 2 <answer>2</answer> finish!")});
  auto ep = run_episode(task, f.router, p, quick());
  EXPECT_EQ(ep.outcome, Outcome::Answered);
  EXPECT_EQ(ep.prediction, "2");
  ASSERT_EQ(ep.tool_events.size(), 2u);
  EXPECT_EQ(ep.tool_events[0].index, 1u);
  EXPECT_EQ(ep.tool_events[0].result.text(), "-10");
  EXPECT_EQ(ep.tool_events[1].index, 2u);
  EXPECT_EQ(ep.tool_events[1].result.text(), "-16");
  EXPECT_EQ(ep.rounds, 3);
  EXPECT_TRUE(check(*ep.prediction, task).success);
  // the model saw the tool result
  auto seen = p.received().back();
  EXPECT_EQ(seen[0].role, Role::System);
  EXPECT_EQ(seen[1].content, task.prompt);
  EXPECT_EQ(seen.back().role, Role::Tool);
  EXPECT_EQ(seen.back().content, "-16");
  // usage sums the three completions
  TokenUsage sum;
  for (const auto& u : ep.completion_usages) sum += u;
  EXPECT_EQ(sum, ep.usage_total);
  EXPECT_EQ(ep.completion_usages.size(), 3u);
}

TEST(RunEpisode, ZeroCallAnswer) {
  CalcFixture f;
  ScriptedProvider p({ScriptedReply::answer("<answer>391</answer>")});
  auto ep = run_episode(sample_task("math-0002"), f.router, p, quick());
  EXPECT_EQ(ep.outcome, Outcome::Answered);
  EXPECT_TRUE(ep.tool_events.empty());
  EXPECT_EQ(ep.prediction, "391");
}

TEST(RunEpisode, RoundLimit) {
  CalcFixture f;
  std::vector<ScriptedReply> script(10, ScriptedReply::call("floor", R"({"expression":"1"})"));
  ScriptedProvider p(script);
  auto cfg = quick();
  cfg.max_rounds = 3;
  auto ep = run_episode(sample_task("math-0001"), f.router, p, cfg);
  EXPECT_EQ(ep.outcome, Outcome::RoundLimit);
  EXPECT_EQ(ep.rounds, 3);
  EXPECT_EQ(ep.tool_events.size(), 3u);
  EXPECT_FALSE(ep.prediction);
  EXPECT_EQ(p.calls(), 3u);
}

TEST(RunEpisode, NudgedUntilAnswer) {
  CalcFixture f;
  ScriptedProvider p({ScriptedReply::answer("thinking"), ScriptedReply::answer("<answer>391</answer>")});
  auto ep = run_episode(sample_task("math-0002"), f.router, p, quick());
  EXPECT_EQ(ep.prediction, "391");
  EXPECT_EQ(p.received().back().back().content, kContinueNudge);
}

TEST(RunEpisode, ProviderErrorKeepsPartialTrace) {
  CalcFixture f;
  ScriptedReply boom;
  boom.fail_with = ErrorCode::RateLimited;
  ScriptedProvider p({ScriptedReply::call("floor", R"({"expression":"-29/3"})"), boom});
  auto ep = run_episode(sample_task("math-0001"), f.router, p, quick());
  EXPECT_EQ(ep.outcome, Outcome::ProviderError);
  EXPECT_EQ(ep.error_code, ErrorCode::RateLimited);
  EXPECT_EQ(ep.tool_events.size(), 1u);
  EXPECT_FALSE(ep.prediction);
  auto rec = record_from_episode(ep, false, "m", "r");
  EXPECT_EQ(rec.tool_usage.total_tool_count, 1);
  EXPECT_EQ(rec.ext.outcome, "provider_error");
  EXPECT_TRUE(validate_record(rec).empty());
}

TEST(RunEpisode, ToolErrorsAreFedBackNotThrown) {
  CalcFixture f;
  ScriptedProvider p({ScriptedReply::call("nope", "{}"), ScriptedReply::call("floor", "not json"),
                      ScriptedReply::call("floor", R"({"wrong":"1"})"), ScriptedReply::answer("<answer>x</answer>")});
  auto ep = run_episode(sample_task("math-0001"), f.router, p, quick());
  ASSERT_EQ(ep.tool_events.size(), 3u);
  for (const auto& ev : ep.tool_events) EXPECT_TRUE(ev.result.is_error);
  EXPECT_EQ(ep.tool_events[0].result.text(), "Error: unknown tool 'nope'");
  const auto last = p.received().back();
  for (const auto& m : last)
    if (m.role == Role::Tool) EXPECT_TRUE(m.content.starts_with("Error")) << m.content;
}

TEST(RunEpisode, AnswerFileInWorkdir) {
  TempDir dir;
  CalcFixture f;
  write_file(dir / "answer.jsonl", R"({"unique_id":"math-0002","Answer":"stale"})" "\n");
  auto cfg = quick();
  cfg.workdir = dir.path();
  struct Writer : Provider {
    fs::path dir;
    int n = 0;
    Completion complete(const std::vector<ChatMessage>&, const std::vector<ToolSchema>&) override {
      if (n++ == 0) {
        std::ofstream(dir / "answer.jsonl", std::ios::app) << R"({"unique_id":"math-0002","Answer":"391"})" "\n";
      }
      Completion c;
      c.message = ChatMessage::assistant("done, see file");
      return c;
    }
  } w;
  w.dir = dir.path();
  auto ep = run_episode(sample_task("math-0002"), f.router, w, cfg);
  EXPECT_EQ(ep.prediction, "391");
  EXPECT_EQ(ep.outcome, Outcome::Answered);
}

TEST(ToolRouter, CollidingNamesAreQualified) {
  auto a = CalcFixture::make("A");
  auto b = CalcFixture::make("B");
  auto sa = sim::inprocess_session(a);
  auto sb = sim::inprocess_session(b);
  sa.initialize();
  sb.initialize();
  ToolRouter r({&sa, &sb});
  EXPECT_FALSE(r.knows("floor"));
  EXPECT_TRUE(r.knows("A__floor"));
  EXPECT_TRUE(r.knows("B__floor"));
  EXPECT_TRUE(r.knows("B.floor"));
  EXPECT_EQ(r.dispatch("B__floor", R"({"expression":"7/2"})").text(), "3");
  for (const auto& s : r.schemas()) EXPECT_NE(s.name.find("__"), std::string::npos);
}

TEST(ToolRouter, DispatchNeverThrows) {
  sim::MockServerOptions o;
  o.name = "S";
  o.tools = sim::stalling_tools();
  auto srv = std::make_shared<sim::MockMcpServer>(o);
  auto s = sim::inprocess_session(srv);
  s.initialize();
  ToolRouter r({&s});
  auto res = r.dispatch("stall", "{}", 50ms);
  EXPECT_TRUE(res.is_error);
  EXPECT_TRUE(res.text().starts_with("Error"));
}
