#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mcpradar/error.hpp"
#include "mcpradar/runner.hpp"
#include "mcpradar/sim/mock_server.hpp"
#include "mcpradar/sim/policy.hpp"

namespace mcpradar::sim {

/// Factory for session sets backed by fresh in-process mock servers.
inline SessionSetFactory inprocess_factory(std::vector<MockServerOptions> servers, SessionOptions opts = {}) {
  return [servers = std::move(servers), opts] {
    std::vector<Session> sessions;
    for (const auto& o : servers) {
      auto s = inprocess_session(std::make_shared<MockMcpServer>(o), opts);
      s.initialize();
      sessions.push_back(std::move(s));
    }
    return make_session_set(std::move(sessions));
  };
}

struct ScenarioRun {
  std::filesystem::path archive_dir;
  std::string run_id = "run-1";
  std::size_t concurrency = 1;
  bool resume = false;
  std::function<void(const EvalRecord&, std::size_t)> on_commit;
};

/// Scripted provider + in-process mock servers + tasks, runnable in one call.
class Scenario {
 public:
  Scenario(PolicySpec policy, std::vector<Task> tasks, std::vector<MockServerOptions> servers, EpisodeConfig episode, std::string model)
      : policy_(policy), tasks_(std::move(tasks)), servers_(std::move(servers)), episode_(std::move(episode)), model_(std::move(model)),
        provider_(std::make_shared<PolicyProvider>(policy_, tasks_)) {}

  const std::vector<Task>& tasks() const { return tasks_; }
  const std::string& model() const { return model_; }
  PolicyProvider& provider() { return *provider_; }

  RunSummary run(const ScenarioRun& r) {
    LeasePool pool(inprocess_factory(servers_), std::max<std::size_t>(1, r.concurrency));
    RunPlan plan;
    plan.model = model_;
    plan.run_id = r.run_id;
    plan.tasks = tasks_;
    plan.episode = episode_;
    plan.archive_dir = r.archive_dir;
    plan.header.dataset_id = dataset_digest();
    plan.header.dataset_path = "<scenario>";
    plan.header.created_at = now_iso8601();
    plan.concurrency = r.concurrency;
    plan.resume = r.resume;
    plan.on_commit = r.on_commit;
    return execute_run(plan, pool, *provider_);
  }

  std::string dataset_digest() const {
    std::string all;
    for (const auto& t : tasks_) all += task_to_json(t).dump() + "\n";
    return fnv1a_hex(all);
  }

  static std::string now_iso8601() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  }

 private:
  PolicySpec policy_;
  std::vector<Task> tasks_;
  std::vector<MockServerOptions> servers_;
  EpisodeConfig episode_;
  std::string model_;
  std::shared_ptr<PolicyProvider> provider_;
};

/// Checks that every tool the policy will call is offered by some server,
/// then returns the scenario. A mismatch is a Config error.
inline Scenario build_scenario(const PolicySpec& policy, std::vector<Task> tasks, std::vector<MockServerOptions> servers,
                               EpisodeConfig episode = {}, std::string model = "mock-policy") {
  if (servers.empty()) throw Error(ErrorCode::Config, "scenario needs at least one mock server");
  auto probe = inprocess_factory(servers)();
  for (const auto& t : tasks) {
    for (const auto& r : make_policy(policy, t).replies) {
      for (const auto& c : r.tool_calls) {
        if (!probe->router->knows(c.name)) {
          throw Error(ErrorCode::Config, fmt::format("policy for task {} calls tool '{}' which no mock server offers", t.unique_id, c.name));
        }
      }
    }
  }
  probe->shutdown();
  return Scenario(policy, std::move(tasks), std::move(servers), std::move(episode), std::move(model));
}

}  // namespace mcpradar::sim
