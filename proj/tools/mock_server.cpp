// Stdio MCP server backed by MockMcpServer, for transport-level tests and
// offline end-to-end runs.

#include <csignal>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "mcpradar/sim/mock_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mock MCP server"};
  mcpradar::sim::MockServerOptions opts;
  std::string tools = "calculator";
  std::string behavior = "normal";
  std::string sandbox;
  std::string stderr_banner;
  app.add_option("--name", opts.name, "Server name");
  app.add_option("--tools", tools, "Comma-separated tool sets: calculator, filesystem, search, fail, stall");
  app.add_option("--behavior", behavior, "normal, handshake-error, garbage-handshake, stall, ignore-term, fuzz, chatty");
  app.add_option("--seed", opts.seed, "Seed for the fuzz behavior");
  app.add_option("--protocol-version", opts.protocol_version, "Protocol version announced by initialize");
  app.add_option("--sandbox", sandbox, "Root directory for filesystem tools");
  app.add_option("--page-size", opts.page_size, "tools/list page size (0 = one page)");
  app.add_option("--stderr", stderr_banner, "Write this line to stderr at startup");
  CLI11_PARSE(app, argc, argv);

  try {
    opts.behavior = mcpradar::sim::parse_server_behavior(behavior);
    std::vector<std::string> sets;
    std::string cur;
    for (char c : tools + ",") {
      if (c == ',') {
        if (!cur.empty()) sets.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    opts.tools = mcpradar::sim::tools_for_sets(sets);
  } catch (const std::exception& e) {
    std::cerr << "mock server: " << e.what() << "\n";
    return 2;
  }
  if (!sandbox.empty()) opts.sandbox = sandbox;
  if (!stderr_banner.empty()) std::cerr << stderr_banner << std::endl;

  const bool ignore_term = opts.behavior == mcpradar::sim::ServerBehavior::IgnoreTerm;
  if (ignore_term) std::signal(SIGTERM, SIG_IGN);
  std::signal(SIGPIPE, SIG_IGN);

  mcpradar::sim::MockMcpServer server(std::move(opts));
  std::ios::sync_with_stdio(false);
  std::string line;
  while (std::getline(std::cin, line)) {
    for (const auto& out : server.handle(line)) std::cout << out << '\n';
    std::cout.flush();
  }
  // A hung server: stdin is gone but we keep running until SIGKILL.
  if (ignore_term)
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(1));
  return 0;
}
