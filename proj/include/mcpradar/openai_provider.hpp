#pragma once

// Requires CPPHTTPLIB_OPENSSL_SUPPORT for https endpoints (link mcpradar::http).

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mcpradar/llm_provider.hpp"

namespace mcpradar {

struct ParsedUrl {
  std::string scheme_host_port;  // "https://openrouter.ai"
  std::string path;              // "/api/v1"
};

inline ParsedUrl parse_base_url(std::string_view url) {
  auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw Error(ErrorCode::Config, fmt::format("base_url '{}' has no scheme", url));
  auto slash = url.find('/', scheme + 3);
  ParsedUrl out;
  out.scheme_host_port = std::string(url.substr(0, slash));
  out.path = slash == std::string_view::npos ? std::string() : std::string(url.substr(slash));
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

/// Reads https_proxy / http_proxy style variables ("http://host:port").
inline std::optional<std::pair<std::string, int>> proxy_from_env(bool https) {
  const char* names_https[] = {"HTTPS_PROXY", "https_proxy", "ALL_PROXY", "all_proxy"};
  const char* names_http[] = {"HTTP_PROXY", "http_proxy", "ALL_PROXY", "all_proxy"};
  for (const char* name : https ? names_https : names_http) {
    const char* v = std::getenv(name);
    if (!v || !*v) continue;
    std::string_view s(v);
    if (auto p = s.find("://"); p != std::string_view::npos) s.remove_prefix(p + 3);
    if (auto at = s.rfind('@'); at != std::string_view::npos) s.remove_prefix(at + 1);
    if (auto sl = s.find('/'); sl != std::string_view::npos) s = s.substr(0, sl);
    auto colon = s.rfind(':');
    if (colon == std::string_view::npos) return std::make_pair(std::string(s), https ? 443 : 80);
    return std::make_pair(std::string(s.substr(0, colon)), std::atoi(std::string(s.substr(colon + 1)).c_str()));
  }
  return std::nullopt;
}

/// Chat-completions client for any OpenAI-compatible gateway.
class OpenAiCompatibleProvider final : public Provider {
 public:
  explicit OpenAiCompatibleProvider(ProviderConfig cfg)
      : cfg_(std::move(cfg)), url_(parse_base_url(cfg_.base_url)), bucket_(cfg_.requests_per_second) {
    auto problems = validate_provider_config(cfg_);
    if (!problems.empty()) throw Error(ErrorCode::Config, problems.front());
  }

  const ProviderConfig& config() const { return cfg_; }

  Completion complete(const std::vector<ChatMessage>& messages, const std::vector<ToolSchema>& tools) override {
    check_completion_request(messages);
    const std::string body = chat_request_body(cfg_, messages, tools).dump();
    const auto start = std::chrono::steady_clock::now();
    for (int attempt = 0;; ++attempt) {
      try {
        bucket_.acquire();
        auto c = post_once(body);
        c.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return c;
      } catch (const Error& e) {
        if (!is_retryable(e.code()) || attempt >= cfg_.max_retries) throw;
        auto backoff = cfg_.retry_backoff * (1 << attempt);
        spdlog::warn("provider attempt {} failed ({}); retrying in {} ms", attempt + 1, e.what(), backoff.count());
        std::this_thread::sleep_for(backoff);
      }
    }
  }

 private:
  Completion post_once(const std::string& body) {
    httplib::Client cli(url_.scheme_host_port);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.request_timeout).count();
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.request_timeout).count() % 1000000;
    cli.set_connection_timeout(std::min<long>(secs, 30), 0);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    if (auto proxy = proxy_from_env(url_.scheme_host_port.rfind("https", 0) == 0)) cli.set_proxy(proxy->first, proxy->second);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    auto res = cli.Post(url_.path + "/chat/completions", headers, body, "application/json");
    if (!res) {
      throw Error(ErrorCode::Transport, fmt::format("POST {}{}/chat/completions: {}", url_.scheme_host_port, url_.path,
                                                    httplib::to_string(res.error())));
    }
    const int status = res->status;
    if (status == 401 || status == 403) throw Error(ErrorCode::Auth, fmt::format("provider rejected credentials (HTTP {})", status), res->body);
    if (status == 429) throw Error(ErrorCode::RateLimited, "provider rate limit (HTTP 429)", res->body);
    if (status >= 500) throw Error(ErrorCode::Transport, fmt::format("provider server error (HTTP {})", status), res->body);
    if (status < 200 || status >= 300) throw Error(ErrorCode::Provider, fmt::format("provider returned HTTP {}", status), res->body);
    Json parsed = Json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw Error(ErrorCode::Provider, "provider returned non-JSON body", res->body);
    return parse_chat_response(parsed);
  }

  ProviderConfig cfg_;
  ParsedUrl url_;
  TokenBucket bucket_;
};

}  // namespace mcpradar
