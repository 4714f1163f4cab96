#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <fmt/format.h>

#include "mcpradar.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using namespace mcpradar;

class TempDir {
 public:
  explicit TempDir(std::string_view tag = "t") {
    static std::atomic<int> counter{0};
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() / fmt::format("mcpradar-{}-{}-{}-{}", tag, ::getpid(), stamp, counter++);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(std::string_view rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline fs::path data_dir() { return MCPRADAR_DATA_DIR; }
inline fs::path mock_server_binary() { return MCPRADAR_MOCK_SERVER; }

/// Pool spec launching the mock server binary as a real subprocess.
inline McpServerSpec subprocess_mock(const std::string& name, const std::string& args) {
  McpServerSpec s;
  s.name = name;
  s.description = "mock";
  RunConfig rc;
  rc.command = fmt::format("{} --name {} {}", mock_server_binary().string(), name, args);
  s.run_configs.push_back(rc);
  return s;
}

inline SessionOptions fast_session() {
  SessionOptions o;
  o.handshake_timeout = std::chrono::milliseconds(2000);
  o.call_timeout = std::chrono::milliseconds(2000);
  o.shutdown_grace = std::chrono::milliseconds(200);
  return o;
}

inline Task sample_task(const std::string& id) {
  for (auto& t : load_dataset((data_dir() / "tasks.sample.jsonl").string()))
    if (t.unique_id == id) return t;
  throw std::runtime_error("no sample task " + id);
}

// Reference tables: one entry per (domain, model) with the five printed values.
struct TableCell {
  Domain domain = Domain::Math;
  std::string model;
  double ra = 0, dtsr = 0, fep = 0, cre = 0, rte = 0;
  std::vector<std::string> highlighted;
};

inline std::vector<TableCell> load_table(const std::string& name) {
  Json j = Json::parse(read_file(data_dir() / "reference" / (name + ".json")));
  std::vector<TableCell> out;
  for (const auto& e : j) {
    TableCell c;
    c.domain = *parse_domain(e.at("domain").get<std::string>());
    c.model = e.at("model").get<std::string>();
    c.ra = e.at("ra").get<double>();
    c.dtsr = e.at("dtsr").get<double>();
    c.fep = e.at("fep").get<double>();
    c.cre = e.at("cre").get<double>();
    c.rte = e.at("rte").get<double>();
    if (e.contains("highlighted")) c.highlighted = e.at("highlighted").get<std::vector<std::string>>();
    out.push_back(std::move(c));
  }
  return out;
}

inline RunMetrics to_metrics(const TableCell& c) {
  RunMetrics m;
  m.model = c.model;
  m.domain = c.domain;
  m.ra = c.ra;
  m.dtsr = c.dtsr;
  m.fep = c.fep;
  m.cre_raw = c.cre;
  m.rte_raw = c.rte;
  return m;
}

// ---------------------------------------------------------------------------
// Oracle: exact rationals, written straight from the definitions.
//   R_i = erroneous / n  (n = 0: 0 when solved, else 1)
//   D_i = 1 when solved; else (k-1)/n for the first error at k;
//         n/(n+1) with no error; 0 with no calls.

using Q = boost::multiprecision::cpp_rational;

inline Q oracle_r(bool success, const std::vector<bool>& flags) {
  if (flags.empty()) return success ? Q(0) : Q(1);
  long bad = 0;
  for (bool f : flags) bad += f ? 1 : 0;
  return Q(bad, static_cast<long>(flags.size()));
}

inline Q oracle_d(bool success, const std::vector<bool>& flags) {
  if (success) return Q(1);
  const long n = static_cast<long>(flags.size());
  if (n == 0) return Q(0);
  for (long k = 1; k <= n; ++k)
    if (flags[k - 1]) return Q(k - 1, n);
  return Q(n, n + 1);
}

inline double oracle_dtsr(const std::vector<TaskOutcome>& ts) {
  Q sum = 0;
  for (const auto& t : ts) sum += oracle_r(t.success, t.call_error_flags);
  return static_cast<double>(Q(1) - sum / Q(static_cast<long>(ts.size())));
}

inline double oracle_fep(const std::vector<TaskOutcome>& ts) {
  Q sum = 0;
  for (const auto& t : ts) sum += oracle_d(t.success, t.call_error_flags);
  return static_cast<double>(sum / Q(static_cast<long>(ts.size())));
}

/// All flag vectors of length 0..max_len (2^(max_len+1) - 1 of them).
inline std::vector<std::vector<bool>> all_flag_vectors(int max_len) {
  std::vector<std::vector<bool>> out;
  for (int len = 0; len <= max_len; ++len) {
    for (unsigned bits = 0; bits < (1u << len); ++bits) {
      std::vector<bool> v(static_cast<std::size_t>(len));
      for (int i = 0; i < len; ++i) v[i] = (bits >> i) & 1u;
      out.push_back(std::move(v));
    }
  }
  return out;
}

inline TaskOutcome random_outcome(std::mt19937_64& rng, int max_calls = 12) {
  TaskOutcome t;
  t.success = std::bernoulli_distribution(0.5)(rng);
  int n = std::uniform_int_distribution<int>(0, max_calls)(rng);
  double p = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (int i = 0; i < n; ++i) t.call_error_flags.push_back(std::bernoulli_distribution(p)(rng));
  t.total_tokens = std::uniform_int_distribution<std::int64_t>(0, 20000)(rng);
  t.elapsed_ms = std::uniform_int_distribution<int>(0, 20000)(rng);
  return t;
}

inline std::vector<TaskOutcome> random_outcomes(std::mt19937_64& rng, int max_tasks = 20) {
  std::vector<TaskOutcome> ts(static_cast<std::size_t>(std::uniform_int_distribution<int>(1, max_tasks)(rng)));
  for (auto& t : ts) t = random_outcome(rng);
  return ts;
}

/// Archive text with per-run volatile fields blanked: header created_at
/// and every record's ext.elapsed_ms.
inline std::string archive_modulo_timestamps(const fs::path& dir) {
  Json header = Json::parse(read_file(dir / kHeaderFile));
  header.erase("created_at");
  std::string out = header.dump() + "\n";
  std::istringstream in(read_file(dir / kRecordsFile));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json r = Json::parse(line);
    r["ext"].erase("elapsed_ms");
    out += r.dump() + "\n";
  }
  return out;
}

}  // namespace testing_support
