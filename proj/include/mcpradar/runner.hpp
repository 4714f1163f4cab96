#pragma once

#include <condition_variable>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mcpradar/agent.hpp"
#include "mcpradar/answer_checker.hpp"
#include "mcpradar/error.hpp"
#include "mcpradar/llm_provider.hpp"
#include "mcpradar/mcp_client.hpp"
#include "mcpradar/metrics.hpp"
#include "mcpradar/task.hpp"
#include "mcpradar/trace.hpp"

namespace mcpradar {

/// One initialized session per pool server, plus the router over them.
struct SessionSet {
  std::vector<std::unique_ptr<Session>> sessions;
  std::unique_ptr<ToolRouter> router;

  void shutdown() noexcept {
    for (auto& s : sessions) s->shutdown();
  }
};

/// Wraps already-initialized sessions; lists their tools to build the router.
inline std::unique_ptr<SessionSet> make_session_set(std::vector<Session> sessions) {
  auto set = std::make_unique<SessionSet>();
  std::vector<Session*> raw;
  for (auto& s : sessions) {
    set->sessions.push_back(std::make_unique<Session>(std::move(s)));
    raw.push_back(set->sessions.back().get());
  }
  set->router = std::make_unique<ToolRouter>(std::move(raw));
  return set;
}

using SessionSetFactory = std::function<std::unique_ptr<SessionSet>()>;

/// Fixed number of session sets handed out exclusively, so no session is
/// ever used by two episodes at once.
class LeasePool {
 public:
  LeasePool(const SessionSetFactory& factory, std::size_t size) {
    if (size == 0) throw Error(ErrorCode::InvalidArgument, "lease pool size must be >= 1");
    for (std::size_t i = 0; i < size; ++i) {
      sets_.push_back(factory());
      free_.push_back(sets_.back().get());
    }
  }
  LeasePool(const LeasePool&) = delete;
  LeasePool& operator=(const LeasePool&) = delete;
  ~LeasePool() { shutdown(); }

  class Lease {
   public:
    Lease(LeasePool* pool, SessionSet* set) : pool_(pool), set_(set) {}
    Lease(Lease&& o) noexcept : pool_(std::exchange(o.pool_, nullptr)), set_(std::exchange(o.set_, nullptr)) {}
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    Lease& operator=(Lease&&) = delete;
    ~Lease() {
      if (pool_) pool_->release(set_);
    }
    SessionSet& operator*() const { return *set_; }
    SessionSet* operator->() const { return set_; }

   private:
    LeasePool* pool_;
    SessionSet* set_;
  };

  Lease acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !free_.empty(); });
    auto* s = free_.back();
    free_.pop_back();
    in_use_ = sets_.size() - free_.size();
    max_in_use_ = std::max(max_in_use_, in_use_);
    return Lease(this, s);
  }

  std::size_t size() const { return sets_.size(); }
  std::size_t max_in_use() const {
    std::lock_guard lock(mu_);
    return max_in_use_;
  }

  void shutdown() noexcept {
    for (auto& s : sets_)
      if (s) s->shutdown();
  }

 private:
  void release(SessionSet* s) {
    {
      std::lock_guard lock(mu_);
      free_.push_back(s);
      in_use_ = sets_.size() - free_.size();
    }
    cv_.notify_one();
  }

  std::vector<std::unique_ptr<SessionSet>> sets_;
  std::vector<SessionSet*> free_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t in_use_ = 0;
  std::size_t max_in_use_ = 0;
};

// ---------------------------------------------------------------------------

struct RunPlan {
  std::string model;
  std::string run_id;
  std::vector<Task> tasks;
  EpisodeConfig episode;
  std::filesystem::path archive_dir;
  ArchiveHeader header;  // model/run_id are filled from the plan
  std::size_t concurrency = 1;
  bool resume = false;
  // Called after each record is durable; may throw to simulate a crash.
  std::function<void(const EvalRecord&, std::size_t committed)> on_commit;
};

struct RunSummary {
  std::size_t executed = 0;   // episodes run and committed by this call
  std::size_t skipped = 0;    // already in the archive (resume)
  std::size_t provider_errors = 0;
  std::size_t max_in_flight = 0;
  std::vector<EvalRecord> records;  // the whole archive after this call
  std::optional<RunMetrics> metrics;
};

inline constexpr std::string_view kMetricsFile = "metrics.json";

/// Runs one task on a leased session set and checks the answer.
inline EvalRecord run_task(const Task& task, SessionSet& set, Provider& provider, const EpisodeConfig& cfg,
                           const std::string& model, const std::string& run_id, Episode* episode_out = nullptr) {
  Episode ep = run_episode(task, *set.router, provider, cfg);
  bool success = false;
  if (ep.prediction) success = check(*ep.prediction, task).success;
  auto rec = record_from_episode(ep, success, model, run_id);
  if (episode_out) *episode_out = std::move(ep);
  return rec;
}

/// Overall and per-domain metrics of an archive's records.
inline Json archive_metrics_json(const std::string& model, const std::string& run_id, const std::vector<EvalRecord>& records) {
  Json j;
  j["model"] = model;
  j["run_id"] = run_id;
  auto outcomes = outcomes_from_records(records);
  if (outcomes.empty()) {
    j["overall"] = nullptr;
  } else {
    auto m = compute_run_metrics(outcomes);
    m.model = model;
    j["overall"] = run_metrics_to_json(m);
  }
  Json by = Json::array();
  for (Domain d : kAllDomains) {
    std::vector<TaskOutcome> sub;
    for (const auto& r : records)
      if (r.ext.domain == d) sub.push_back(outcome_from_record(r));
    if (sub.empty()) continue;
    auto m = compute_run_metrics(sub);
    m.model = model;
    m.domain = d;
    by.push_back(run_metrics_to_json(m));
  }
  j["by_domain"] = std::move(by);
  return j;
}

/// Executes every task not yet in the archive. Workers finish in any order;
/// the calling thread commits records in task order, each durably, so an
/// archive is always a prefix-closed, duplicate-free set of completed tasks.
inline RunSummary execute_run(const RunPlan& plan, LeasePool& pool, Provider& provider) {
  namespace fs = std::filesystem;
  if (plan.concurrency == 0) throw Error(ErrorCode::Config, "concurrency must be >= 1");
  const auto records_path = plan.archive_dir / kRecordsFile;
  ArchiveHeader header = plan.header;
  header.model = plan.model;
  header.run_id = plan.run_id;

  RunSummary summary;
  std::set<std::string> completed;
  if (fs::exists(records_path) || fs::exists(plan.archive_dir / kHeaderFile)) {
    if (!plan.resume) {
      throw Error(ErrorCode::Config, fmt::format("archive '{}' already exists; resume it or choose another output", plan.archive_dir.string()));
    }
    auto existing = read_header(plan.archive_dir);
    if (existing.dataset_id != header.dataset_id || existing.model != header.model || existing.run_id != header.run_id) {
      throw Error(ErrorCode::Config, fmt::format("archive '{}' belongs to a different dataset/model/run", plan.archive_dir.string()));
    }
    if (repair_torn_tail(records_path)) spdlog::warn("dropped a torn final line in {}", records_path.string());
    if (fs::exists(records_path)) {
      for (auto& r : load_jsonl(records_path)) {
        if (!completed.insert(r.unique_id).second) {
          throw Error(ErrorCode::DuplicateId, fmt::format("archive '{}' holds two records for {}", plan.archive_dir.string(), r.unique_id));
        }
      }
    }
  } else {
    write_header(plan.archive_dir, header);
  }

  std::vector<const Task*> pending;
  for (const auto& t : plan.tasks) {
    if (completed.count(t.unique_id)) ++summary.skipped;
    else pending.push_back(&t);
  }

  enum class Status { Pending, Running, Done, Failed };
  std::mutex mu;
  std::condition_variable cv;
  std::vector<Status> status(pending.size(), Status::Pending);
  std::vector<std::optional<EvalRecord>> results(pending.size());
  std::size_t next = 0, in_flight = 0;
  bool stop = false;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (stop || next >= pending.size()) return;
        i = next++;
        status[i] = Status::Running;
        summary.max_in_flight = std::max(summary.max_in_flight, ++in_flight);
      }
      try {
        auto lease = pool.acquire();
        Episode ep;
        auto rec = run_task(*pending[i], *lease, provider, plan.episode, plan.model, plan.run_id, &ep);
        if (ep.error_code == ErrorCode::Auth) throw Error(ErrorCode::Auth, ep.error);
        std::lock_guard lock(mu);
        if (ep.outcome == Outcome::ProviderError) ++summary.provider_errors;
        results[i] = std::move(rec);
        status[i] = Status::Done;
        --in_flight;
      } catch (...) {
        std::lock_guard lock(mu);
        status[i] = Status::Failed;
        --in_flight;
        if (!failure) failure = std::current_exception();
        stop = true;
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> threads;
  const std::size_t n_workers = std::min(plan.concurrency, pending.size());
  for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);

  std::exception_ptr commit_failure;
  for (std::size_t c = 0; c < pending.size(); ++c) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return status[c] == Status::Done || status[c] == Status::Failed || (stop && status[c] == Status::Pending); });
    if (status[c] != Status::Done) break;
    EvalRecord rec = std::move(*results[c]);
    results[c].reset();
    lock.unlock();
    try {
      append_jsonl(records_path, rec);
      ++summary.executed;
      if (plan.on_commit) plan.on_commit(rec, summary.executed);
    } catch (...) {
      commit_failure = std::current_exception();
      std::lock_guard relock(mu);
      stop = true;
      break;
    }
  }
  for (auto& t : threads) t.join();
  if (commit_failure) std::rethrow_exception(commit_failure);
  if (failure) std::rethrow_exception(failure);

  summary.records = fs::exists(records_path) ? load_jsonl(records_path) : std::vector<EvalRecord>{};
  if (!summary.records.empty()) {
    auto m = compute_run_metrics(outcomes_from_records(summary.records));
    m.model = plan.model;
    summary.metrics = m;
  }
  std::ofstream out(plan.archive_dir / kMetricsFile, std::ios::binary | std::ios::trunc);
  out << archive_metrics_json(plan.model, plan.run_id, summary.records).dump(2) << '\n';
  return summary;
}

}  // namespace mcpradar
