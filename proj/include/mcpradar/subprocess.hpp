#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "mcpradar/error.hpp"

extern char** environ;

namespace mcpradar {

using Clock = std::chrono::steady_clock;

/// Splits a run_config command line into argv. Supports single and double
/// quotes and backslash escapes; no other shell syntax.
inline std::vector<std::string> split_command(std::string_view cmd) {
  std::vector<std::string> out;
  std::string cur;
  bool have = false;
  char quote = 0;
  for (std::size_t i = 0; i < cmd.size(); ++i) {
    char c = cmd[i];
    if (quote) {
      if (c == quote) {
        quote = 0;
      } else if (c == '\\' && quote == '"' && i + 1 < cmd.size()) {
        cur.push_back(cmd[++i]);
      } else {
        cur.push_back(c);
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      have = true;
    } else if (c == '\\' && i + 1 < cmd.size()) {
      cur.push_back(cmd[++i]);
      have = true;
    } else if (c == ' ' || c == '\t' || c == '\n') {
      if (have) out.push_back(std::move(cur));
      cur.clear();
      have = false;
    } else {
      cur.push_back(c);
      have = true;
    }
  }
  if (quote) throw Error(ErrorCode::Config, fmt::format("unterminated quote in command '{}'", cmd));
  if (have) out.push_back(std::move(cur));
  return out;
}

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(o.release()) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) reset(o.release());
    return *this;
  }
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset(int fd = -1) noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

 private:
  int fd_ = -1;
};

inline std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw Error(ErrorCode::SpawnFailed, fmt::format("pipe: {}", std::strerror(errno)));
  return {Fd(fds[0]), Fd(fds[1])};
}

inline void ignore_sigpipe_once() {
  static const bool done = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

}  // namespace detail

/// Line-oriented reader over a child's stdout, fed by a background thread.
/// stderr is drained into a bounded tail buffer for diagnostics.
class LineReader {
 public:
  static constexpr std::size_t kMaxLine = 64u << 20;
  static constexpr std::size_t kStderrTail = 16u << 10;

  LineReader(detail::Fd out, detail::Fd err) : out_(std::move(out)), err_(std::move(err)) {
    auto [r, w] = detail::make_pipe();
    wake_r_ = std::move(r);
    wake_w_ = std::move(w);
    thread_ = std::thread([this] { run(); });
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  ~LineReader() {
    char b = 1;
    [[maybe_unused]] auto n = ::write(wake_w_.get(), &b, 1);
    if (thread_.joinable()) thread_.join();
  }

  /// Next complete line (without '\n'); nullopt on deadline. Throws
  /// Transport once the stream has ended and the queue is drained.
  std::optional<std::string> next_line(Clock::time_point deadline) {
    std::unique_lock lock(mu_);
    cv_.wait_until(lock, deadline, [&] { return !lines_.empty() || eof_; });
    if (!lines_.empty()) {
      auto line = std::move(lines_.front());
      lines_.pop_front();
      return line;
    }
    if (eof_) throw Error(ErrorCode::Transport, "server closed its output stream", stderr_tail_);
    return std::nullopt;
  }

  bool eof() const {
    std::lock_guard lock(mu_);
    return eof_ && lines_.empty();
  }

  std::string stderr_tail() const {
    std::lock_guard lock(mu_);
    return stderr_tail_;
  }

 private:
  void run() {
    std::string partial;
    bool out_open = true;
    bool err_open = static_cast<bool>(err_);
    char buf[65536];
    while (out_open || err_open) {
      pollfd fds[3] = {{out_open ? out_.get() : -1, POLLIN, 0},
                       {err_open ? err_.get() : -1, POLLIN, 0},
                       {wake_r_.get(), POLLIN, 0}};
      int rc = ::poll(fds, 3, -1);
      if (rc < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (fds[2].revents) break;
      if (fds[0].revents) {
        ssize_t n = ::read(out_.get(), buf, sizeof buf);
        if (n <= 0) {
          if (n < 0 && errno == EINTR) continue;
          out_open = false;
        } else {
          partial.append(buf, static_cast<std::size_t>(n));
          push_lines(partial);
        }
      }
      if (fds[1].revents) {
        ssize_t n = ::read(err_.get(), buf, sizeof buf);
        if (n <= 0) {
          if (n < 0 && errno == EINTR) continue;
          err_open = false;
        } else {
          std::lock_guard lock(mu_);
          stderr_tail_.append(buf, static_cast<std::size_t>(n));
          if (stderr_tail_.size() > kStderrTail) stderr_tail_.erase(0, stderr_tail_.size() - kStderrTail);
        }
      }
    }
    std::lock_guard lock(mu_);
    if (!partial.empty()) lines_.push_back(std::move(partial));
    eof_ = true;
    cv_.notify_all();
  }

  void push_lines(std::string& partial) {
    std::size_t start = 0;
    std::vector<std::string> ready;
    for (auto nl = partial.find('\n'); nl != std::string::npos; nl = partial.find('\n', start)) {
      std::string line = partial.substr(start, nl - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      ready.push_back(std::move(line));
      start = nl + 1;
    }
    partial.erase(0, start);
    if (partial.size() > kMaxLine) {
      ready.push_back(partial.substr(0, kMaxLine));
      partial.clear();
    }
    if (ready.empty()) return;
    std::lock_guard lock(mu_);
    for (auto& l : ready) lines_.push_back(std::move(l));
    cv_.notify_all();
  }

  detail::Fd out_, err_, wake_r_, wake_w_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> lines_;
  std::string stderr_tail_;
  bool eof_ = false;
  std::thread thread_;
};

/// A child process with piped stdio. Killed and reaped on destruction.
class Subprocess {
 public:
  Subprocess(const std::vector<std::string>& argv, const std::map<std::string, std::string>& env_overlay) {
    if (argv.empty()) throw Error(ErrorCode::SpawnFailed, "empty command");
    detail::ignore_sigpipe_once();

    // Everything the child touches is prepared before fork.
    std::vector<std::string> env_storage;
    for (char** e = environ; e && *e; ++e) {
      std::string_view kv(*e);
      auto eq = kv.find('=');
      if (eq != std::string_view::npos && env_overlay.count(std::string(kv.substr(0, eq)))) continue;
      env_storage.emplace_back(kv);
    }
    for (const auto& [k, v] : env_overlay) env_storage.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_storage) envp.push_back(s.data());
    envp.push_back(nullptr);
    std::vector<std::string> argv_storage = argv;
    std::vector<char*> argvp;
    for (auto& s : argv_storage) argvp.push_back(s.data());
    argvp.push_back(nullptr);

    auto [in_r, in_w] = detail::make_pipe();
    auto [out_r, out_w] = detail::make_pipe();
    auto [err_r, err_w] = detail::make_pipe();
    auto [exec_r, exec_w] = detail::make_pipe();

    pid_t pid = ::fork();
    if (pid < 0) throw Error(ErrorCode::SpawnFailed, fmt::format("fork: {}", std::strerror(errno)));
    if (pid == 0) {
      ::setpgid(0, 0);
      ::signal(SIGPIPE, SIG_DFL);
      ::dup2(in_r.get(), STDIN_FILENO);
      ::dup2(out_w.get(), STDOUT_FILENO);
      ::dup2(err_w.get(), STDERR_FILENO);
      ::execvpe(argvp[0], argvp.data(), envp.data());
      int err = errno;
      [[maybe_unused]] auto n = ::write(exec_w.get(), &err, sizeof err);
      ::_exit(127);
    }
    pid_ = pid;
    exec_w.reset();
    in_r.reset();
    out_w.reset();
    err_w.reset();

    int child_errno = 0;
    ssize_t n;
    do {
      n = ::read(exec_r.get(), &child_errno, sizeof child_errno);
    } while (n < 0 && errno == EINTR);
    if (n > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
      throw Error(ErrorCode::SpawnFailed, fmt::format("cannot execute '{}': {}", argv[0], std::strerror(child_errno)));
    }
    stdin_ = std::move(in_w);
    reader_ = std::make_unique<LineReader>(std::move(out_r), std::move(err_r));
  }

  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;

  ~Subprocess() {
    stdin_.reset();
    if (running()) {
      signal_group(SIGKILL);
      wait_exit(Clock::now() + std::chrono::seconds(5));
    }
    reader_.reset();
  }

  pid_t pid() const noexcept { return pid_; }
  LineReader& reader() { return *reader_; }

  void write_all(std::string_view data) {
    if (!stdin_) throw Error(ErrorCode::Transport, "server stdin is closed");
    while (!data.empty()) {
      ssize_t n = ::write(stdin_.get(), data.data(), data.size());
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::Transport, fmt::format("write to server failed: {}", std::strerror(errno)));
      }
      data.remove_prefix(static_cast<std::size_t>(n));
    }
  }

  void close_stdin() { stdin_.reset(); }

  bool running() {
    if (pid_ <= 0) return false;
    int status = 0;
    pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_ || (r < 0 && errno == ECHILD)) {
      exit_status_ = status;
      pid_ = -1;
      return false;
    }
    return true;
  }

  /// Polls for exit until the deadline; true once the child is reaped.
  bool wait_exit(Clock::time_point deadline) {
    while (running()) {
      if (Clock::now() >= deadline) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return true;
  }

  void signal_group(int sig) {
    if (pid_ > 0) {
      ::kill(-pid_, sig);
      ::kill(pid_, sig);
    }
  }

  std::optional<int> exit_status() const { return exit_status_; }

 private:
  pid_t pid_ = -1;
  detail::Fd stdin_;
  std::unique_ptr<LineReader> reader_;
  std::optional<int> exit_status_;
};

}  // namespace mcpradar
