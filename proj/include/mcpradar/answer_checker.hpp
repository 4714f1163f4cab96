#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <regex>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "mcpradar/error.hpp"
#include "mcpradar/task.hpp"

namespace mcpradar {

enum class CheckMethod { Exact, Normalized, Numeric, Regex };

inline std::string_view to_string(CheckMethod m) {
  switch (m) {
    case CheckMethod::Exact: return "exact";
    case CheckMethod::Normalized: return "normalized";
    case CheckMethod::Numeric: return "numeric";
    case CheckMethod::Regex: return "regex";
  }
  return "exact";
}

struct CheckResult {
  bool success = false;
  CheckMethod method = CheckMethod::Exact;
  std::string detail;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline bool erase_all(std::string& s, std::string_view token) {
  bool changed = false;
  for (auto pos = s.find(token); pos != std::string::npos; pos = s.find(token, pos)) {
    s.erase(pos, token.size());
    changed = true;
  }
  return changed;
}

}  // namespace detail

/// Canonical form used by the Normalized and Regex checkers. Idempotent.
inline std::string normalize_answer(std::string_view input, const NormalizationOptions& opts = {}) {
  std::string s(input);
  if (opts.case_fold) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (opts.strip_latex) {
    static constexpr std::string_view kTokens[] = {"\\left", "\\right", "\\(", "\\)", "\\[", "\\]", "$"};
    // Removing one token can splice together another, so run to a fixpoint.
    for (bool changed = true; changed;) {
      changed = false;
      for (auto tok : kTokens) changed |= detail::erase_all(s, tok);
    }
  }
  if (opts.collapse_whitespace) {
    std::string out;
    out.reserve(s.size());
    bool in_space = false;
    for (char c : s) {
      if (detail::is_space(c)) {
        in_space = true;
        continue;
      }
      if (in_space && !out.empty()) out.push_back(' ');
      in_space = false;
      out.push_back(c);
    }
    s = std::move(out);
  }
  auto view = detail::trim(s);
  while (!view.empty() && (view.back() == '.' || detail::is_space(view.back()))) view.remove_suffix(1);
  return std::string(view);
}

/// Parses plain reals, "p/q" fractions and \frac{p}{q}. Surrounding `$`
/// and whitespace are ignored.
inline std::optional<double> parse_real(std::string_view input) {
  std::string s(detail::trim(input));
  detail::erase_all(s, "$");
  s = std::string(detail::trim(s));
  if (s.empty()) return std::nullopt;

  auto parse_plain = [](std::string_view t) -> std::optional<double> {
    std::string str(detail::trim(t));
    if (str.empty()) return std::nullopt;
    // Thousands separators: 1,234,567
    static const std::regex kGrouped(R"([+-]?\d{1,3}(,\d{3})+(\.\d+)?)");
    if (std::regex_match(str, kGrouped)) detail::erase_all(str, ",");
    const char* begin = str.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !std::isfinite(v)) return std::nullopt;
    // Reject hex floats and inf/nan spellings that strtod accepts.
    for (char c : str) {
      if (std::isalpha(static_cast<unsigned char>(c)) && c != 'e' && c != 'E') return std::nullopt;
    }
    return v;
  };

  static const std::regex kFrac(R"(^([+-]?)\s*\\[dt]?frac\s*\{([^{}]*)\}\s*\{([^{}]*)\}$)");
  std::smatch m;
  if (std::regex_match(s, m, kFrac)) {
    auto num = parse_plain(m[2].str());
    auto den = parse_plain(m[3].str());
    if (!num || !den || *den == 0.0) return std::nullopt;
    double v = *num / *den;
    return m[1].str() == "-" ? -v : v;
  }
  if (auto slash = s.find('/'); slash != std::string::npos) {
    auto num = parse_plain(std::string_view(s).substr(0, slash));
    auto den = parse_plain(std::string_view(s).substr(slash + 1));
    if (!num || !den || *den == 0.0) return std::nullopt;
    return *num / *den;
  }
  return parse_plain(s);
}

/// Spec applied when a task carries none. Math uses Numeric and falls back
/// to Normalized when the ground truth is not a number.
inline AnswerSpec default_answer_spec(Domain domain) {
  AnswerSpec spec;
  if (domain == Domain::Math) spec.checker = NumericCheck{1e-6};
  else spec.checker = NormalizedCheck{};
  return spec;
}

inline CheckResult check_normalized(std::string_view prediction, std::string_view truth,
                                    const NormalizationOptions& opts) {
  auto p = normalize_answer(prediction, opts);
  auto t = normalize_answer(truth, opts);
  bool ok = p == t;
  return {ok, CheckMethod::Normalized,
          ok ? "normalized match" : fmt::format("normalized '{}' != '{}'", p, t)};
}

inline CheckResult check(std::string_view prediction, const Task& task) {
  const bool explicit_spec = task.answer_spec.has_value();
  const AnswerSpec spec = explicit_spec ? *task.answer_spec : default_answer_spec(task.domain);

  return std::visit(
      [&](const auto& c) -> CheckResult {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ExactCheck>) {
          bool ok = prediction == task.ground_truth;
          return {ok, CheckMethod::Exact, ok ? "exact match" : "bytes differ"};
        } else if constexpr (std::is_same_v<T, NormalizedCheck>) {
          return check_normalized(prediction, task.ground_truth, spec.normalization);
        } else if constexpr (std::is_same_v<T, NumericCheck>) {
          auto truth = parse_real(task.ground_truth);
          if (!truth) {
            if (explicit_spec) {
              throw Error(ErrorCode::Dataset, fmt::format("task {}: numeric checker but ground truth '{}' is not a number",
                                                          task.unique_id, task.ground_truth));
            }
            return check_normalized(prediction, task.ground_truth, spec.normalization);
          }
          auto pred = parse_real(prediction);
          if (!pred) return {false, CheckMethod::Numeric, fmt::format("prediction '{}' is not a number", prediction)};
          double diff = std::fabs(*pred - *truth);
          bool ok = diff <= c.abs_tolerance;
          return {ok, CheckMethod::Numeric, fmt::format("|{} - {}| = {} (tolerance {})", *pred, *truth, diff, c.abs_tolerance)};
        } else {
          std::regex re;
          try {
            re = std::regex(c.pattern);
          } catch (const std::regex_error& e) {
            throw Error(ErrorCode::Dataset, fmt::format("task {}: regex does not compile: {}", task.unique_id, e.what()));
          }
          auto norm = normalize_answer(prediction, spec.normalization);
          bool ok = std::regex_match(norm, re);
          return {ok, CheckMethod::Regex, ok ? "regex matched" : fmt::format("'{}' does not match /{}/", norm, c.pattern)};
        }
      },
      spec.checker);
}

}  // namespace mcpradar
