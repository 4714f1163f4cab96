#pragma once

#include <cctype>
#include <string>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>
#include <fmt/format.h>

#include "mcpradar/error.hpp"

namespace mcpradar::sim {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline std::string format_rational(const Rational& r) {
  BigInt num = boost::multiprecision::numerator(r);
  BigInt den = boost::multiprecision::denominator(r);
  if (den == 1) return num.str();
  return num.str() + "/" + den.str();
}

inline BigInt floor_of(const Rational& r) {
  BigInt num = boost::multiprecision::numerator(r);
  BigInt den = boost::multiprecision::denominator(r);  // always > 0
  BigInt q = num / den;                                 // truncates toward zero
  if (num < 0 && q * den != num) q -= 1;
  return q;
}

inline BigInt ceil_of(const Rational& r) { return -floor_of(-r); }

namespace detail {

// expr   := term (('+' | '-') term)*
// term   := unary (('*' | '/') unary)*
// unary  := ('+' | '-') unary | power
// power  := primary ('^' unary)?      integer exponents only
// primary:= number | '(' expr ')' | name '(' expr ')'
class ExprParser {
 public:
  explicit ExprParser(std::string_view src) : s_(src) {}

  Rational parse() {
    auto v = expr();
    skip_ws();
    if (pos_ != s_.size()) fail(fmt::format("unexpected '{}'", s_[pos_]));
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::InvalidArgument, fmt::format("bad expression at offset {}: {}", pos_, what));
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Rational expr() {
    auto v = term();
    for (;;) {
      if (eat('+')) v += term();
      else if (eat('-')) v -= term();
      else return v;
    }
  }

  Rational term() {
    auto v = unary();
    for (;;) {
      if (eat('*')) {
        v *= unary();
      } else if (eat('/')) {
        auto d = unary();
        if (d == 0) throw Error(ErrorCode::Division, "division by zero");
        v /= d;
      } else {
        return v;
      }
    }
  }

  Rational unary() {
    if (eat('-')) return -unary();
    if (eat('+')) return unary();
    return power();
  }

  Rational power() {
    auto base = primary();
    if (!eat('^')) return base;
    auto e = unary();
    if (boost::multiprecision::denominator(e) != 1) fail("non-integer exponent");
    BigInt n = boost::multiprecision::numerator(e);
    if (n > 64 || n < -64) fail("exponent out of range");
    int k = n.convert_to<int>();
    if (k < 0 && base == 0) throw Error(ErrorCode::Division, "division by zero");
    Rational out = 1;
    for (int i = 0; i < (k < 0 ? -k : k); ++i) {
      out *= base;
      if (boost::multiprecision::msb(abs(boost::multiprecision::numerator(out)) + 1) > 65536 ||
          boost::multiprecision::msb(boost::multiprecision::denominator(out)) > 65536)
        fail("result too large");
    }
    return k < 0 ? Rational(1) / out : out;
  }

  Rational primary() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end");
    char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      auto v = expr();
      if (!eat(')')) fail("missing ')'");
      return v;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      std::string name(s_.substr(start, pos_ - start));
      if (!eat('(')) fail(fmt::format("expected '(' after {}", name));
      auto v = expr();
      if (!eat(')')) fail("missing ')'");
      if (name == "floor") return Rational(floor_of(v));
      if (name == "ceil" || name == "ceiling") return Rational(ceil_of(v));
      if (name == "abs") return v < 0 ? Rational(-v) : v;
      fail(fmt::format("unknown function '{}'", name));
    }
    fail(fmt::format("unexpected '{}'", c));
  }

  Rational number() {
    BigInt digits = 0;
    BigInt scale = 1;
    bool any = false, frac = false;
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c))) {
        digits = digits * 10 + (c - '0');
        if (frac) scale *= 10;
        any = true;
      } else if (c == '.' && !frac) {
        frac = true;
      } else {
        break;
      }
      ++pos_;
      if (digits > BigInt(1) << 4096) fail("number too large");
    }
    if (!any) fail("expected a number");
    return Rational(digits, scale);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Exact evaluation of + - * / ^ with parentheses and floor/ceil/abs.
/// Decimal literals are read exactly (0.1 is 1/10).
inline Rational evaluate_expression(std::string_view expr) {
  if (expr.size() > 4096) throw Error(ErrorCode::InvalidArgument, "expression too long");
  return detail::ExprParser(expr).parse();
}

}  // namespace mcpradar::sim
