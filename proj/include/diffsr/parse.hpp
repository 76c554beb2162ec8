#pragma once

#include <cctype>
#include <charconv>
#include <stdexcept>
#include <string>
#include <string_view>

#include "expr.hpp"

namespace diffsr {

struct InfixParseError : std::runtime_error {
  std::size_t position;
  InfixParseError(const std::string& what, std::size_t pos)
      : std::runtime_error(what + " at offset " + std::to_string(pos)), position(pos) {}
};

namespace detail {

// Grammar:
//   sum     := product (('+' | '-') product)*
//   product := signed (('*' | '/') signed)*
//   signed  := '-' signed | power
//   power   := primary ('^' signed)?
//   primary := number | variable | 'c' | name '(' sum (',' sum)? ')' | '(' sum ')'
class InfixParser {
 public:
  explicit InfixParser(std::string_view text) : s_(text) {}

  Expr parse() {
    Expr e = sum();
    skip_ws();
    if (i_ != s_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw InfixParseError(msg, i_); }

  void skip_ws() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }
  bool accept(char c) {
    skip_ws();
    if (i_ < s_.size() && s_[i_] == c) {
      ++i_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  Expr sum() {
    Expr lhs = product();
    for (;;) {
      if (accept('+')) lhs = Expr::binary(Op::add, lhs, product());
      else if (accept('-')) lhs = Expr::binary(Op::sub, lhs, product());
      else return lhs;
    }
  }

  Expr product() {
    Expr lhs = signed_term();
    for (;;) {
      if (accept('*')) lhs = Expr::binary(Op::mul, lhs, signed_term());
      else if (accept('/')) lhs = Expr::binary(Op::div, lhs, signed_term());
      else return lhs;
    }
  }

  Expr signed_term() {
    if (accept('-')) {
      Expr operand = signed_term();
      if (operand.is_constant()) return Expr::constant(-operand.value());
      return Expr::binary(Op::mul, Expr::constant(-1.0), operand);
    }
    if (accept('+')) return signed_term();
    return power();
  }

  Expr power() {
    Expr base = primary();
    if (!accept('^')) return base;
    Expr exponent = signed_term();
    if (exponent.is_constant() && exponent.value() == 2.0) return Expr::unary(Op::pow2, base);
    if (exponent.is_constant() && exponent.value() == 3.0) return Expr::unary(Op::pow3, base);
    return Expr::binary(Op::pow, base, exponent);
  }

  Expr primary() {
    skip_ws();
    if (i_ >= s_.size()) fail("unexpected end of input");
    char ch = s_[i_];
    if (ch == '(') {
      ++i_;
      Expr e = sum();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(ch))) return named();
    fail(std::string("unexpected character '") + ch + "'");
  }

  Expr number() {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s_.data() + i_, s_.data() + s_.size(), v);
    if (ec != std::errc{}) fail("malformed number");
    i_ = static_cast<std::size_t>(ptr - s_.data());
    return Expr::constant(v);
  }

  Expr named() {
    std::size_t start = i_;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) ++i_;
    std::string_view name = s_.substr(start, i_ - start);
    if (name == "c") return Expr::placeholder();
    if (name == "x") return Expr::variable(1);
    if (name.size() >= 2 && name[0] == 'x') {
      std::string_view digits = name.substr(name[1] == '_' ? 2 : 1);
      int idx = 0;
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), idx);
      if (ec == std::errc{} && ptr == digits.data() + digits.size() && idx >= 1) return Expr::variable(idx);
    }
    auto op = op_from_name(name);
    if (!op) {
      i_ = start;
      fail("unknown identifier '" + std::string(name) + "'");
    }
    expect('(');
    Expr first = sum();
    if (arity(*op) == 2) {
      expect(',');
      Expr second = sum();
      expect(')');
      return Expr::binary(*op, first, second);
    }
    expect(')');
    return Expr::unary(*op, first);
  }

  std::string_view s_;
  std::size_t i_ = 0;
};

}  // namespace detail

/// Parses infix text such as `sin(x_1^2)*cos(x_1) - 1`. `x^2` and `x^3` map to the
/// unary pow2/pow3 operators; any other exponent yields the binary `pow`.
inline Expr parse_infix(std::string_view text) { return detail::InfixParser(text).parse(); }

}  // namespace diffsr
