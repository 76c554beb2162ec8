#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "expr.hpp"

namespace diffsr {

enum class VocabMode : std::uint8_t { skeleton, full };

inline std::string_view to_string(VocabMode m) { return m == VocabMode::skeleton ? "skeleton" : "full"; }
inline VocabMode vocab_mode_from_string(std::string_view s) {
  if (s == "skeleton") return VocabMode::skeleton;
  if (s == "full") return VocabMode::full;
  throw std::invalid_argument("unknown vocabulary mode '" + std::string(s) + "'");
}

enum class TokenKind : std::uint8_t { pad, unary, binary, variable, integer, placeholder, sign, mantissa, exponent };

struct VocabularyOptions {
  VocabMode mode = VocabMode::skeleton;
  int variables = 3;
  int mantissa_digits = 4;
  int integer_min = -10;
  int integer_max = 10;
  int exponent_min = -100;
  int exponent_max = 100;
};

using TokenSequence = std::vector<int>;

struct ConstantEncodingError : std::range_error {
  using std::range_error::range_error;
};

// ---------------------------------------------------------------------------
// Constants: [sign, mantissa, exponent] with value = sign * m * 10^e and a
// normalized mantissa 10^(digits-1) <= m < 10^digits (zero is [+, N0..0, E0]).

inline std::string mantissa_token(int m, int digits) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "N%0*d", digits, m);
  return buf;
}

inline std::string exponent_token(int e) { return "E" + std::to_string(e); }

inline std::array<std::string, 3> encode_constant(double value, int mantissa_digits = 4, int exponent_min = -100,
                                                  int exponent_max = 100) {
  if (!std::isfinite(value)) throw ConstantEncodingError("encode_constant: non-finite value");
  if (mantissa_digits < 1 || mantissa_digits > 8) throw std::invalid_argument("encode_constant: bad mantissa width");
  std::string sign = std::signbit(value) && value != 0.0 ? "-" : "+";
  if (value == 0.0) return {"+", mantissa_token(0, mantissa_digits), exponent_token(0)};
  // Scientific formatting rounds to the requested significant digits exactly.
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*e", mantissa_digits - 1, std::fabs(value));
  std::string_view text(buf);
  auto epos = text.find('e');
  std::string digits;
  for (char c : text.substr(0, epos))
    if (c != '.') digits += c;
  int m = 0;
  int e10 = 0;
  std::from_chars(digits.data(), digits.data() + digits.size(), m);
  auto exp_text = text.substr(epos + 1);
  if (!exp_text.empty() && exp_text.front() == '+') exp_text.remove_prefix(1);
  std::from_chars(exp_text.data(), exp_text.data() + exp_text.size(), e10);
  int e = e10 - (mantissa_digits - 1);
  if (e < exponent_min || e > exponent_max) throw ConstantEncodingError("encode_constant: exponent out of range");
  return {sign, mantissa_token(m, mantissa_digits), exponent_token(e)};
}

inline double constant_from_parts(bool negative, long long mantissa, int exponent) {
  double v = exponent >= 0 ? static_cast<double>(mantissa) * std::pow(10.0, exponent)
                           : static_cast<double>(mantissa) / std::pow(10.0, -exponent);
  return negative ? -v : v;
}

inline double decode_constant(std::span<const std::string> tokens) {
  auto bad = [] { return std::invalid_argument("decode_constant: malformed [sign, mantissa, exponent] triple"); };
  if (tokens.size() != 3) throw bad();
  const std::string& s = tokens[0];
  const std::string& m = tokens[1];
  const std::string& e = tokens[2];
  if (s != "+" && s != "-") throw bad();
  if (m.size() < 2 || m[0] != 'N' || e.size() < 2 || e[0] != 'E') throw bad();
  long long mv = 0;
  int ev = 0;
  auto r1 = std::from_chars(m.data() + 1, m.data() + m.size(), mv);
  auto r2 = std::from_chars(e.data() + 1, e.data() + e.size(), ev);
  if (r1.ec != std::errc{} || r1.ptr != m.data() + m.size() || mv < 0) throw bad();
  if (r2.ec != std::errc{} || r2.ptr != e.data() + e.size()) throw bad();
  return constant_from_parts(s == "-", mv, ev);
}

/// Rounds a value to what survives a constant encode/decode round trip.
inline double quantize_constant(double value, int mantissa_digits = 4) {
  auto t = encode_constant(value, mantissa_digits);
  return decode_constant(t);
}

// ---------------------------------------------------------------------------

class Vocabulary {
 public:
  explicit Vocabulary(VocabularyOptions opts = {}) : opts_(opts) {
    if (opts.variables < 1) throw std::invalid_argument("Vocabulary: need at least one variable");
    add("<pad>", TokenKind::pad, 0);
    for (Op op : kVocabularyOperators) {
      op_index_[static_cast<std::size_t>(op)] = static_cast<int>(tokens_.size());
      add(std::string(op_name(op)), arity(op) == 1 ? TokenKind::unary : TokenKind::binary, static_cast<int>(op));
    }
    for (int v = 1; v <= opts.variables; ++v) add("x_" + std::to_string(v), TokenKind::variable, v);
    for (int k = opts.integer_min; k <= opts.integer_max; ++k) add(std::to_string(k), TokenKind::integer, k);
    placeholder_ = static_cast<int>(tokens_.size());
    add("c", TokenKind::placeholder, 0);
    if (opts.mode == VocabMode::full) {
      plus_ = static_cast<int>(tokens_.size());
      add("+", TokenKind::sign, 0);
      add("-", TokenKind::sign, 1);
      mantissa0_ = static_cast<int>(tokens_.size());
      int count = 1;
      for (int i = 0; i < opts.mantissa_digits; ++i) count *= 10;
      for (int m = 0; m < count; ++m) add(mantissa_token(m, opts.mantissa_digits), TokenKind::mantissa, m);
      exponent0_ = static_cast<int>(tokens_.size());
      for (int e = opts.exponent_min; e <= opts.exponent_max; ++e) add(exponent_token(e), TokenKind::exponent, e);
    }
  }

  const VocabularyOptions& options() const noexcept { return opts_; }
  VocabMode mode() const noexcept { return opts_.mode; }
  int variables() const noexcept { return opts_.variables; }
  std::size_t size() const noexcept { return tokens_.size(); }

  const std::string& token(int i) const { return tokens_.at(static_cast<std::size_t>(i)); }
  TokenKind kind(int i) const { return kinds_.at(static_cast<std::size_t>(i)); }
  /// Payload: operator enum value, variable index, integer value, sign bit, mantissa or exponent.
  int payload(int i) const { return payloads_.at(static_cast<std::size_t>(i)); }
  Op op(int i) const { return static_cast<Op>(payload(i)); }

  std::optional<int> index(std::string_view tok) const {
    auto it = lookup_.find(std::string(tok));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }
  int at(std::string_view tok) const {
    auto i = index(tok);
    if (!i) throw std::invalid_argument("unknown token '" + std::string(tok) + "'");
    return *i;
  }

  int pad() const noexcept { return 0; }
  int placeholder() const noexcept { return placeholder_; }
  std::optional<int> op_token(Op op) const {
    int i = op_index_[static_cast<std::size_t>(op)];
    return i > 0 ? std::optional<int>(i) : std::nullopt;
  }
  std::optional<int> variable_token(int v) const {
    if (v < 1 || v > opts_.variables) return std::nullopt;
    return 1 + static_cast<int>(kVocabularyOperators.size()) + v - 1;
  }
  std::optional<int> integer_token(double value) const {
    if (value != std::floor(value) || value < opts_.integer_min || value > opts_.integer_max) return std::nullopt;
    return index(std::to_string(static_cast<int>(value)));
  }

  int sign_token(bool negative) const {
    if (plus_ < 0) throw std::logic_error("skeleton vocabulary has no sign tokens");
    return plus_ + (negative ? 1 : 0);
  }

  bool is_leaf_token(int i) const {
    auto k = kind(i);
    return k == TokenKind::variable || k == TokenKind::integer || k == TokenKind::placeholder || k == TokenKind::sign;
  }
  bool is_operator_token(int i) const {
    auto k = kind(i);
    return k == TokenKind::unary || k == TokenKind::binary;
  }

  /// FNV-1a over the ordered token list.
  std::uint64_t hash() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens_) {
      for (unsigned char c : t) h = (h ^ c) * 0x100000001b3ULL;
      h = (h ^ 0x0a) * 0x100000001b3ULL;
    }
    return h;
  }

  nlohmann::json to_json() const {
    return {{"schema", "diffsr-vocabulary"},
            {"version", 1},
            {"mode", to_string(opts_.mode)},
            {"variables", opts_.variables},
            {"mantissa_digits", opts_.mantissa_digits},
            {"integer_range", {opts_.integer_min, opts_.integer_max}},
            {"exponent_range", {opts_.exponent_min, opts_.exponent_max}},
            {"tokens", tokens_}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    if (j.at("schema") != "diffsr-vocabulary" || j.at("version") != 1)
      throw std::invalid_argument("unsupported vocabulary schema");
    VocabularyOptions o;
    o.mode = vocab_mode_from_string(j.at("mode").get<std::string>());
    o.variables = j.at("variables");
    o.mantissa_digits = j.at("mantissa_digits");
    o.integer_min = j.at("integer_range").at(0);
    o.integer_max = j.at("integer_range").at(1);
    o.exponent_min = j.at("exponent_range").at(0);
    o.exponent_max = j.at("exponent_range").at(1);
    Vocabulary v(o);
    if (j.at("tokens").get<std::vector<std::string>>() != v.tokens_)
      throw std::invalid_argument("vocabulary token table does not match its options");
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(std::string tok, TokenKind kind, int payload) {
    lookup_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(tok));
    kinds_.push_back(kind);
    payloads_.push_back(payload);
  }

  VocabularyOptions opts_;
  std::vector<std::string> tokens_;
  std::vector<TokenKind> kinds_;
  std::vector<int> payloads_;
  std::unordered_map<std::string, int> lookup_;
  std::array<int, kOperators.size()> op_index_{};
  int placeholder_ = 0;
  int plus_ = -1;
  int mantissa0_ = -1;
  int exponent0_ = -1;
};

struct TokenizeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Expressions <-> token sequences

inline TokenSequence encode_expression(const Expr& e, const Vocabulary& vocab, std::size_t canvas = 0) {
  TokenSequence out;
  auto walk = [&](auto&& self, const Expr& n) -> void {
    switch (n.kind()) {
      case NodeKind::op: {
        auto t = vocab.op_token(n.op());
        if (!t) throw TokenizeError("operator '" + std::string(op_name(n.op())) + "' is not in the vocabulary");
        out.push_back(*t);
        for (const auto& c : n.children()) self(self, c);
        return;
      }
      case NodeKind::variable: {
        auto t = vocab.variable_token(n.var());
        if (!t) throw TokenizeError("variable x_" + std::to_string(n.var()) + " is not in the vocabulary");
        out.push_back(*t);
        return;
      }
      case NodeKind::placeholder: out.push_back(vocab.placeholder()); return;
      case NodeKind::constant: {
        if (auto t = vocab.integer_token(n.value())) {
          out.push_back(*t);
          return;
        }
        if (vocab.mode() == VocabMode::skeleton)
          throw TokenizeError("skeleton vocabulary cannot represent constant " + detail::format_number(n.value()));
        const auto& o = vocab.options();
        auto triple = encode_constant(n.value(), o.mantissa_digits, o.exponent_min, o.exponent_max);
        for (const auto& t : triple) out.push_back(vocab.at(t));
        return;
      }
    }
  };
  walk(walk, e);
  if (canvas != 0 && out.size() > canvas) throw TokenizeError("token sequence exceeds the canvas length");
  return out;
}

inline std::span<const int> strip_padding(std::span<const int> tokens, const Vocabulary& vocab) {
  std::size_t n = tokens.size();
  while (n > 0 && tokens[n - 1] == vocab.pad()) --n;
  return tokens.first(n);
}

inline TokenSequence pad_to(TokenSequence tokens, std::size_t canvas, const Vocabulary& vocab) {
  if (tokens.size() > canvas) throw TokenizeError("token sequence exceeds the canvas length");
  tokens.resize(canvas, vocab.pad());
  return tokens;
}

enum class DecodeError : std::uint8_t {
  none,
  empty,              // nothing left after stripping padding
  missing_operand,    // ran out of tokens while an operator still needs children
  trailing_tokens,    // a complete tree is followed by more tokens
  dangling_constant,  // sign token without a following mantissa/exponent pair
  unexpected_token,   // padding or a bare mantissa/exponent where a node is expected
  out_of_range,       // index outside the vocabulary
};

inline std::string_view to_string(DecodeError e) {
  switch (e) {
    case DecodeError::none: return "none";
    case DecodeError::empty: return "empty";
    case DecodeError::missing_operand: return "missing_operand";
    case DecodeError::trailing_tokens: return "trailing_tokens";
    case DecodeError::dangling_constant: return "dangling_constant";
    case DecodeError::unexpected_token: return "unexpected_token";
    case DecodeError::out_of_range: return "out_of_range";
  }
  return "?";
}

struct Decoded {
  std::optional<Expr> expr;
  DecodeError error = DecodeError::none;
  std::size_t position = 0;  // token index where decoding failed

  explicit operator bool() const noexcept { return expr.has_value(); }
};

namespace detail {

class PrefixDecoder {
 public:
  PrefixDecoder(std::span<const int> t, const Vocabulary& v) : toks_(t), vocab_(v) {}

  Decoded run() {
    if (toks_.empty()) return fail(DecodeError::empty);
    auto e = node();
    if (!e) return {std::nullopt, error_, pos_};
    if (pos_ != toks_.size()) return fail(DecodeError::trailing_tokens);
    return {std::move(e), DecodeError::none, 0};
  }

 private:
  Decoded fail(DecodeError e) { return {std::nullopt, e, pos_}; }

  std::optional<Expr> err(DecodeError e) {
    error_ = e;
    return std::nullopt;
  }

  std::optional<Expr> node() {
    if (pos_ >= toks_.size()) return err(DecodeError::missing_operand);
    int t = toks_[pos_];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_.size()) return err(DecodeError::out_of_range);
    switch (vocab_.kind(t)) {
      case TokenKind::variable: ++pos_; return Expr::variable(vocab_.payload(t));
      case TokenKind::integer: ++pos_; return Expr::constant(vocab_.payload(t));
      case TokenKind::placeholder: ++pos_; return Expr::placeholder();
      case TokenKind::sign: {
        if (pos_ + 2 >= toks_.size()) return err(DecodeError::dangling_constant);
        int m = toks_[pos_ + 1];
        int x = toks_[pos_ + 2];
        auto in_range = [&](int i) { return i >= 0 && static_cast<std::size_t>(i) < vocab_.size(); };
        if (!in_range(m) || !in_range(x) || vocab_.kind(m) != TokenKind::mantissa ||
            vocab_.kind(x) != TokenKind::exponent)
          return err(DecodeError::dangling_constant);
        pos_ += 3;
        return Expr::constant(constant_from_parts(vocab_.payload(t) == 1, vocab_.payload(m), vocab_.payload(x)));
      }
      case TokenKind::unary:
      case TokenKind::binary: {
        ++pos_;
        Op op = vocab_.op(t);
        std::vector<Expr> kids;
        for (int k = 0; k < arity(op); ++k) {
          auto c = node();
          if (!c) return std::nullopt;
          kids.push_back(std::move(*c));
        }
        return Expr::make(op, std::move(kids));
      }
      case TokenKind::pad:
      case TokenKind::mantissa:
      case TokenKind::exponent: return err(DecodeError::unexpected_token);
    }
    return err(DecodeError::unexpected_token);
  }

  std::span<const int> toks_;
  const Vocabulary& vocab_;
  std::size_t pos_ = 0;
  DecodeError error_ = DecodeError::none;
};

}  // namespace detail

/// Parses a prefix token program after stripping trailing padding.
inline Decoded decode_expression(std::span<const int> tokens, const Vocabulary& vocab) {
  return detail::PrefixDecoder(strip_padding(tokens, vocab), vocab).run();
}

/// Arity-counter scan: need starts at 1, a leaf (or a whole constant triple) consumes one,
/// unary operators keep it, binary operators add one. Valid iff need reaches 0 exactly at the end.
inline bool is_valid_prefix(std::span<const int> tokens, const Vocabulary& vocab) {
  auto toks = strip_padding(tokens, vocab);
  if (toks.empty()) return false;
  long need = 1;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (need == 0) return false;
    int t = toks[i];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab.size()) return false;
    switch (vocab.kind(t)) {
      case TokenKind::variable:
      case TokenKind::integer:
      case TokenKind::placeholder: --need; break;
      case TokenKind::unary: break;
      case TokenKind::binary: ++need; break;
      case TokenKind::sign:
        if (i + 2 >= toks.size()) return false;
        if (toks[i + 1] < 0 || toks[i + 2] < 0 || static_cast<std::size_t>(toks[i + 1]) >= vocab.size() ||
            static_cast<std::size_t>(toks[i + 2]) >= vocab.size())
          return false;
        if (vocab.kind(toks[i + 1]) != TokenKind::mantissa || vocab.kind(toks[i + 2]) != TokenKind::exponent)
          return false;
        i += 2;
        --need;
        break;
      default: return false;
    }
  }
  return need == 0;
}

inline std::vector<std::string> to_strings(std::span<const int> tokens, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (int t : tokens) out.push_back(vocab.token(t));
  return out;
}

inline TokenSequence from_strings(std::span<const std::string> tokens, const Vocabulary& vocab) {
  TokenSequence out;
  out.reserve(tokens.size());
  for (const auto& s : tokens) out.push_back(vocab.at(s));
  return out;
}

}  // namespace diffsr
