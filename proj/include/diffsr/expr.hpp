#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "points.hpp"
#include "rng.hpp"

namespace diffsr {

enum class Op : std::uint8_t {
  add, sub, mul, div, pow,
  exp, sin, cos, tan, asin, acos, atan, sqrt, pow2, pow3, ln, abs,
  sinh, cosh,
};

struct OperatorInfo {
  Op op;
  std::string_view name;
  int arity;
  double sample_weight;  // unnormalized; 0 for evaluation-only operators
  bool in_vocabulary;    // part of the generative token set
};

// Vocabulary operators carry the generator weights; the rest exist so benchmark
// ground truths (x1^x2, log, sinh, ...) can be parsed and evaluated.
inline constexpr std::array<OperatorInfo, 19> kOperators{{
    {Op::add, "add", 2, 10.0, true},
    {Op::sub, "sub", 2, 5.0, true},
    {Op::mul, "mul", 2, 10.0, true},
    {Op::div, "div", 2, 5.0, true},
    {Op::pow, "pow", 2, 0.0, false},
    {Op::exp, "exp", 1, 4.0, true},
    {Op::sin, "sin", 1, 4.0, true},
    {Op::cos, "cos", 1, 4.0, true},
    {Op::tan, "tan", 1, 4.0, true},
    {Op::asin, "asin", 1, 2.0, true},
    {Op::acos, "acos", 1, 0.0, false},
    {Op::atan, "atan", 1, 0.0, false},
    {Op::sqrt, "sqrt", 1, 4.0, true},
    {Op::pow2, "pow2", 1, 5.0, true},
    {Op::pow3, "pow3", 1, 2.0, true},
    {Op::ln, "ln", 1, 1.0, true},
    {Op::abs, "abs", 1, 0.0, false},
    {Op::sinh, "sinh", 1, 0.0, false},
    {Op::cosh, "cosh", 1, 0.0, false},
}};

// Order in which the generative operators appear in vocabularies.
inline constexpr std::array<Op, 13> kVocabularyOperators{
    Op::mul, Op::div, Op::add, Op::sub, Op::exp, Op::sin, Op::cos,
    Op::tan, Op::asin, Op::sqrt, Op::pow2, Op::pow3, Op::ln};

constexpr const OperatorInfo& op_info(Op op) { return kOperators[static_cast<std::size_t>(op)]; }
constexpr int arity(Op op) { return op_info(op).arity; }
constexpr std::string_view op_name(Op op) { return op_info(op).name; }

inline std::optional<Op> op_from_name(std::string_view name) {
  if (name == "log") return Op::ln;
  for (const auto& info : kOperators)
    if (info.name == name) return info.op;
  return std::nullopt;
}

inline constexpr double kInvalid = std::numeric_limits<double>::quiet_NaN();
inline bool is_valid(double v) noexcept { return std::isfinite(v); }

inline double apply_op(Op op, double a, double b = 0.0) noexcept {
  double r;
  switch (op) {
    case Op::add: r = a + b; break;
    case Op::sub: r = a - b; break;
    case Op::mul: r = a * b; break;
    case Op::div:
      if (b == 0.0) return kInvalid;
      r = a / b;
      break;
    case Op::pow: r = std::pow(a, b); break;
    case Op::exp: r = std::exp(a); break;
    case Op::sin: r = std::sin(a); break;
    case Op::cos: r = std::cos(a); break;
    case Op::tan: r = std::tan(a); break;
    case Op::asin:
      if (a < -1.0 || a > 1.0) return kInvalid;
      r = std::asin(a);
      break;
    case Op::acos:
      if (a < -1.0 || a > 1.0) return kInvalid;
      r = std::acos(a);
      break;
    case Op::atan: r = std::atan(a); break;
    case Op::sqrt:
      if (a < 0.0) return kInvalid;
      r = std::sqrt(a);
      break;
    case Op::pow2: r = a * a; break;
    case Op::pow3: r = a * a * a; break;
    case Op::ln:
      if (a <= 0.0) return kInvalid;
      r = std::log(a);
      break;
    case Op::abs: r = std::fabs(a); break;
    case Op::sinh: r = std::sinh(a); break;
    case Op::cosh: r = std::cosh(a); break;
    default: return kInvalid;
  }
  return std::isfinite(r) ? r : kInvalid;
}

enum class NodeKind : std::uint8_t { op, variable, constant, placeholder };

/// Immutable expression tree. Copies share structure; there is no way to mutate a node
/// after construction, so handles never observe each other's edits.
class Expr {
 public:
  static Expr variable(int index) {
    if (index < 1) throw std::invalid_argument("variable index must be >= 1");
    Node n;
    n.kind = NodeKind::variable;
    n.var = index;
    n.max_var = index;
    return Expr{std::move(n)};
  }
  static Expr constant(double value) {
    Node n;
    n.kind = NodeKind::constant;
    n.value = value;
    n.slots = 1;
    return Expr{std::move(n)};
  }
  static Expr placeholder() {
    Node n;
    n.kind = NodeKind::placeholder;
    n.slots = 1;
    n.has_placeholder = true;
    return Expr{std::move(n)};
  }
  static Expr make(Op op, std::vector<Expr> children) {
    if (static_cast<int>(children.size()) != arity(op))
      throw std::invalid_argument("operator '" + std::string(op_name(op)) + "' arity mismatch");
    Node n;
    n.kind = NodeKind::op;
    n.op = op;
    n.size = 1;
    for (const auto& c : children) {
      n.size += c.size();
      n.height = std::max(n.height, c.height() + 1);
      n.max_var = std::max(n.max_var, c.max_variable());
      n.slots += c.constant_slots();
      n.has_placeholder = n.has_placeholder || c.has_placeholder();
    }
    n.children = std::move(children);
    return Expr{std::move(n)};
  }
  static Expr unary(Op op, Expr a) { return make(op, {std::move(a)}); }
  static Expr binary(Op op, Expr a, Expr b) { return make(op, {std::move(a), std::move(b)}); }

  NodeKind kind() const noexcept { return node_->kind; }
  bool is_op() const noexcept { return node_->kind == NodeKind::op; }
  bool is_leaf() const noexcept { return node_->kind != NodeKind::op; }
  bool is_constant() const noexcept { return node_->kind == NodeKind::constant; }
  bool is_placeholder() const noexcept { return node_->kind == NodeKind::placeholder; }
  bool is_variable() const noexcept { return node_->kind == NodeKind::variable; }
  Op op() const noexcept { return node_->op; }
  int var() const noexcept { return node_->var; }
  double value() const noexcept { return node_->value; }
  std::span<const Expr> children() const noexcept { return node_->children; }
  const Expr& child(std::size_t i) const { return node_->children.at(i); }

  /// Total node count.
  std::size_t size() const noexcept { return node_->size; }
  /// Leaves have height 0.
  int height() const noexcept { return node_->height; }
  /// Largest variable index used, 0 when variable-free.
  int max_variable() const noexcept { return node_->max_var; }
  /// Number of numeric-constant and placeholder leaves.
  std::size_t constant_slots() const noexcept { return node_->slots; }
  bool has_placeholder() const noexcept { return node_->has_placeholder; }
  bool has_variable() const noexcept { return node_->max_var > 0; }

  bool same_node(const Expr& other) const noexcept { return node_ == other.node_; }

  friend bool operator==(const Expr& a, const Expr& b) {
    if (a.node_ == b.node_) return true;
    const Node& x = *a.node_;
    const Node& y = *b.node_;
    if (x.kind != y.kind || x.size != y.size) return false;
    switch (x.kind) {
      case NodeKind::variable: return x.var == y.var;
      case NodeKind::constant: return x.value == y.value;
      case NodeKind::placeholder: return true;
      case NodeKind::op:
        if (x.op != y.op) return false;
        for (std::size_t i = 0; i < x.children.size(); ++i)
          if (!(x.children[i] == y.children[i])) return false;
        return true;
    }
    return false;
  }

 private:
  struct Node {
    NodeKind kind = NodeKind::constant;
    Op op = Op::add;
    int var = 0;
    double value = 0.0;
    std::vector<Expr> children;
    std::size_t size = 1;
    int height = 0;
    int max_var = 0;
    std::size_t slots = 0;
    bool has_placeholder = false;
  };

  explicit Expr(Node&& n) : node_(std::make_shared<const Node>(std::move(n))) {}

  std::shared_ptr<const Node> node_;
};

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

inline double eval_point(const Expr& e, std::span<const double> x, std::span<const double> constants,
                         std::size_t& slot) {
  switch (e.kind()) {
    case NodeKind::variable: {
      auto i = static_cast<std::size_t>(e.var() - 1);
      return i < x.size() ? x[i] : kInvalid;
    }
    case NodeKind::constant: {
      std::size_t s = slot++;
      return constants.empty() ? e.value() : constants[s];
    }
    case NodeKind::placeholder: {
      std::size_t s = slot++;
      return constants.empty() ? kInvalid : constants[s];
    }
    case NodeKind::op: break;
  }
  auto ch = e.children();
  double a = eval_point(ch[0], x, constants, slot);
  if (!is_valid(a)) return kInvalid;
  if (ch.size() == 1) return apply_op(e.op(), a);
  double b = eval_point(ch[1], x, constants, slot);
  if (!is_valid(b)) return kInvalid;
  return apply_op(e.op(), a, b);
}

inline std::vector<double> eval_batch(const Expr& e, const PointSet& pts, std::span<const double> constants,
                                      std::size_t& slot) {
  const std::size_t n = pts.size();
  switch (e.kind()) {
    case NodeKind::variable: {
      std::vector<double> out(n, kInvalid);
      auto col = static_cast<std::size_t>(e.var() - 1);
      if (col < pts.dims)
        for (std::size_t i = 0; i < n; ++i) out[i] = pts.inputs[i * pts.dims + col];
      return out;
    }
    case NodeKind::constant: {
      std::size_t s = slot++;
      return std::vector<double>(n, constants.empty() ? e.value() : constants[s]);
    }
    case NodeKind::placeholder: {
      std::size_t s = slot++;
      return std::vector<double>(n, constants.empty() ? kInvalid : constants[s]);
    }
    case NodeKind::op: break;
  }
  auto ch = e.children();
  std::vector<double> a = eval_batch(ch[0], pts, constants, slot);
  if (ch.size() == 1) {
    for (auto& v : a) v = is_valid(v) ? apply_op(e.op(), v) : kInvalid;
    return a;
  }
  std::vector<double> b = eval_batch(ch[1], pts, constants, slot);
  for (std::size_t i = 0; i < n; ++i)
    a[i] = (is_valid(a[i]) && is_valid(b[i])) ? apply_op(e.op(), a[i], b[i]) : kInvalid;
  return a;
}

}  // namespace detail

/// Evaluates at one point. Returns kInvalid (NaN) when any subexpression leaves its domain
/// or overflows. A non-empty `constants` overrides every constant/placeholder slot in preorder.
inline double evaluate(const Expr& e, std::span<const double> point, std::span<const double> constants = {}) {
  if (!constants.empty() && constants.size() != e.constant_slots())
    throw std::invalid_argument("evaluate: constant override size mismatch");
  std::size_t slot = 0;
  return detail::eval_point(e, point, constants, slot);
}

/// Column-wise evaluation over all rows of a point set.
inline std::vector<double> evaluate(const Expr& e, const PointSet& pts, std::span<const double> constants = {}) {
  if (!constants.empty() && constants.size() != e.constant_slots())
    throw std::invalid_argument("evaluate: constant override size mismatch");
  std::size_t slot = 0;
  return detail::eval_batch(e, pts, constants, slot);
}

inline std::size_t complexity(const Expr& e) noexcept { return e.size(); }

// ---------------------------------------------------------------------------
// Structural editing

/// Subtree rooted at a preorder index.
inline const Expr& subtree_at(const Expr& e, std::size_t pos) {
  if (pos >= e.size()) throw std::out_of_range("subtree_at: position out of range");
  const Expr* cur = &e;
  while (pos != 0) {
    --pos;
    for (const auto& c : cur->children()) {
      if (pos < c.size()) {
        cur = &c;
        break;
      }
      pos -= c.size();
    }
  }
  return *cur;
}

/// Number of edges between the root and the node at a preorder index.
inline int depth_at(const Expr& e, std::size_t pos) {
  if (pos >= e.size()) throw std::out_of_range("depth_at: position out of range");
  const Expr* cur = &e;
  int depth = 0;
  while (pos != 0) {
    --pos;
    ++depth;
    for (const auto& c : cur->children()) {
      if (pos < c.size()) {
        cur = &c;
        break;
      }
      pos -= c.size();
    }
  }
  return depth;
}

inline Expr replace_subtree(const Expr& e, std::size_t pos, const Expr& replacement) {
  if (pos >= e.size()) throw std::out_of_range("replace_subtree: position out of range");
  if (pos == 0) return replacement;
  std::size_t offset = pos - 1;
  std::vector<Expr> kids(e.children().begin(), e.children().end());
  for (auto& c : kids) {
    if (offset < c.size()) {
      c = replace_subtree(c, offset, replacement);
      return Expr::make(e.op(), std::move(kids));
    }
    offset -= c.size();
  }
  throw std::logic_error("replace_subtree: inconsistent sizes");
}

inline std::size_t random_node(const Expr& e, Rng& rng) { return uniform_int<std::size_t>(rng, 0, e.size() - 1); }

/// Constant and placeholder values in preorder; placeholders report `placeholder_value`.
inline std::vector<double> constant_values(const Expr& e, double placeholder_value = 1.0) {
  std::vector<double> out;
  out.reserve(e.constant_slots());
  auto walk = [&](auto&& self, const Expr& n) -> void {
    if (n.is_constant()) out.push_back(n.value());
    else if (n.is_placeholder()) out.push_back(placeholder_value);
    for (const auto& c : n.children()) self(self, c);
  };
  walk(walk, e);
  return out;
}

/// Rewrites every constant/placeholder slot (preorder) with the given values.
inline Expr with_constants(const Expr& e, std::span<const double> values) {
  if (values.size() != e.constant_slots()) throw std::invalid_argument("with_constants: size mismatch");
  std::size_t slot = 0;
  auto rebuild = [&](auto&& self, const Expr& n) -> Expr {
    if (n.is_constant() || n.is_placeholder()) return Expr::constant(values[slot++]);
    if (n.is_leaf() || n.constant_slots() == 0) return n;
    std::vector<Expr> kids;
    kids.reserve(n.children().size());
    for (const auto& c : n.children()) kids.push_back(self(self, c));
    return Expr::make(n.op(), std::move(kids));
  };
  return rebuild(rebuild, e);
}

/// Replaces every placeholder with a numeric constant.
inline Expr fill_placeholders(const Expr& e, double value = 1.0) {
  if (!e.has_placeholder()) return e;
  auto values = constant_values(e, value);
  return with_constants(e, values);
}

// ---------------------------------------------------------------------------
// Simplification: constant folding, identity elements, self-annihilation and
// double negation, applied bottom-up to a fixed point (at most three passes).

namespace detail {

inline bool is_const_value(const Expr& e, double v) { return e.is_constant() && e.value() == v; }

inline std::optional<Expr> negated_operand(const Expr& e) {
  if (!e.is_op() || e.op() != Op::mul) return std::nullopt;
  if (is_const_value(e.child(0), -1.0)) return e.child(1);
  if (is_const_value(e.child(1), -1.0)) return e.child(0);
  return std::nullopt;
}

inline Expr simplify_node(const Expr& e, bool& changed) {
  if (e.is_leaf()) return e;
  std::vector<Expr> kids;
  kids.reserve(e.children().size());
  bool kid_changed = false;
  for (const auto& c : e.children()) {
    kids.push_back(simplify_node(c, changed));
    kid_changed = kid_changed || !kids.back().same_node(c);
  }
  auto done = [&](Expr r) {
    changed = true;
    return r;
  };

  bool all_const = std::all_of(kids.begin(), kids.end(), [](const Expr& k) { return k.is_constant(); });
  if (all_const) {
    double v = kids.size() == 1 ? apply_op(e.op(), kids[0].value()) : apply_op(e.op(), kids[0].value(), kids[1].value());
    if (is_valid(v)) return done(Expr::constant(v));
  }
  if (kids.size() == 2) {
    const Expr& a = kids[0];
    const Expr& b = kids[1];
    // self-annihilation is only sound when both sides denote the same value
    const bool same = !a.has_placeholder() && a == b;
    switch (e.op()) {
      case Op::add:
        if (is_const_value(a, 0.0)) return done(b);
        if (is_const_value(b, 0.0)) return done(a);
        break;
      case Op::sub:
        if (is_const_value(b, 0.0)) return done(a);
        if (same) return done(Expr::constant(0.0));
        if (is_const_value(a, 0.0) && b.is_op() && b.op() == Op::sub && is_const_value(b.child(0), 0.0))
          return done(b.child(1));
        break;
      case Op::mul:
        if (is_const_value(a, 1.0)) return done(b);
        if (is_const_value(b, 1.0)) return done(a);
        if (is_const_value(a, -1.0))
          if (auto inner = negated_operand(b)) return done(*inner);
        if (is_const_value(b, -1.0))
          if (auto inner = negated_operand(a)) return done(*inner);
        break;
      case Op::div:
        if (is_const_value(b, 1.0)) return done(a);
        if (same && !is_const_value(a, 0.0)) return done(Expr::constant(1.0));
        break;
      case Op::pow:
        if (is_const_value(b, 1.0)) return done(a);
        break;
      default: break;
    }
  }
  if (!kid_changed) return e;
  return Expr::make(e.op(), std::move(kids));
}

}  // namespace detail

inline Expr simplify_basic(const Expr& e) {
  Expr cur = e;
  for (int pass = 0; pass < 3; ++pass) {
    bool changed = false;
    cur = detail::simplify_node(cur, changed);
    if (!changed) break;
  }
  return cur;
}

/// Rewrites a^n for integer n in [1, 9] with pow2, pow3 and mul, which leaves the value unchanged.
inline Expr expand_integer_powers(const Expr& e) {
  if (!e.is_op()) return e;
  std::vector<Expr> kids;
  for (const auto& c : e.children()) kids.push_back(expand_integer_powers(c));
  if (e.op() == Op::pow && kids[1].is_constant()) {
    const double n = kids[1].value();
    if (n == std::floor(n) && n >= 1 && n <= 9) {
      auto power = [](auto&& self, const Expr& a, int k) -> Expr {
        if (k == 1) return a;
        if (k == 2) return Expr::unary(Op::pow2, a);
        if (k == 3) return Expr::unary(Op::pow3, a);
        if (k % 2 == 0) return Expr::unary(Op::pow2, self(self, a, k / 2));
        if (k % 3 == 0) return Expr::unary(Op::pow3, self(self, a, k / 3));
        return Expr::binary(Op::mul, self(self, a, k - 1), a);
      };
      return power(power, kids[0], static_cast<int>(n));
    }
  }
  return Expr::make(e.op(), std::move(kids));
}

// ---------------------------------------------------------------------------
// Infix printing

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

inline int infix_precedence(const Expr& e) {
  if (e.is_constant()) return e.value() < 0 || std::signbit(e.value()) ? 0 : 5;
  if (e.is_leaf()) return 5;
  switch (e.op()) {
    case Op::add:
    case Op::sub: return 1;
    case Op::mul:
    case Op::div: return 2;
    case Op::pow:
    case Op::pow2:
    case Op::pow3: return 3;
    default: return 5;  // function call
  }
}

inline void write_infix(const Expr& e, std::string& out) {
  auto wrap = [&](const Expr& c, bool parens) {
    if (parens) out += '(';
    write_infix(c, out);
    if (parens) out += ')';
  };
  switch (e.kind()) {
    case NodeKind::variable: out += "x_" + std::to_string(e.var()); return;
    case NodeKind::placeholder: out += 'c'; return;
    case NodeKind::constant: out += format_number(e.value()); return;
    case NodeKind::op: break;
  }
  const int p = infix_precedence(e);
  switch (e.op()) {
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div: {
      static constexpr std::string_view sym[] = {" + ", " - ", " * ", " / "};
      wrap(e.child(0), infix_precedence(e.child(0)) < p);
      out += sym[static_cast<int>(e.op())];
      wrap(e.child(1), infix_precedence(e.child(1)) <= p);
      return;
    }
    case Op::pow:
      wrap(e.child(0), infix_precedence(e.child(0)) <= p);
      out += '^';
      wrap(e.child(1), infix_precedence(e.child(1)) < p);
      return;
    case Op::pow2:
    case Op::pow3:
      wrap(e.child(0), infix_precedence(e.child(0)) <= p);
      out += e.op() == Op::pow2 ? "^2" : "^3";
      return;
    default:
      out += op_name(e.op());
      out += '(';
      write_infix(e.child(0), out);
      out += ')';
      return;
  }
}

}  // namespace detail

inline std::string to_infix(const Expr& e) {
  std::string out;
  detail::write_infix(e, out);
  return out;
}

/// Space-separated prefix form using operator names, `x_k`, `c` and plain numbers.
inline std::string to_prefix_string(const Expr& e) {
  std::string out;
  auto walk = [&](auto&& self, const Expr& n) -> void {
    if (!out.empty()) out += ' ';
    switch (n.kind()) {
      case NodeKind::variable: out += "x_" + std::to_string(n.var()); break;
      case NodeKind::placeholder: out += 'c'; break;
      case NodeKind::constant: out += detail::format_number(n.value()); break;
      case NodeKind::op: out += op_name(n.op()); break;
    }
    for (const auto& c : n.children()) self(self, c);
  };
  walk(walk, e);
  return out;
}

}  // namespace diffsr
