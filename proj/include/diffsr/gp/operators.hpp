#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "../decoding/sampler.hpp"
#include "../expr.hpp"
#include "../rng.hpp"
#include "../tokenizer.hpp"

namespace diffsr::gp {

enum class NodeCategory : std::uint8_t { leaf, op };

using Mask = std::vector<std::uint8_t>;

/// Leaf mask: variables (up to `dims`), integers, the placeholder and constant sign tokens.
/// Operator mask: unary and binary operators.
inline Mask category_mask(NodeCategory need, const Vocabulary& vocab, int dims = std::numeric_limits<int>::max()) {
  Mask m(vocab.size(), 0);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const int t = static_cast<int>(i);
    switch (vocab.kind(t)) {
      case TokenKind::unary:
      case TokenKind::binary: m[i] = need == NodeCategory::op; break;
      case TokenKind::variable: m[i] = need == NodeCategory::leaf && vocab.payload(t) <= dims; break;
      case TokenKind::integer:
      case TokenKind::placeholder:
      case TokenKind::sign: m[i] = need == NodeCategory::leaf; break;
      default: break;
    }
  }
  return m;
}

inline Mask mask_union(const Mask& a, const Mask& b) {
  Mask out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] | b[i];
  return out;
}

/// Samples a token from row `row` of the probabilities restricted to `mask`. Falls back to
/// uniform over the mask when it carries no probability mass.
inline int sample_masked(const LogitMatrix& logits, Eigen::Index row, const Mask& mask, Rng& rng) {
  if (static_cast<std::size_t>(logits.cols()) != mask.size()) throw std::invalid_argument("sample_masked: width mismatch");
  double total = 0;
  std::size_t allowed = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      total += std::max(0.0, logits.probs(row, static_cast<Eigen::Index>(i)));
      ++allowed;
    }
  if (allowed == 0) throw std::invalid_argument("sample_masked: empty mask");
  if (!(total > 0) || !std::isfinite(total)) {
    auto k = uniform_int<std::size_t>(rng, 0, allowed - 1);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i] && k-- == 0) return static_cast<int>(i);
  }
  double u = uniform01(rng) * total;
  int last = -1;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    double p = std::max(0.0, logits.probs(row, static_cast<Eigen::Index>(i)));
    if (p <= 0) continue;
    last = static_cast<int>(i);
    if (u < p) return last;
    u -= p;
  }
  return last;
}

/// Value given to a placeholder leaf created during search.
inline double ephemeral_constant(Rng& rng) { return uniform(rng, -1.0, 1.0); }

/// Token-row driven subtree construction. Rows are addressed by preorder token position,
/// and positions past the canvas reuse its last row. Below the height budget both operators
/// and leaves are eligible; at zero budget only leaves are.
class GuidedGrower {
 public:
  GuidedGrower(const LogitMatrix& logits, const Vocabulary& vocab, int dims)
      : logits_(logits), vocab_(vocab),
        leaf_(category_mask(NodeCategory::leaf, vocab, dims)),
        any_(mask_union(leaf_, category_mask(NodeCategory::op, vocab))) {
    if (static_cast<std::size_t>(logits.cols()) != vocab.size())
      throw std::invalid_argument("GuidedGrower: logits width does not match the vocabulary");
    if (logits.vocab_hash != 0 && logits.vocab_hash != vocab.hash())
      throw std::invalid_argument("GuidedGrower: logits were produced for a different vocabulary");
    if (logits.rows() == 0) throw std::invalid_argument("GuidedGrower: empty logits");
    if (vocab.mode() == VocabMode::full) {
      // normalized mantissas only (or zero), so every grown constant re-encodes
      const long long lead = static_cast<long long>(std::pow(10, vocab.options().mantissa_digits - 1));
      for (std::size_t i = 0; i < vocab.size(); ++i) {
        auto k = vocab.kind(static_cast<int>(i));
        const long long m = k == TokenKind::mantissa ? vocab.payload(static_cast<int>(i)) : 0;
        mantissa_.push_back(k == TokenKind::mantissa && (m == 0 || m >= lead));
        exponent_.push_back(k == TokenKind::exponent);
      }
    }
  }

  Expr grow(std::size_t pos, int h, Rng& rng) const {
    std::size_t n = pos;
    return node(n, h, rng);
  }

 private:
  Eigen::Index row(std::size_t n) const {
    return static_cast<Eigen::Index>(std::min<std::size_t>(n, static_cast<std::size_t>(logits_.rows()) - 1));
  }

  Expr node(std::size_t& n, int h, Rng& rng) const {
    const int tok = sample_masked(logits_, row(n), h <= 0 ? leaf_ : any_, rng);
    ++n;
    switch (vocab_.kind(tok)) {
      case TokenKind::unary: {
        Expr child = node(n, h - 1, rng);
        return Expr::unary(vocab_.op(tok), std::move(child));
      }
      case TokenKind::binary: {
        Expr left = node(n, h - 1, rng);
        Expr right = node(n, h - 1, rng);
        return Expr::binary(vocab_.op(tok), std::move(left), std::move(right));
      }
      case TokenKind::variable: return Expr::variable(vocab_.payload(tok));
      case TokenKind::integer: return Expr::constant(vocab_.payload(tok));
      case TokenKind::placeholder: return Expr::constant(ephemeral_constant(rng));
      case TokenKind::sign: {
        const int m = sample_masked(logits_, row(n), mantissa_, rng);
        const int e = sample_masked(logits_, row(n + 1), exponent_, rng);
        n += 2;
        return Expr::constant(constant_from_parts(vocab_.payload(tok) == 1, vocab_.payload(m), vocab_.payload(e)));
      }
      default: throw std::logic_error("GuidedGrower: sampled a non-node token");
    }
  }

  const LogitMatrix& logits_;
  const Vocabulary& vocab_;
  Mask leaf_, any_, mantissa_, exponent_;
};

inline Expr grow_guided(const LogitMatrix& logits, const Vocabulary& vocab, std::size_t pos, int h, Rng& rng,
                        int dims = std::numeric_limits<int>::max()) {
  return GuidedGrower(logits, vocab, dims).grow(pos, h, rng);
}

struct PrimitiveSet {
  std::vector<Op> functions{Op::add, Op::sub, Op::mul, Op::div, Op::sin, Op::cos, Op::exp, Op::ln};
  int dims = 1;
  bool constants = true;  // include an ephemeral constant among the terminals

  std::size_t terminal_count() const noexcept { return static_cast<std::size_t>(dims) + (constants ? 1 : 0); }
};

inline Expr random_terminal(const PrimitiveSet& ps, Rng& rng) {
  auto k = uniform_int<std::size_t>(rng, 0, ps.terminal_count() - 1);
  if (k < static_cast<std::size_t>(ps.dims)) return Expr::variable(static_cast<int>(k) + 1);
  return Expr::constant(ephemeral_constant(rng));
}

/// Koza tree builders. `full` places operators on every level above h; grow picks among all
/// primitives below the budget, so the height is at most h.
inline Expr random_tree(const PrimitiveSet& ps, int h, bool full, Rng& rng) {
  if (h <= 0) return random_terminal(ps, rng);
  const auto nf = ps.functions.size();
  if (nf == 0) return random_terminal(ps, rng);
  if (!full) {
    auto k = uniform_int<std::size_t>(rng, 0, nf + ps.terminal_count() - 1);
    if (k >= nf) return random_terminal(ps, rng);
    Op op = ps.functions[k];
    if (arity(op) == 1) return Expr::unary(op, random_tree(ps, h - 1, full, rng));
    Expr a = random_tree(ps, h - 1, full, rng);
    return Expr::binary(op, std::move(a), random_tree(ps, h - 1, full, rng));
  }
  Op op = ps.functions[uniform_int<std::size_t>(rng, 0, nf - 1)];
  if (arity(op) == 1) return Expr::unary(op, random_tree(ps, h - 1, full, rng));
  Expr a = random_tree(ps, h - 1, full, rng);
  return Expr::binary(op, std::move(a), random_tree(ps, h - 1, full, rng));
}

struct MutationConfig {
  double delta = 0.5;  // probability that a mutation is guided
  int grow_height = 6;
  int max_height = 7;
};

/// Draws the mutation site and the height budget shared by both mutation kinds.
inline std::pair<std::size_t, int> mutation_site(const Expr& e, const MutationConfig& c, Rng& rng) {
  std::size_t pos = random_node(e, rng);
  int h = uniform_int(rng, 1, std::max(1, c.grow_height));
  h = std::min(h, c.max_height - depth_at(e, pos));
  return {pos, std::max(h, 0)};
}

/// Uniform subtree mutation: the chosen subtree is replaced by a grow tree.
inline Expr random_mutation(const Expr& e, const PrimitiveSet& ps, const MutationConfig& c, Rng& rng) {
  auto [pos, h] = mutation_site(e, c, rng);
  return replace_subtree(e, pos, random_tree(ps, h, false, rng));
}

/// Draws the guided branch with probability delta; at delta = 0 this consumes the RNG exactly
/// like random_mutation.
inline Expr guided_mutation(const Expr& e, const GuidedGrower* grower, const PrimitiveSet& ps, const MutationConfig& c,
                            Rng& rng) {
  bool guided = false;
  if (grower != nullptr && c.delta > 0) guided = c.delta >= 1 || uniform01(rng) < c.delta;
  if (!guided) return random_mutation(e, ps, c, rng);
  auto [pos, h] = mutation_site(e, c, rng);
  return replace_subtree(e, pos, grower->grow(pos, h, rng));
}

/// One-point subtree exchange. Pairs producing a child taller than max_height are redrawn;
/// after `attempts` failures the parents are returned unchanged.
inline std::pair<Expr, Expr> crossover(const Expr& a, const Expr& b, int max_height, Rng& rng, int attempts = 10) {
  for (int k = 0; k < attempts; ++k) {
    auto i = random_node(a, rng);
    auto j = random_node(b, rng);
    Expr c1 = replace_subtree(a, i, subtree_at(b, j));
    Expr c2 = replace_subtree(b, j, subtree_at(a, i));
    if (c1.height() <= max_height && c2.height() <= max_height) return {std::move(c1), std::move(c2)};
  }
  return {a, b};
}

}  // namespace diffsr::gp
