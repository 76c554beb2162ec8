#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "../expr.hpp"
#include "../points.hpp"

namespace diffsr {

namespace detail {

// Partial derivatives of op at (a, b) given its value r.
inline std::pair<double, double> op_partials(Op op, double a, double b, double r) {
  switch (op) {
    case Op::add: return {1.0, 1.0};
    case Op::sub: return {1.0, -1.0};
    case Op::mul: return {b, a};
    case Op::div: return {1.0 / b, -a / (b * b)};
    case Op::pow: return {a == 0.0 && b < 1.0 ? kInvalid : b * std::pow(a, b - 1.0), a > 0.0 ? r * std::log(a) : 0.0};
    case Op::exp: return {r, 0};
    case Op::sin: return {std::cos(a), 0};
    case Op::cos: return {-std::sin(a), 0};
    case Op::tan: return {1.0 / (std::cos(a) * std::cos(a)), 0};
    case Op::asin: return {1.0 / std::sqrt(1.0 - a * a), 0};
    case Op::acos: return {-1.0 / std::sqrt(1.0 - a * a), 0};
    case Op::atan: return {1.0 / (1.0 + a * a), 0};
    case Op::sqrt: return {0.5 / r, 0};
    case Op::pow2: return {2.0 * a, 0};
    case Op::pow3: return {3.0 * a * a, 0};
    case Op::ln: return {1.0 / a, 0};
    case Op::abs: return {a > 0 ? 1.0 : (a < 0 ? -1.0 : 0.0), 0};
    case Op::sinh: return {std::cosh(a), 0};
    case Op::cosh: return {std::sinh(a), 0};
  }
  return {kInvalid, kInvalid};
}

struct GradNode {
  Expr expr;
  int parent;
  int slot;  // constant slot index or -1
  double value;
  double adjoint;
};

}  // namespace detail

/// Flattened preorder tape of an expression, reusable across points.
class ExprGradient {
 public:
  explicit ExprGradient(const Expr& e) {
    int slot = 0;
    auto walk = [&](auto&& self, const Expr& n, int parent) -> void {
      int id = static_cast<int>(nodes_.size());
      nodes_.push_back({n, parent, (n.is_constant() || n.is_placeholder()) ? slot++ : -1, 0, 0});
      for (const auto& c : n.children()) self(self, c, id);
    };
    walk(walk, e, -1);
    slots_ = static_cast<std::size_t>(slot);
  }

  std::size_t slots() const noexcept { return slots_; }

  /// f(point; constants) and df/dconstants (written into grad, which must have slots() entries).
  /// Returns NaN when the value or any partial is non-finite.
  double value_and_gradient(std::span<const double> point, std::span<const double> constants, std::span<double> grad) {
    if (constants.size() != slots_ || grad.size() != slots_) throw std::invalid_argument("ExprGradient: slot count mismatch");
    // values in reverse preorder: children always follow their parent
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& n = nodes_[i];
      const Expr& e = n.expr;
      if (n.slot >= 0) {
        n.value = constants[static_cast<std::size_t>(n.slot)];
      } else if (e.is_variable()) {
        auto idx = static_cast<std::size_t>(e.var() - 1);
        n.value = idx < point.size() ? point[idx] : kInvalid;
      } else {
        n.value = kInvalid;
      }
    }
    // evaluate op nodes bottom-up using child positions
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.expr.is_op()) continue;
      auto kids = children(i);
      const bool binary = arity(n.expr.op()) == 2;
      double a = nodes_[kids[0]].value;
      double b = binary ? nodes_[kids[1]].value : 0.0;
      n.value = (is_valid(a) && is_valid(b)) ? apply_op(n.expr.op(), a, b) : kInvalid;
    }
    const double f = nodes_[0].value;
    std::fill(grad.begin(), grad.end(), 0.0);
    if (!is_valid(f)) return kInvalid;
    for (auto& n : nodes_) n.adjoint = 0;
    nodes_[0].adjoint = 1.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      if (n.slot >= 0) {
        grad[static_cast<std::size_t>(n.slot)] += n.adjoint;
        continue;
      }
      if (!n.expr.is_op() || n.adjoint == 0) continue;
      auto kids = children(i);
      const bool binary = arity(n.expr.op()) == 2;
      double a = nodes_[kids[0]].value;
      double b = binary ? nodes_[kids[1]].value : 0.0;
      auto [da, db] = detail::op_partials(n.expr.op(), a, b, n.value);
      nodes_[kids[0]].adjoint += n.adjoint * da;
      if (binary) nodes_[kids[1]].adjoint += n.adjoint * db;
    }
    for (double g : grad)
      if (!std::isfinite(g)) return kInvalid;
    return f;
  }

 private:
  // preorder: the first child follows its parent, the second follows the first's subtree
  std::array<std::size_t, 2> children(std::size_t i) const {
    return {i + 1, i + 1 + nodes_[i + 1].expr.size()};
  }

  std::vector<detail::GradNode> nodes_;
  std::size_t slots_ = 0;
};

/// Mean squared error over `pts` and its gradient with respect to the constants.
/// Returns +inf (and a zero gradient) when any point evaluates invalid.
inline double mse_and_gradient(ExprGradient& eg, const PointSet& pts, std::span<const double> constants,
                               std::span<double> grad) {
  std::vector<double> g(eg.slots());
  std::fill(grad.begin(), grad.end(), 0.0);
  double sse = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double f = eg.value_and_gradient(pts.row(i), constants, g);
    if (!is_valid(f)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      return std::numeric_limits<double>::infinity();
    }
    double r = f - pts.targets[i];
    sse += r * r;
    for (std::size_t k = 0; k < g.size(); ++k) grad[k] += 2.0 * r * g[k];
  }
  const auto n = static_cast<double>(pts.size());
  for (auto& v : grad) v /= n;
  double mse = sse / n;
  return std::isfinite(mse) ? mse : std::numeric_limits<double>::infinity();
}

}  // namespace diffsr
