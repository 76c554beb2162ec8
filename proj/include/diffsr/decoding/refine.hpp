#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "../expr.hpp"
#include "../metrics.hpp"
#include "../points.hpp"
#include "../rng.hpp"
#include "bfgs.hpp"
#include "expr_grad.hpp"

namespace diffsr {

/// R^2 that never throws: constant targets score 1 on an exact fit and -inf otherwise.
inline double score_r2(const Expr& e, const PointSet& pts) {
  auto pred = evaluate(e, pts);
  try {
    return r2(pts.targets, pred);
  } catch (const std::domain_error&) {
    return rmse(pts.targets, pred) == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  }
}

struct RefineOptions {
  BfgsOptions bfgs;
  int restarts = 3;
  double restart_low = -5.0;
  double restart_high = 5.0;
  std::uint64_t seed = 0;
  double placeholder_init = 1.0;
};

struct RefineResult {
  Expr expr = Expr::variable(1);
  std::vector<double> constants;
  double train_r2 = -std::numeric_limits<double>::infinity();
  double mse = std::numeric_limits<double>::infinity();
  bool failed = false;
};

/// Least-squares refinement of every constant slot (placeholders start at placeholder_init).
/// BFGS runs from the current constants and from `restarts` uniform draws; the best wins,
/// and the starting point itself is kept if nothing improves on it.
inline RefineResult refine_constants(const Expr& expr, const PointSet& pts, const RefineOptions& o = {}) {
  RefineResult out{fill_placeholders(expr, o.placeholder_init), {}, -std::numeric_limits<double>::infinity(),
                   std::numeric_limits<double>::infinity(), false};
  out.constants = constant_values(expr, o.placeholder_init);
  if (pts.size() == 0) throw std::invalid_argument("refine_constants: no points");
  if (out.constants.empty()) {
    out.train_r2 = score_r2(out.expr, pts);
    auto pred = evaluate(out.expr, pts);
    out.mse = std::pow(rmse(pts.targets, pred), 2);
    out.failed = !std::isfinite(out.mse);
    return out;
  }
  ExprGradient eg(expr);
  Objective f = [&](const Eigen::VectorXd& c, Eigen::VectorXd& g) {
    g.resize(c.size());
    return mse_and_gradient(eg, pts, std::span<const double>(c.data(), static_cast<std::size_t>(c.size())),
                            std::span<double>(g.data(), static_cast<std::size_t>(g.size())));
  };
  const auto n = static_cast<Eigen::Index>(out.constants.size());
  Eigen::VectorXd init = Eigen::Map<const Eigen::VectorXd>(out.constants.data(), n);
  Eigen::VectorXd scratch(n);
  Eigen::VectorXd best = init;
  double best_f = f(init, scratch);
  Rng rng = make_rng(o.seed, {0xbf95});
  for (int k = 0; k <= o.restarts; ++k) {
    Eigen::VectorXd start = init;
    if (k > 0)
      for (Eigen::Index i = 0; i < n; ++i) start(i) = uniform(rng, o.restart_low, o.restart_high);
    auto res = bfgs_minimize(f, start, o.bfgs);
    if (std::isfinite(res.value) && res.value < best_f) {
      best_f = res.value;
      best = res.x;
    }
  }
  if (!std::isfinite(best_f)) {
    out.failed = true;
    out.train_r2 = score_r2(out.expr, pts);
    return out;
  }
  out.constants.assign(best.data(), best.data() + n);
  out.expr = with_constants(expr, out.constants);
  out.mse = best_f;
  out.train_r2 = score_r2(out.expr, pts);
  return out;
}

}  // namespace diffsr
