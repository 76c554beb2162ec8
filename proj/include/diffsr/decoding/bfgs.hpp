#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace diffsr {

struct BfgsOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-8;
  double armijo = 1e-4;
  int max_backtracks = 60;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

/// f(x, grad) returns the objective and writes its gradient; +inf marks infeasible points.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Quasi-Newton minimization with an inverse-Hessian update and Armijo backtracking.
inline BfgsResult bfgs_minimize(const Objective& f, Eigen::VectorXd x, const BfgsOptions& o = {}) {
  const auto n = x.size();
  BfgsResult r;
  Eigen::VectorXd g(n), g_new(n);
  double fx = f(x, g);
  r.x = x;
  r.value = fx;
  if (!std::isfinite(fx) || n == 0) return r;
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  for (int it = 0; it < o.max_iterations; ++it) {
    r.iterations = it;
    if (g.norm() < o.gradient_tolerance) {
      r.converged = true;
      break;
    }
    Eigen::VectorXd p = -H * g;
    double slope = g.dot(p);
    if (slope >= 0) {  // not a descent direction: fall back to steepest descent
      H.setIdentity();
      p = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    Eigen::VectorXd x_new;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int k = 0; k < o.max_backtracks; ++k, step *= 0.5) {
      x_new = x + step * p;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= fx + o.armijo * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double prev = fx;
    x = x_new;
    fx = f_new;
    g = g_new;
    r.x = x;
    r.value = fx;
    r.iterations = it + 1;
    if (prev - fx <= 1e-16 * std::max(1.0, std::fabs(prev)) && s.norm() <= 1e-14 * std::max(1.0, x.norm())) break;
  }
  if (g.norm() < o.gradient_tolerance) r.converged = true;
  return r;
}

}  // namespace diffsr
