#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "../rng.hpp"

namespace diffsr {

/// Discrete noise levels indexed 0..T. Index 0 is the clean state (alpha_bar = 1, beta = 0).
struct NoiseSchedule {
  int T = 0;
  double offset = 1e-4;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// Square-root schedule: target alpha_bar(t) = 1 - sqrt(t/T + offset), converted to betas
  /// clamped into (0, 0.999] and re-accumulated so alpha_bar is exactly the product of alphas.
  static NoiseSchedule make_sqrt(int T, double offset = 1e-4) {
    if (T < 2) throw std::invalid_argument("NoiseSchedule: T must be at least 2");
    NoiseSchedule s;
    s.T = T;
    s.offset = offset;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    auto target = [&](int t) { return t == 0 ? 1.0 : 1.0 - std::sqrt(static_cast<double>(t) / T + offset); };
    for (int t = 1; t <= T; ++t) {
      double prev = target(t - 1);
      double b = prev > 0 ? 1.0 - target(t) / prev : 0.999;
      b = std::clamp(b, 1e-12, 0.999);
      s.beta[static_cast<std::size_t>(t)] = b;
      s.alpha[static_cast<std::size_t>(t)] = 1.0 - b;
      s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - b);
    }
    return s;
  }

  double sigma0() const { return std::sqrt(beta.at(1)); }

  void check_step(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("NoiseSchedule: step out of range");
  }

  // q(x_{t-1} | x_t, x_0) = N(c0 x_0 + ct x_t, var)
  double posterior_x0_coef(int t) const {
    check_step(t);
    auto u = static_cast<std::size_t>(t);
    return std::sqrt(alpha_bar[u - 1]) * beta[u] / (1.0 - alpha_bar[u]);
  }
  double posterior_xt_coef(int t) const {
    check_step(t);
    auto u = static_cast<std::size_t>(t);
    return std::sqrt(alpha[u]) * (1.0 - alpha_bar[u - 1]) / (1.0 - alpha_bar[u]);
  }
  double posterior_variance(int t) const {
    check_step(t);
    auto u = static_cast<std::size_t>(t);
    return (1.0 - alpha_bar[u - 1]) / (1.0 - alpha_bar[u]) * beta[u];
  }
};

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> standard_normal_like(
    const Eigen::MatrixBase<Derived>& shape, Rng& rng) {
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(shape.rows(), shape.cols());
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<S>(n(rng));
  return out;
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise
template <typename A, typename B>
auto q_sample(const Eigen::MatrixBase<A>& x0, int t, const NoiseSchedule& s, const Eigen::MatrixBase<B>& noise) {
  using S = typename A::Scalar;
  if (t < 0 || t > s.T) throw std::out_of_range("q_sample: step out of range");
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out =
      x0 * static_cast<S>(std::sqrt(ab)) + noise * static_cast<S>(std::sqrt(1.0 - ab));
  return out;
}

/// One ancestral step given the model's x0 estimate. `noise` is ignored at t = 1.
template <typename A, typename B, typename C>
auto reverse_step(const Eigen::MatrixBase<A>& x0_hat, const Eigen::MatrixBase<B>& x_t, int t, const NoiseSchedule& s,
                  const Eigen::MatrixBase<C>& noise) {
  using S = typename A::Scalar;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mean =
      x0_hat * static_cast<S>(s.posterior_x0_coef(t)) + x_t * static_cast<S>(s.posterior_xt_coef(t));
  if (t > 1) mean += noise * static_cast<S>(std::sqrt(s.posterior_variance(t)));
  return mean;
}

}  // namespace diffsr
