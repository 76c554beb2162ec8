#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "layers.hpp"

namespace diffsr::nn {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int warmup = 0;        // linear warmup steps
  double clip_norm = 0;  // global gradient-norm clip, 0 = off
};

template <typename S>
class AdamW {
 public:
  AdamW(ParameterSet<S>& params, AdamWOptions o) : params_(params), o_(o) {
    for (auto& p : params_) {
      m_.push_back(Matrix<S>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix<S>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  int steps() const noexcept { return step_; }

  double learning_rate() const {
    if (o_.warmup <= 0) return o_.lr;
    return o_.lr * std::min(1.0, static_cast<double>(step_ + 1) / o_.warmup);
  }

  /// Applies one update from the accumulated gradients; returns the pre-clip gradient norm.
  double step() {
    double sq = 0;
    for (auto& p : params_) sq += static_cast<double>(p.grad.squaredNorm());
    const double norm = std::sqrt(sq);
    const double clip = (o_.clip_norm > 0 && norm > o_.clip_norm) ? o_.clip_norm / norm : 1.0;
    const double lr = learning_rate();
    ++step_;
    const double bc1 = 1 - std::pow(o_.beta1, step_);
    const double bc2 = 1 - std::pow(o_.beta2, step_);
    std::size_t i = 0;
    for (auto& p : params_) {
      auto& m = m_[i];
      auto& v = v_[i];
      ++i;
      Matrix<S> g = p.grad * static_cast<S>(clip);
      m = m * static_cast<S>(o_.beta1) + g * static_cast<S>(1 - o_.beta1);
      v = v * static_cast<S>(o_.beta2) + g.cwiseProduct(g) * static_cast<S>(1 - o_.beta2);
      if (o_.weight_decay > 0) p.value *= static_cast<S>(1 - lr * o_.weight_decay);
      p.value.array() -= static_cast<S>(lr) * (m.array() / static_cast<S>(bc1)) /
                         ((v.array() / static_cast<S>(bc2)).sqrt() + static_cast<S>(o_.eps));
    }
    return norm;
  }

 private:
  ParameterSet<S>& params_;
  AdamWOptions o_;
  std::vector<Matrix<S>> m_, v_;
  int step_ = 0;
};

/// Exponential moving average of parameter values. The effective decay warms up as
/// min(decay, (1+n)/(10+n)) so early averages are not dominated by the initialization.
template <typename S>
class Ema {
 public:
  Ema(const ParameterSet<S>& params, double decay) : decay_(decay) {
    for (const auto& p : params) shadow_.push_back(p.value);
  }

  void update(const ParameterSet<S>& params) {
    const double d = std::min(decay_, (1.0 + updates_) / (10.0 + updates_));
    ++updates_;
    std::size_t i = 0;
    for (const auto& p : params) {
      shadow_[i] = shadow_[i] * static_cast<S>(d) + p.value * static_cast<S>(1 - d);
      ++i;
    }
  }

  const std::vector<Matrix<S>>& values() const noexcept { return shadow_; }
  std::vector<Matrix<S>>& values() noexcept { return shadow_; }
  double decay() const noexcept { return decay_; }

  void copy_to(ParameterSet<S>& params) const {
    std::size_t i = 0;
    for (auto& p : params) p.value = shadow_[i++];
  }

 private:
  double decay_;
  long updates_ = 0;
  std::vector<Matrix<S>> shadow_;
};

}  // namespace diffsr::nn
