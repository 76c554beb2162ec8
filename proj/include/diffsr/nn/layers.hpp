#pragma once

#include <deque>
#include <random>
#include <string>
#include <vector>

#include "../rng.hpp"
#include "tape.hpp"

namespace diffsr::nn {

/// Owns parameters with stable addresses; modules hold raw pointers into it.
template <typename S>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter<S>& normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    auto& p = add(name, rows, cols);
    std::normal_distribution<double> n(0.0, stddev);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(n(rng));
    return p;
  }
  Parameter<S>& constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, double v) {
    auto& p = add(name, rows, cols);
    p.value.setConstant(static_cast<S>(v));
    return p;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  Parameter<S>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("ParameterSet: duplicate name " + name);
    params_.push_back(Parameter<S>{name, Matrix<S>(rows, cols), Matrix<S>::Zero(rows, cols)});
    return params_.back();
  }
  std::deque<Parameter<S>> params_;
};

inline constexpr double kInitStd = 0.02;

template <typename S>
struct Linear {
  Parameter<S>* w = nullptr;  // in x out
  Parameter<S>* b = nullptr;  // 1 x out

  Linear() = default;
  Linear(ParameterSet<S>& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng)
      : w(&ps.normal(name + ".w", in, out, kInitStd, rng)), b(&ps.constant(name + ".b", 1, out, 0.0)) {}

  Var operator()(Tape<S>& t, Var x) const { return add_row(t, matmul(t, x, t.param(*w)), t.param(*b)); }
};

template <typename S>
struct LayerNorm {
  Parameter<S>* gamma = nullptr;
  Parameter<S>* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterSet<S>& ps, const std::string& name, Eigen::Index dim)
      : gamma(&ps.constant(name + ".gamma", 1, dim, 1.0)), beta(&ps.constant(name + ".beta", 1, dim, 0.0)) {}

  Var operator()(Tape<S>& t, Var x) const { return layer_norm(t, x, t.param(*gamma), t.param(*beta)); }
};

/// Linear -> GELU -> Linear
template <typename S>
struct FeedForward {
  Linear<S> up, down;

  FeedForward() = default;
  FeedForward(ParameterSet<S>& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden, Eigen::Index out,
              Rng& rng)
      : up(ps, name + ".up", in, hidden, rng), down(ps, name + ".down", hidden, out, rng) {}

  Var operator()(Tape<S>& t, Var x) const { return down(t, gelu(t, up(t, x))); }
};

/// Separate query/key/value/output projections around the fused attention op.
template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet<S>& ps, const std::string& name, Eigen::Index dim, int heads_, Rng& rng)
      : wq(ps, name + ".q", dim, dim, rng),
        wk(ps, name + ".k", dim, dim, rng),
        wv(ps, name + ".v", dim, dim, rng),
        wo(ps, name + ".o", dim, dim, rng),
        heads(heads_) {}

  Var operator()(Tape<S>& t, Var queries, Var context, const std::vector<Segment>& segments,
                 std::vector<Matrix<S>>* capture = nullptr) const {
    Var q = wq(t, queries);
    Var k = wk(t, context);
    Var v = wv(t, context);
    return wo(t, attention(t, q, k, v, heads, segments, capture));
  }
};

}  // namespace diffsr::nn
