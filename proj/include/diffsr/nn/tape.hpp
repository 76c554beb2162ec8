#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace diffsr::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct Parameter {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

struct Var {
  int id = -1;
};

/// Reverse-mode tape. Every op records its value eagerly and, when any input needs a
/// gradient, a closure that pushes the node's gradient back to its inputs.
template <typename S>
class Tape {
 public:
  using Mat = Matrix<S>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  Var constant(Mat value) { return emplace(std::move(value), false); }

  Var param(Parameter<S>& p) {
    Var v = emplace(p.value, record_);
    nodes_[static_cast<std::size_t>(v.id)].param = &p;
    return v;
  }

  const Mat& value(Var v) const { return node(v).value; }
  bool needs_grad(Var v) const { return node(v).needs_grad; }

  /// Records an op result. `fn` is kept only when some input needs a gradient.
  Var push(Mat value, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    if (record_)
      for (Var in : inputs) needs = needs || node(in).needs_grad;
    Var v = emplace(std::move(value), needs);
    if (needs) nodes_.back().backward = std::move(fn);
    return v;
  }

  Var push(Mat value, const std::vector<Var>& inputs, Backward fn) {
    bool needs = false;
    if (record_)
      for (Var in : inputs) needs = needs || node(in).needs_grad;
    Var v = emplace(std::move(value), needs);
    if (needs) nodes_.back().backward = std::move(fn);
    return v;
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = node(v);
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }

  /// Gradient buffer for in-place scatter updates; allocated zero on first use.
  Mat* grad_buffer(Var v) {
    auto& n = node(v);
    if (!n.needs_grad) return nullptr;
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  /// Back-propagates from a 1x1 node; parameter gradients are accumulated into Parameter::grad.
  void backward(Var loss, S seed = S(1)) {
    auto& l = node(loss);
    if (l.value.size() != 1) throw std::invalid_argument("Tape::backward: loss must be a scalar");
    if (!l.needs_grad) return;
    l.grad = Mat::Constant(1, 1, seed);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param != nullptr) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    Parameter<S>* param = nullptr;
    bool needs_grad = false;
  };

  Var emplace(Mat value, bool needs) {
    nodes_.push_back(Node{std::move(value), Mat(), nullptr, nullptr, needs});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }
  Node& node(Var v) {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::out_of_range("Tape: bad variable");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const { return const_cast<Tape*>(this)->node(v); }

  std::vector<Node> nodes_;
  bool record_;
};

// ---------------------------------------------------------------------------
// Ops

template <typename S>
void check_same_shape(const Tape<S>& t, Var a, Var b, const char* what) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

template <typename S>
Var matmul(Tape<S>& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) throw std::invalid_argument("matmul: shape mismatch");
  Matrix<S> out = t.value(a) * t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

/// a * b^T
template <typename S>
Var matmul_nt(Tape<S>& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).cols()) throw std::invalid_argument("matmul_nt: shape mismatch");
  Matrix<S> out = t.value(a) * t.value(b).transpose();
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b));
    if (t.needs_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
  });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  check_same_shape(t, a, b, "add");
  Matrix<S> out = t.value(a) + t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename S>
Var sub(Tape<S>& t, Var a, Var b) {
  check_same_shape(t, a, b, "sub");
  Matrix<S> out = t.value(a) - t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

template <typename S>
Var scale(Tape<S>& t, Var a, S s) {
  Matrix<S> out = t.value(a) * s;
  return t.push(std::move(out), {a}, [a, s](Tape<S>& t, const Matrix<S>& g) { t.accumulate(a, g * s); });
}

/// Multiplies row i of a by factors[i].
template <typename S>
Var scale_rows(Tape<S>& t, Var a, std::vector<S> factors) {
  if (static_cast<Eigen::Index>(factors.size()) != t.value(a).rows()) throw std::invalid_argument("scale_rows: size");
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> f(factors.data(), static_cast<Eigen::Index>(factors.size()));
  Matrix<S> out = t.value(a).array().colwise() * f.array();
  return t.push(std::move(out), {a}, [a, factors = std::move(factors)](Tape<S>& t, const Matrix<S>& g) {
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> f(factors.data(), static_cast<Eigen::Index>(factors.size()));
    t.accumulate(a, (g.array().colwise() * f.array()).matrix());
  });
}

/// Adds a 1 x cols row to every row of a.
template <typename S>
Var add_row(Tape<S>& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
    throw std::invalid_argument("add_row: shape mismatch");
  Matrix<S> out = t.value(a).rowwise() + t.value(row).row(0);
  return t.push(std::move(out), {a, row}, [a, row](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

namespace detail {
template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}
template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(M_PI));
  return cdf + x * pdf;
}
}  // namespace detail

template <typename S>
Var gelu(Tape<S>& t, Var a) {
  Matrix<S> out = t.value(a).unaryExpr([](S x) { return detail::gelu(x); });
  return t.push(std::move(out), {a}, [a](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g.cwiseProduct(t.value(a).unaryExpr([](S x) { return detail::gelu_grad(x); })));
  });
}

/// Row-wise layer normalization with affine gamma/beta (1 x cols each).
template <typename S>
Var layer_norm(Tape<S>& t, Var x, Var gamma, Var beta, S eps = S(1e-5)) {
  const auto& X = t.value(x);
  const Eigen::Index n = X.cols();
  Matrix<S> xhat(X.rows(), n);
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    S mean = X.row(r).mean();
    S var = (X.row(r).array() - mean).square().mean();
    rstd(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mean) * rstd(r);
  }
  Matrix<S> out = (xhat.array().rowwise() * t.value(gamma).row(0).array()).rowwise() + t.value(beta).row(0).array();
  return t.push(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), n](Tape<S>& t, const Matrix<S>& g) {
                  if (t.needs_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                  if (t.needs_grad(beta)) t.accumulate(beta, g.colwise().sum());
                  if (!t.needs_grad(x)) return;
                  Matrix<S> dxhat = g.array().rowwise() * t.value(gamma).row(0).array();
                  Matrix<S> dx(g.rows(), g.cols());
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    S s1 = dxhat.row(r).sum();
                    S s2 = dxhat.row(r).dot(xhat.row(r));
                    dx.row(r) = (dxhat.row(r).array() * S(n) - s1 - xhat.row(r).array() * s2) * (rstd(r) / S(n));
                  }
                  t.accumulate(x, dx);
                });
}

template <typename S>
Var gather_rows(Tape<S>& t, Var table, std::vector<int> index) {
  const auto& T = t.value(table);
  Matrix<S> out(static_cast<Eigen::Index>(index.size()), T.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= T.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = T.row(index[i]);
  }
  return t.push(std::move(out), {table}, [table, index = std::move(index)](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>* buf = t.grad_buffer(table);
    for (std::size_t i = 0; i < index.size(); ++i) buf->row(index[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

template <typename S>
Var slice_rows(Tape<S>& t, Var x, Eigen::Index start, Eigen::Index count) {
  const auto& X = t.value(x);
  if (start < 0 || count < 0 || start + count > X.rows()) throw std::out_of_range("slice_rows: range");
  Matrix<S> out = X.middleRows(start, count);
  return t.push(std::move(out), {x}, [x, start, count](Tape<S>& t, const Matrix<S>& g) {
    t.grad_buffer(x)->middleRows(start, count) += g;
  });
}

template <typename S>
Var concat_rows(Tape<S>& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index rows = 0, cols = t.value(parts[0]).cols();
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += t.value(p).rows();
  }
  Matrix<S> out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  return t.push(std::move(out), parts, [parts](Tape<S>& t, const Matrix<S>& g) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      auto r = t.value(p).rows();
      if (t.needs_grad(p)) t.accumulate(p, g.middleRows(at, r));
      at += r;
    }
  });
}

/// Row-major reshape (storage order is unchanged).
template <typename S>
Var reshape(Tape<S>& t, Var x, Eigen::Index rows, Eigen::Index cols) {
  const auto& X = t.value(x);
  if (rows * cols != X.size()) throw std::invalid_argument("reshape: size mismatch");
  Matrix<S> out = Eigen::Map<const Matrix<S>>(X.data(), rows, cols);
  const Eigen::Index r0 = X.rows(), c0 = X.cols();
  return t.push(std::move(out), {x}, [x, r0, c0](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(x, Eigen::Map<const Matrix<S>>(g.data(), r0, c0));
  });
}

/// Sum of squared entries, as a 1x1 node.
template <typename S>
Var sum_squares(Tape<S>& t, Var x) {
  Matrix<S> out(1, 1);
  out(0, 0) = t.value(x).squaredNorm();
  return t.push(std::move(out), {x}, [x](Tape<S>& t, const Matrix<S>& g) { t.accumulate(x, t.value(x) * (S(2) * g(0, 0))); });
}

/// Mean over rows of the softmax cross-entropy against integer targets, as a 1x1 node.
template <typename S>
Var cross_entropy(Tape<S>& t, Var logits, std::vector<int> targets) {
  const auto& Z = t.value(logits);
  if (static_cast<std::size_t>(Z.rows()) != targets.size()) throw std::invalid_argument("cross_entropy: row count");
  Matrix<S> p(Z.rows(), Z.cols());
  S total = 0;
  for (Eigen::Index r = 0; r < Z.rows(); ++r) {
    S m = Z.row(r).maxCoeff();
    p.row(r) = (Z.row(r).array() - m).exp();
    S z = p.row(r).sum();
    p.row(r) /= z;
    total += -(Z(r, targets[static_cast<std::size_t>(r)]) - m - std::log(z));
  }
  Matrix<S> out(1, 1);
  out(0, 0) = total / S(Z.rows());
  return t.push(std::move(out), {logits},
                [logits, p = std::move(p), targets = std::move(targets)](Tape<S>& t, const Matrix<S>& g) {
                  Matrix<S> d = p;
                  for (std::size_t r = 0; r < targets.size(); ++r) d(static_cast<Eigen::Index>(r), targets[r]) -= S(1);
                  t.accumulate(logits, d * (g(0, 0) / S(p.rows())));
                });
}

/// Weighted sum of 1x1 nodes.
template <typename S>
Var combine(Tape<S>& t, const std::vector<Var>& terms, std::vector<S> weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("combine: size mismatch");
  Matrix<S> out = Matrix<S>::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) out(0, 0) += weights[i] * t.value(terms[i])(0, 0);
  return t.push(std::move(out), terms, [terms, weights = std::move(weights)](Tape<S>& t, const Matrix<S>& g) {
    for (std::size_t i = 0; i < terms.size(); ++i) t.accumulate(terms[i], g * weights[i]);
  });
}

// ---------------------------------------------------------------------------
// Multi-head attention over packed segments

/// Queries [q_start, q_start+q_len) attend to keys [k_start, k_start+k_len).
struct Segment {
  Eigen::Index q_start, q_len, k_start, k_len;
};

/// softmax(Q K^T / sqrt(d_head)) V per head and segment. When `capture` is set it receives
/// one probability matrix per (segment, head), segment-major.
template <typename S>
Var attention(Tape<S>& t, Var q, Var k, Var v, int heads, std::vector<Segment> segments,
              std::vector<Matrix<S>>* capture = nullptr) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  const Eigen::Index d = Q.cols();
  if (K.cols() != d || V.cols() != d || K.rows() != V.rows()) throw std::invalid_argument("attention: shape mismatch");
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  const Eigen::Index dh = d / heads;
  const S inv = S(1) / std::sqrt(S(dh));
  Matrix<S> out = Matrix<S>::Zero(Q.rows(), d);
  std::vector<Matrix<S>> probs;
  probs.reserve(segments.size() * static_cast<std::size_t>(heads));
  for (const auto& s : segments) {
    if (s.q_start < 0 || s.q_start + s.q_len > Q.rows() || s.k_start < 0 || s.k_start + s.k_len > K.rows() ||
        s.k_len < 1)
      throw std::out_of_range("attention: segment out of range");
    for (int h = 0; h < heads; ++h) {
      auto Qh = Q.block(s.q_start, h * dh, s.q_len, dh);
      auto Kh = K.block(s.k_start, h * dh, s.k_len, dh);
      auto Vh = V.block(s.k_start, h * dh, s.k_len, dh);
      Matrix<S> P = (Qh * Kh.transpose()) * inv;
      for (Eigen::Index r = 0; r < P.rows(); ++r) {
        S m = P.row(r).maxCoeff();
        P.row(r) = (P.row(r).array() - m).exp();
        P.row(r) /= P.row(r).sum();
      }
      out.block(s.q_start, h * dh, s.q_len, dh).noalias() = P * Vh;
      probs.push_back(std::move(P));
    }
  }
  if (capture != nullptr) *capture = probs;
  return t.push(std::move(out), {q, k, v},
                [q, k, v, heads, dh, inv, segments = std::move(segments), probs = std::move(probs)](
                    Tape<S>& t, const Matrix<S>& g) {
                  const auto& Q = t.value(q);
                  const auto& K = t.value(k);
                  const auto& V = t.value(v);
                  Matrix<S>* dQ = t.grad_buffer(q);
                  Matrix<S>* dK = t.grad_buffer(k);
                  Matrix<S>* dV = t.grad_buffer(v);
                  std::size_t idx = 0;
                  for (const auto& s : segments) {
                    for (int h = 0; h < heads; ++h, ++idx) {
                      const Matrix<S>& P = probs[idx];
                      auto dO = g.block(s.q_start, h * dh, s.q_len, dh);
                      auto Kh = K.block(s.k_start, h * dh, s.k_len, dh);
                      auto Vh = V.block(s.k_start, h * dh, s.k_len, dh);
                      if (dV) dV->block(s.k_start, h * dh, s.k_len, dh).noalias() += P.transpose() * dO;
                      if (!dQ && !dK) continue;
                      Matrix<S> dP = dO * Vh.transpose();
                      Eigen::Matrix<S, Eigen::Dynamic, 1> rs = dP.cwiseProduct(P).rowwise().sum();
                      Matrix<S> dS = P.cwiseProduct(dP.colwise() - rs) * inv;
                      if (dQ) dQ->block(s.q_start, h * dh, s.q_len, dh).noalias() += dS * Kh;
                      if (dK)
                        dK->block(s.k_start, h * dh, s.k_len, dh).noalias() +=
                            dS.transpose() * Q.block(s.q_start, h * dh, s.q_len, dh);
                    }
                  }
                });
}

}  // namespace diffsr::nn
