#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "../diffusion/model.hpp"
#include "../points.hpp"
#include "../tokenizer.hpp"

namespace diffsr {

/// Per-position token probabilities (L x N_vocab, rows sum to 1).
struct LogitMatrix {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> probs;
  std::uint64_t vocab_hash = 0;

  Eigen::Index rows() const noexcept { return probs.rows(); }
  Eigen::Index cols() const noexcept { return probs.cols(); }

  /// Row-softmax of raw scores.
  template <typename Derived>
  static LogitMatrix from_scores(const Eigen::MatrixBase<Derived>& scores, std::uint64_t hash) {
    LogitMatrix m;
    m.vocab_hash = hash;
    m.probs = scores.template cast<double>();
    for (Eigen::Index r = 0; r < m.probs.rows(); ++r) {
      double mx = m.probs.row(r).maxCoeff();
      m.probs.row(r) = (m.probs.row(r).array() - mx).exp();
      m.probs.row(r) /= m.probs.row(r).sum();
    }
    return m;
  }

  /// One-hot rows for the given tokens (an oracle prior).
  static LogitMatrix one_hot(std::span<const int> tokens, const Vocabulary& vocab) {
    LogitMatrix m;
    m.vocab_hash = vocab.hash();
    m.probs.setZero(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(vocab.size()));
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab.size())
        throw std::out_of_range("LogitMatrix::one_hot: token out of range");
      m.probs(static_cast<Eigen::Index>(i), tokens[i]) = 1.0;
    }
    return m;
  }
};

/// Row-wise argmax; ties go to the lowest token index.
inline TokenSequence greedy_decode(const LogitMatrix& logits) {
  TokenSequence out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits.probs(r, c) > logits.probs(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

/// Replaces constants that have no integer token with the placeholder.
inline Expr skeletonize(const Expr& e, const Vocabulary& vocab) {
  if (e.is_constant()) return vocab.integer_token(e.value()) ? e : Expr::placeholder();
  if (!e.is_op()) return e;
  std::vector<Expr> kids;
  for (const auto& c : e.children()) kids.push_back(skeletonize(c, vocab));
  return Expr::make(e.op(), std::move(kids));
}

/// One-hot logits of a known expression, padded to `canvas` rows. Integer powers are expanded
/// first and skeleton vocabularies see the skeleton of the expression.
inline LogitMatrix oracle_logits(const Expr& e, const Vocabulary& vocab, std::size_t canvas) {
  Expr target = expand_integer_powers(e);
  if (vocab.mode() == VocabMode::skeleton) target = skeletonize(target, vocab);
  auto toks = pad_to(encode_expression(target, vocab), canvas, vocab);
  return LogitMatrix::one_hot(toks, vocab);
}

struct SamplingOptions {
  bool clamp = true;  // snap each x0 estimate to the embedding of its greedy token
  std::size_t max_condition_points = 200;
};

/// Runs the reverse process once per seed, all seeds batched. Sample i draws x_T and every
/// injected noise from its own stream seeded by seeds[i], so results do not depend on which
/// other seeds share the batch. `points == nullptr` (or an unconditional model) uses the
/// null condition. Optionally returns the final x0 of every sample.
template <typename S>
std::vector<LogitMatrix> sample_logits(const DiffusionModel<S>& model, const Vocabulary& vocab, const PointSet* points,
                                       std::span<const std::uint64_t> seeds, const SamplingOptions& o = {},
                                       std::vector<nn::Matrix<S>>* x0_out = nullptr) {
  using Mat = nn::Matrix<S>;
  const auto& cfg = model.config();
  if (static_cast<std::size_t>(cfg.vocab_size) != vocab.size()) throw std::invalid_argument("sample_logits: vocabulary mismatch");
  const auto& sch = model.schedule();
  const auto n = seeds.size();
  const Eigen::Index L = cfg.canvas, d = cfg.embed_dim;
  if (n == 0) return {};

  nn::Tape<S> tape(false);
  Mat memory;
  Eigen::Index memory_rows = 1;
  if (points != nullptr && cfg.conditional) {
    if (points->empty()) throw std::invalid_argument("sample_logits: empty point set");
    PointSet use = *points;
    if (use.size() > o.max_condition_points) {
      std::vector<std::size_t> rows(o.max_condition_points);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
      use = points->subset(rows);
    }
    PointBatch pb;
    model.point_tokenizer().encode(use, pb.tokens);
    pb.counts.push_back(static_cast<Eigen::Index>(use.size()));
    memory = tape.value(model.encode_points(tape, pb).memory);
    memory_rows = memory.rows();
  } else {
    memory =tape.value(model.null_condition(tape).memory);
  }

  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (auto s : seeds) rngs.emplace_back(s);
  auto draw = [&](Mat& x) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      for (Eigen::Index r = 0; r < L; ++r)
        for (Eigen::Index c = 0; c < d; ++c) x(static_cast<Eigen::Index>(i) * L + r, c) = static_cast<S>(nd(rngs[i]));
  };
  Mat x(static_cast<Eigen::Index>(n) * L, d);
  draw(x);
  const Mat& E = model.embedding().value;
  std::vector<std::size_t> cond_index(n, 0);
  Mat noise(x.rows(), d);
  for (int t = sch.T; t >= 1; --t) {
    tape.clear();
    Condition c{tape.constant(memory), {{0, memory_rows}}};
    std::vector<int> steps(n, t);
    Mat f = tape.value(model.denoise(tape, tape.constant(x), steps, c, cond_index));
    if (o.clamp) {
      Mat scores = f * E.transpose();
      for (Eigen::Index r = 0; r < f.rows(); ++r) {
        Eigen::Index best = 0;
        scores.row(r).maxCoeff(&best);
        f.row(r) = E.row(best);
      }
    }
    if (t > 1) draw(noise);
    x = reverse_step(f, x, t, sch, noise);
  }
  std::vector<LogitMatrix> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Mat xi = x.middleRows(static_cast<Eigen::Index>(i) * L, L);
    out.push_back(LogitMatrix::from_scores(xi * E.transpose(), vocab.hash()));
    if (x0_out) x0_out->push_back(std::move(xi));
  }
  return out;
}

}  // namespace diffsr
