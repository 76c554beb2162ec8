#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../parallel.hpp"
#include "refine.hpp"
#include "sampler.hpp"

namespace diffsr {

struct Candidate {
  Expr expr = Expr::variable(1);
  std::vector<double> constants;
  double train_r2 = -std::numeric_limits<double>::infinity();
  double test_r2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t complexity = 0;
  std::uint64_t seed = 0;
};

namespace detail {
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace detail

inline nlohmann::json to_json(const Candidate& c) {
  return {{"expr_infix", to_infix(c.expr)},
          {"expr_prefix", to_prefix_string(c.expr)},
          {"constants", c.constants},
          {"train_r2", detail::finite_or_null(c.train_r2)},
          {"test_r2", detail::finite_or_null(c.test_r2)},
          {"complexity", c.complexity},
          {"seed", c.seed}};
}

struct NoCandidateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TopKOptions {
  int k = 20;
  std::uint64_t seed = 0;
  RefineOptions refine;
  std::size_t workers = 1;
};

inline std::uint64_t top_k_seed(std::uint64_t base, int k) { return derive_seed(base, {static_cast<std::uint64_t>(k)}); }

/// Turns one logit matrix into a refined candidate, or nothing when the greedy sequence does
/// not parse or the expression is invalid on every training point.
inline std::optional<Candidate> candidate_from_logits(const LogitMatrix& logits, const Vocabulary& vocab,
                                                      const PointSet& train, const PointSet* test, std::uint64_t seed,
                                                      RefineOptions ro) {
  auto decoded = decode_expression(greedy_decode(logits), vocab);
  if (!decoded) return std::nullopt;
  if (decoded.expr->max_variable() > static_cast<int>(train.dims)) return std::nullopt;
  Expr filled = fill_placeholders(*decoded.expr, ro.placeholder_init);
  bool any = false;
  for (std::size_t i = 0; i < train.size() && !any; ++i) any = is_valid(evaluate(filled, train.row(i)));
  if (!any) return std::nullopt;
  ro.seed = seed;
  auto refined = refine_constants(*decoded.expr, train, ro);
  Candidate c;
  c.expr = refined.expr;
  c.constants = refined.constants;
  c.train_r2 = refined.train_r2;
  c.complexity = complexity(c.expr);
  c.seed = seed;
  if (test && test->size() >= 2) c.test_r2 = score_r2(c.expr, *test);
  return c;
}

/// `sampler(seeds)` must return one LogitMatrix per seed. Candidate k uses seed
/// top_k_seed(o.seed, k); the highest train R^2 wins, ties going to the lower k.
template <typename Sampler>
Candidate top_k_solve(Sampler&& sampler, const Vocabulary& vocab, const PointSet& train, const PointSet* test,
                      const TopKOptions& o, std::vector<std::optional<Candidate>>* all = nullptr) {
  if (o.k < 1) throw std::invalid_argument("top_k_solve: K must be positive");
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < o.k; ++k) seeds.push_back(top_k_seed(o.seed, k));
  std::vector<LogitMatrix> logits = sampler(std::span<const std::uint64_t>(seeds));
  if (logits.size() != seeds.size()) throw std::logic_error("top_k_solve: sampler returned the wrong count");
  std::vector<std::optional<Candidate>> cands(seeds.size());
  parallel_for(seeds.size(), o.workers, [&](std::size_t k) {
    cands[k] = candidate_from_logits(logits[k], vocab, train, test, seeds[k], o.refine);
  });
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < cands.size(); ++k) {
    if (!cands[k]) continue;
    if (!best || cands[k]->train_r2 > cands[*best]->train_r2) best = k;
  }
  if (all) *all = cands;
  if (!best) throw NoCandidateError("top_k_solve: none of the sampled sequences decoded to a usable expression");
  return *cands[*best];
}

template <typename S>
Candidate top_k_solve(const DiffusionModel<S>& model, const Vocabulary& vocab, const PointSet& train,
                      const PointSet* test, const TopKOptions& o, const SamplingOptions& so = {}) {
  auto sampler = [&](std::span<const std::uint64_t> seeds) { return sample_logits(model, vocab, &train, seeds, so); };
  return top_k_solve(sampler, vocab, train, test, o);
}

}  // namespace diffsr
