#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "expr.hpp"
#include "tokenizer.hpp"

namespace diffsr {

/// Coefficient of determination. A non-finite prediction yields -inf.
inline double r2(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) throw std::invalid_argument("r2: length mismatch");
  if (actual.size() < 2) throw std::invalid_argument("r2: need at least two values");
  double mean = 0;
  for (double y : actual) mean += y;
  mean /= static_cast<double>(actual.size());
  double ss_tot = 0, ss_res = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (!std::isfinite(predicted[i])) return -std::numeric_limits<double>::infinity();
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
    ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
  }
  if (ss_tot == 0) throw std::domain_error("r2: actual values have zero variance");
  return 1.0 - ss_res / ss_tot;
}

/// Root mean squared error; +inf when any prediction is non-finite.
inline double rmse(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size() || actual.empty()) throw std::invalid_argument("rmse: bad lengths");
  double s = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (!std::isfinite(predicted[i])) return std::numeric_limits<double>::infinity();
    s += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
  }
  double r = std::sqrt(s / static_cast<double>(actual.size()));
  return std::isfinite(r) ? r : std::numeric_limits<double>::infinity();
}

namespace detail {

using Ngram = std::vector<int>;

inline std::map<Ngram, int> ngram_counts(std::span<const int> seq, std::size_t n) {
  std::map<Ngram, int> out;
  if (seq.size() < n) return out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++out[Ngram(seq.begin() + static_cast<std::ptrdiff_t>(i), seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace detail

/// BLEU-4 of `hypothesis` against `references`: uniform weights over 1..4-gram precisions,
/// counts clipped by the per-reference maximum, add-one smoothing (m+1)/(t+1), and the
/// brevity penalty against the closest reference length (shorter wins ties).
inline double bleu4(std::span<const int> hypothesis, const std::vector<std::span<const int>>& references) {
  if (references.empty()) throw std::invalid_argument("bleu4: no references");
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    auto hyp = detail::ngram_counts(hypothesis, n);
    std::map<detail::Ngram, int> max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : detail::ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    long matched = 0, total = 0;
    for (const auto& [g, c] : hyp) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    log_sum += 0.25 * std::log((matched + 1.0) / (total + 1.0));
  }
  const auto c = static_cast<double>(hypothesis.size());
  double closest = static_cast<double>(references[0].size());
  for (const auto& r : references) {
    auto len = static_cast<double>(r.size());
    if (std::fabs(len - c) < std::fabs(closest - c) || (std::fabs(len - c) == std::fabs(closest - c) && len < closest))
      closest = len;
  }
  double bp = c == 0 ? 0.0 : (c > closest ? 1.0 : std::exp(1.0 - closest / c));
  return bp * std::exp(log_sum);
}

/// Mean BLEU-4 of each sequence against all the others. Lower means more diverse.
inline double self_bleu(const std::vector<TokenSequence>& seqs) {
  if (seqs.size() < 2) throw std::invalid_argument("self_bleu: need at least two sequences");
  double sum = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    std::vector<std::span<const int>> refs;
    for (std::size_t j = 0; j < seqs.size(); ++j)
      if (j != i) refs.emplace_back(seqs[j]);
    sum += bleu4(seqs[i], refs);
  }
  return sum / static_cast<double>(seqs.size());
}

/// Shannon entropy (nats) of the empirical distribution of the given values.
inline double complexity_entropy(std::span<const std::size_t> complexities) {
  if (complexities.empty()) throw std::invalid_argument("complexity_entropy: empty input");
  std::map<std::size_t, std::size_t> counts;
  for (auto c : complexities) ++counts[c];
  const auto n = static_cast<double>(complexities.size());
  double h = 0;
  for (const auto& [_, k] : counts) {
    double p = static_cast<double>(k) / n;
    h -= p * std::log(p);
  }
  return h;
}

inline double complexity_entropy(const std::vector<Expr>& exprs) {
  std::vector<std::size_t> c;
  c.reserve(exprs.size());
  for (const auto& e : exprs) c.push_back(complexity(e));
  return complexity_entropy(c);
}

inline double valid_rate(const std::vector<TokenSequence>& seqs, const Vocabulary& vocab) {
  if (seqs.empty()) throw std::invalid_argument("valid_rate: empty input");
  std::size_t ok = 0;
  for (const auto& s : seqs) ok += is_valid_prefix(s, vocab) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(seqs.size());
}

}  // namespace diffsr
