#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "expr.hpp"
#include "parallel.hpp"
#include "points.hpp"
#include "rng.hpp"
#include "tokenizer.hpp"

namespace diffsr {

struct Limits {
  int max_length = 20;
  int max_internal_nodes = 5;
  int max_height = 7;

  void validate() const {
    if (max_length < 1 || max_internal_nodes < 0 || max_height < 1)
      throw std::invalid_argument("Limits: bounds must be positive");
  }
};

struct DegenerateExpression : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Skeleton sampling

namespace detail {

inline Expr build_from_codes(const std::vector<int>& codes, std::size_t& i) {
  int c = codes[i++];
  if (c >= 0) {
    Op op = static_cast<Op>(c);
    std::vector<Expr> kids;
    for (int k = 0; k < arity(op); ++k) kids.push_back(build_from_codes(codes, i));
    return Expr::make(op, std::move(kids));
  }
  if (c == -1) return Expr::placeholder();
  return Expr::variable(-c - 1);  // -2 -> x_1, -3 -> x_2, ...
}

}  // namespace detail

/// Random skeleton: 1..max_internal_nodes operators drawn by their unnormalized weights,
/// placed by expanding a uniformly chosen open slot, then leaves drawn uniformly from
/// {x_1..x_dims, c}. At least one leaf is forced to be a variable.
inline Expr sample_skeleton(Rng& rng, const Limits& limits, int dims) {
  limits.validate();
  if (dims < 1 || dims > 3) throw std::invalid_argument("sample_skeleton: dims must be in [1,3]");
  std::vector<double> weights;
  for (Op op : kVocabularyOperators) weights.push_back(op_info(op).sample_weight);
  std::discrete_distribution<int> pick_op(weights.begin(), weights.end());

  constexpr int kSlot = -1000;
  int n_ops = limits.max_internal_nodes == 0 ? 0 : uniform_int(rng, 1, limits.max_internal_nodes);
  for (int attempt = 0;; ++attempt) {
    if (attempt > 0 && attempt % 100 == 0 && n_ops > 0) --n_ops;
    std::vector<int> codes{kSlot};
    for (int k = 0; k < n_ops; ++k) {
      std::vector<std::size_t> slots;
      for (std::size_t i = 0; i < codes.size(); ++i)
        if (codes[i] == kSlot) slots.push_back(i);
      std::size_t at = slots[uniform_int<std::size_t>(rng, 0, slots.size() - 1)];
      Op op = kVocabularyOperators[static_cast<std::size_t>(pick_op(rng))];
      codes[at] = static_cast<int>(op);
      codes.insert(codes.begin() + static_cast<std::ptrdiff_t>(at) + 1, static_cast<std::size_t>(arity(op)), kSlot);
    }
    std::vector<std::size_t> leaves;
    bool has_var = false;
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (codes[i] != kSlot) continue;
      leaves.push_back(i);
      int choice = uniform_int(rng, 0, dims);  // dims -> placeholder
      codes[i] = choice == dims ? -1 : -(choice + 2);
      has_var = has_var || choice != dims;
    }
    if (!has_var) codes[leaves[uniform_int<std::size_t>(rng, 0, leaves.size() - 1)]] = -(uniform_int(rng, 1, dims) + 1);
    std::size_t i = 0;
    Expr e = detail::build_from_codes(codes, i);
    if (static_cast<int>(e.size()) <= limits.max_length && e.height() <= limits.max_height) return e;
  }
}

/// Collapses every variable-free subtree that contains a placeholder into a single placeholder.
inline Expr collapse_constant_subtrees(const Expr& e) {
  if (e.is_leaf()) return e;
  if (!e.has_variable() && e.has_placeholder()) return Expr::placeholder();
  std::vector<Expr> kids;
  bool changed = false;
  for (const auto& c : e.children()) {
    kids.push_back(collapse_constant_subtrees(c));
    changed = changed || !kids.back().same_node(c);
  }
  return changed ? Expr::make(e.op(), std::move(kids)) : e;
}

enum class ConstantRole : std::uint8_t { additive, multiplicative };

inline ConstantRole constant_role(const Expr* parent) {
  if (parent == nullptr || !parent->is_op()) return ConstantRole::additive;
  switch (parent->op()) {
    case Op::mul:
    case Op::div:
    case Op::pow: return ConstantRole::multiplicative;
    default: return ConstantRole::additive;
  }
}

inline double sample_additive_constant(Rng& rng) { return uniform(rng, -10.0, 10.0); }
inline double sample_multiplicative_constant(Rng& rng) {
  return std::exp(uniform(rng, std::log(0.05), std::log(10.0)));
}

/// Replaces placeholders by sampled constants: U(-10,10) for additive positions (child of
/// add/sub, a unary operator, or the root), log-uniform over [0.05, 10] under mul/div/pow.
inline Expr substitute_constants(const Expr& skeleton, Rng& rng) {
  if (!skeleton.has_placeholder()) return skeleton;
  auto walk = [&](auto&& self, const Expr& n, const Expr* parent) -> Expr {
    if (n.is_placeholder())
      return Expr::constant(constant_role(parent) == ConstantRole::additive ? sample_additive_constant(rng)
                                                                          : sample_multiplicative_constant(rng));
    if (n.is_leaf() || !n.has_placeholder()) return n;
    std::vector<Expr> kids;
    for (const auto& c : n.children()) kids.push_back(self(self, c, &n));
    return Expr::make(n.op(), std::move(kids));
  };
  return walk(walk, skeleton, nullptr);
}

/// Rounds every numeric constant to what the constant tokenization preserves.
inline Expr quantize_constants(const Expr& e, int mantissa_digits = 4) {
  if (e.constant_slots() == 0) return e;
  auto vals = constant_values(e);
  for (auto& v : vals) v = quantize_constant(v, mantissa_digits);
  return with_constants(e, vals);
}

struct PointSamplingOptions {
  std::size_t n_min = 50;
  std::size_t n_max = 1000;
  double low = -10.0;
  double high = 10.0;
  double max_abs_target = 1e10;
  double min_acceptance = 0.05;
};

/// Draws N ~ U{n_min..n_max} rows with each input U(low, high); rows whose target is
/// invalid or exceeds max_abs_target are rejected and redrawn.
inline PointSet sample_points(const Expr& e, Rng& rng, int dims, const PointSamplingOptions& o = {}) {
  if (e.has_placeholder()) throw std::invalid_argument("sample_points: expression still has placeholders");
  if (e.max_variable() > dims) throw std::invalid_argument("sample_points: expression uses more variables than dims");
  if (o.n_min < 1 || o.n_max < o.n_min) throw std::invalid_argument("sample_points: bad size range");
  const std::size_t n = uniform_int<std::size_t>(rng, o.n_min, o.n_max);
  PointSet pts;
  pts.dims = static_cast<std::size_t>(dims);
  std::vector<double> row(pts.dims);
  std::size_t draws = 0;
  const std::size_t max_draws = static_cast<std::size_t>(std::ceil(static_cast<double>(n) / o.min_acceptance)) + 200;
  while (pts.size() < n) {
    if (draws >= max_draws ||
        (draws >= 200 && static_cast<double>(pts.size()) < o.min_acceptance * static_cast<double>(draws)))
      throw DegenerateExpression("sample_points: expression is invalid almost everywhere: " + to_infix(e));
    ++draws;
    for (auto& v : row) v = uniform(rng, o.low, o.high);
    double y = evaluate(e, row);
    if (!is_valid(y) || std::fabs(y) > o.max_abs_target) continue;
    pts.push_back(row, y);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Corpus

struct CorpusRecord {
  std::vector<std::string> skeleton;
  std::vector<std::string> full;
  PointSet points;
  std::uint64_t seed = 0;
};

struct CorpusConfig {
  Limits limits;
  int max_dims = 3;
  PointSamplingOptions points;
  int mantissa_digits = 4;
  std::size_t full_canvas = 32;
  bool dedup = false;
  std::size_t workers = 1;
};

inline nlohmann::json to_json(const CorpusConfig& c) {
  return {{"max_length", c.limits.max_length},     {"max_internal_nodes", c.limits.max_internal_nodes},
          {"max_height", c.limits.max_height},     {"max_dims", c.max_dims},
          {"n_min", c.points.n_min},               {"n_max", c.points.n_max},
          {"mantissa_digits", c.mantissa_digits},  {"full_canvas", c.full_canvas},
          {"dedup", c.dedup}};
}

inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig c;
  c.limits.max_length = j.value("max_length", c.limits.max_length);
  c.limits.max_internal_nodes = j.value("max_internal_nodes", c.limits.max_internal_nodes);
  c.limits.max_height = j.value("max_height", c.limits.max_height);
  c.max_dims = j.value("max_dims", c.max_dims);
  c.points.n_min = j.value("n_min", c.points.n_min);
  c.points.n_max = j.value("n_max", c.points.n_max);
  c.mantissa_digits = j.value("mantissa_digits", c.mantissa_digits);
  c.full_canvas = j.value("full_canvas", c.full_canvas);
  c.dedup = j.value("dedup", c.dedup);
  return c;
}

inline nlohmann::json to_json(const CorpusRecord& r) {
  nlohmann::json z = nlohmann::json::array();
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    auto row = r.points.row(i);
    z.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"skeleton", r.skeleton}, {"full", r.full}, {"points", {{"Z", z}, {"y", r.points.targets}}}, {"seed", r.seed}};
}

inline CorpusRecord corpus_record_from_json(const nlohmann::json& j) {
  CorpusRecord r;
  r.skeleton = j.at("skeleton").get<std::vector<std::string>>();
  r.full = j.at("full").get<std::vector<std::string>>();
  r.seed = j.value("seed", std::uint64_t{0});
  const auto& z = j.at("points").at("Z");
  const auto& y = j.at("points").at("y");
  if (z.size() != y.size()) throw std::invalid_argument("corpus record: Z and y lengths differ");
  r.points.dims = z.empty() ? 1 : z.at(0).size();
  for (std::size_t i = 0; i < z.size(); ++i) r.points.push_back(z[i].get<std::vector<double>>(), y[i].get<double>());
  return r;
}

namespace detail {

inline std::optional<CorpusRecord> try_make_record(Rng& rng, std::uint64_t record_seed, const CorpusConfig& cfg,
                                                   const Vocabulary& skel_vocab, const Vocabulary& full_vocab) {
  int dims = uniform_int(rng, 1, cfg.max_dims);
  Expr skel = simplify_basic(collapse_constant_subtrees(sample_skeleton(rng, cfg.limits, dims)));
  if (!skel.has_variable()) return std::nullopt;
  TokenSequence skel_tokens;
  try {
    skel_tokens = encode_expression(skel, skel_vocab, static_cast<std::size_t>(cfg.limits.max_length));
  } catch (const TokenizeError&) {
    return std::nullopt;
  }
  Expr full = quantize_constants(substitute_constants(skel, rng), cfg.mantissa_digits);
  TokenSequence full_tokens;
  try {
    full_tokens = encode_expression(full, full_vocab, cfg.full_canvas);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  CorpusRecord rec;
  try {
    rec.points = sample_points(full, rng, dims, cfg.points);
  } catch (const DegenerateExpression&) {
    return std::nullopt;
  }
  rec.skeleton = to_strings(skel_tokens, skel_vocab);
  rec.full = to_strings(full_tokens, full_vocab);
  rec.seed = record_seed;
  return rec;
}

}  // namespace detail

/// Generates one record from its own stream derived from (seed, index), so records are
/// independent of generation order and worker count.
inline CorpusRecord make_corpus_record(std::uint64_t seed, std::uint64_t index, const CorpusConfig& cfg) {
  Vocabulary skel_vocab({.mode = VocabMode::skeleton, .variables = cfg.max_dims});
  Vocabulary full_vocab({.mode = VocabMode::full, .variables = cfg.max_dims, .mantissa_digits = cfg.mantissa_digits});
  const std::uint64_t record_seed = derive_seed(seed, {index});
  Rng rng(record_seed);
  for (int attempt = 0; attempt < 1000; ++attempt)
    if (auto r = detail::try_make_record(rng, record_seed, cfg, skel_vocab, full_vocab)) return std::move(*r);
  throw std::runtime_error("make_corpus_record: could not produce a valid record");
}

inline nlohmann::json corpus_header(std::size_t count, std::uint64_t seed, const CorpusConfig& cfg) {
  return {{"format", "diffsr-corpus"}, {"version", 1}, {"count", count}, {"seed", seed}, {"config", to_json(cfg)}};
}

/// Streams `count` records to `sink` in index order. With dedup enabled, a record whose
/// skeleton was already emitted is regenerated from the next derived stream.
inline void build_corpus(std::size_t count, std::uint64_t seed, const CorpusConfig& cfg,
                         const std::function<void(const CorpusRecord&)>& sink) {
  std::unordered_set<std::string> seen;
  std::uint64_t next_index = 0;
  const std::size_t chunk = std::max<std::size_t>(64, cfg.workers * 16);
  std::size_t emitted = 0;
  while (emitted < count) {
    std::size_t want = std::min(chunk, count - emitted);
    std::vector<CorpusRecord> batch(want);
    const std::uint64_t base = next_index;
    parallel_for(want, cfg.workers, [&](std::size_t i) { batch[i] = make_corpus_record(seed, base + i, cfg); });
    next_index += want;
    for (auto& r : batch) {
      if (emitted >= count) break;
      if (cfg.dedup) {
        std::string key;
        for (const auto& t : r.skeleton) key += t + ' ';
        if (!seen.insert(key).second) continue;
      }
      sink(r);
      ++emitted;
    }
  }
}

inline void write_corpus(std::ostream& out, std::size_t count, std::uint64_t seed, const CorpusConfig& cfg) {
  out << corpus_header(count, seed, cfg).dump() << '\n';
  build_corpus(count, seed, cfg, [&](const CorpusRecord& r) { out << to_json(r).dump() << '\n'; });
  if (!out) throw std::runtime_error("write_corpus: I/O error");
}

struct Corpus {
  nlohmann::json header;
  std::vector<CorpusRecord> records;
};

inline Corpus read_corpus(std::istream& in) {
  Corpus c;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_corpus: missing header");
  c.header = nlohmann::json::parse(line);
  if (c.header.value("format", "") != "diffsr-corpus") throw std::runtime_error("read_corpus: not a corpus file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    c.records.push_back(corpus_record_from_json(nlohmann::json::parse(line)));
  }
  return c;
}

}  // namespace diffsr
