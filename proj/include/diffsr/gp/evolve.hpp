#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "../decoding/topk.hpp"
#include "../parallel.hpp"
#include "operators.hpp"

namespace diffsr::gp {

struct GpConfig {
  std::size_t population = 300;
  double crossover_rate = 0.5;
  double mutation_rate = 0.5;
  int generations = 300;
  int max_height = 7;
  int init_min_height = 2;
  int init_max_height = 6;
  int tournament = 3;
  std::vector<Op> functions = PrimitiveSet{}.functions;
  bool constants = true;
  bool refine_final = true;
  RefineOptions refine;
  double stop_r2 = std::numeric_limits<double>::infinity();  // stop once the best train R^2 reaches this

  void validate() const {
    auto rate = [](double r) { return r >= 0 && r <= 1; };
    if (population == 0 || generations < 0 || tournament < 1 || max_height < 1)
      throw std::invalid_argument("GpConfig: sizes must be positive");
    if (!rate(crossover_rate) || !rate(mutation_rate)) throw std::invalid_argument("GpConfig: rates must lie in [0, 1]");
    if (init_min_height < 0 || init_min_height > init_max_height || init_max_height > max_height)
      throw std::invalid_argument("GpConfig: bad initial height range");
  }
};

struct GuidanceConfig {
  double delta = 0.5;
  std::size_t seed_copies = 10;
  int grow_height = 6;
  int islands = 10;

  void validate(const GpConfig& gp) const {
    if (delta < 0 || delta > 1) throw std::invalid_argument("GuidanceConfig: delta must lie in [0, 1]");
    if (seed_copies > gp.population) throw std::invalid_argument("GuidanceConfig: more seed copies than individuals");
    if (grow_height < 1 || islands < 1) throw std::invalid_argument("GuidanceConfig: sizes must be positive");
  }
};

inline nlohmann::json to_json(const GpConfig& c) {
  std::vector<std::string> fs;
  for (Op op : c.functions) fs.emplace_back(op_name(op));
  return {{"population", c.population}, {"crossover_rate", c.crossover_rate}, {"mutation_rate", c.mutation_rate},
          {"generations", c.generations}, {"max_height", c.max_height}, {"init_min_height", c.init_min_height},
          {"init_max_height", c.init_max_height}, {"tournament", c.tournament}, {"functions", fs},
          {"constants", c.constants}, {"refine_final", c.refine_final}};
}

inline nlohmann::json to_json(const GuidanceConfig& c) {
  return {{"delta", c.delta}, {"seed_copies", c.seed_copies}, {"grow_height", c.grow_height}, {"islands", c.islands}};
}

/// Logit prior handed to the search, or nothing for classic GP.
struct Guide {
  const LogitMatrix* logits = nullptr;
  const Vocabulary* vocab = nullptr;
};

struct Individual {
  Expr expr = Expr::variable(1);
  double fitness = std::numeric_limits<double>::infinity();  // training RMSE

  bool valid() const noexcept { return std::isfinite(fitness); }
};

inline double fitness_rmse(const Expr& e, const PointSet& pts) { return rmse(pts.targets, evaluate(e, pts)); }

struct Population {
  std::vector<Individual> members;
  bool seeded = false;  // greedy decode produced the clones
};

/// `seed_copies` clones of the greedy decode followed by ramped half-and-half trees. When the
/// greedy sequence does not yield a usable tree every slot is random and `seeded` is false.
inline Population init_population(const Guide& guide, const GpConfig& gp, const GuidanceConfig& gc, int dims, Rng& rng) {
  Population pop;
  std::size_t clones = 0;
  if (guide.logits != nullptr && gc.seed_copies > 0) {
    auto d = decode_expression(greedy_decode(*guide.logits), *guide.vocab);
    if (d && d.expr->max_variable() <= dims && d.expr->height() <= gp.max_height) {
      Expr g = fill_placeholders(*d.expr, 1.0);
      for (clones = 0; clones < gc.seed_copies; ++clones) pop.members.push_back({g});
      pop.seeded = true;
    }
  }
  PrimitiveSet ps{gp.functions, dims, gp.constants};
  const int span = gp.init_max_height - gp.init_min_height + 1;
  for (std::size_t i = 0; pop.members.size() < gp.population; ++i) {
    const int h = gp.init_min_height + static_cast<int>(i % static_cast<std::size_t>(span));
    const bool full = (i / static_cast<std::size_t>(span)) % 2 == 1;
    Expr t = random_tree(ps, h, full, rng);
    for (int k = 0; k < 100 && t.height() < gp.init_min_height; ++k) t = random_tree(ps, h, full, rng);
    if (t.height() < gp.init_min_height) t = random_tree(ps, h, true, rng);
    pop.members.push_back({std::move(t)});
  }
  return pop;
}

inline const Individual& tournament_select(const std::vector<Individual>& pop, int size, Rng& rng) {
  const Individual* best = nullptr;
  for (int k = 0; k < size; ++k) {
    const auto& c = pop[uniform_int<std::size_t>(rng, 0, pop.size() - 1)];
    if (best == nullptr || c.fitness < best->fitness) best = &c;
  }
  return *best;
}

struct GenerationStats {
  int generation = 0;
  double best_rmse = 0;
  double mean_rmse = 0;  // over individuals with finite fitness
  double best_r2 = 0;
};

struct GpResult {
  Individual best;  // best individual of the final population
  Candidate candidate;  // best after optional constant refinement
  double candidate_rmse = std::numeric_limits<double>::infinity();
  std::vector<GenerationStats> history;
  bool seeded = false;
};

namespace detail {

// (mu + lambda) truncation: sort by fitness then size, skip structural duplicates while
// enough distinct individuals remain.
inline void truncate(std::vector<Individual>& pool, std::size_t keep) {
  std::stable_sort(pool.begin(), pool.end(), [](const Individual& a, const Individual& b) {
    if (a.fitness != b.fitness) return a.fitness < b.fitness;
    return a.expr.size() < b.expr.size();
  });
  std::vector<Individual> out, dupes;
  out.reserve(keep);
  std::unordered_set<std::string> seen;
  for (auto& ind : pool) {
    if (out.size() >= keep) break;
    if (seen.insert(to_prefix_string(ind.expr)).second)
      out.push_back(std::move(ind));
    else
      dupes.push_back(std::move(ind));
  }
  for (std::size_t i = 0; out.size() < keep && i < dupes.size(); ++i) out.push_back(std::move(dupes[i]));
  pool = std::move(out);
}

inline GenerationStats stats(const std::vector<Individual>& pop, const PointSet& train, int gen) {
  GenerationStats s;
  s.generation = gen;
  s.best_rmse = pop.front().fitness;
  double sum = 0;
  std::size_t n = 0;
  for (const auto& ind : pop)
    if (ind.valid()) {
      sum += ind.fitness;
      ++n;
    }
  s.mean_rmse = n ? sum / static_cast<double>(n) : std::numeric_limits<double>::infinity();
  s.best_r2 = score_r2(pop.front().expr, train);
  return s;
}

}  // namespace detail

/// Generational loop: tournament parents, subtree crossover, guided or random mutation, and
/// truncation of parents plus offspring back to the population size (which keeps the elite).
inline GpResult evolve(const PointSet& train, const Guide& guide, const GpConfig& gp, const GuidanceConfig& gc, Rng& rng,
                       const PointSet* test = nullptr) {
  gp.validate();
  gc.validate(gp);
  if (train.size() == 0) throw std::invalid_argument("evolve: no training points");
  const int dims = static_cast<int>(train.dims);
  std::optional<GuidedGrower> grower;
  if (guide.logits != nullptr) {
    if (guide.vocab == nullptr) throw std::invalid_argument("evolve: logits without a vocabulary");
    grower.emplace(*guide.logits, *guide.vocab, dims);
  }
  PrimitiveSet ps{gp.functions, dims, gp.constants};
  MutationConfig mc{grower ? gc.delta : 0.0, gc.grow_height, gp.max_height};

  auto init = init_population(guide, gp, gc, dims, rng);
  GpResult res;
  res.seeded = init.seeded;
  auto pop = std::move(init.members);
  for (auto& ind : pop) ind.fitness = fitness_rmse(ind.expr, train);
  detail::truncate(pop, gp.population);
  res.history.push_back(detail::stats(pop, train, 0));

  for (int gen = 1; gen <= gp.generations && res.history.back().best_r2 < gp.stop_r2; ++gen) {
    std::vector<Individual> offspring;
    offspring.reserve(gp.population + 1);
    while (offspring.size() < gp.population) {
      Expr a = tournament_select(pop, gp.tournament, rng).expr;
      Expr b = tournament_select(pop, gp.tournament, rng).expr;
      if (uniform01(rng) < gp.crossover_rate) std::tie(a, b) = crossover(a, b, gp.max_height, rng);
      for (Expr* child : {&a, &b}) {
        if (uniform01(rng) < gp.mutation_rate)
          *child = guided_mutation(*child, grower ? &*grower : nullptr, ps, mc, rng);
        offspring.push_back({std::move(*child)});
      }
    }
    for (auto& ind : offspring) ind.fitness = fitness_rmse(ind.expr, train);
    pop.insert(pop.end(), std::make_move_iterator(offspring.begin()), std::make_move_iterator(offspring.end()));
    detail::truncate(pop, gp.population);
    res.history.push_back(detail::stats(pop, train, gen));
  }

  res.best = pop.front();
  Candidate& c = res.candidate;
  c.expr = res.best.expr;
  res.candidate_rmse = res.best.fitness;
  if (gp.refine_final && !constant_values(c.expr).empty()) {
    auto r = refine_constants(c.expr, train, gp.refine);
    double refined = std::sqrt(r.mse);
    if (!r.failed && refined < res.candidate_rmse) {
      c.expr = r.expr;
      res.candidate_rmse = refined;
    }
  }
  c.constants = constant_values(c.expr);
  c.train_r2 = score_r2(c.expr, train);
  c.complexity = complexity(c.expr);
  if (test && test->size() >= 2) c.test_r2 = score_r2(c.expr, *test);
  return res;
}

/// First generation whose best train R^2 reaches `threshold`, if any.
inline std::optional<int> generations_to(const std::vector<GenerationStats>& history, double threshold) {
  for (const auto& s : history)
    if (s.best_r2 >= threshold) return s.generation;
  return std::nullopt;
}

struct IslandsResult {
  Candidate best;
  std::size_t best_island = 0;
  std::vector<GpResult> islands;
};

inline std::uint64_t island_seed(std::uint64_t seed, int island) {
  return derive_seed(seed, {0x15a1, static_cast<std::uint64_t>(island)});
}

/// Independent evolve runs, one RNG stream per island. The reduction picks the lowest
/// candidate RMSE, then lower complexity, then lower island index.
inline IslandsResult run_islands(const PointSet& train, const Guide& guide, const GpConfig& gp, const GuidanceConfig& gc,
                                 std::uint64_t seed, std::size_t workers = 1, const PointSet* test = nullptr) {
  if (gc.islands < 1) throw std::invalid_argument("run_islands: need at least one island");
  IslandsResult out;
  out.islands.resize(static_cast<std::size_t>(gc.islands));
  parallel_for(out.islands.size(), workers, [&](std::size_t i) {
    Rng rng(island_seed(seed, static_cast<int>(i)));
    out.islands[i] = evolve(train, guide, gp, gc, rng, test);
    out.islands[i].candidate.seed = island_seed(seed, static_cast<int>(i));
  });
  for (std::size_t i = 1; i < out.islands.size(); ++i) {
    const auto& a = out.islands[i];
    const auto& b = out.islands[out.best_island];
    if (a.candidate_rmse < b.candidate_rmse ||
        (a.candidate_rmse == b.candidate_rmse && a.candidate.complexity < b.candidate.complexity))
      out.best_island = i;
  }
  out.best = out.islands[out.best_island].candidate;
  return out;
}

inline void write_history_csv(std::ostream& os, const std::vector<GpResult>& islands) {
  os << "island,generation,best_rmse,mean_rmse,best_r2\n";
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v).dump() : std::string(v > 0 ? "inf" : (v < 0 ? "-inf" : "nan")); };
  for (std::size_t i = 0; i < islands.size(); ++i)
    for (const auto& s : islands[i].history)
      os << i << ',' << s.generation << ',' << num(s.best_rmse) << ',' << num(s.mean_rmse) << ',' << num(s.best_r2) << '\n';
}

}  // namespace diffsr::gp
