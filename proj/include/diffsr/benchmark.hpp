#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "decoding/topk.hpp"
#include "gp/evolve.hpp"
#include "parallel.hpp"
#include "parse.hpp"
#include "points.hpp"

namespace diffsr {

enum class SamplerKind : std::uint8_t { uniform, equal };

struct SamplerSpec {
  SamplerKind kind = SamplerKind::uniform;
  double low = 0;
  double high = 1;
  std::size_t count = 0;
};

struct BenchmarkDefinition {
  std::string_view suite;
  std::string_view id;
  std::string_view expression;
  SamplerSpec sampler;
};

namespace detail {
constexpr SamplerSpec U(double a, double b, std::size_t c) { return {SamplerKind::uniform, a, b, c}; }
}  // namespace detail

// Livermore-12 writes its second variable as y; it is x_2 here.
inline const std::array<BenchmarkDefinition, 48>& benchmark_definitions() {
  using detail::U;
  static const std::array<BenchmarkDefinition, 48> defs{{
      {"nguyen", "Nguyen-1", "x_1^3 + x_1^2 + x_1", U(-1, 1, 200)},
      {"nguyen", "Nguyen-2", "x_1^4 + x_1^3 + x_1^2 + x_1", U(-1, 1, 200)},
      {"nguyen", "Nguyen-3", "x_1^5 + x_1^4 + x_1^3 + x_1^2 + x_1", U(-1, 1, 200)},
      {"nguyen", "Nguyen-4", "x_1^6 + x_1^5 + x_1^4 + x_1^3 + x_1^2 + x_1", U(-1, 1, 200)},
      {"nguyen", "Nguyen-5", "sin(x_1^2)*cos(x_1) - 1", U(-1, 1, 200)},
      {"nguyen", "Nguyen-6", "sin(x_1) + sin(x_1 + x_1^2)", U(-1, 1, 200)},
      {"nguyen", "Nguyen-7", "log(x_1 + 1) + log(x_1^2 + 1)", U(0, 2, 200)},
      {"nguyen", "Nguyen-8", "sqrt(x_1)", U(0, 4, 200)},
      {"nguyen", "Nguyen-9", "sin(x_1) + sin(x_2^2)", U(0, 1, 200)},
      {"nguyen", "Nguyen-10", "2*sin(x_1)*cos(x_2)", U(0, 1, 200)},
      {"nguyen", "Nguyen-11", "x_1^x_2", U(0, 1, 200)},
      {"nguyen", "Nguyen-12", "x_1^4 - x_1^3 + 0.5*x_2^2 - x_2", U(0, 1, 200)},
      {"jin", "Jin-1", "2.5*x_1^4 - 1.3*x_1^3 + 0.5*x_2^2 - 1.7*x_2", U(-3, 3, 100)},
      {"jin", "Jin-2", "8.0*x_1^2 + 8.0*x_2^3 - 15.0", U(-3, 3, 100)},
      {"jin", "Jin-3", "0.2*x_1^3 + 0.5*x_2^3 - 1.2*x_2 - 0.5*x_1", U(-3, 3, 100)},
      {"jin", "Jin-4", "1.5*exp(x_1) + 5.0*cos(x_2)", U(-3, 3, 100)},
      {"jin", "Jin-5", "6.0*sin(x_1)*cos(x_2)", U(-3, 3, 100)},
      {"jin", "Jin-6", "1.35*x_1*x_2 + 5.5*sin((x_1 - 1.0)*(x_2 - 1.0))", U(-3, 3, 100)},
      {"constant", "Constant-1", "3.39*x_1^3 + 2.12*x_1^2 + 1.78*x_1", U(-1, 1, 200)},
      {"constant", "Constant-2", "sin(x_1^2)*cos(x_1) - 0.75", U(-1, 1, 200)},
      {"constant", "Constant-3", "sin(1.5*x_1)*cos(0.5*x_2)", U(0, 1, 200)},
      {"constant", "Constant-4", "2.7*x_1^x_2", U(0, 1, 200)},
      {"constant", "Constant-5", "sqrt(1.23*x_1)", U(0, 4, 200)},
      {"constant", "Constant-6", "x_1^0.426", U(0, 4, 200)},
      {"constant", "Constant-7", "2*sin(1.3*x_1)*cos(x_2)", U(0, 1, 200)},
      {"constant", "Constant-8", "log(x_1 + 1.4) + log(x_1^2 + 1.3)", U(0, 2, 200)},
      {"livermore", "Livermore-1", "1/3 + x_1 + sin(x_1^2)", U(-1, 1, 200)},
      {"livermore", "Livermore-2", "sin(x_1^2)*cos(x_1) - 2", U(-1, 1, 200)},
      {"livermore", "Livermore-3", "sin(x_1^3)*cos(x_1^2) - 1", U(-1, 1, 200)},
      {"livermore", "Livermore-4", "log(x_1 + 1) + log(x_1^2 + 1) + log(x_1)", U(0, 2, 200)},
      {"livermore", "Livermore-5", "x_1^4 - x_1^3 + x_1^2 - x_2", U(0, 1, 200)},
      {"livermore", "Livermore-6", "4*x_1^4 + 3*x_1^3 + 2*x_1^2 + x_1", U(-1, 1, 200)},
      {"livermore", "Livermore-7", "sinh(x_1)", U(-1, 1, 200)},
      {"livermore", "Livermore-8", "cosh(x_1)", U(-1, 1, 200)},
      {"livermore", "Livermore-9", "x_1^9 + x_1^8 + x_1^7 + x_1^6 + x_1^5 + x_1^4 + x_1^3 + x_1^2 + x_1", U(-1, 1, 200)},
      {"livermore", "Livermore-10", "6*sin(x_1)*cos(x_2)", U(0, 1, 200)},
      {"livermore", "Livermore-11", "x_1^2*x_1^2/(x_1 + x_2)", U(-1, 1, 500)},
      {"livermore", "Livermore-12", "x_1^5/x_2^3", U(-1, 1, 500)},
      {"livermore", "Livermore-13", "x_1^(1/3)", U(0, 4, 200)},
      {"livermore", "Livermore-14", "x_1^3 + x_1^2 + x_1 + sin(x_1) + sin(x_1^2)", U(-1, 1, 200)},
      {"livermore", "Livermore-15", "x_1^(1/5)", U(0, 4, 200)},
      {"livermore", "Livermore-16", "x_1^(2/5)", U(0, 4, 200)},
      {"livermore", "Livermore-17", "4*sin(x_1)*cos(x_2)", U(0, 1, 200)},
      {"livermore", "Livermore-18", "sin(x_1^2)*cos(x_1) - 5", U(-1, 1, 200)},
      {"livermore", "Livermore-19", "x_1^5 + x_1^4 + x_1^2 + x_1", U(0, 2, 200)},
      {"livermore", "Livermore-20", "exp(-x_1^2)", U(-1, 1, 200)},
      {"livermore", "Livermore-21", "x_1^8 + x_1^7 + x_1^6 + x_1^5 + x_1^4 + x_1^3 + x_1^2 + x_1", U(-1, 1, 200)},
      {"livermore", "Livermore-22", "exp(-0.5*x_1^2)", U(-1, 1, 200)},
  }};
  return defs;
}

inline const std::array<std::string_view, 4> kSuites{"nguyen", "jin", "constant", "livermore"};

struct BenchmarkProblem {
  std::string suite;
  std::string id;
  std::string expression;
  Expr truth = Expr::variable(1);
  SamplerSpec sampler;
  std::size_t dims = 1;
  std::size_t index = 0;  // row in the full table
};

struct EvalSplit {
  PointSet train;
  PointSet test;
  std::uint64_t seed = 0;
};

struct LoadedProblem {
  BenchmarkProblem problem;
  EvalSplit split;
};

struct UnknownSuiteError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Table rows of a suite ("all" for every row), in table order.
inline std::vector<BenchmarkProblem> benchmark_problems(std::string_view suite) {
  if (suite != "all" && std::find(kSuites.begin(), kSuites.end(), suite) == kSuites.end())
    throw UnknownSuiteError("unknown benchmark suite '" + std::string(suite) + "'");
  std::vector<BenchmarkProblem> out;
  const auto& defs = benchmark_definitions();
  for (std::size_t i = 0; i < defs.size(); ++i) {
    const auto& d = defs[i];
    if (suite != "all" && d.suite != suite) continue;
    BenchmarkProblem p;
    p.suite = d.suite;
    p.id = d.id;
    p.expression = d.expression;
    p.truth = parse_infix(d.expression);
    p.sampler = d.sampler;
    p.dims = static_cast<std::size_t>(std::max(1, p.truth.max_variable()));
    p.index = i;
    out.push_back(std::move(p));
  }
  return out;
}

/// U draws every coordinate independently; E spaces each coordinate evenly over [a, b] and,
/// beyond the first, pairs coordinates through a seeded permutation. Points where the ground
/// truth is invalid are redrawn (U) or dropped (E).
inline PointSet sample_problem(const BenchmarkProblem& p, Rng& rng) {
  const auto& s = p.sampler;
  PointSet pts;
  pts.dims = p.dims;
  std::vector<double> x(p.dims);
  if (s.kind == SamplerKind::uniform) {
    std::size_t attempts = 0;
    while (pts.size() < s.count) {
      if (++attempts > 100 * s.count + 1000) throw std::runtime_error(p.id + ": ground truth invalid on the sampling range");
      for (auto& v : x) v = uniform(rng, s.low, s.high);
      double y = evaluate(p.truth, x);
      if (is_valid(y)) pts.push_back(x, y);
    }
    return pts;
  }
  std::vector<std::vector<std::size_t>> order(p.dims);
  for (std::size_t d = 0; d < p.dims; ++d) {
    order[d].resize(s.count);
    for (std::size_t i = 0; i < s.count; ++i) order[d][i] = i;
    if (d > 0) std::shuffle(order[d].begin(), order[d].end(), rng);
  }
  const double step = s.count > 1 ? (s.high - s.low) / static_cast<double>(s.count - 1) : 0.0;
  for (std::size_t i = 0; i < s.count; ++i) {
    for (std::size_t d = 0; d < p.dims; ++d) x[d] = s.low + step * static_cast<double>(order[d][i]);
    double y = evaluate(p.truth, x);
    if (is_valid(y)) pts.push_back(x, y);
  }
  return pts;
}

inline std::uint64_t problem_seed(std::uint64_t seed, const BenchmarkProblem& p) {
  return derive_seed(seed, {0xbe7c, static_cast<std::uint64_t>(p.index)});
}

inline EvalSplit make_split(const BenchmarkProblem& p, std::uint64_t seed) {
  Rng rng = make_rng(problem_seed(seed, p), {1});
  PointSet pts = sample_problem(p, rng);
  auto tts = train_test_split(pts, 0.75, problem_seed(seed, p));
  return {std::move(tts.train), std::move(tts.test), seed};
}

inline std::vector<LoadedProblem> load_benchmark(std::string_view suite, std::uint64_t seed) {
  std::vector<LoadedProblem> out;
  for (auto& p : benchmark_problems(suite)) {
    auto split = make_split(p, seed);
    out.push_back({std::move(p), std::move(split)});
  }
  return out;
}

inline std::string_view to_string(SamplerKind k) { return k == SamplerKind::uniform ? "U" : "E"; }

/// The shipped data file layout: suite,id,expression,sampler,low,high,count.
inline void write_benchmark_table(std::ostream& os) {
  os << "suite,id,expression,sampler,low,high,count\n";
  for (const auto& d : benchmark_definitions()) {
    os << d.suite << ',' << d.id << ",\"" << d.expression << "\"," << to_string(d.sampler.kind) << ','
       << nlohmann::json(d.sampler.low).dump() << ',' << nlohmann::json(d.sampler.high).dump() << ','
       << d.sampler.count << '\n';
  }
}

// ---------------------------------------------------------------------------
// Benchmark runs

enum class Solver : std::uint8_t { top_k, guided_gp, classic_gp };

inline std::string_view to_string(Solver s) {
  switch (s) {
    case Solver::top_k: return "top_k";
    case Solver::guided_gp: return "guided_gp";
    case Solver::classic_gp: return "classic_gp";
  }
  return "?";
}

inline Solver solver_from_string(std::string_view s) {
  if (s == "top_k") return Solver::top_k;
  if (s == "guided_gp") return Solver::guided_gp;
  if (s == "classic_gp") return Solver::classic_gp;
  throw std::invalid_argument("unknown solver '" + std::string(s) + "'");
}

/// Produces one logit matrix per seed for a problem's training points. Diffusion-backed
/// solvers need one; the CLI binds it to a model or to oracle one-hot logits.
using LogitSource =
    std::function<std::vector<LogitMatrix>(const BenchmarkProblem&, const PointSet&, std::span<const std::uint64_t>)>;

struct BenchConfig {
  Solver solver = Solver::classic_gp;
  std::string suite = "nguyen";
  std::size_t seeds = 5;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
  gp::GpConfig gp;
  gp::GuidanceConfig guidance;
  TopKOptions top_k;
  std::size_t workers = 1;
};

inline nlohmann::json to_json(const BenchConfig& c) {
  return {{"solver", to_string(c.solver)}, {"suite", c.suite}, {"seeds", c.seeds}, {"seed", c.seed},
          {"data_seed", c.data_seed}, {"gp", gp::to_json(c.gp)}, {"guidance", gp::to_json(c.guidance)},
          {"top_k", {{"k", c.top_k.k}, {"restarts", c.top_k.refine.restarts}}}};
}

struct BenchRow {
  std::string suite;
  std::string id;
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double train_r2 = 0;
  double test_r2 = 0;  // raw
  std::size_t complexity = 0;
  std::string expression;

  double clamped_r2() const noexcept { return ok && std::isfinite(test_r2) ? std::max(0.0, test_r2) : 0.0; }
};

struct SuiteSummary {
  std::string suite;
  std::size_t problems = 0;
  double mean_r2 = 0;  // clamped, per-problem seed mean averaged over problems
  double mean_complexity = 0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<SuiteSummary> suites;
};

inline std::uint64_t run_seed(std::uint64_t base, std::size_t s) { return derive_seed(base, {0x5eed, s}); }

inline BenchRow run_problem(const LoadedProblem& lp, std::size_t seed_index, const BenchConfig& cfg,
                            const LogitSource& source, const Vocabulary* vocab) {
  BenchRow row;
  row.suite = lp.problem.suite;
  row.id = lp.problem.id;
  row.seed_index = seed_index;
  row.seed = run_seed(derive_seed(cfg.seed, {lp.problem.index}), seed_index);
  const auto& train = lp.split.train;
  const auto& test = lp.split.test;
  try {
    Candidate c;
    switch (cfg.solver) {
      case Solver::classic_gp: {
        auto r = gp::run_islands(train, {}, cfg.gp, cfg.guidance, row.seed, 1, &test);
        c = r.best;
        break;
      }
      case Solver::guided_gp: {
        if (!source || !vocab) throw std::invalid_argument("guided_gp needs a logit source");
        std::array<std::uint64_t, 1> s{derive_seed(row.seed, {0x10})};
        auto logits = source(lp.problem, train, s);
        gp::Guide guide{&logits.at(0), vocab};
        c = gp::run_islands(train, guide, cfg.gp, cfg.guidance, row.seed, 1, &test).best;
        break;
      }
      case Solver::top_k: {
        if (!source || !vocab) throw std::invalid_argument("top_k needs a logit source");
        TopKOptions o = cfg.top_k;
        o.seed = row.seed;
        o.workers = 1;
        auto sampler = [&](std::span<const std::uint64_t> seeds) { return source(lp.problem, train, seeds); };
        c = top_k_solve(sampler, *vocab, train, &test, o);
        break;
      }
    }
    row.ok = true;
    row.train_r2 = c.train_r2;
    row.test_r2 = c.test_r2;
    row.complexity = c.complexity;
    row.expression = to_infix(c.expr);
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
    row.train_r2 = row.test_r2 = 0;
  }
  return row;
}

inline std::vector<SuiteSummary> summarize(const std::vector<BenchRow>& rows) {
  std::map<std::string, std::map<std::string, std::pair<double, double>>> acc;  // suite -> id -> sums
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (!acc.count(r.suite)) order.push_back(r.suite);
    auto& a = acc[r.suite][r.id];
    a.first += r.clamped_r2();
    a.second += static_cast<double>(r.complexity);
    ++counts[r.suite][r.id];
  }
  std::vector<SuiteSummary> out;
  for (const auto& s : order) {
    SuiteSummary sum;
    sum.suite = s;
    for (const auto& [id, a] : acc[s]) {
      const auto n = static_cast<double>(counts[s][id]);
      sum.mean_r2 += a.first / n;
      sum.mean_complexity += a.second / n;
      ++sum.problems;
    }
    sum.mean_r2 /= static_cast<double>(sum.problems);
    sum.mean_complexity /= static_cast<double>(sum.problems);
    out.push_back(sum);
  }
  return out;
}

/// Every (problem, seed) pair runs independently; rows come back in table order, seeds ascending.
inline BenchResult run_benchmark(const BenchConfig& cfg, const LogitSource& source = {}, const Vocabulary* vocab = nullptr) {
  if (cfg.seeds == 0) throw std::invalid_argument("run_benchmark: need at least one seed");
  auto problems = load_benchmark(cfg.suite, cfg.data_seed);
  BenchResult res;
  res.rows.resize(problems.size() * cfg.seeds);
  parallel_for(res.rows.size(), cfg.workers, [&](std::size_t i) {
    res.rows[i] = run_problem(problems[i / cfg.seeds], i % cfg.seeds, cfg, source, vocab);
  });
  res.suites = summarize(res.rows);
  return res;
}

namespace detail {
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}
}  // namespace detail

inline void write_bench_csv(std::ostream& os, const BenchResult& r) {
  os << "suite,id,seed_index,seed,status,train_r2,test_r2,test_r2_clamped,complexity,expression\n";
  for (const auto& row : r.rows) {
    os << row.suite << ',' << row.id << ',' << row.seed_index << ',' << row.seed << ',' << (row.ok ? "ok" : "failed")
       << ',' << detail::fmt(row.train_r2) << ',' << detail::fmt(row.test_r2) << ',' << detail::fmt(row.clamped_r2())
       << ',' << row.complexity << ',' << detail::csv_quote(row.ok ? row.expression : row.error) << '\n';
  }
}

inline nlohmann::json finite_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

/// JSON lines: one object per row, then one summary object per suite.
inline void write_bench_jsonl(std::ostream& os, const BenchResult& r, const nlohmann::json& config) {
  for (const auto& row : r.rows) {
    nlohmann::json j{{"type", "row"},         {"suite", row.suite},        {"id", row.id},
                     {"seed_index", row.seed_index}, {"seed", row.seed}, {"status", row.ok ? "ok" : "failed"},
                     {"train_r2", finite_json(row.train_r2)}, {"test_r2", finite_json(row.test_r2)},
                     {"test_r2_clamped", row.clamped_r2()}, {"complexity", row.complexity}};
    if (row.ok)
      j["expression"] = row.expression;
    else
      j["error"] = row.error;
    os << j.dump() << '\n';
  }
  for (const auto& s : r.suites)
    os << nlohmann::json{{"type", "suite"},          {"suite", s.suite},      {"problems", s.problems},
                         {"mean_r2", s.mean_r2}, {"mean_complexity", s.mean_complexity}, {"config", config}}
              .dump()
       << '\n';
}

}  // namespace diffsr
