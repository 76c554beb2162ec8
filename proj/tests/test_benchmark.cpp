#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "diffsr/benchmark.hpp"

using namespace diffsr;

TEST(Table, SuiteSizes) {
  EXPECT_EQ(benchmark_problems("all").size(), 48u);
  EXPECT_EQ(benchmark_problems("nguyen").size(), 12u);
  EXPECT_EQ(benchmark_problems("jin").size(), 6u);
  EXPECT_EQ(benchmark_problems("constant").size(), 8u);
  EXPECT_EQ(benchmark_problems("livermore").size(), 22u);
  EXPECT_THROW(benchmark_problems("feynman"), UnknownSuiteError);
}

TEST(Table, ShippedFileMatches) {
  std::ifstream in(std::string(DIFFSR_SOURCE_DIR) + "/data/benchmarks.csv");
  ASSERT_TRUE(in.good());
  std::stringstream file;
  file << in.rdbuf();
  std::ostringstream expect;
  write_benchmark_table(expect);
  EXPECT_EQ(file.str(), expect.str());
}

TEST(Table, ExpressionsAgreeWithHandCodedFormulas) {
  // written independently of the parser
  std::map<std::string, std::function<double(double, double)>> ref{
      {"Nguyen-1", [](double x, double) { return x * x * x + x * x + x; }},
      {"Nguyen-5", [](double x, double) { return std::sin(x * x) * std::cos(x) - 1; }},
      {"Nguyen-7", [](double x, double) { return std::log(x + 1) + std::log(x * x + 1); }},
      {"Nguyen-11", [](double x, double y) { return std::pow(x, y); }},
      {"Nguyen-12", [](double x, double y) { return std::pow(x, 4) - std::pow(x, 3) + 0.5 * y * y - y; }},
      {"Jin-6", [](double x, double y) { return 1.35 * x * y + 5.5 * std::sin((x - 1) * (y - 1)); }},
      {"Constant-4", [](double x, double y) { return 2.7 * std::pow(x, y); }},
      {"Constant-8", [](double x, double) { return std::log(x + 1.4) + std::log(x * x + 1.3); }},
      {"Livermore-1", [](double x, double) { return 1.0 / 3 + x + std::sin(x * x); }},
      {"Livermore-11", [](double x, double y) { return x * x * x * x / (x + y); }},
      {"Livermore-12", [](double x, double y) { return std::pow(x, 5) / std::pow(y, 3); }},
      {"Livermore-13", [](double x, double) { return std::cbrt(x); }},
      {"Livermore-16", [](double x, double) { return std::pow(x, 0.4); }},
      {"Livermore-20", [](double x, double) { return std::exp(-x * x); }},
      {"Livermore-22", [](double x, double) { return std::exp(-0.5 * x * x); }},
  };
  std::size_t seen = 0;
  for (const auto& p : benchmark_problems("all")) {
    auto it = ref.find(p.id);
    if (it == ref.end()) continue;
    ++seen;
    for (double x : {0.3, 0.7, 1.9}) {
      for (double y : {0.2, 0.9}) {
        std::vector<double> pt{x, y};
        pt.resize(p.dims);
        EXPECT_NEAR(evaluate(p.truth, pt), it->second(x, y), 1e-12 * std::max(1.0, std::fabs(it->second(x, y)))) << p.id;
      }
    }
  }
  EXPECT_EQ(seen, ref.size());
}

TEST(Load, SplitsAndRanges) {
  auto all = load_benchmark("all", 3);
  ASSERT_EQ(all.size(), 48u);
  for (const auto& lp : all) {
    const auto& p = lp.problem;
    const auto& s = lp.split;
    const auto n = p.sampler.count;
    EXPECT_EQ(s.train.size() + s.test.size(), n) << p.id;
    EXPECT_EQ(s.train.size(), static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(n)))) << p.id;
    for (const PointSet* ps : {&s.train, &s.test})
      for (double v : ps->inputs) {
        EXPECT_GE(v, p.sampler.low);
        EXPECT_LE(v, p.sampler.high);
      }
    EXPECT_DOUBLE_EQ(score_r2(p.truth, s.train), 1.0) << p.id;
    EXPECT_DOUBLE_EQ(score_r2(p.truth, s.test), 1.0) << p.id;
    std::set<std::vector<double>> train_rows;
    for (std::size_t i = 0; i < s.train.size(); ++i) train_rows.emplace(s.train.row(i).begin(), s.train.row(i).end());
    for (std::size_t i = 0; i < s.test.size(); ++i)
      EXPECT_FALSE(train_rows.count(std::vector<double>(s.test.row(i).begin(), s.test.row(i).end()))) << p.id;
  }
  auto nguyen = load_benchmark("nguyen", 3);
  const auto& n8 = nguyen[7];
  EXPECT_EQ(n8.problem.id, "Nguyen-8");
  EXPECT_EQ(n8.split.train.size(), 150u);
  EXPECT_EQ(n8.split.test.size(), 50u);
  auto liv = load_benchmark("livermore", 3);
  EXPECT_EQ(liv[10].problem.id, "Livermore-11");
  EXPECT_EQ(liv[10].problem.dims, 2u);
  EXPECT_EQ(liv[10].split.train.size() + liv[10].split.test.size(), 500u);
}

TEST(Load, DeterministicPerSeed) {
  auto a = load_benchmark("jin", 5);
  auto b = load_benchmark("jin", 5);
  auto c = load_benchmark("jin", 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].split.train.inputs, b[i].split.train.inputs);
    EXPECT_EQ(a[i].split.test.targets, b[i].split.test.targets);
    EXPECT_NE(a[i].split.train.inputs, c[i].split.train.inputs);
  }
  // a suite draws the same data as the full table
  auto all = load_benchmark("all", 5);
  EXPECT_EQ(all[12].split.train.inputs, a[0].split.train.inputs);
}

TEST(Load, EquallySpacedSampler) {
  auto p = benchmark_problems("nguyen")[9];  // two variables
  p.sampler = {SamplerKind::equal, 0, 1, 11};
  Rng rng(1);
  auto pts = sample_problem(p, rng);
  ASSERT_EQ(pts.size(), 11u);
  std::multiset<double> first, second;
  for (std::size_t i = 0; i < 11; ++i) {
    first.insert(pts.row(i)[0]);
    second.insert(pts.row(i)[1]);
  }
  EXPECT_EQ(first, second);
  std::size_t k = 0;
  for (double v : first) EXPECT_NEAR(v, 0.1 * static_cast<double>(k++), 1e-12);
  for (std::size_t i = 0; i < 11; ++i) EXPECT_NEAR(pts.row(i)[0], 0.1 * static_cast<double>(i), 1e-12);
}

namespace {

BenchConfig tiny(Solver s) {
  BenchConfig c;
  c.solver = s;
  c.suite = "nguyen";
  c.seeds = 2;
  c.seed = 4;
  c.gp.population = 30;
  c.gp.generations = 3;
  c.guidance.islands = 2;
  c.top_k.k = 2;
  return c;
}

LogitSource oracle_source(const Vocabulary& vocab) {
  return [&vocab](const BenchmarkProblem& p, const PointSet&, std::span<const std::uint64_t> seeds) {
    std::vector<LogitMatrix> out;
    for (std::size_t i = 0; i < seeds.size(); ++i) out.push_back(oracle_logits(p.truth, vocab, 24));
    return out;
  };
}

}  // namespace

TEST(Run, ShapeDeterminismAndMeans) {
  auto cfg = tiny(Solver::classic_gp);
  auto a = run_benchmark(cfg);
  cfg.workers = 3;
  auto b = run_benchmark(cfg);
  ASSERT_EQ(a.rows.size(), 24u);
  std::ostringstream ca, cb;
  write_bench_csv(ca, a);
  write_bench_csv(cb, b);
  EXPECT_EQ(ca.str(), cb.str());
  ASSERT_EQ(a.suites.size(), 1u);
  // independent recomputation of the suite mean
  double total = 0;
  for (std::size_t p = 0; p < 12; ++p) {
    double s = 0;
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& r = a.rows[p * 2 + k];
      EXPECT_EQ(r.seed_index, k);
      s += (r.ok && std::isfinite(r.test_r2)) ? std::max(0.0, r.test_r2) : 0.0;
    }
    total += s / 2;
  }
  EXPECT_NEAR(a.suites[0].mean_r2, total / 12, 1e-12);
  std::ostringstream js;
  write_bench_jsonl(js, a, to_json(cfg));
  std::istringstream lines(js.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j["type"] == "row" || j["type"] == "suite");
    ++n;
  }
  EXPECT_EQ(n, 25);
}

TEST(Run, MissingLogitSourceIsARowFailure) {
  auto cfg = tiny(Solver::guided_gp);
  cfg.seeds = 1;
  auto r = run_benchmark(cfg);
  ASSERT_EQ(r.rows.size(), 12u);
  for (const auto& row : r.rows) {
    EXPECT_FALSE(row.ok);
    EXPECT_EQ(row.clamped_r2(), 0.0);
  }
  EXPECT_EQ(r.suites[0].mean_r2, 0.0);
}

TEST(Run, OracleTopKSolvesEncodableProblems) {
  Vocabulary vocab;
  auto cfg = tiny(Solver::top_k);
  cfg.seeds = 1;
  auto r = run_benchmark(cfg, oracle_source(vocab), &vocab);
  for (const auto& row : r.rows) {
    if (row.id == "Nguyen-11") {
      EXPECT_FALSE(row.ok);  // binary pow has no token
      continue;
    }
    ASSERT_TRUE(row.ok) << row.id << ": " << row.error;
    EXPECT_GT(row.test_r2, 0.9999) << row.id;
  }
}

TEST(Run, OracleGuidedGpSeedsTheTruth) {
  Vocabulary vocab;
  auto cfg = tiny(Solver::guided_gp);
  cfg.suite = "constant";
  cfg.seeds = 1;
  auto r = run_benchmark(cfg, oracle_source(vocab), &vocab);
  auto find = [&](const std::string& id) {
    for (const auto& row : r.rows)
      if (row.id == id) return row;
    throw std::runtime_error("missing row");
  };
  EXPECT_GT(find("Constant-1").test_r2, 0.9999);
  EXPECT_GT(find("Constant-2").test_r2, 0.9999);
}
