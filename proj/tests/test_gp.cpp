#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>
#include <vector>

#include "diffsr/gp/evolve.hpp"
#include "diffsr/parse.hpp"

using namespace diffsr;
using namespace diffsr::gp;

namespace {

PointSet sample_uniform(const Expr& e, std::size_t n, std::size_t dims, double lo, double hi, std::uint64_t seed) {
  Rng rng(seed);
  PointSet p;
  p.dims = dims;
  std::vector<double> x(dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = uniform(rng, lo, hi);
    p.push_back(x, evaluate(e, x));
  }
  return p;
}

LogitMatrix oracle(const Expr& e, const Vocabulary& vocab, std::size_t canvas = 24) {
  auto toks = pad_to(encode_expression(e, vocab), canvas, vocab);
  return LogitMatrix::one_hot(toks, vocab);
}

GpConfig small_gp() {
  GpConfig c;
  c.population = 60;
  c.generations = 15;
  return c;
}

}  // namespace

TEST(Mask, DisjointAndFullLength) {
  for (auto mode : {VocabMode::skeleton, VocabMode::full}) {
    Vocabulary vocab({.mode = mode});
    auto leaf = category_mask(NodeCategory::leaf, vocab);
    auto op = category_mask(NodeCategory::op, vocab);
    ASSERT_EQ(leaf.size(), vocab.size());
    ASSERT_EQ(op.size(), vocab.size());
    int leaves = 0, ops = 0;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      EXPECT_FALSE(leaf[i] && op[i]);
      leaves += leaf[i];
      ops += op[i];
    }
    EXPECT_EQ(ops, static_cast<int>(kVocabularyOperators.size()));
    EXPECT_GT(leaves, 3);
    EXPECT_EQ(leaf[0], 0);
  }
  Vocabulary vocab;
  auto two = category_mask(NodeCategory::leaf, vocab, 2);
  EXPECT_EQ(two[static_cast<std::size_t>(vocab.at("x_3"))], 0);
  EXPECT_EQ(two[static_cast<std::size_t>(vocab.at("x_2"))], 1);
}

TEST(Mask, SamplingNeverLeavesTheMask) {
  Vocabulary vocab;
  Rng rng(1);
  Eigen::MatrixXd scores = Eigen::MatrixXd::Random(2, static_cast<Eigen::Index>(vocab.size())) * 3.0;
  auto lm = LogitMatrix::from_scores(scores, vocab.hash());
  auto leaf = category_mask(NodeCategory::leaf, vocab);
  for (int i = 0; i < 100000; ++i) ASSERT_TRUE(leaf[static_cast<std::size_t>(sample_masked(lm, i % 2, leaf, rng))]);
  // no mass on the mask: uniform fallback still respects it
  auto op = category_mask(NodeCategory::op, vocab);
  auto hot = LogitMatrix::one_hot(std::vector<int>{vocab.at("x_1")}, vocab);
  for (int i = 0; i < 1000; ++i) ASSERT_TRUE(op[static_cast<std::size_t>(sample_masked(hot, 0, op, rng))]);
}

TEST(Grow, ZeroHeightIsLeaf) {
  Vocabulary vocab;
  Rng rng(2);
  auto lm = LogitMatrix::from_scores(Eigen::MatrixXd::Zero(5, static_cast<Eigen::Index>(vocab.size())), vocab.hash());
  for (int i = 0; i < 200; ++i) EXPECT_TRUE(grow_guided(lm, vocab, 0, 0, rng).is_leaf());
}

TEST(Grow, HeightOneWithOperatorMassGivesLeafChildren) {
  Vocabulary vocab;
  Rng rng(3);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(6, static_cast<Eigen::Index>(vocab.size()));
  auto op = category_mask(NodeCategory::op, vocab);
  for (std::size_t i = 0; i < op.size(); ++i)
    if (op[i]) s.col(static_cast<Eigen::Index>(i)).setConstant(8.0);
  auto lm = LogitMatrix::from_scores(s, vocab.hash());
  for (int i = 0; i < 200; ++i) {
    auto e = grow_guided(lm, vocab, 0, 1, rng);
    ASSERT_TRUE(e.is_op());
    EXPECT_EQ(e.height(), 1);
  }
}

TEST(Grow, OneHotReconstruction) {
  const char* exprs[] = {"sin(x_1^2)*cos(x_1) - 1", "x_1^3 + x_1^2 + x_1", "ln(x_1 + 1) + ln(x_1^2 + 1)",
                         "x_1*x_2 + sqrt(x_3)/exp(x_2)", "x_1"};
  Rng rng(4);
  Vocabulary vocab;
  for (const char* s : exprs) {
    auto e = parse_infix(s);
    auto lm = oracle(e, vocab);
    EXPECT_EQ(grow_guided(lm, vocab, 0, e.height(), rng), e) << s;
    EXPECT_EQ(grow_guided(lm, vocab, 0, e.height() + 3, rng), e) << s;
    // a subtree is reconstructed from its own preorder position
    if (e.size() > 2) {
      const Expr& sub = subtree_at(e, 1);
      EXPECT_EQ(grow_guided(lm, vocab, 1, sub.height(), rng), sub) << s;
    }
  }
  Vocabulary full({.mode = VocabMode::full});
  auto e = parse_infix("3.39*x_1^3 + 2.12*x_1^2 + 1.78*x_1");
  EXPECT_EQ(grow_guided(oracle(e, full, 40), full, 0, e.height(), rng), e);
}

TEST(Grow, GrownConstantsAlwaysReencode) {
  Vocabulary full({.mode = VocabMode::full});
  Rng rng(6);
  std::vector<int> toks{full.at("-"), full.at("N0012"), full.at("E-100")};
  auto lm = LogitMatrix::one_hot(toks, full);
  for (int i = 0; i < 50; ++i) {
    auto e = grow_guided(lm, full, 0, 0, rng);
    ASSERT_TRUE(e.is_constant());
    EXPECT_NO_THROW(encode_expression(e, full)) << e.value();
  }
}

TEST(Grow, RowsPastCanvasReuseLastRow) {
  Vocabulary vocab;
  Rng rng(5);
  auto lm = LogitMatrix::one_hot(std::vector<int>{*vocab.op_token(Op::sin), vocab.at("x_1")}, vocab);
  EXPECT_EQ(grow_guided(lm, vocab, 7, 3, rng), parse_infix("x_1"));
  EXPECT_EQ(grow_guided(lm, vocab, 0, 3, rng), parse_infix("sin(x_1)"));
}

TEST(Mutation, DeltaZeroMatchesRandomMutation) {
  Vocabulary vocab;
  auto truth = parse_infix("sin(x_1^2)*cos(x_1) - 1");
  auto lm = oracle(truth, vocab);
  GuidedGrower grower(lm, vocab, 1);
  PrimitiveSet ps;
  MutationConfig mc{0.0, 6, 7};
  Rng seed_rng(6);
  for (int i = 0; i < 200; ++i) {
    Expr e = random_tree(ps, 4, i % 2 == 0, seed_rng);
    Rng a(static_cast<std::uint64_t>(i)), b(static_cast<std::uint64_t>(i));
    EXPECT_EQ(guided_mutation(e, &grower, ps, mc, a), random_mutation(e, ps, mc, b));
    EXPECT_EQ(a(), b());
  }
}

TEST(Mutation, DeltaOneAlwaysUsesTheLogits) {
  Vocabulary vocab;
  auto truth = parse_infix("x_1*x_1 + x_1");
  auto lm = oracle(truth, vocab);
  GuidedGrower grower(lm, vocab, 1);
  PrimitiveSet ps;
  ps.functions = {Op::sin};
  ps.constants = false;
  MutationConfig mc{1.0, 6, 7};
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Expr e = random_tree(ps, 3, true, rng);
    Expr m = guided_mutation(e, &grower, ps, mc, rng);
    // the oracle tokens only contain add, mul and x_1
    for (std::size_t p = 0; p < m.size(); ++p) {
      const Expr& n = subtree_at(m, p);
      if (n.is_op()) EXPECT_TRUE(n.op() == Op::sin || n.op() == Op::add || n.op() == Op::mul);
    }
    EXPECT_LE(m.height(), 7);
  }
}

TEST(Mutation, OffspringAreValidAndWithinHeight) {
  Vocabulary vocab({.mode = VocabMode::full});
  Rng rng(8);
  std::srand(8);
  Eigen::MatrixXd s = Eigen::MatrixXd::Random(32, static_cast<Eigen::Index>(vocab.size())) * 4.0;
  auto lm = LogitMatrix::from_scores(s, vocab.hash());
  GuidedGrower grower(lm, vocab, 3);
  PrimitiveSet ps;
  ps.dims = 3;
  MutationConfig mc{0.5, 6, 7};
  Expr e = random_tree(ps, 5, false, rng);
  Expr f = random_tree(ps, 6, true, rng);
  for (int i = 0; i < 3000; ++i) {
    e = guided_mutation(e, &grower, ps, mc, rng);
    std::tie(e, f) = crossover(e, f, 7, rng);
    for (const Expr* x : {&e, &f}) {
      ASSERT_LE(x->height(), 7);
      ASSERT_TRUE(is_valid_prefix(encode_expression(*x, vocab), vocab)) << to_infix(*x);
    }
  }
}

TEST(Population, ClonesAndRamp) {
  Vocabulary vocab;
  auto truth = parse_infix("sin(x_1^2)*cos(x_1) - 1");
  auto lm = oracle(truth, vocab);
  GpConfig gp = small_gp();
  GuidanceConfig gc;
  Rng rng(9);
  auto pop = init_population({&lm, &vocab}, gp, gc, 1, rng);
  ASSERT_TRUE(pop.seeded);
  ASSERT_EQ(pop.members.size(), gp.population);
  std::size_t clones = 0;
  for (const auto& ind : pop.members) {
    clones += ind.expr == truth;
    EXPECT_LE(ind.expr.height(), 6);
    EXPECT_GE(ind.expr.height(), 2);
  }
  EXPECT_EQ(clones, gc.seed_copies);
  gc.seed_copies = gp.population;
  auto all = init_population({&lm, &vocab}, gp, gc, 1, rng);
  for (const auto& ind : all.members) EXPECT_EQ(ind.expr, truth);
  // an unparsable greedy sequence falls back to random trees
  auto junk = LogitMatrix::one_hot(std::vector<int>(5, *vocab.op_token(Op::add)), vocab);
  auto fallback = init_population({&junk, &vocab}, gp, gc, 1, rng);
  EXPECT_FALSE(fallback.seeded);
  EXPECT_EQ(fallback.members.size(), gp.population);
}

TEST(Evolve, ElitismAndDeterminism) {
  auto truth = parse_infix("x_1^3 + x_1^2");
  auto pts = sample_uniform(truth, 40, 1, -1, 1, 1);
  GpConfig gp = small_gp();
  Rng a(10), b(10);
  auto r1 = evolve(pts, {}, gp, {}, a);
  auto r2 = evolve(pts, {}, gp, {}, b);
  ASSERT_EQ(r1.history.size(), static_cast<std::size_t>(gp.generations + 1));
  for (std::size_t i = 1; i < r1.history.size(); ++i)
    EXPECT_LE(r1.history[i].best_rmse, r1.history[i - 1].best_rmse);
  for (std::size_t i = 0; i < r1.history.size(); ++i) EXPECT_EQ(r1.history[i].best_rmse, r2.history[i].best_rmse);
  EXPECT_EQ(r1.candidate.expr, r2.candidate.expr);
  EXPECT_FALSE(r1.seeded);
  EXPECT_LE(r1.candidate_rmse, r1.best.fitness);
}

TEST(Evolve, SeededTruthIsImmediatelyExact) {
  Vocabulary vocab;
  auto truth = parse_infix("sin(x_1^2)*cos(x_1) - 1");
  auto pts = sample_uniform(truth, 50, 1, -1, 1, 2);
  auto lm = oracle(truth, vocab);
  GpConfig gp = small_gp();
  gp.generations = 3;
  Rng rng(11);
  auto r = evolve(pts, {&lm, &vocab}, gp, {}, rng, &pts);
  EXPECT_TRUE(r.seeded);
  EXPECT_EQ(r.history[0].best_rmse, 0.0);
  EXPECT_EQ(generations_to(r.history, 0.99), 0);
  EXPECT_DOUBLE_EQ(r.candidate.test_r2, 1.0);
}

TEST(Evolve, StopsAtTargetR2) {
  auto truth = parse_infix("x_1 + x_1^2");
  auto pts = sample_uniform(truth, 40, 1, -1, 1, 3);
  GpConfig gp = small_gp();
  gp.generations = 200;
  gp.stop_r2 = 0.5;
  Rng rng(12);
  auto r = evolve(pts, {}, gp, {}, rng);
  EXPECT_GE(r.history.back().best_r2, 0.5);
  EXPECT_LT(r.history.size(), 201u);
}

TEST(Evolve, RejectsBadConfig) {
  PointSet pts = sample_uniform(parse_infix("x_1"), 5, 1, 0, 1, 1);
  Rng rng(1);
  GpConfig gp = small_gp();
  gp.crossover_rate = 1.5;
  EXPECT_THROW(evolve(pts, {}, gp, {}, rng), std::invalid_argument);
  GuidanceConfig gc;
  gc.seed_copies = 1000;
  EXPECT_THROW(evolve(pts, {}, small_gp(), gc, rng), std::invalid_argument);
}

TEST(Islands, SingleIslandMatchesEvolveAndReductionIsMin) {
  auto truth = parse_infix("x_1^2 + sin(x_1)");
  auto pts = sample_uniform(truth, 40, 1, -1, 1, 4);
  GpConfig gp = small_gp();
  gp.generations = 5;
  GuidanceConfig gc;
  gc.islands = 1;
  auto one = run_islands(pts, {}, gp, gc, 77);
  Rng rng(island_seed(77, 0));
  auto direct = evolve(pts, {}, gp, gc, rng);
  EXPECT_EQ(one.best.expr, direct.candidate.expr);

  gc.islands = 4;
  auto serial = run_islands(pts, {}, gp, gc, 77, 1);
  auto threaded = run_islands(pts, {}, gp, gc, 77, 3);
  EXPECT_EQ(serial.best.expr, threaded.best.expr);
  EXPECT_EQ(serial.best_island, threaded.best_island);
  for (const auto& isl : serial.islands) EXPECT_LE(serial.islands[serial.best_island].candidate_rmse, isl.candidate_rmse);

  std::ostringstream csv;
  write_history_csv(csv, serial.islands);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "island,generation,best_rmse,mean_rmse,best_r2");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4 * 6);
}
