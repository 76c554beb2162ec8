#include <CLI11.hpp>

#include <iostream>

#include "diffsr/commands.hpp"

using namespace diffsr;
using namespace diffsr::cli;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::size_t workers = 0;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "override a config field, e.g. --set gp.population=100");
  sub->add_option("--workers", c.workers, "worker threads (0 = all cores)");
  sub->add_option("--out", c.out, "output directory (default: $DIFFSR_OUTPUT_DIR or .)");
}

RunConfig resolve(const Common& c, CLI::App* sub) {
  nlohmann::json j = c.config.empty() ? nlohmann::json::object() : load_config_file(c.config);
  for (const auto& o : c.overrides) apply_override(j, o);
  if (sub->count("--workers")) j["workers"] = c.workers;
  return run_config_from_json(j);
}

void emit(const nlohmann::json& j, const std::filesystem::path& file) {
  std::cout << j.dump(2) << '\n';
  if (!file.empty()) {
    std::ofstream out(file);
    out << j.dump(2) << '\n';
  }
}

LogitSource source_for(const RunConfig& cfg, const std::string& checkpoint, const std::string& oracle_expr,
                       std::optional<LoadedModel>& holder, Vocabulary& vocab) {
  if (!checkpoint.empty()) {
    holder = load_model(checkpoint);
    vocab = holder->vocab;
    return model_source(*holder->model, vocab, cfg.sampling);
  }
  vocab = cfg.vocabulary();
  if (!oracle_expr.empty()) {
    auto e = parse_infix(oracle_expr);
    return fixed_oracle_source(e, vocab, static_cast<std::size_t>(cfg.model.canvas));
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-based symbolic regression"};
  app.require_subcommand(1);

  Common gen_c, train_c, sample_c, solve_c, bench_c;
  std::string corpus_out = "corpus.jsonl";
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, gen_c);
  gen->add_option("--output", corpus_out, "corpus file name inside the output directory");

  std::string corpus_in;
  auto* trn = app.add_subcommand("train", "train a model on a corpus");
  add_common(trn, train_c);
  trn->add_option("--corpus", corpus_in, "corpus JSONL")->required()->check(CLI::ExistingFile);

  std::string sample_ckpt;
  bool random_init = false;
  auto* smp = app.add_subcommand("sample", "unconditional sampling with diversity metrics");
  add_common(smp, sample_c);
  auto* smp_ck = smp->add_option("--checkpoint", sample_ckpt, "model checkpoint")->check(CLI::ExistingFile);
  auto* smp_rand = smp->add_flag("--random-init", random_init, "use an untrained model built from the config");
  smp_ck->excludes(smp_rand);

  std::string points_path, solve_ckpt, solve_oracle, solver;
  auto* slv = app.add_subcommand("solve", "regress an expression onto a points file");
  add_common(slv, solve_c);
  slv->add_option("--points", points_path, "CSV (x_1..x_D,y) or corpus JSON record")->required()->check(CLI::ExistingFile);
  slv->add_option("--solver", solver, "top_k | guided_gp | classic_gp");
  auto* slv_ck = slv->add_option("--checkpoint", solve_ckpt, "model checkpoint")->check(CLI::ExistingFile);
  auto* slv_or = slv->add_option("--oracle-expr", solve_oracle, "use one-hot logits of this infix expression");
  slv_ck->excludes(slv_or);

  std::string suite, bench_solver, bench_ckpt;
  std::size_t seeds = 0;
  bool bench_oracle = false;
  auto* bch = app.add_subcommand("bench", "run a benchmark suite");
  add_common(bch, bench_c);
  bch->add_option("--suite", suite, "nguyen | jin | constant | livermore | all");
  bch->add_option("--solver", bench_solver, "top_k | guided_gp | classic_gp");
  bch->add_option("--seeds", seeds, "runs per problem");
  auto* bch_ck = bch->add_option("--checkpoint", bench_ckpt, "model checkpoint")->check(CLI::ExistingFile);
  auto* bch_or = bch->add_flag("--oracle", bench_oracle, "one-hot logits of each ground truth");
  bch_ck->excludes(bch_or);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      auto cfg = resolve(gen_c, gen);
      auto dir = ensure_dir(output_dir(cfg, gen_c.out));
      emit(cmd_gen_data(cfg, dir / corpus_out), {});
    } else if (*trn) {
      auto cfg = resolve(train_c, trn);
      auto dir = ensure_dir(output_dir(cfg, train_c.out));
      emit(cmd_train(cfg, corpus_in, dir, &std::cerr), dir / "train.json");
    } else if (*smp) {
      auto cfg = resolve(sample_c, smp);
      if (sample_ckpt.empty() && !random_init) throw ConfigError("sample needs --checkpoint or --random-init");
      auto lm = sample_ckpt.empty() ? random_model(cfg) : load_model(sample_ckpt);
      auto dir = ensure_dir(output_dir(cfg, sample_c.out));
      emit(cmd_sample(cfg, *lm.model, lm.vocab), dir / "sample.json");
    } else if (*slv) {
      if (!solver.empty()) solve_c.overrides.push_back("solve.solver=" + solver);
      auto cfg = resolve(solve_c, slv);
      std::optional<LoadedModel> holder;
      Vocabulary vocab;
      auto source = source_for(cfg, solve_ckpt, solve_oracle, holder, vocab);
      auto points = read_points_file(points_path);
      auto dir = ensure_dir(output_dir(cfg, solve_c.out));
      emit(cmd_solve(cfg, points, source, vocab), dir / "solve.json");
    } else if (*bch) {
      if (!suite.empty()) bench_c.overrides.push_back("bench.suite=" + suite);
      if (!bench_solver.empty()) bench_c.overrides.push_back("bench.solver=" + bench_solver);
      if (seeds) bench_c.overrides.push_back("bench.seeds=" + std::to_string(seeds));
      auto cfg = resolve(bench_c, bch);
      std::optional<LoadedModel> holder;
      Vocabulary vocab;
      LogitSource source;
      if (!bench_ckpt.empty()) {
        holder = load_model(bench_ckpt);
        vocab = holder->vocab;
        source = model_source(*holder->model, vocab, cfg.sampling);
      } else {
        vocab = cfg.vocabulary();
        if (bench_oracle) source = oracle_source(vocab, static_cast<std::size_t>(cfg.model.canvas));
      }
      if (cfg.bench_solver != Solver::classic_gp && !source)
        throw ConfigError(std::string(to_string(cfg.bench_solver)) + " needs --checkpoint or --oracle");
      auto dir = ensure_dir(output_dir(cfg, bench_c.out));
      auto r = cmd_bench(cfg, source, &vocab, dir);
      emit(bench_summary(cfg, r, dir), {});
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}
