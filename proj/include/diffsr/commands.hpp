#pragma once

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "benchmark.hpp"
#include "datagen.hpp"
#include "decoding/sampler.hpp"
#include "decoding/topk.hpp"
#include "diffusion/train.hpp"
#include "gp/evolve.hpp"
#include "metrics.hpp"
#include "parse.hpp"
#include "run_config.hpp"

namespace diffsr::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

inline constexpr const char* kOutputDirEnv = "DIFFSR_OUTPUT_DIR";
inline constexpr const char* kResultSchema = "diffsr.result/1";

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Scalar = float;
using Model = DiffusionModel<Scalar>;

/// Flag beats config, config beats the environment, then the working directory.
inline std::filesystem::path output_dir(const RunConfig& cfg, const std::string& flag = {}) {
  if (!flag.empty()) return flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return ".";
}

inline std::filesystem::path ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory " + p.string() + ": " + ec.message());
  return p;
}

inline nlohmann::json envelope(const std::string& command, const RunConfig& cfg) {
  return {{"schema", kResultSchema}, {"command", command}, {"config", to_json(cfg)}};
}

// ---------------------------------------------------------------------------
// points files

inline PointSet read_points_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("points file is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.pop_back();
      header.push_back(cell);
    }
  }
  if (header.size() < 2 || header.back() != "y") throw DataError("points header must be x_1,...,x_D,y");
  for (std::size_t i = 0; i + 1 < header.size(); ++i)
    if (header[i] != "x_" + std::to_string(i + 1)) throw DataError("points header must be x_1,...,x_D,y");
  PointSet pts;
  pts.dims = header.size() - 1;
  std::vector<double> row(pts.dims);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      double v = std::strtod(cell.c_str(), &end);
      while (end && *end && std::isspace(static_cast<unsigned char>(*end))) ++end;
      if (end == cell.c_str() || (end && *end)) throw DataError("points line " + std::to_string(lineno) + ": bad number");
      vals.push_back(v);
    }
    if (vals.size() != header.size())
      throw DataError("points line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " values");
    std::copy(vals.begin(), vals.end() - 1, row.begin());
    pts.push_back(row, vals.back());
  }
  if (pts.empty()) throw DataError("points file has no rows");
  if (!pts.all_finite()) throw DataError("points file contains non-finite values");
  return pts;
}

/// CSV with an x_1..x_D,y header, or a corpus record ({"points": {"Z", "y"}}). A corpus file
/// (header line plus records) yields its first record.
inline PointSet read_points_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open points file " + path);
  in >> std::ws;
  if (in.peek() != '{') return read_points_csv(in);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      // a pretty-printed single record
      in.clear();
      in.seekg(0);
      j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded()) throw DataError("points file " + path + " is not valid JSON");
    }
    if (j.contains("format")) continue;  // corpus header
    try {
      auto r = corpus_record_from_json(j);
      if (r.points.empty()) throw DataError("points record has no rows");
      return r.points;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("points record: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw DataError(std::string("points record: ") + e.what());
    }
  }
  throw DataError("points file " + path + " holds no record");
}

// ---------------------------------------------------------------------------
// models and logit sources

struct LoadedModel {
  Vocabulary vocab;
  std::unique_ptr<Model> model;
};

/// Loads a checkpoint and switches to its EMA weights when present.
inline LoadedModel load_model(const std::string& path) {
  auto lc = load_checkpoint<Scalar>(path);
  if (!lc.ema.empty()) apply_weights(*lc.model, lc.ema);
  return {lc.vocab, std::move(lc.model)};
}

inline LoadedModel random_model(const RunConfig& cfg) {
  auto vocab = cfg.vocabulary();
  return {vocab, std::make_unique<Model>(cfg.model_for(vocab), cfg.seed)};
}

inline LogitSource model_source(const Model& model, const Vocabulary& vocab, const SamplingOptions& so) {
  return [&model, &vocab, so](const BenchmarkProblem&, const PointSet& train, std::span<const std::uint64_t> seeds) {
    const PointSet* cond = model.config().conditional ? &train : nullptr;
    if (cond && train.dims > static_cast<std::size_t>(model.config().max_dims))
      throw std::invalid_argument("problem has more variables than the model supports");
    return sample_logits(model, vocab, cond, seeds, so);
  };
}

/// One-hot logits of each benchmark problem's ground truth.
inline LogitSource oracle_source(const Vocabulary& vocab, std::size_t canvas) {
  return [&vocab, canvas](const BenchmarkProblem& p, const PointSet&, std::span<const std::uint64_t> seeds) {
    return std::vector<LogitMatrix>(seeds.size(), oracle_logits(p.truth, vocab, canvas));
  };
}

/// One-hot logits of a fixed expression, whatever the problem.
inline LogitSource fixed_oracle_source(const Expr& e, const Vocabulary& vocab, std::size_t canvas) {
  auto m = oracle_logits(e, vocab, canvas);
  return [m](const BenchmarkProblem&, const PointSet&, std::span<const std::uint64_t> seeds) {
    return std::vector<LogitMatrix>(seeds.size(), m);
  };
}

// ---------------------------------------------------------------------------
// commands

inline nlohmann::json cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out_path) {
  CorpusConfig cc = cfg.corpus;
  cc.workers = cfg.resolved_workers();
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write corpus " + out_path.string());
  write_corpus(out, cfg.corpus_count, cfg.seed, cc);
  auto j = envelope("gen-data", cfg);
  j["corpus"] = out_path.string();
  j["records"] = cfg.corpus_count;
  return j;
}

inline Corpus read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path);
  try {
    return read_corpus(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corpus: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

/// Trains from scratch and writes checkpoint.bin (with EMA weights) and train_log.csv.
inline nlohmann::json cmd_train(const RunConfig& cfg, const std::string& corpus_path, const std::filesystem::path& dir,
                                std::ostream* progress = nullptr) {
  auto corpus = read_corpus_file(corpus_path);
  const auto vocab = cfg.vocabulary();
  const auto mc = cfg.model_for(vocab);
  std::size_t skipped = 0;
  std::vector<TrainingExample> data;
  try {
    data = make_training_set(corpus.records, vocab, mc, &skipped);
  } catch (const std::exception& e) {
    throw DataError(std::string("corpus does not match the configured vocabulary: ") + e.what());
  }
  if (data.empty()) throw DataError("no corpus record fits the canvas");
  Model model(mc, cfg.seed);
  ensure_dir(dir);
  std::ofstream log(dir / "train_log.csv");
  if (!log) throw DataError("cannot write " + (dir / "train_log.csv").string());
  write_train_log_header(log);
  auto result = train(model, data, cfg.train, [&](const TrainLogRow& r) {
    write_train_log_row(log, r);
    if (progress && r.step % cfg.train.log_every == 0)
      *progress << "step " << r.step << " loss " << r.loss.total << '\n';
  });
  const auto ckpt = dir / "checkpoint.bin";
  save_checkpoint(ckpt.string(), model, vocab, &result.ema, to_json(cfg));
  auto j = envelope("train", cfg);
  j["checkpoint"] = ckpt.string();
  j["train_log"] = (dir / "train_log.csv").string();
  j["examples"] = data.size();
  j["skipped"] = skipped;
  j["steps"] = result.log.size();
  if (!result.log.empty()) {
    j["first_loss"] = result.log.front().loss.total;
    j["final_loss"] = result.log.back().loss.total;
  }
  return j;
}

struct SampleOutput {
  std::vector<TokenSequence> sequences;  // padding stripped
  nlohmann::json metrics;
};

/// Unconditional sampling: `cfg.sample_count` greedy decodes and the diversity triple.
inline SampleOutput sample_unconditional(const Model& model, const Vocabulary& vocab, const RunConfig& cfg) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.sample_count; ++i) seeds.push_back(derive_seed(cfg.seed, {0x5a, i}));
  std::vector<LogitMatrix> logits(seeds.size());
  const std::size_t workers = cfg.resolved_workers();
  const std::size_t chunk = (seeds.size() + workers - 1) / workers;
  parallel_for(workers, workers, [&](std::size_t w) {
    const std::size_t lo = std::min(seeds.size(), w * chunk), hi = std::min(seeds.size(), lo + chunk);
    if (lo == hi) return;
    auto part = sample_logits(model, vocab, nullptr, std::span(seeds).subspan(lo, hi - lo), cfg.sampling);
    for (std::size_t i = lo; i < hi; ++i) logits[i] = std::move(part[i - lo]);
  });
  SampleOutput out;
  std::vector<Expr> valid;
  nlohmann::json eqs = nlohmann::json::array();
  for (const auto& l : logits) {
    auto toks = greedy_decode(l);
    auto stripped = strip_padding(toks, vocab);
    out.sequences.emplace_back(stripped.begin(), stripped.end());
    auto d = decode_expression(toks, vocab);
    nlohmann::json e{{"tokens", to_strings(stripped, vocab)}, {"valid", d.expr.has_value()}};
    if (d.expr) {
      e["infix"] = to_infix(*d.expr);
      valid.push_back(*d.expr);
    }
    eqs.push_back(e);
  }
  std::vector<TokenSequence> padded;
  for (const auto& l : logits) padded.push_back(greedy_decode(l));
  nlohmann::json m;
  m["count"] = logits.size();
  m["valid_rate"] = valid_rate(padded, vocab);
  m["self_bleu"] = out.sequences.size() >= 2 ? nlohmann::json(self_bleu(out.sequences)) : nlohmann::json(nullptr);
  m["complexity_entropy"] = valid.empty() ? nlohmann::json(nullptr) : nlohmann::json(complexity_entropy(valid));
  m["equations"] = eqs;
  out.metrics = m;
  return out;
}

inline nlohmann::json cmd_sample(const RunConfig& cfg, const Model& model, const Vocabulary& vocab) {
  auto s = sample_unconditional(model, vocab, cfg);
  auto j = envelope("sample", cfg);
  for (auto& [k, v] : s.metrics.items()) j[k] = v;
  return j;
}

/// Splits the points, runs the configured solver and reports the best candidate.
/// `source` may be empty for classic_gp.
inline nlohmann::json cmd_solve(const RunConfig& cfg, const PointSet& points, const LogitSource& source,
                                const Vocabulary& vocab) {
  if (points.size() < 2) throw DataError("need at least two points");
  auto split = train_test_split(points, cfg.train_fraction, derive_seed(cfg.seed, {0x501e}));
  if (split.test.empty() || split.train.empty()) throw DataError("train/test split left one side empty");
  BenchmarkProblem problem;
  problem.id = "user";
  problem.dims = points.dims;
  const auto workers = cfg.resolved_workers();
  Candidate c;
  switch (cfg.solve_solver) {
    case Solver::classic_gp: c = gp::run_islands(split.train, {}, cfg.gp, cfg.guidance, cfg.seed, workers, &split.test).best; break;
    case Solver::guided_gp: {
      if (!source) throw std::invalid_argument("guided_gp needs --checkpoint or --oracle-expr");
      std::array<std::uint64_t, 1> s{derive_seed(cfg.seed, {0x10})};
      auto logits = source(problem, split.train, s);
      gp::Guide guide{&logits.at(0), &vocab};
      c = gp::run_islands(split.train, guide, cfg.gp, cfg.guidance, cfg.seed, workers, &split.test).best;
      break;
    }
    case Solver::top_k: {
      if (!source) throw std::invalid_argument("top_k needs --checkpoint or --oracle-expr");
      auto sampler = [&](std::span<const std::uint64_t> seeds) { return source(problem, split.train, seeds); };
      c = top_k_solve(sampler, vocab, split.train, &split.test, cfg.top_k_options());
      break;
    }
  }
  auto j = envelope("solve", cfg);
  j["solver"] = to_string(cfg.solve_solver);
  j["train_points"] = split.train.size();
  j["test_points"] = split.test.size();
  j["candidate"] = to_json(c);
  return j;
}

inline BenchResult cmd_bench(const RunConfig& cfg, const LogitSource& source, const Vocabulary* vocab,
                             const std::filesystem::path& dir) {
  auto bc = cfg.bench();
  auto result = run_benchmark(bc, source, vocab);
  ensure_dir(dir);
  std::ofstream csv(dir / "bench.csv");
  std::ofstream jsonl(dir / "bench.jsonl");
  if (!csv || !jsonl) throw DataError("cannot write benchmark results to " + dir.string());
  write_bench_csv(csv, result);
  write_bench_jsonl(jsonl, result, to_json(cfg));
  return result;
}

inline nlohmann::json bench_summary(const RunConfig& cfg, const BenchResult& r, const std::filesystem::path& dir) {
  auto j = envelope("bench", cfg);
  j["csv"] = (dir / "bench.csv").string();
  j["jsonl"] = (dir / "bench.jsonl").string();
  j["rows"] = r.rows.size();
  nlohmann::json suites = nlohmann::json::array();
  for (const auto& s : r.suites)
    suites.push_back({{"suite", s.suite}, {"problems", s.problems}, {"mean_r2", s.mean_r2}, {"mean_complexity", s.mean_complexity}});
  j["suites"] = suites;
  return j;
}

}  // namespace diffsr::cli
