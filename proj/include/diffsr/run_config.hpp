#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "benchmark.hpp"
#include "datagen.hpp"
#include "parallel.hpp"
#include "diffusion/train.hpp"

namespace diffsr {

inline constexpr const char* kRunSchema = "diffsr.run/1";

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Everything a CLI command needs. JSON layout mirrors the sections below.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0: all available cores
  VocabMode mode = VocabMode::skeleton;
  std::string output_dir;

  std::size_t corpus_count = 1000;
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train = [] {
    TrainConfig t;
    t.batch_size = 128;
    return t;
  }();

  std::size_t sample_count = 100;
  SamplingOptions sampling;

  int k = 20;
  int restarts = 3;
  gp::GuidanceConfig guidance;
  gp::GpConfig gp;

  Solver solve_solver = Solver::top_k;
  double train_fraction = 0.75;

  Solver bench_solver = Solver::classic_gp;
  std::string bench_suite = "nguyen";
  std::size_t bench_seeds = 5;
  std::uint64_t data_seed = 0;

  Vocabulary vocabulary() const {
    VocabularyOptions o;
    o.mode = mode;
    o.variables = std::max({o.variables, corpus.max_dims, model.max_dims});
    o.mantissa_digits = corpus.mantissa_digits;
    return Vocabulary(o);
  }

  /// Model config with the vocabulary size filled in.
  ModelConfig model_for(const Vocabulary& v) const {
    ModelConfig m = model;
    m.vocab_size = static_cast<int>(v.size());
    return m;
  }

  std::size_t resolved_workers() const { return workers == 0 ? default_workers() : workers; }

  TopKOptions top_k_options() const {
    TopKOptions o;
    o.k = k;
    o.seed = seed;
    o.refine.restarts = restarts;
    o.workers = resolved_workers();
    return o;
  }

  BenchConfig bench() const {
    BenchConfig b;
    b.solver = bench_solver;
    b.suite = bench_suite;
    b.seeds = bench_seeds;
    b.seed = seed;
    b.data_seed = data_seed;
    b.gp = gp;
    b.guidance = guidance;
    b.top_k = top_k_options();
    b.workers = resolved_workers();
    return b;
  }

  void validate() const {
    try {
      corpus.limits.validate();
      model_for(vocabulary()).validate();
      train.validate();
      gp.validate();
      guidance.validate(gp);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (k < 1 || restarts < 0) throw ConfigError("decoding: k must be positive and restarts non-negative");
    if (sample_count < 1) throw ConfigError("sampling.count must be positive");
    if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("solve.train_fraction must lie in (0, 1)");
    if (bench_seeds < 1) throw ConfigError("bench.seeds must be positive");
    if (corpus.max_dims > model.max_dims) throw ConfigError("corpus.max_dims exceeds model.max_dims");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json model = c.model;
  model.erase("vocab_size");
  nlohmann::json train = c.train;
  nlohmann::json corpus = to_json(c.corpus);
  corpus["count"] = c.corpus_count;
  std::vector<std::string> fs;
  for (Op op : c.gp.functions) fs.emplace_back(op_name(op));
  return {{"schema", kRunSchema},
          {"seed", c.seed},
          {"workers", c.workers},
          {"mode", to_string(c.mode)},
          {"output_dir", c.output_dir},
          {"corpus", corpus},
          {"model", model},
          {"train", train},
          {"sampling",
           {{"count", c.sample_count}, {"clamp", c.sampling.clamp}, {"max_condition_points", c.sampling.max_condition_points}}},
          {"decoding",
           {{"k", c.k},
            {"restarts", c.restarts},
            {"delta", c.guidance.delta},
            {"seed_copies", c.guidance.seed_copies},
            {"grow_height", c.guidance.grow_height},
            {"islands", c.guidance.islands}}},
          {"gp",
           {{"population", c.gp.population},
            {"crossover_rate", c.gp.crossover_rate},
            {"mutation_rate", c.gp.mutation_rate},
            {"generations", c.gp.generations},
            {"max_height", c.gp.max_height},
            {"init_min_height", c.gp.init_min_height},
            {"init_max_height", c.gp.init_max_height},
            {"tournament", c.gp.tournament},
            {"functions", fs},
            {"constants", c.gp.constants},
            {"refine_final", c.gp.refine_final}}},
          {"solve", {{"solver", to_string(c.solve_solver)}, {"train_fraction", c.train_fraction}}},
          {"bench",
           {{"solver", to_string(c.bench_solver)},
            {"suite", c.bench_suite},
            {"seeds", c.bench_seeds},
            {"data_seed", c.data_seed}}}};
}

namespace detail {

// Every key of `user` must exist in `schema`, recursively through objects.
inline void check_keys(const nlohmann::json& user, const nlohmann::json& schema, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config" + where + " must be an object");
  for (const auto& [key, value] : user.items()) {
    auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + key + "'");
    if (it->is_object()) check_keys(value, *it, where + (where.empty() ? "" : ".") + key);
  }
}

inline int default_canvas(VocabMode m) { return m == VocabMode::full ? 32 : 24; }

}  // namespace detail

/// Reads a config document. Missing keys take defaults; unknown keys, a foreign schema tag
/// or ill-typed values raise ConfigError.
inline RunConfig run_config_from_json(const nlohmann::json& user) {
  const RunConfig defaults;
  const nlohmann::json schema = to_json(defaults);
  detail::check_keys(user, schema, "");
  if (user.contains("schema") && user["schema"] != kRunSchema)
    throw ConfigError("unsupported config schema " + user["schema"].dump() + " (expected " + kRunSchema + ")");
  nlohmann::json j = schema;
  j.merge_patch(user);
  RunConfig c;
  try {
    c.seed = j["seed"].get<std::uint64_t>();
    c.workers = j["workers"].get<std::size_t>();
    c.mode = vocab_mode_from_string(j["mode"].get<std::string>());
    c.output_dir = j["output_dir"].get<std::string>();
    c.corpus = corpus_config_from_json(j["corpus"]);
    c.corpus_count = j["corpus"]["count"].get<std::size_t>();
    c.model = j["model"].get<ModelConfig>();
    if (!(user.contains("model") && user["model"].contains("canvas"))) c.model.canvas = detail::default_canvas(c.mode);
    c.train = j["train"].get<TrainConfig>();
    const auto& s = j["sampling"];
    c.sample_count = s["count"].get<std::size_t>();
    c.sampling.clamp = s["clamp"].get<bool>();
    c.sampling.max_condition_points = s["max_condition_points"].get<std::size_t>();
    const auto& d = j["decoding"];
    c.k = d["k"].get<int>();
    c.restarts = d["restarts"].get<int>();
    c.guidance.delta = d["delta"].get<double>();
    c.guidance.seed_copies = d["seed_copies"].get<std::size_t>();
    c.guidance.grow_height = d["grow_height"].get<int>();
    c.guidance.islands = d["islands"].get<int>();
    const auto& g = j["gp"];
    c.gp.population = g["population"].get<std::size_t>();
    c.gp.crossover_rate = g["crossover_rate"].get<double>();
    c.gp.mutation_rate = g["mutation_rate"].get<double>();
    c.gp.generations = g["generations"].get<int>();
    c.gp.max_height = g["max_height"].get<int>();
    c.gp.init_min_height = g["init_min_height"].get<int>();
    c.gp.init_max_height = g["init_max_height"].get<int>();
    c.gp.tournament = g["tournament"].get<int>();
    c.gp.functions.clear();
    for (const auto& name : g["functions"]) {
      auto op = op_from_name(name.get<std::string>());
      if (!op) throw ConfigError("gp.functions: unknown operator " + name.dump());
      c.gp.functions.push_back(*op);
    }
    c.gp.constants = g["constants"].get<bool>();
    c.gp.refine_final = g["refine_final"].get<bool>();
    c.solve_solver = solver_from_string(j["solve"]["solver"].get<std::string>());
    c.train_fraction = j["solve"]["train_fraction"].get<double>();
    c.bench_solver = solver_from_string(j["bench"]["solver"].get<std::string>());
    c.bench_suite = j["bench"]["suite"].get<std::string>();
    c.bench_seeds = j["bench"]["seeds"].get<std::size_t>();
    c.data_seed = j["bench"]["data_seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.bench_suite != "all" && std::find(kSuites.begin(), kSuites.end(), c.bench_suite) == kSuites.end())
    throw ConfigError("bench.suite: unknown suite '" + c.bench_suite + "'");
  c.validate();
  return c;
}

/// Applies `path.to.key=value` to a config document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  std::string path = assignment.substr(0, eq);
  std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
  return j;
}

}  // namespace diffsr
