#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "../datagen.hpp"
#include "../nn/optim.hpp"
#include "../tokenizer.hpp"
#include "model.hpp"

namespace diffsr {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int steps = 2000;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int warmup = 100;
  double clip_norm = 1.0;
  double ema_decay = 0.995;
  int max_points = 64;             // points drawn per record per step
  double condition_dropout = 0.1;  // probability of training a sample against the null condition
  std::uint64_t seed = 0;
  int log_every = 10;

  void validate() const {
    if (steps < 0 || batch_size < 1 || lr <= 0 || max_points < 1 || log_every < 1)
      throw std::invalid_argument("TrainConfig: invalid values");
    if (ema_decay < 0 || ema_decay >= 1 || condition_dropout < 0 || condition_dropout > 1)
      throw std::invalid_argument("TrainConfig: rates out of range");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},         {"batch_size", c.batch_size}, {"lr", c.lr},
       {"weight_decay", c.weight_decay}, {"warmup", c.warmup}, {"clip_norm", c.clip_norm},
       {"ema_decay", c.ema_decay}, {"max_points", c.max_points}, {"condition_dropout", c.condition_dropout},
       {"seed", c.seed},           {"log_every", c.log_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.warmup = j.value("warmup", d.warmup);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.max_points = j.value("max_points", d.max_points);
  c.condition_dropout = j.value("condition_dropout", d.condition_dropout);
  c.seed = j.value("seed", d.seed);
  c.log_every = j.value("log_every", d.log_every);
}

struct TrainingExample {
  TokenSequence tokens;          // padded to the canvas
  std::vector<int> point_tokens; // tokens_per_point ids per point
  std::size_t points = 0;
};

/// Converts corpus records to padded token canvases plus pre-tokenized points. Records whose
/// sequence does not fit the canvas are skipped; the number skipped is returned via `skipped`.
inline std::vector<TrainingExample> make_training_set(const std::vector<CorpusRecord>& records, const Vocabulary& vocab,
                                                      const ModelConfig& cfg, std::size_t* skipped = nullptr) {
  PointTokenizer pt(cfg.max_dims, cfg.point_mantissa_digits);
  std::vector<TrainingExample> out;
  std::size_t skip = 0;
  for (const auto& r : records) {
    const auto& strings = vocab.mode() == VocabMode::skeleton ? r.skeleton : r.full;
    if (strings.size() > static_cast<std::size_t>(cfg.canvas)) {
      ++skip;
      continue;
    }
    TrainingExample ex;
    ex.tokens = pad_to(from_strings(strings, vocab), static_cast<std::size_t>(cfg.canvas), vocab);
    if (cfg.conditional) {
      pt.encode(r.points, ex.point_tokens);
      ex.points = r.points.size();
    }
    out.push_back(std::move(ex));
  }
  if (skipped) *skipped = skip;
  return out;
}

struct TrainLogRow {
  int step = 0;
  LossTerms loss;
  double lr = 0;
  double grad_norm = 0;
};

inline void write_train_log_header(std::ostream& out) { out << "step,loss,term1,term2,term3,lr,grad_norm\n"; }
inline void write_train_log_row(std::ostream& out, const TrainLogRow& r) {
  out << r.step << ',' << r.loss.total << ',' << r.loss.term1 << ',' << r.loss.term2 << ',' << r.loss.term3 << ','
      << r.lr << ',' << r.grad_norm << '\n';
}

/// Draws a batch of `cfg.batch_size` examples, with up to `cfg.max_points` random rows each.
template <typename S>
LossBatch draw_batch(const DiffusionModel<S>& model, const std::vector<TrainingExample>& data, const TrainConfig& cfg,
                     Rng& rng) {
  LossBatch b;
  const auto per = static_cast<std::size_t>(model.point_tokenizer().tokens_per_point());
  std::vector<std::size_t> rows;
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto& ex = data[uniform_int<std::size_t>(rng, 0, data.size() - 1)];
    b.tokens.insert(b.tokens.end(), ex.tokens.begin(), ex.tokens.end());
    if (!model.config().conditional) continue;
    rows.resize(ex.points);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const std::size_t take = std::min(ex.points, static_cast<std::size_t>(cfg.max_points));
    for (std::size_t k = 0; k < take; ++k) std::swap(rows[k], rows[uniform_int<std::size_t>(rng, k, rows.size() - 1)]);
    for (std::size_t k = 0; k < take; ++k) {
      auto first = ex.point_tokens.begin() + static_cast<std::ptrdiff_t>(rows[k] * per);
      b.points.tokens.insert(b.points.tokens.end(), first, first + static_cast<std::ptrdiff_t>(per));
    }
    b.points.counts.push_back(static_cast<Eigen::Index>(take));
    b.drop_condition.push_back(uniform01(rng) < cfg.condition_dropout);
  }
  return b;
}

template <typename S>
struct TrainResult {
  std::vector<TrainLogRow> log;  // every step
  std::vector<nn::Matrix<S>> ema;
};

/// AdamW training of every model parameter. `on_step` (optional) sees each step's row.
/// Throws NumericError on a non-finite loss.
template <typename S>
TrainResult<S> train(DiffusionModel<S>& model, const std::vector<TrainingExample>& data, const TrainConfig& cfg,
                     const std::function<void(const TrainLogRow&)>& on_step = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& ex : data) {
    if (ex.tokens.size() != static_cast<std::size_t>(model.config().canvas))
      throw std::invalid_argument("train: example does not match the canvas");
    if (model.config().conditional && ex.points == 0) throw std::invalid_argument("train: example without points");
  }
  nn::AdamWOptions oo;
  oo.lr = cfg.lr;
  oo.weight_decay = cfg.weight_decay;
  oo.warmup = cfg.warmup;
  oo.clip_norm = cfg.clip_norm;
  nn::AdamW<S> opt(model.parameters(), oo);
  nn::Ema<S> ema(model.parameters(), cfg.ema_decay);
  Rng rng = make_rng(cfg.seed, {0x7a11});
  TrainResult<S> result;
  nn::Tape<S> tape;
  for (int step = 1; step <= cfg.steps; ++step) {
    LossBatch batch = draw_batch(model, data, cfg, rng);
    tape.clear();
    model.parameters().zero_grad();
    auto [total, terms] = diffusion_loss(tape, model, batch, static_cast<std::size_t>(cfg.batch_size), rng);
    if (!std::isfinite(terms.total)) {
      std::ostringstream msg;
      msg << "train: non-finite loss at step " << step << " (term1=" << terms.term1 << ", term2=" << terms.term2
          << ", term3=" << terms.term3 << ")";
      throw NumericError(msg.str());
    }
    tape.backward(total);
    TrainLogRow row;
    row.step = step;
    row.loss = terms;
    row.lr = opt.learning_rate();
    row.grad_norm = opt.step();
    ema.update(model.parameters());
    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  result.ema = ema.values();
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, u32 version, u64 header size, JSON header, float64 parameters,
// then float64 EMA parameters when present (same order and shapes).

inline constexpr char kCheckpointMagic[8] = {'D', 'F', 'S', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(const std::string& path, const DiffusionModel<S>& model, const Vocabulary& vocab,
                     const std::vector<nn::Matrix<S>>* ema = nullptr, const nlohmann::json& meta = {}) {
  nlohmann::json header;
  header["format"] = "diffsr-checkpoint";
  header["model"] = model.config();
  header["vocabulary"] = vocab.to_json();
  header["vocab_hash"] = vocab.hash();
  header["schedule"] = {{"T", model.schedule().T}, {"offset", model.schedule().offset}};
  header["has_ema"] = ema != nullptr;
  header["meta"] = meta;
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& p : model.parameters()) shapes.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  header["parameters"] = shapes;
  if (ema && ema->size() != model.parameters().size()) throw std::invalid_argument("save_checkpoint: EMA size mismatch");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const std::string h = header.dump();
  const std::uint64_t hsize = h.size();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
  out.write(reinterpret_cast<const char*>(&hsize), sizeof hsize);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  auto dump = [&](const nn::Matrix<S>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double v = static_cast<double>(m.data()[i]);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  };
  for (const auto& p : model.parameters()) dump(p.value);
  if (ema)
    for (const auto& m : *ema) dump(m);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <typename S>
struct LoadedCheckpoint {
  Vocabulary vocab;
  std::unique_ptr<DiffusionModel<S>> model;
  std::vector<nn::Matrix<S>> ema;  // empty when the file carries none
  nlohmann::json meta;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("load_checkpoint: cannot open " + path);
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t hsize = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&hsize), sizeof hsize);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointError("load_checkpoint: not a checkpoint");
  if (version != kCheckpointVersion) throw CheckpointError("load_checkpoint: unsupported version");
  if (hsize > (1ULL << 30)) throw CheckpointError("load_checkpoint: corrupt header size");
  std::string h(hsize, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hsize));
  auto header = nlohmann::json::parse(h);
  LoadedCheckpoint<S> lc{Vocabulary::from_json(header.at("vocabulary")), nullptr, {}, header.value("meta", nlohmann::json{})};
  if (lc.vocab.hash() != header.at("vocab_hash").get<std::uint64_t>()) throw CheckpointError("load_checkpoint: vocabulary hash mismatch");
  lc.model = std::make_unique<DiffusionModel<S>>(header.at("model").get<ModelConfig>(), 0);
  const auto& shapes = header.at("parameters");
  auto& params = lc.model->parameters();
  if (shapes.size() != params.size()) throw CheckpointError("load_checkpoint: parameter count mismatch");
  auto fill = [&](nn::Matrix<S>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      m.data()[i] = static_cast<S>(v);
    }
    if (!in) throw CheckpointError("load_checkpoint: truncated file");
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (shapes[i].at("name") != p.name || shapes[i].at("rows") != p.value.rows() || shapes[i].at("cols") != p.value.cols())
      throw CheckpointError("load_checkpoint: parameter layout mismatch at " + p.name);
    fill(p.value);
  }
  if (header.value("has_ema", false)) {
    for (const auto& p : params) {
      lc.ema.emplace_back(p.value.rows(), p.value.cols());
      fill(lc.ema.back());
    }
  }
  return lc;
}

/// Copies EMA values into the live parameters.
template <typename S>
void apply_weights(DiffusionModel<S>& model, const std::vector<nn::Matrix<S>>& values) {
  if (values.size() != model.parameters().size()) throw std::invalid_argument("apply_weights: size mismatch");
  std::size_t i = 0;
  for (auto& p : model.parameters()) p.value = values[i++];
}

}  // namespace diffsr
