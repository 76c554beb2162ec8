#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "../nn/layers.hpp"
#include "../rng.hpp"
#include "point_tokens.hpp"
#include "schedule.hpp"

namespace diffsr {

struct ModelConfig {
  int vocab_size = 0;
  int canvas = 20;       // L
  int embed_dim = 32;    // d
  int model_dim = 128;   // transformer width
  int layers = 4;
  int heads = 4;
  int encoder_layers = 2;
  int encoder_heads = 4;
  int ffn_mult = 4;
  int point_token_dim = 16;
  int point_mantissa_digits = 2;
  int max_dims = 3;
  int diffusion_steps = 200;  // T
  double schedule_offset = 1e-4;
  bool learned_time_embedding = false;
  bool conditional = true;

  void validate() const {
    auto need = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("ModelConfig: ") + what);
    };
    need(vocab_size > 1, "vocab_size must be set");
    need(canvas >= 1, "canvas must be positive");
    need(embed_dim >= 1 && model_dim >= 2 && model_dim % 2 == 0, "bad widths");
    need(layers >= 1 && heads >= 1 && model_dim % heads == 0, "model_dim must divide into heads");
    need(encoder_layers >= 0 && encoder_heads >= 1 && model_dim % encoder_heads == 0, "bad encoder shape");
    need(ffn_mult >= 1 && point_token_dim >= 1, "bad sizes");
    need(max_dims >= 1 && diffusion_steps >= 2, "bad dims or steps");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size},
       {"canvas", c.canvas},
       {"embed_dim", c.embed_dim},
       {"model_dim", c.model_dim},
       {"layers", c.layers},
       {"heads", c.heads},
       {"encoder_layers", c.encoder_layers},
       {"encoder_heads", c.encoder_heads},
       {"ffn_mult", c.ffn_mult},
       {"point_token_dim", c.point_token_dim},
       {"point_mantissa_digits", c.point_mantissa_digits},
       {"max_dims", c.max_dims},
       {"diffusion_steps", c.diffusion_steps},
       {"schedule_offset", c.schedule_offset},
       {"learned_time_embedding", c.learned_time_embedding},
       {"conditional", c.conditional}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.canvas = j.value("canvas", d.canvas);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.model_dim = j.value("model_dim", d.model_dim);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  c.encoder_heads = j.value("encoder_heads", d.encoder_heads);
  c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  c.point_token_dim = j.value("point_token_dim", d.point_token_dim);
  c.point_mantissa_digits = j.value("point_mantissa_digits", d.point_mantissa_digits);
  c.max_dims = j.value("max_dims", d.max_dims);
  c.diffusion_steps = j.value("diffusion_steps", d.diffusion_steps);
  c.schedule_offset = j.value("schedule_offset", d.schedule_offset);
  c.learned_time_embedding = j.value("learned_time_embedding", d.learned_time_embedding);
  c.conditional = j.value("conditional", d.conditional);
}

/// Points of several samples packed back to back.
struct PointBatch {
  std::vector<int> tokens;            // tokens_per_point ids per point
  std::vector<Eigen::Index> counts;  // points per sample
};

/// Rows of a memory matrix and the (start, length) range owned by each condition.
struct Condition {
  nn::Var memory;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> segments;
};

template <typename S>
struct AttentionCapture {
  std::vector<std::vector<nn::Matrix<S>>> cross;  // per layer: one matrix per (segment, head)
};

inline std::vector<double> sinusoidal_embedding(double t, int dim) {
  std::vector<double> out(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double f = std::exp(-std::log(10000.0) * i / half);
    out[static_cast<std::size_t>(i)] = std::sin(t * f);
    out[static_cast<std::size_t>(half + i)] = std::cos(t * f);
  }
  return out;
}

/// Rows of `table` for each token plus N(0, sigma^2) jitter.
template <typename S>
nn::Matrix<S> embed_sequence(const nn::Matrix<S>& table, std::span<const int> tokens, double sigma, Rng& rng) {
  nn::Matrix<S> out(static_cast<Eigen::Index>(tokens.size()), table.cols());
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= table.rows()) throw std::out_of_range("embed_sequence: token out of range");
    for (Eigen::Index c = 0; c < table.cols(); ++c)
      out(static_cast<Eigen::Index>(i), c) = table(tokens[i], c) + static_cast<S>(sigma * n(rng));
  }
  return out;
}

template <typename S>
class DiffusionModel {
 public:
  using Mat = nn::Matrix<S>;
  using Tape = nn::Tape<S>;
  using Var = nn::Var;

  DiffusionModel(const ModelConfig& cfg, std::uint64_t seed)
      : cfg_(cfg),
        schedule_(NoiseSchedule::make_sqrt(cfg.diffusion_steps, cfg.schedule_offset)),
        points_(cfg.max_dims, cfg.point_mantissa_digits) {
    cfg_.validate();
    Rng rng(seed);
    const auto d = cfg_.embed_dim, m = cfg_.model_dim, ff = cfg_.model_dim * cfg_.ffn_mult;
    embedding_ = &params_.normal("embedding", cfg_.vocab_size, d, 1.0, rng);
    w_in_ = nn::Linear<S>(params_, "w_in", d, m, rng);
    pos_ = &params_.normal("pos", cfg_.canvas, m, nn::kInitStd, rng);
    if (cfg_.learned_time_embedding)
      time_table_ = &params_.normal("time.table", cfg_.diffusion_steps + 1, m, nn::kInitStd, rng);
    else
      time_mlp_ = nn::FeedForward<S>(params_, "time.mlp", m, m, m, rng);
    null_ = &params_.normal("null_condition", 1, m, nn::kInitStd, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "dec" + std::to_string(l);
      DecoderLayer layer;
      layer.ln_self = nn::LayerNorm<S>(params_, p + ".ln_self", m);
      layer.self_attn = nn::MultiHeadAttention<S>(params_, p + ".self", m, cfg_.heads, rng);
      layer.ln_cross = nn::LayerNorm<S>(params_, p + ".ln_cross", m);
      layer.cond_mlp = nn::FeedForward<S>(params_, p + ".cond", m, m, m, rng);
      layer.cross_attn = nn::MultiHeadAttention<S>(params_, p + ".cross", m, cfg_.heads, rng);
      layer.ln_ffn = nn::LayerNorm<S>(params_, p + ".ln_ffn", m);
      layer.ffn = nn::FeedForward<S>(params_, p + ".ffn", m, ff, m, rng);
      decoder_.push_back(layer);
    }
    ln_out_ = nn::LayerNorm<S>(params_, "ln_out", m);
    w_out_ = nn::Linear<S>(params_, "w_out", m, d, rng);
    if (cfg_.conditional) {
      point_table_ = &params_.normal("points.table", points_.vocab_size(), cfg_.point_token_dim, nn::kInitStd, rng);
      lift_ = nn::FeedForward<S>(params_, "points.lift", points_.tokens_per_point() * cfg_.point_token_dim, m, m, rng);
      for (int l = 0; l < cfg_.encoder_layers; ++l) {
        const std::string p = "enc" + std::to_string(l);
        EncoderLayer layer;
        layer.ln_attn = nn::LayerNorm<S>(params_, p + ".ln_attn", m);
        layer.attn = nn::MultiHeadAttention<S>(params_, p + ".attn", m, cfg_.encoder_heads, rng);
        layer.ln_ffn = nn::LayerNorm<S>(params_, p + ".ln_ffn", m);
        layer.ffn = nn::FeedForward<S>(params_, p + ".ffn", m, ff, m, rng);
        encoder_.push_back(layer);
      }
      ln_enc_ = nn::LayerNorm<S>(params_, "enc.ln_out", m);
    }
  }

  DiffusionModel(const DiffusionModel&) = delete;
  DiffusionModel& operator=(const DiffusionModel&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  const PointTokenizer& point_tokenizer() const noexcept { return points_; }
  nn::ParameterSet<S>& parameters() noexcept { return params_; }
  const nn::ParameterSet<S>& parameters() const noexcept { return params_; }
  /// The embedding table; rounding projects onto this same storage.
  nn::Parameter<S>& embedding() noexcept { return *embedding_; }
  const nn::Parameter<S>& embedding() const noexcept { return *embedding_; }

  Var embed(Tape& t, const std::vector<int>& tokens) const {
    for (int id : tokens)
      if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("embed: token id out of range");
    return nn::gather_rows(t, t.param(*embedding_), tokens);
  }

  /// One output row per input point; rows keep the input order, samples are independent.
  Condition encode_points(Tape& t, const PointBatch& batch) const {
    if (!cfg_.conditional) throw std::logic_error("encode_points: model is unconditional");
    const auto per = static_cast<Eigen::Index>(points_.tokens_per_point());
    Eigen::Index total = 0;
    for (auto n : batch.counts) {
      if (n < 1) throw std::invalid_argument("encode_points: every sample needs at least one point");
      total += n;
    }
    if (static_cast<Eigen::Index>(batch.tokens.size()) != total * per)
      throw std::invalid_argument("encode_points: token count does not match point counts");
    Var emb = nn::gather_rows(t, t.param(*point_table_), batch.tokens);
    Var h = lift_(t, nn::reshape(t, emb, total, per * cfg_.point_token_dim));
    Condition c;
    std::vector<nn::Segment> segs;
    Eigen::Index at = 0;
    for (auto n : batch.counts) {
      c.segments.emplace_back(at, n);
      segs.push_back({at, n, at, n});
      at += n;
    }
    for (const auto& layer : encoder_) {
      Var a = layer.ln_attn(t, h);
      h = nn::add(t, h, layer.attn(t, a, a, segs));
      h = nn::add(t, h, layer.ffn(t, layer.ln_ffn(t, h)));
    }
    c.memory = ln_enc_(t, h);
    return c;
  }

  /// The learned null condition as a single one-row segment.
  Condition null_condition(Tape& t) const { return Condition{t.param(*null_), {{0, 1}}}; }

  /// Appends the null condition as an extra segment; returns its segment index.
  std::size_t append_null(Tape& t, Condition& c) const {
    Eigen::Index rows = t.value(c.memory).rows();
    c.memory = nn::concat_rows(t, {c.memory, t.param(*null_)});
    c.segments.emplace_back(rows, 1);
    return c.segments.size() - 1;
  }

  /// x packs `steps.size()` canvases of L rows each; canvas i is denoised at step steps[i]
  /// attending to condition segment cond_index[i]. Returns the x0 estimate, same shape as x.
  Var denoise(Tape& t, Var x, const std::vector<int>& steps, const Condition& cond,
              const std::vector<std::size_t>& cond_index, AttentionCapture<S>* capture = nullptr) const {
    const Eigen::Index L = cfg_.canvas;
    const auto n = static_cast<Eigen::Index>(steps.size());
    if (t.value(x).rows() != n * L || t.value(x).cols() != cfg_.embed_dim)
      throw std::invalid_argument("denoise: input must be (segments * canvas) x embed_dim");
    if (cond_index.size() != steps.size()) throw std::invalid_argument("denoise: cond_index size mismatch");
    for (int s : steps)
      if (s < 1 || s > cfg_.diffusion_steps) throw std::out_of_range("denoise: step out of range");

    std::vector<int> row_segment(static_cast<std::size_t>(n * L)), row_pos(static_cast<std::size_t>(n * L));
    for (Eigen::Index i = 0; i < n * L; ++i) {
      row_segment[static_cast<std::size_t>(i)] = static_cast<int>(i / L);
      row_pos[static_cast<std::size_t>(i)] = static_cast<int>(i % L);
    }
    Var h = w_in_(t, x);
    h = nn::add(t, h, nn::gather_rows(t, time_embedding(t, steps), row_segment));
    h = nn::add(t, h, nn::gather_rows(t, t.param(*pos_), row_pos));

    std::vector<nn::Segment> self_segs, cross_segs;
    for (Eigen::Index i = 0; i < n; ++i) {
      self_segs.push_back({i * L, L, i * L, L});
      const auto ci = cond_index[static_cast<std::size_t>(i)];
      if (ci >= cond.segments.size()) throw std::out_of_range("denoise: condition index");
      cross_segs.push_back({i * L, L, cond.segments[ci].first, cond.segments[ci].second});
    }
    if (capture) capture->cross.assign(decoder_.size(), {});
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      const auto& layer = decoder_[l];
      Var a = layer.ln_self(t, h);
      h = nn::add(t, h, layer.self_attn(t, a, a, self_segs));
      Var kv = layer.cond_mlp(t, cond.memory);
      h = nn::add(t, h, layer.cross_attn(t, layer.ln_cross(t, h), kv, cross_segs, capture ? &capture->cross[l] : nullptr));
      h = nn::add(t, h, layer.ffn(t, layer.ln_ffn(t, h)));
    }
    return w_out_(t, ln_out_(t, h));
  }

  /// Logits over the vocabulary: x0 times the (tied) embedding table transposed.
  Var round_logits(Tape& t, Var x0) const { return nn::matmul_nt(t, x0, t.param(*embedding_)); }

 private:
  struct DecoderLayer {
    nn::LayerNorm<S> ln_self;
    nn::MultiHeadAttention<S> self_attn;
    nn::LayerNorm<S> ln_cross;
    nn::FeedForward<S> cond_mlp;
    nn::MultiHeadAttention<S> cross_attn;
    nn::LayerNorm<S> ln_ffn;
    nn::FeedForward<S> ffn;
  };
  struct EncoderLayer {
    nn::LayerNorm<S> ln_attn;
    nn::MultiHeadAttention<S> attn;
    nn::LayerNorm<S> ln_ffn;
    nn::FeedForward<S> ffn;
  };

  Var time_embedding(Tape& t, const std::vector<int>& steps) const {
    if (cfg_.learned_time_embedding) return nn::gather_rows(t, t.param(*time_table_), steps);
    Mat sin_rows(static_cast<Eigen::Index>(steps.size()), cfg_.model_dim);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      auto e = sinusoidal_embedding(steps[i], cfg_.model_dim);
      for (int j = 0; j < cfg_.model_dim; ++j) sin_rows(static_cast<Eigen::Index>(i), j) = static_cast<S>(e[static_cast<std::size_t>(j)]);
    }
    return time_mlp_(t, t.constant(std::move(sin_rows)));
  }

  ModelConfig cfg_;
  NoiseSchedule schedule_;
  PointTokenizer points_;
  nn::ParameterSet<S> params_;
  nn::Parameter<S>* embedding_ = nullptr;
  nn::Linear<S> w_in_;
  nn::Parameter<S>* pos_ = nullptr;
  nn::Parameter<S>* time_table_ = nullptr;
  nn::FeedForward<S> time_mlp_;
  nn::Parameter<S>* null_ = nullptr;
  std::vector<DecoderLayer> decoder_;
  nn::LayerNorm<S> ln_out_;
  nn::Linear<S> w_out_;
  nn::Parameter<S>* point_table_ = nullptr;
  nn::FeedForward<S> lift_;
  std::vector<EncoderLayer> encoder_;
  nn::LayerNorm<S> ln_enc_;
};

// ---------------------------------------------------------------------------
// Training objective

struct LossTerms {
  double total = 0, term1 = 0, term2 = 0, term3 = 0;
};

struct LossBatch {
  std::vector<int> tokens;  // batch * canvas ids
  PointBatch points;        // ignored by unconditional models
  std::vector<bool> drop_condition;  // per sample; empty = keep all
};

/// Per sample: x0 ~ N(E(w), sigma0^2), t ~ U{2..T};
///   term1 = |x0 - f(x_t, t)|^2, term2 = |E(w) - f(x_1, 1)|^2, term3 = CE(round(x0), w).
/// Squared norms are averaged over batch and canvas rows, the cross-entropy over tokens.
template <typename S>
std::pair<nn::Var, LossTerms> diffusion_loss(nn::Tape<S>& t, const DiffusionModel<S>& model, const LossBatch& batch,
                                             std::size_t batch_size, Rng& rng) {
  const auto& cfg = model.config();
  const auto& sch = model.schedule();
  const auto L = static_cast<std::size_t>(cfg.canvas);
  const std::size_t B = batch_size;
  if (B == 0 || batch.tokens.size() != B * L) throw std::invalid_argument("diffusion_loss: token count mismatch");

  nn::Var emb = model.embed(t, batch.tokens);
  const auto rows = static_cast<Eigen::Index>(B * L);
  nn::Matrix<S> jitter = standard_normal_like(nn::Matrix<S>(rows, cfg.embed_dim), rng) * static_cast<S>(sch.sigma0());
  nn::Var x0 = nn::add(t, emb, t.constant(std::move(jitter)));

  std::vector<int> steps(2 * B, 1);
  std::vector<S> signal(2 * B * L), spread(2 * B * L);
  for (std::size_t b = 0; b < B; ++b) steps[b] = uniform_int(rng, 2, sch.T);
  for (std::size_t i = 0; i < 2 * B * L; ++i) {
    double ab = sch.alpha_bar[static_cast<std::size_t>(steps[i / L])];
    signal[i] = static_cast<S>(std::sqrt(ab));
    spread[i] = static_cast<S>(std::sqrt(1.0 - ab));
  }
  nn::Matrix<S> noise = standard_normal_like(nn::Matrix<S>(2 * rows, cfg.embed_dim), rng);
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> sp(spread.data(), 2 * rows);
  noise = (noise.array().colwise() * sp.array()).matrix();
  nn::Var doubled = nn::concat_rows(t, {x0, x0});
  nn::Var xs = nn::add(t, nn::scale_rows(t, doubled, std::move(signal)), t.constant(std::move(noise)));

  Condition cond;
  std::vector<std::size_t> cond_index(2 * B);
  if (cfg.conditional) {
    cond = model.encode_points(t, batch.points);
    const std::size_t null_seg = model.append_null(t, cond);
    for (std::size_t b = 0; b < B; ++b) {
      bool drop = !batch.drop_condition.empty() && batch.drop_condition[b];
      cond_index[b] = cond_index[B + b] = drop ? null_seg : b;
    }
  } else {
    cond = model.null_condition(t);
  }
  nn::Var f = model.denoise(t, xs, steps, cond, cond_index);
  nn::Var f_t = nn::slice_rows(t, f, 0, rows);
  nn::Var f_1 = nn::slice_rows(t, f, rows, rows);

  nn::Var term1 = nn::sum_squares(t, nn::sub(t, x0, f_t));
  nn::Var term2 = nn::sum_squares(t, nn::sub(t, emb, f_1));
  nn::Var term3 = nn::cross_entropy(t, model.round_logits(t, x0), batch.tokens);
  const S inv = S(1) / static_cast<S>(rows);
  nn::Var total = nn::combine(t, {term1, term2, term3}, {inv, inv, S(1)});
  LossTerms lt;
  lt.term1 = static_cast<double>(t.value(term1)(0, 0) * inv);
  lt.term2 = static_cast<double>(t.value(term2)(0, 0) * inv);
  lt.term3 = static_cast<double>(t.value(term3)(0, 0));
  lt.total = static_cast<double>(t.value(total)(0, 0));
  return {total, lt};
}

}  // namespace diffsr
