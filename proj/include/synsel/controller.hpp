#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "synsel/errors.hpp"
#include "synsel/numkit/matrix.hpp"
#include "synsel/numkit/param.hpp"
#include "synsel/numkit/rng.hpp"
#include "synsel/numkit/tape.hpp"

namespace synsel::controller {

using numkit::Matrix;
using numkit::ParamList;
using numkit::ParamTensor;
using numkit::RngStream;
using numkit::Tape;
using numkit::Var;

enum class Variant { Transformer, Gru, GruAttn };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Transformer: return "transformer";
    case Variant::Gru: return "gru";
    case Variant::GruAttn: return "gru-attn";
  }
  return "unknown";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "transformer") return Variant::Transformer;
  if (s == "gru") return Variant::Gru;
  if (s == "gru-attn") return Variant::GruAttn;
  throw ConfigError("unknown controller variant '" + s + "' (transformer | gru | gru-attn)");
}

struct ControllerConfig {
  Variant variant = Variant::Transformer;
  std::size_t input_dim = 16;
  std::size_t class_count = 4;
  std::size_t model_dim = 32;
  std::size_t heads = 2;
  std::size_t key_dim = 16;
  std::size_t value_dim = 16;
  std::size_t layers = 2;
  std::size_t ffn_hidden = 64;
  // Added to the projected input, so it must equal model_dim; 0 disables it.
  std::size_t class_embedding_dim = 32;
  double init_scale = 1.0;
  bool use_positions = true;
  bool layer_norm = true;
  bool zero_policy_head = true;
  bool per_class_sequences = false;

  void validate() const {
    if (input_dim == 0 || model_dim == 0) throw ConfigError("controller dims must be positive");
    if (class_count == 0) throw ConfigError("controller class_count must be positive");
    if (class_embedding_dim != 0 && class_embedding_dim != model_dim) {
      throw ConfigError("class_embedding_dim must equal model_dim (" + std::to_string(model_dim) +
                        ") or be 0");
    }
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
    if (variant == Variant::Transformer) {
      if (layers < 1) throw ConfigError("encoder layers must be >= 1");
      if (heads < 1) throw ConfigError("head count must be >= 1");
      if (key_dim == 0 || value_dim == 0 || ffn_hidden == 0) {
        throw ConfigError("key_dim, value_dim and ffn_hidden must be positive");
      }
      if (model_dim != heads * value_dim) {
        throw ConfigError("model_dim (" + std::to_string(model_dim) + ") must equal heads x value_dim (" +
                          std::to_string(heads * value_dim) + ")");
      }
      if (use_positions && model_dim % 2 != 0) {
        throw ConfigError("positional encoding needs an even model_dim");
      }
    }
  }
};

struct AttentionHeadParams {
  ParamTensor wq, wk, wv;
};

struct EncoderLayerParams {
  std::vector<AttentionHeadParams> heads;
  ParamTensor wo;
  ParamTensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  ParamTensor norm1_gain, norm1_offset, norm2_gain, norm2_offset;
};

// Gate blocks are laid out [update | reset | candidate] along the columns.
struct GruParams {
  ParamTensor w_input, w_hidden, bias;
};

struct AttentionPoolParams {
  ParamTensor w, b, v;
};

struct ControllerParams {
  ControllerConfig config;
  ParamTensor input_w, input_b, class_embedding;
  std::vector<EncoderLayerParams> layers;
  GruParams gru;
  AttentionPoolParams pool;
  ParamTensor policy_w, policy_b, value_w, value_b;

  // Every defined tensor in a fixed order (used by optimisers and checkpoints).
  ParamList all() {
    ParamList out;
    auto add = [&](ParamTensor& p) {
      if (p.defined()) out.push_back(&p);
    };
    add(input_w);
    add(input_b);
    add(class_embedding);
    for (auto& layer : layers) {
      for (auto& h : layer.heads) {
        add(h.wq);
        add(h.wk);
        add(h.wv);
      }
      add(layer.wo);
      add(layer.ffn_w1);
      add(layer.ffn_b1);
      add(layer.ffn_w2);
      add(layer.ffn_b2);
      add(layer.norm1_gain);
      add(layer.norm1_offset);
      add(layer.norm2_gain);
      add(layer.norm2_offset);
    }
    add(gru.w_input);
    add(gru.w_hidden);
    add(gru.bias);
    add(pool.w);
    add(pool.b);
    add(pool.v);
    add(policy_w);
    add(policy_b);
    add(value_w);
    add(value_b);
    return out;
  }
  std::vector<const ParamTensor*> all() const {
    auto list = const_cast<ControllerParams*>(this)->all();
    return {list.begin(), list.end()};
  }
};

// Uniform(+-init_scale / sqrt(fan_in)) weights, zero biases, unit norm gains.
inline ControllerParams init_params(const ControllerConfig& cfg, RngStream& rng) {
  cfg.validate();
  ControllerParams p;
  p.config = cfg;
  auto weight = [&](std::string name, std::size_t fan_in, std::size_t fan_out) {
    return ParamTensor::uniform(std::move(name), fan_in, fan_out,
                                cfg.init_scale / std::sqrt(static_cast<double>(fan_in)), rng);
  };
  const std::size_t m = cfg.model_dim;
  p.input_w = weight("input.w", cfg.input_dim, m);
  p.input_b = ParamTensor::constant("input.b", 1, m, 0.0);
  if (cfg.class_embedding_dim > 0) p.class_embedding = weight("class_embedding", cfg.class_count, m);

  if (cfg.variant == Variant::Transformer) {
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      EncoderLayerParams layer;
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::string hp = pre + "head" + std::to_string(h) + ".";
        layer.heads.push_back({weight(hp + "wq", m, cfg.key_dim), weight(hp + "wk", m, cfg.key_dim),
                               weight(hp + "wv", m, cfg.value_dim)});
      }
      layer.wo = weight(pre + "wo", cfg.heads * cfg.value_dim, m);
      layer.ffn_w1 = weight(pre + "ffn.w1", m, cfg.ffn_hidden);
      layer.ffn_b1 = ParamTensor::constant(pre + "ffn.b1", 1, cfg.ffn_hidden, 0.0);
      layer.ffn_w2 = weight(pre + "ffn.w2", cfg.ffn_hidden, m);
      layer.ffn_b2 = ParamTensor::constant(pre + "ffn.b2", 1, m, 0.0);
      if (cfg.layer_norm) {
        layer.norm1_gain = ParamTensor::constant(pre + "norm1.gain", 1, m, 1.0);
        layer.norm1_offset = ParamTensor::constant(pre + "norm1.offset", 1, m, 0.0);
        layer.norm2_gain = ParamTensor::constant(pre + "norm2.gain", 1, m, 1.0);
        layer.norm2_offset = ParamTensor::constant(pre + "norm2.offset", 1, m, 0.0);
      }
      p.layers.push_back(std::move(layer));
    }
  } else {
    p.gru.w_input = weight("gru.w_input", m, 3 * m);
    p.gru.w_hidden = weight("gru.w_hidden", m, 3 * m);
    p.gru.bias = ParamTensor::constant("gru.bias", 1, 3 * m, 0.0);
    if (cfg.variant == Variant::GruAttn) {
      p.pool.w = weight("pool.w", m, m);
      p.pool.b = ParamTensor::constant("pool.b", 1, m, 0.0);
      p.pool.v = weight("pool.v", m, 1);
    }
  }
  if (cfg.zero_policy_head) {
    p.policy_w = ParamTensor::constant("policy.w", m, 2, 0.0);
  } else {
    p.policy_w = weight("policy.w", m, 2);
  }
  p.policy_b = ParamTensor::constant("policy.b", 1, 2, 0.0);
  p.value_w = weight("value.w", m, 1);
  p.value_b = ParamTensor::constant("value.b", 1, 1, 0.0);
  return p;
}

// Sinusoidal positions: PE[pos, 2i] = sin(pos / 10000^(2i/dim)),
// PE[pos, 2i+1] = cos(pos / 10000^(2i/dim)).
inline Matrix positional_encoding(std::size_t length, std::size_t dim) {
  if (dim % 2 != 0) throw ConfigError("positional encoding dimension must be even, got " + std::to_string(dim));
  Matrix pe(length, dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

struct AttentionResult {
  Var output;
  Var weights;  // rows sum to one
};

// softmax(q k^T / sqrt(d_k)) v
inline AttentionResult self_attention(Var q, Var k, Var v, std::size_t d_k) {
  Tape& t = *q.tape;
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  if (qv.cols() != d_k || kv.cols() != d_k || kv.rows() != vv.rows()) {
    throw DimensionError("self_attention: q " + qv.shape() + ", k " + kv.shape() + ", v " + vv.shape() +
                         ", d_k " + std::to_string(d_k));
  }
  Var scores = numkit::ops::scale(numkit::ops::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_k)));
  Var weights = numkit::ops::softmax_rows(scores);
  return {numkit::ops::matmul(weights, v), weights};
}

inline Matrix self_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t d_k) {
  Tape t;
  auto r = self_attention(t.constant(q), t.constant(k), t.constant(v), d_k);
  return t.value(r.output);
}

struct MultiHeadResult {
  Var output;
  std::vector<Var> weights;  // one per head
};

// [head_1; ...; head_h] W^O with head_i = Attention(x W_i^Q, x W_i^K, x W_i^V).
inline MultiHeadResult multi_head(Var x, std::span<AttentionHeadParams> heads, ParamTensor& wo) {
  using namespace numkit::ops;
  Tape& t = *x.tape;
  if (heads.empty()) throw DimensionError("multi_head needs at least one head");
  const std::size_t in = t.value(x).cols();
  std::vector<Var> outs;
  MultiHeadResult res;
  std::size_t concat_width = 0;
  for (auto& h : heads) {
    if (h.wq.value.rows() != in || h.wk.value.rows() != in || h.wv.value.rows() != in) {
      throw DimensionError("multi_head: input width " + std::to_string(in) + " vs W^Q " + h.wq.value.shape());
    }
    Var q = matmul(x, t.param(h.wq));
    Var k = matmul(x, t.param(h.wk));
    Var v = matmul(x, t.param(h.wv));
    auto a = self_attention(q, k, v, h.wq.value.cols());
    outs.push_back(a.output);
    res.weights.push_back(a.weights);
    concat_width += h.wv.value.cols();
  }
  if (wo.value.rows() != concat_width) {
    throw DimensionError("multi_head: concatenated width " + std::to_string(concat_width) + " vs W^O " +
                         wo.value.shape());
  }
  Var cat = outs.size() == 1 ? outs.front() : concat_cols(outs);
  res.output = matmul(cat, t.param(wo));
  return res;
}

// max(0, x W1 + b1) W2 + b2, row-wise.
inline Var feed_forward(Var x, ParamTensor& w1, ParamTensor& b1, ParamTensor& w2, ParamTensor& b2) {
  using namespace numkit::ops;
  Tape& t = *x.tape;
  Var hidden = relu(add_row(matmul(x, t.param(w1)), t.param(b1)));
  return add_row(matmul(hidden, t.param(w2)), t.param(b2));
}

inline Matrix feed_forward(const Matrix& x, const Matrix& w1, const Matrix& b1, const Matrix& w2,
                           const Matrix& b2) {
  Tape t;
  ParamTensor pw1("w1", w1), pb1("b1", b1), pw2("w2", w2), pb2("b2", b2);
  return t.value(feed_forward(t.constant(x), pw1, pb1, pw2, pb2));
}

// Graph handles of one forward pass.
struct PolicyGraph {
  Var logits;  // n x 2
  Var value;   // 1 x 1
  std::vector<std::vector<Var>> attention;  // [layer][head], transformer only
};

namespace detail {

inline void check_inputs(const Matrix& sequence, std::span<const std::uint32_t> classes,
                         const ControllerConfig& cfg) {
  if (sequence.rows() == 0) throw DimensionError("controller input sequence is empty");
  if (sequence.rows() != classes.size()) {
    throw DimensionError("sequence rows (" + std::to_string(sequence.rows()) + ") != class ids (" +
                         std::to_string(classes.size()) + ")");
  }
  if (sequence.cols() != cfg.input_dim) {
    throw DimensionError("sequence width " + std::to_string(sequence.cols()) + " != input_dim " +
                         std::to_string(cfg.input_dim));
  }
  for (auto c : classes) {
    if (c >= cfg.class_count) {
      throw ValidationError("class id " + std::to_string(c) + " is not below class count " +
                            std::to_string(cfg.class_count));
    }
  }
}

// Input projection plus class embedding: n x model_dim.
inline Var embed(Tape& t, const Matrix& sequence, std::span<const std::uint32_t> classes,
                 ControllerParams& p) {
  using namespace numkit::ops;
  Var h = add_row(matmul(t.constant(sequence), t.param(p.input_w)), t.param(p.input_b));
  if (p.class_embedding.defined()) {
    std::vector<std::size_t> ids(classes.begin(), classes.end());
    h = add(h, gather_rows(t.param(p.class_embedding), std::move(ids)));
  }
  return h;
}

inline Var policy_head(Var hidden, ControllerParams& p) {
  using namespace numkit::ops;
  Tape& t = *hidden.tape;
  return add_row(matmul(hidden, t.param(p.policy_w)), t.param(p.policy_b));
}

inline Var value_head(Var pooled, ControllerParams& p) {
  using namespace numkit::ops;
  Tape& t = *pooled.tape;
  return add(matmul(pooled, t.param(p.value_w)), t.param(p.value_b));
}

}  // namespace detail

// Transformer controller: embed (+ positions) -> L x [multi-head, add & norm,
// feed-forward, add & norm] -> linear policy head per position; the state
// value is a linear read-out of the mean-pooled final hidden states.
inline PolicyGraph encoder_forward(Tape& t, const Matrix& sequence, std::span<const std::uint32_t> classes,
                                   ControllerParams& p, bool use_positions) {
  using namespace numkit::ops;
  const auto& cfg = p.config;
  if (cfg.variant != Variant::Transformer) throw ConfigError("encoder_forward needs a transformer controller");
  detail::check_inputs(sequence, classes, cfg);
  Var h = detail::embed(t, sequence, classes, p);
  if (use_positions) h = add(h, t.constant(positional_encoding(sequence.rows(), cfg.model_dim)));
  PolicyGraph g;
  for (auto& layer : p.layers) {
    auto mh = multi_head(h, layer.heads, layer.wo);
    g.attention.push_back(mh.weights);
    h = add(h, mh.output);
    if (cfg.layer_norm) h = layer_norm_rows(h, t.param(layer.norm1_gain), t.param(layer.norm1_offset));
    h = add(h, feed_forward(h, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2));
    if (cfg.layer_norm) h = layer_norm_rows(h, t.param(layer.norm2_gain), t.param(layer.norm2_offset));
  }
  g.logits = detail::policy_head(h, p);
  g.value = detail::value_head(mean_rows(h), p);
  return g;
}

// One GRU step: h' = (1 - z) * h + z * n with
//   z = sigmoid(xw_z + h U_z), r = sigmoid(xw_r + h U_r), n = tanh(xw_n + r * (h U_n)),
// where xw already holds x W + b for this position.
inline Var gru_step(Var xw, Var h, Var w_hidden, std::size_t hidden) {
  using namespace numkit::ops;
  Var hu = matmul(h, w_hidden);
  Var z = sigmoid(add(slice_cols(xw, 0, hidden), slice_cols(hu, 0, hidden)));
  Var r = sigmoid(add(slice_cols(xw, hidden, 2 * hidden), slice_cols(hu, hidden, 2 * hidden)));
  Var n = tanh(add(slice_cols(xw, 2 * hidden, 3 * hidden), hadamard(r, slice_cols(hu, 2 * hidden, 3 * hidden))));
  return add(h, hadamard(z, sub(n, h)));
}

// Recurrent controller. Without attention the value head reads the final
// hidden state; with it, an additive attention pool over all hidden states.
inline PolicyGraph gru_forward(Tape& t, const Matrix& sequence, std::span<const std::uint32_t> classes,
                               ControllerParams& p, bool attention) {
  using namespace numkit::ops;
  const auto& cfg = p.config;
  if (cfg.variant == Variant::Transformer) throw ConfigError("gru_forward needs a gru controller");
  if (attention && !p.pool.w.defined()) throw ConfigError("gru attention pooling parameters are missing");
  detail::check_inputs(sequence, classes, cfg);
  const std::size_t m = cfg.model_dim;
  Var x = detail::embed(t, sequence, classes, p);
  Var xw = add_row(matmul(x, t.param(p.gru.w_input)), t.param(p.gru.bias));
  Var w_hidden = t.param(p.gru.w_hidden);
  Var h = t.constant(Matrix(1, m));
  std::vector<Var> states;
  states.reserve(sequence.rows());
  for (std::size_t i = 0; i < sequence.rows(); ++i) {
    h = gru_step(row(xw, i), h, w_hidden, m);
    states.push_back(h);
  }
  Var hs = stack_rows(states);
  PolicyGraph g;
  g.logits = detail::policy_head(hs, p);
  Var pooled = h;
  if (attention) {
    Var e = matmul(tanh(add_row(matmul(hs, t.param(p.pool.w)), t.param(p.pool.b))), t.param(p.pool.v));
    Var alpha = softmax_rows(transpose(e));  // 1 x n
    pooled = matmul(alpha, hs);
  }
  g.value = detail::value_head(pooled, p);
  return g;
}

inline PolicyGraph single_forward(Tape& t, const Matrix& sequence, std::span<const std::uint32_t> classes,
                                  ControllerParams& p) {
  switch (p.config.variant) {
    case Variant::Transformer: return encoder_forward(t, sequence, classes, p, p.config.use_positions);
    case Variant::Gru: return gru_forward(t, sequence, classes, p, false);
    case Variant::GruAttn: return gru_forward(t, sequence, classes, p, true);
  }
  throw ConfigError("unknown controller variant");
}

// Forward pass honouring per_class_sequences: when set, each class is run as
// its own sequence, logits are scattered back to input order and the state
// value is the mean of the per-class values.
inline PolicyGraph controller_forward(Tape& t, const Matrix& sequence, std::span<const std::uint32_t> classes,
                                      ControllerParams& p) {
  using namespace numkit::ops;
  if (!p.config.per_class_sequences) return single_forward(t, sequence, classes, p);
  detail::check_inputs(sequence, classes, p.config);
  std::vector<std::vector<std::size_t>> members(p.config.class_count);
  for (std::size_t i = 0; i < classes.size(); ++i) members[classes[i]].push_back(i);
  std::vector<Var> logits, values;
  std::vector<std::size_t> position(classes.size());
  std::size_t offset = 0;
  PolicyGraph g;
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) continue;
    Matrix seq(members[c].size(), sequence.cols());
    std::vector<std::uint32_t> cls(members[c].size(), static_cast<std::uint32_t>(c));
    for (std::size_t r = 0; r < members[c].size(); ++r) {
      auto src = sequence.row(members[c][r]);
      std::copy(src.begin(), src.end(), seq.row(r).begin());
      position[members[c][r]] = offset + r;
    }
    offset += members[c].size();
    auto sub = single_forward(t, seq, cls, p);
    logits.push_back(sub.logits);
    values.push_back(sub.value);
    for (auto& a : sub.attention) g.attention.push_back(std::move(a));
  }
  g.logits = gather_rows(concat_rows(logits), position);
  g.value = mean_rows(concat_rows(values));
  return g;
}

// Materialised forward pass; the tape is kept so callers can backpropagate.
struct PolicyOutput {
  Matrix logits;
  double value = 0.0;
  std::vector<std::vector<Matrix>> attention;
  std::shared_ptr<Tape> tape;
  PolicyGraph graph;
};

inline PolicyOutput materialise(std::shared_ptr<Tape> tape, PolicyGraph g) {
  PolicyOutput out;
  out.logits = tape->value(g.logits);
  out.value = tape->value(g.value)[0];
  for (const auto& layer : g.attention) {
    std::vector<Matrix> heads;
    for (Var w : layer) heads.push_back(tape->value(w));
    out.attention.push_back(std::move(heads));
  }
  numkit::require_finite(out.logits, "controller logits");
  out.tape = std::move(tape);
  out.graph = std::move(g);
  return out;
}

inline PolicyOutput encoder_forward(const Matrix& sequence, std::span<const std::uint32_t> classes,
                                    ControllerParams& p, bool use_positions) {
  auto tape = std::make_shared<Tape>();
  auto g = encoder_forward(*tape, sequence, classes, p, use_positions);
  return materialise(std::move(tape), std::move(g));
}

inline PolicyOutput gru_forward(const Matrix& sequence, std::span<const std::uint32_t> classes,
                                ControllerParams& p, bool attention) {
  auto tape = std::make_shared<Tape>();
  auto g = gru_forward(*tape, sequence, classes, p, attention);
  return materialise(std::move(tape), std::move(g));
}

inline PolicyOutput controller_forward(const Matrix& sequence, std::span<const std::uint32_t> classes,
                                       ControllerParams& p) {
  auto tape = std::make_shared<Tape>();
  auto g = controller_forward(*tape, sequence, classes, p);
  return materialise(std::move(tape), std::move(g));
}

enum class SampleMode { Stochastic, Greedy };

struct SampledActions {
  std::vector<int> actions;  // 1 = keep, 0 = discard
  std::vector<double> log_probs;
  std::vector<double> keep_probs;
};

// Per-row choice between discard (column 0) and keep (column 1). The keep
// probability is exp of the log-softmax, so exp(log_prob) reproduces it
// exactly. Greedy ties resolve to discard.
inline SampledActions sample_actions(const Matrix& logits, RngStream& rng, SampleMode mode) {
  if (logits.cols() != 2) throw DimensionError("action logits must have 2 columns, got " + logits.shape());
  numkit::require_finite(logits, "action logits");
  const Matrix logp = numkit::log_softmax_rows(logits);
  SampledActions out;
  out.actions.resize(logits.rows());
  out.log_probs.resize(logits.rows());
  out.keep_probs.resize(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const double p_keep = std::exp(logp(i, 1));
    int a;
    if (mode == SampleMode::Greedy) {
      a = logits(i, 1) > logits(i, 0) ? 1 : 0;
    } else {
      a = rng.uniform() < p_keep ? 1 : 0;
    }
    out.actions[i] = a;
    out.log_probs[i] = logp(i, static_cast<std::size_t>(a));
    out.keep_probs[i] = p_keep;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SSCK", u32 version, config fields, then every parameter as
// (name, rows, cols, raw doubles). Host byte order; doubles round-trip exactly.
// ---------------------------------------------------------------------------

namespace ckpt_detail {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated controller checkpoint");
  return v;
}

inline constexpr char kMagic[4] = {'S', 'S', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

}  // namespace ckpt_detail

inline void save_checkpoint(const ControllerParams& p, const std::filesystem::path& path) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  const auto& c = p.config;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.variant));
  for (std::size_t v : {c.input_dim, c.class_count, c.model_dim, c.heads, c.key_dim, c.value_dim, c.layers,
                        c.ffn_hidden, c.class_embedding_dim})
    put<std::uint64_t>(out, v);
  put<double>(out, c.init_scale);
  for (bool b : {c.use_positions, c.layer_norm, c.zero_policy_head, c.per_class_sequences})
    put<std::uint8_t>(out, b ? 1 : 0);
  const auto params = p.all();
  put<std::uint64_t>(out, params.size());
  for (const ParamTensor* t : params) {
    put<std::uint64_t>(out, t->name.size());
    out.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
    put<std::uint64_t>(out, t->value.rows());
    put<std::uint64_t>(out, t->value.cols());
    out.write(reinterpret_cast<const char*>(t->value.data()),
              static_cast<std::streamsize>(t->value.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline ControllerParams load_checkpoint(const std::filesystem::path& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
    throw FormatError("not a controller checkpoint: " + path.string());
  }
  if (get<std::uint32_t>(in) != kVersion) throw FormatError("unsupported checkpoint version");
  ControllerConfig c;
  c.variant = static_cast<Variant>(get<std::uint32_t>(in));
  for (std::size_t* f : {&c.input_dim, &c.class_count, &c.model_dim, &c.heads, &c.key_dim, &c.value_dim,
                         &c.layers, &c.ffn_hidden, &c.class_embedding_dim})
    *f = get<std::uint64_t>(in);
  c.init_scale = get<double>(in);
  for (bool* f : {&c.use_positions, &c.layer_norm, &c.zero_policy_head, &c.per_class_sequences})
    *f = get<std::uint8_t>(in) != 0;
  RngStream scratch(0, numkit::StreamId::ControllerInit);
  ControllerParams p = init_params(c, scratch);
  auto params = p.all();
  if (get<std::uint64_t>(in) != params.size()) throw FormatError("checkpoint parameter count mismatch");
  for (ParamTensor* t : params) {
    std::string name(get<std::uint64_t>(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("truncated checkpoint");
    if (name != t->name) throw FormatError("checkpoint parameter '" + name + "' where '" + t->name + "' expected");
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows != t->value.rows() || cols != t->value.cols()) {
      throw FormatError("checkpoint shape mismatch for " + name);
    }
    if (!in.read(reinterpret_cast<char*>(t->value.data()),
                 static_cast<std::streamsize>(t->value.size() * sizeof(double)))) {
      throw IoError("truncated checkpoint");
    }
  }
  return p;
}

}  // namespace synsel::controller
