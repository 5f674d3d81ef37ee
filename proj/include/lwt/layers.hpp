// SPDX-License-Identifier: Apache-2.0
//
// Attention and feed-forward layers, dense and group-wise, and the
// encoder-decoder stack built from them.
//
// Group-wise layers split their input along the feature dimension into k
// groups, run an independent (or weight-shared) transform per group and
// concatenate the results. Under weight sharing every group holds the same
// Param, i.e. one physical storage.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "lwt/autodiff.hpp"
#include "lwt/config.hpp"
#include "lwt/ops.hpp"
#include "lwt/rng.hpp"

namespace lwt {

/// Projection and merge weights of one attention sub-layer. The projection
/// vectors hold one entry per group; the merge vectors hold one entry, or
/// one per group under G-LML.
struct MhaParams {
  std::vector<Param> wq, bq, wk, bk, wv, bv;
  std::vector<Param> wo, bo;
  bool shared = false;

  std::size_t groups() const { return wq.size(); }
};

/// w1/b1 hold one entry (dense expansion) or one per group (G-IL);
/// w2/b2 hold one entry per group of the scaling layer.
struct FfnParams {
  std::vector<Param> w1, b1, w2, b2;
  bool shared = false;
};

struct NormParams {
  Param gamma, beta;
};

struct EncoderLayerParams {
  MhaParams attn;
  NormParams norm1;
  FfnParams ffn;
  NormParams norm2;
};

struct DecoderLayerParams {
  MhaParams self_attn;
  NormParams norm1;
  MhaParams cross_attn;
  NormParams norm2;
  FfnParams ffn;
  NormParams norm3;
};

struct Model {
  ModelConfig cfg;
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  Param src_embed;  // vocab x d
  Param tgt_embed;  // vocab x d
  Param head_w;     // d x vocab
  Param head_b;     // vocab

  /// Unique storages of the encoder/decoder stack in construction order.
  std::vector<Param> stack_parameters() const;
  /// Stack plus embeddings and output head.
  std::vector<Param> parameters() const;
};

/// Identifies an attention sub-layer for recording.
struct AttnSite {
  std::size_t layer = 0;
  std::string_view kind = "attn";
};

inline Var linear(const Var& x, const Param& w, const Param& b) {
  Tape& t = x.tape();
  return add_bias(matmul(x, t.param(w)), t.param(b));
}

/// softmax(Q K^T / sqrt(d_a)) V, with Q:[n_q x d_a], K:[n_kv x d_a], V:[n_kv x d_v].
inline Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, const AttnSite* site = nullptr,
                                std::size_t group = 0, std::size_t head = 0) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  detail::require_matrix(qv, "scaled_dot_attention");
  detail::require_matrix(kv, "scaled_dot_attention");
  detail::require_matrix(vv, "scaled_dot_attention");
  if (qv.cols() != kv.cols()) {
    throw DimensionError("attention: Q " + shape_str(qv.shape()) + " and K " + shape_str(kv.shape()) +
                         " disagree in width");
  }
  if (kv.rows() != vv.rows()) {
    throw DimensionError("attention: K " + shape_str(kv.shape()) + " and V " + shape_str(vv.shape()) +
                         " disagree in length");
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  Var probs = softmax_rows(scale(matmul(q, transpose(k)), inv_scale));
  if (auto* rec = q.tape().recorder(); rec && site) {
    rec->push_back(AttentionMap{site->layer, std::string(site->kind), group, head, probs.value()});
  }
  return matmul(probs, v);
}

namespace detail {

// Projects, truncates into heads, attends, and concatenates the heads.
// No merge projection.
inline Var attend_heads(const Var& xq, const Var& xkv, const MhaParams& p, std::size_t g, std::size_t heads,
                        const AttnSite* site) {
  Var q = linear(xq, p.wq[g], p.bq[g]);
  Var k = linear(xkv, p.wk[g], p.bk[g]);
  Var v = linear(xkv, p.wv[g], p.bv[g]);
  auto qh = split_lastdim(q, heads);
  auto kh = split_lastdim(k, heads);
  auto vh = split_lastdim(v, heads);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) outs.push_back(scaled_dot_attention(qh[i], kh[i], vh[i], site, g, i));
  return concat_lastdim(outs);
}

}  // namespace detail

/// Standard multi-head attention with a dense linear merge.
inline Var mha_forward(const Var& xq, const Var& xkv, const MhaParams& p, const ModelConfig& cfg,
                       const AttnSite* site = nullptr) {
  if (cfg.d != cfg.h * cfg.d_h) throw ConfigError("mha_forward: d must equal h*d_h");
  if (p.groups() != 1 || p.wo.size() != 1) throw ConfigError("mha_forward: expects ungrouped parameters");
  Var heads = detail::attend_heads(xq, xkv, p, 0, cfg.h, site);
  return linear(heads, p.wo[0], p.bo[0]);
}

/// Group-wise multi-head attention: split both inputs into k feature groups,
/// run h/k heads per group, concatenate, then merge (dense, or per group
/// under G-LML).
inline Var gmha_forward(const Var& xq, const Var& xkv, const MhaParams& p, const ModelConfig& cfg,
                        const AttnSite* site = nullptr) {
  const std::size_t k = p.groups();
  if (k == 0 || cfg.d % k != 0 || cfg.h % k != 0) {
    throw ConfigError("gmha_forward: k=" + std::to_string(k) + " must divide d and h");
  }
  auto q_groups = split_lastdim(xq, k);
  auto kv_groups = &xq == &xkv ? q_groups : split_lastdim(xkv, k);
  std::vector<Var> outs;
  outs.reserve(k);
  for (std::size_t g = 0; g < k; ++g) {
    outs.push_back(detail::attend_heads(q_groups[g], kv_groups[g], p, g, cfg.h / k, site));
  }
  Var merged_in = concat_lastdim(outs);
  if (p.wo.size() == 1) return linear(merged_in, p.wo[0], p.bo[0]);
  auto parts = split_lastdim(merged_in, p.wo.size());
  std::vector<Var> merged;
  merged.reserve(parts.size());
  for (std::size_t g = 0; g < parts.size(); ++g) merged.push_back(linear(parts[g], p.wo[g], p.bo[g]));
  return concat_lastdim(merged);
}

/// max(0, X W1 + b1) W2 + b2
inline Var ffn_forward(const Var& x, const FfnParams& p) {
  if (p.w1.size() != 1 || p.w2.size() != 1) throw ConfigError("ffn_forward: expects ungrouped parameters");
  return linear(relu(linear(x, p.w1[0], p.b1[0])), p.w2[0], p.b2[0]);
}

/// Group-wise FFN: dense expansion (or per-group under G-IL), then the
/// hidden features are split into k groups and each is scaled back to d/k.
inline Var gffn_forward(const Var& x, const FfnParams& p, const ModelConfig& cfg) {
  const std::size_t k = p.w2.size();
  if (k == 0 || cfg.d % k != 0 || cfg.d_f % k != 0) {
    throw ConfigError("gffn_forward: k=" + std::to_string(k) + " must divide d and d_f");
  }
  std::vector<Var> hidden;
  if (p.w1.size() == 1) {
    hidden = split_lastdim(relu(linear(x, p.w1[0], p.b1[0])), k);
  } else {
    if (p.w1.size() != k) throw ConfigError("gffn_forward: expanding and scaling group counts differ");
    auto xs = split_lastdim(x, k);
    for (std::size_t g = 0; g < k; ++g) hidden.push_back(relu(linear(xs[g], p.w1[g], p.b1[g])));
  }
  std::vector<Var> outs;
  outs.reserve(k);
  for (std::size_t g = 0; g < k; ++g) outs.push_back(linear(hidden[g], p.w2[g], p.b2[g]));
  return concat_lastdim(outs);
}

inline Var attention(const Var& xq, const Var& xkv, const MhaParams& p, const ModelConfig& cfg,
                     const AttnSite* site) {
  return cfg.use_gmha ? gmha_forward(xq, xkv, p, cfg, site) : mha_forward(xq, xkv, p, cfg, site);
}

inline Var feed_forward(const Var& x, const FfnParams& p, const ModelConfig& cfg) {
  return cfg.use_gffn ? gffn_forward(x, p, cfg) : ffn_forward(x, p);
}

inline Var norm(const Var& x, const NormParams& p) {
  Tape& t = x.tape();
  return layer_norm(x, t.param(p.gamma), t.param(p.beta));
}

/// Post-norm residual encoder layer: self-attention then FFN.
inline Var encoder_layer_forward(const Var& x, const EncoderLayerParams& p, const ModelConfig& cfg,
                                 std::size_t layer = 0) {
  const AttnSite site{layer, "enc_self"};
  Var x1 = norm(add(x, attention(x, x, p.attn, cfg, &site)), p.norm1);
  return norm(add(x1, feed_forward(x1, p.ffn, cfg)), p.norm2);
}

/// Post-norm residual decoder layer: self-attention, cross-attention to the
/// encoder output, FFN.
inline Var decoder_layer_forward(const Var& y, const Var& enc_out, const DecoderLayerParams& p, const ModelConfig& cfg,
                                 std::size_t layer = 0) {
  const AttnSite self_site{layer, "dec_self"};
  const AttnSite cross_site{layer, "dec_cross"};
  Var y1 = norm(add(y, attention(y, y, p.self_attn, cfg, &self_site)), p.norm1);
  Var y2 = norm(add(y1, attention(y1, enc_out, p.cross_attn, cfg, &cross_site)), p.norm2);
  return norm(add(y2, feed_forward(y2, p.ffn, cfg)), p.norm3);
}

/// Encoder stack over x, decoder stack over y attending to the final
/// encoder output. Inputs are already embedded: x [n_q x d], y [n_v x d].
inline Var stack_forward(const Model& model, const Var& x, const Var& y) {
  const ModelConfig& cfg = model.cfg;
  Var enc = x;
  for (std::size_t i = 0; i < model.encoder.size(); ++i) enc = encoder_layer_forward(enc, model.encoder[i], cfg, i);
  Var dec = y;
  for (std::size_t i = 0; i < model.decoder.size(); ++i) {
    dec = decoder_layer_forward(dec, enc, model.decoder[i], cfg, i);
  }
  return dec;
}

/// Fixed sinusoidal position table [n x d].
inline Tensor positional_encoding(std::size_t n, std::size_t d) {
  Tensor pe({n, d});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

inline Var embed(Tape& tape, const Param& table, const std::vector<std::size_t>& tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw InputError("empty token sequence");
  if (tokens.size() > cfg.max_len) {
    throw InputError("sequence length " + std::to_string(tokens.size()) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  for (std::size_t t : tokens) {
    if (t >= cfg.vocab) {
      throw InputError("token id " + std::to_string(t) + " out of vocabulary of size " + std::to_string(cfg.vocab));
    }
  }
  Var e = gather_rows(tape.param(table), tokens);
  return add(e, tape.constant(positional_encoding(tokens.size(), cfg.d)));
}

/// Token ids in, vocabulary logits [n_v x vocab] out.
inline Var model_forward(Tape& tape, const Model& model, const std::vector<std::size_t>& x_tokens,
                         const std::vector<std::size_t>& y_tokens) {
  Var x = embed(tape, model.src_embed, x_tokens, model.cfg);
  Var y = embed(tape, model.tgt_embed, y_tokens, model.cfg);
  Var dec = stack_forward(model, x, y);
  return linear(dec, model.head_w, model.head_b);
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Param xavier(std::string name, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w({fan_in, fan_out});
    for (auto& v : w.data()) v = rng_.uniform(-bound, bound);
    return make_param(std::move(name), std::move(w));
  }

  static Param filled(std::string name, std::size_t n, double value) {
    return make_param(std::move(name), Tensor({n}, value));
  }

  // Either one storage referenced k times, or k independent storages.
  std::vector<Param> weights(const std::string& name, std::size_t groups, bool shared, std::size_t fan_in,
                             std::size_t fan_out) {
    std::vector<Param> out;
    if (shared || groups == 1) {
      out.assign(groups, xavier(name, fan_in, fan_out));
    } else {
      for (std::size_t g = 0; g < groups; ++g) out.push_back(xavier(name + ".g" + std::to_string(g), fan_in, fan_out));
    }
    return out;
  }

  static std::vector<Param> biases(const std::string& name, std::size_t groups, bool shared, std::size_t n) {
    std::vector<Param> out;
    if (shared || groups == 1) {
      out.assign(groups, filled(name, n, 0.0));
    } else {
      for (std::size_t g = 0; g < groups; ++g) out.push_back(filled(name + ".g" + std::to_string(g), n, 0.0));
    }
    return out;
  }

  MhaParams mha(const std::string& prefix, const ModelConfig& cfg) {
    const std::size_t k = cfg.attn_groups();
    const bool shared = cfg.weight_sharing && k > 1;
    const std::size_t in = cfg.d / k;
    const std::size_t qk = cfg.e * cfg.d / k;
    MhaParams p;
    p.shared = shared;
    p.wq = weights(prefix + ".wq", k, shared, in, qk);
    p.bq = biases(prefix + ".bq", k, shared, qk);
    p.wk = weights(prefix + ".wk", k, shared, in, qk);
    p.bk = biases(prefix + ".bk", k, shared, qk);
    p.wv = weights(prefix + ".wv", k, shared, in, in);
    p.bv = biases(prefix + ".bv", k, shared, in);
    if (cfg.use_glml && k > 1) {
      p.wo = weights(prefix + ".wo", k, shared, in, in);
      p.bo = biases(prefix + ".bo", k, shared, in);
    } else {
      p.wo = {xavier(prefix + ".wo", cfg.d, cfg.d)};
      p.bo = {filled(prefix + ".bo", cfg.d, 0.0)};
    }
    return p;
  }

  FfnParams ffn(const std::string& prefix, const ModelConfig& cfg) {
    const std::size_t k = cfg.ffn_groups();
    const bool shared = cfg.weight_sharing && k > 1;
    FfnParams p;
    p.shared = shared;
    if (cfg.use_gil && k > 1) {
      p.w1 = weights(prefix + ".w1", k, shared, cfg.d / k, cfg.d_f / k);
      p.b1 = biases(prefix + ".b1", k, shared, cfg.d_f / k);
    } else {
      p.w1 = {xavier(prefix + ".w1", cfg.d, cfg.d_f)};
      p.b1 = {filled(prefix + ".b1", cfg.d_f, 0.0)};
    }
    p.w2 = weights(prefix + ".w2", k, shared, cfg.d_f / k, cfg.d / k);
    p.b2 = biases(prefix + ".b2", k, shared, cfg.d / k);
    return p;
  }

  static NormParams norm(const std::string& prefix, std::size_t d) {
    return {filled(prefix + ".gamma", d, 1.0), filled(prefix + ".beta", d, 0.0)};
  }

 private:
  Rng rng_;
};

inline void append_unique(std::vector<Param>& out, std::unordered_set<const ParamStore*>& seen,
                          const std::vector<Param>& ps) {
  for (const Param& p : ps) {
    if (seen.insert(p.get()).second) out.push_back(p);
  }
}

inline void collect(std::vector<Param>& out, std::unordered_set<const ParamStore*>& seen, const MhaParams& p) {
  for (const auto* v : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo}) append_unique(out, seen, *v);
}

inline void collect(std::vector<Param>& out, std::unordered_set<const ParamStore*>& seen, const FfnParams& p) {
  for (const auto* v : {&p.w1, &p.b1, &p.w2, &p.b2}) append_unique(out, seen, *v);
}

inline void collect(std::vector<Param>& out, std::unordered_set<const ParamStore*>& seen, const NormParams& p) {
  append_unique(out, seen, {p.gamma, p.beta});
}

}  // namespace detail

/// Xavier-uniform weights, zero biases, unit/zero norm affine. The output
/// head starts at zero so that the untrained model predicts the uniform
/// distribution.
inline Model init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  detail::Initializer init(seed);
  Model m;
  m.cfg = cfg;
  for (std::size_t i = 0; i < cfg.n_enc; ++i) {
    const std::string pre = "enc." + std::to_string(i);
    EncoderLayerParams l;
    l.attn = init.mha(pre + ".attn", cfg);
    l.norm1 = detail::Initializer::norm(pre + ".norm1", cfg.d);
    l.ffn = init.ffn(pre + ".ffn", cfg);
    l.norm2 = detail::Initializer::norm(pre + ".norm2", cfg.d);
    m.encoder.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < cfg.n_dec; ++i) {
    const std::string pre = "dec." + std::to_string(i);
    DecoderLayerParams l;
    l.self_attn = init.mha(pre + ".self_attn", cfg);
    l.norm1 = detail::Initializer::norm(pre + ".norm1", cfg.d);
    l.cross_attn = init.mha(pre + ".cross_attn", cfg);
    l.norm2 = detail::Initializer::norm(pre + ".norm2", cfg.d);
    l.ffn = init.ffn(pre + ".ffn", cfg);
    l.norm3 = detail::Initializer::norm(pre + ".norm3", cfg.d);
    m.decoder.push_back(std::move(l));
  }
  m.src_embed = init.xavier("src_embed", cfg.vocab, cfg.d);
  m.tgt_embed = init.xavier("tgt_embed", cfg.vocab, cfg.d);
  m.head_w = make_param("head.w", Tensor({cfg.d, cfg.vocab}, 0.0));
  m.head_b = detail::Initializer::filled("head.b", cfg.vocab, 0.0);
  return m;
}

inline std::vector<Param> Model::stack_parameters() const {
  std::vector<Param> out;
  std::unordered_set<const ParamStore*> seen;
  for (const auto& l : encoder) {
    detail::collect(out, seen, l.attn);
    detail::collect(out, seen, l.norm1);
    detail::collect(out, seen, l.ffn);
    detail::collect(out, seen, l.norm2);
  }
  for (const auto& l : decoder) {
    detail::collect(out, seen, l.self_attn);
    detail::collect(out, seen, l.norm1);
    detail::collect(out, seen, l.cross_attn);
    detail::collect(out, seen, l.norm2);
    detail::collect(out, seen, l.ffn);
    detail::collect(out, seen, l.norm3);
  }
  return out;
}

inline std::vector<Param> Model::parameters() const {
  std::vector<Param> out = stack_parameters();
  for (const Param& p : {src_embed, tgt_embed, head_w, head_b}) {
    if (p) out.push_back(p);
  }
  return out;
}

}  // namespace lwt
