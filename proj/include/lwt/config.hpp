// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lwt/tensor.hpp"

namespace lwt {

/// Architectural hyperparameters. Shared by model construction and the
/// budget arithmetic so the two can never drift apart.
struct ModelConfig {
  std::size_t d = 512;    // model width
  std::size_t d_f = 2048; // FFN hidden width
  std::size_t d_h = 64;   // per-head value dim; Q/K heads use e * d_h
  std::size_t h = 8;      // total heads
  std::size_t k = 1;      // groups
  std::size_t e = 1;      // Q/K expansion multiple
  std::size_t n_enc = 6;
  std::size_t n_dec = 6;
  bool use_gmha = false;
  bool use_gffn = false;
  bool weight_sharing = false;
  bool use_glml = false;  // group-wise linear merge in attention
  bool use_gil = false;   // group-wise intermediate (expanding) FFN layer
  std::size_t vocab = 16;
  std::size_t max_len = 128;

  /// Groups actually applied to attention / FFN.
  std::size_t attn_groups() const { return use_gmha ? k : 1; }
  std::size_t ffn_groups() const { return use_gffn ? k : 1; }
  /// Physical weight copies per grouped layer.
  std::size_t attn_copies() const { return weight_sharing ? 1 : attn_groups(); }
  std::size_t ffn_copies() const { return weight_sharing ? 1 : ffn_groups(); }
  bool grouped() const { return (use_gmha || use_gffn) && k > 1; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
    if (d == 0 || d_f == 0 || d_h == 0 || h == 0) fail("d, d_f, d_h and h must be positive");
    if (k == 0) fail("k must be >= 1");
    if (e == 0) fail("e must be >= 1");
    if (d != h * d_h) fail("d (" + std::to_string(d) + ") must equal h*d_h (" + std::to_string(h * d_h) + ")");
    if (d % k != 0) fail("d must be divisible by k");
    if (h % k != 0) fail("h must be divisible by k");
    if (d_f % k != 0) fail("d_f must be divisible by k");
    if (use_glml && !use_gmha) fail("use_glml requires use_gmha");
    if (use_gil && !use_gffn) fail("use_gil requires use_gffn");
    if (vocab == 0) fail("vocab must be positive");
    if (max_len == 0) fail("max_len must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Preset {
  std::string name;
  std::string description;
  ModelConfig cfg;
};

namespace detail {

inline ModelConfig lw(std::size_t e, std::size_t k) {
  ModelConfig c;
  c.use_gmha = c.use_gffn = c.weight_sharing = true;
  c.k = k;
  c.e = e;
  return c;
}

inline ModelConfig toy(bool lightweight) {
  ModelConfig c;
  c.d = 64;
  c.d_f = 256;
  c.h = 4;
  c.d_h = 16;
  c.n_enc = c.n_dec = 2;
  c.vocab = 16;
  c.max_len = 64;
  if (lightweight) {
    c.k = 2;
    c.use_gmha = c.use_gffn = c.weight_sharing = true;
  }
  return c;
}

}  // namespace detail

/// Named configurations: the ablation rows at full size plus two desk-scale
/// models for the toy tasks.
inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = [] {
    std::vector<Preset> p;
    p.push_back({"baseline", "dense Transformer, 6+6 layers, d=512", ModelConfig{}});
    {
      ModelConfig c;
      c.k = 2;
      c.use_gmha = true;
      p.push_back({"gmha", "G-MHA only, k=2, no sharing", c});
    }
    {
      ModelConfig c;
      c.k = 2;
      c.use_gffn = true;
      p.push_back({"gffn", "G-FFN only, k=2, no sharing", c});
    }
    {
      ModelConfig c;
      c.k = 2;
      c.use_gmha = c.use_gffn = true;
      p.push_back({"gmha-gffn", "G-MHA + G-FFN, k=2, no sharing", c});
    }
    p.push_back({"lw1x", "G-MHA + G-FFN + WS, k=2", detail::lw(1, 2)});
    p.push_back({"lw2x", "lw1x with 2x Q/K expansion", detail::lw(2, 2)});
    p.push_back({"lw3x", "lw1x with 3x Q/K expansion", detail::lw(3, 2)});
    p.push_back({"lw3x-k4", "lw3x with k=4", detail::lw(3, 4)});
    p.push_back({"lw3x-k8", "lw3x with k=8", detail::lw(3, 8)});
    {
      ModelConfig c = detail::lw(1, 2);
      c.use_glml = true;
      p.push_back({"lw1x-glml", "lw1x + group-wise linear merge", c});
    }
    {
      ModelConfig c = detail::lw(1, 2);
      c.use_gil = true;
      p.push_back({"lw1x-mini", "lw1x + group-wise intermediate layer", c});
    }
    {
      ModelConfig c = detail::lw(1, 2);
      c.use_glml = c.use_gil = true;
      p.push_back({"lw1x-full", "fully group-wise lw1x", c});
    }
    p.push_back({"toy-dense", "desk-scale dense model (d=64, 2+2 layers)", detail::toy(false)});
    p.push_back({"toy-lw1x", "desk-scale lw1x model (d=64, 2+2 layers, k=2, WS)", detail::toy(true)});
    return p;
  }();
  return all;
}

inline std::optional<ModelConfig> find_preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p.cfg;
  }
  return std::nullopt;
}

/// Same grouping flags at another width; d_f keeps its ratio to d and d_h = d / h.
inline ModelConfig scaled_to_width(ModelConfig cfg, std::size_t d) {
  cfg.d_f = cfg.d_f * d / cfg.d;
  cfg.d = d;
  cfg.d_h = d / cfg.h;
  return cfg;
}

}  // namespace lwt
