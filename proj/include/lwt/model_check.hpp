// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference check of a small encoder-decoder built from a config.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "lwt/config.hpp"
#include "lwt/grad_check.hpp"
#include "lwt/layers.hpp"
#include "lwt/ops.hpp"
#include "lwt/rng.hpp"

namespace lwt {

struct ModelCheckOptions {
  std::size_t width = 64;
  std::size_t n_enc = 1;
  std::size_t n_dec = 1;
  std::size_t n_q = 4;
  std::size_t n_v = 5;
  GradCheckOptions check;
  // restricts the checked tensors; empty checks all of them
  std::function<bool(const ParamStore&)> select;
};

/// Model used by the check: `cfg` scaled to `width` with n_enc + n_dec layers.
/// The output head is re-drawn from the seed because the trained-from-scratch
/// head starts at zero, which would leave every stack gradient at zero.
inline Model check_model(const ModelConfig& cfg, const ModelCheckOptions& opts) {
  ModelConfig c = scaled_to_width(cfg, opts.width);
  c.n_enc = opts.n_enc;
  c.n_dec = opts.n_dec;
  c.validate();
  Model m = init_params(c, opts.check.seed);
  Rng rng(opts.check.seed ^ 0xc2b2ae3d27d4eb4fULL);
  const double limit = std::sqrt(6.0 / static_cast<double>(c.d + c.vocab));
  for (double& v : m.head_w->value.data()) v = rng.uniform(-limit, limit);
  return m;
}

/// Objective: mean of the logits weighted by a fixed random matrix, on random
/// source and decoder tokens.
inline GradCheckResult check_model_gradients(const ModelConfig& cfg, const ModelCheckOptions& opts = {}) {
  const Model m = check_model(cfg, opts);
  Rng rng(opts.check.seed ^ 0x165667b19e3779f9ULL);
  std::vector<std::size_t> x(opts.n_q), y(opts.n_v);
  for (auto& t : x) t = rng.below(m.cfg.vocab);
  for (auto& t : y) t = rng.below(m.cfg.vocab);
  Tensor weights({opts.n_v, m.cfg.vocab});
  for (double& v : weights.data()) v = rng.uniform(-1.0, 1.0);
  const double inv = 1.0 / static_cast<double>(weights.size());
  LossFn f = [&](Tape& tape) {
    Var logits = model_forward(tape, m, x, y);
    return scale(sum(mul(logits, tape.constant(weights))), inv);
  };
  std::vector<Param> params;
  for (const Param& p : m.parameters()) {
    if (!opts.select || opts.select(*p)) params.push_back(p);
  }
  return grad_check(f, params, opts.check);
}

}  // namespace lwt
