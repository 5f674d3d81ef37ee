// SPDX-License-Identifier: Apache-2.0
//
// Randomized invariants, one case per call. Each returns an empty string on
// success and a description of the violation otherwise.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace lwt::properties {

inline std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

inline std::string softmax_rows_sum_to_one(Rng& rng) {
  const std::size_t r = draw(rng, 1, 6), n = draw(rng, 1, 40);
  const double spread = std::pow(10.0, rng.uniform(-2.0, 3.0));
  Tape t;
  const Tensor y = softmax_rows(t.constant(testing::random_tensor(rng, {r, n}, -spread, spread))).value();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (double v : y.row(i)) {
      if (v < 0.0) return "negative probability";
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-12) return "row sum " + format_double(s);
  }
  return {};
}

inline std::string split_concat_round_trip(Rng& rng) {
  const std::size_t k = draw(rng, 1, 8), w = draw(rng, 1, 6), r = draw(rng, 1, 5);
  const Tensor x = testing::random_tensor(rng, {r, k * w}, -1e3, 1e3);
  Tape t;
  if (!(concat_lastdim(split_lastdim(t.constant(x), k)).value() == x)) return "round trip changed values";
  return {};
}

inline std::string attention_is_convex_combination(Rng& rng) {
  const std::size_t nq = draw(rng, 1, 5), nkv = draw(rng, 1, 7), da = draw(rng, 1, 6), dv = draw(rng, 1, 6);
  const double qscale = std::pow(10.0, rng.uniform(-1.0, 1.5));
  const Tensor v = testing::random_tensor(rng, {nkv, dv}, -5, 5);
  Tape t;
  const Tensor out = scaled_dot_attention(t.constant(testing::random_tensor(rng, {nq, da}, -qscale, qscale)),
                                          t.constant(testing::random_tensor(rng, {nkv, da}, -qscale, qscale)),
                                          t.constant(v))
                         .value();
  for (std::size_t j = 0; j < dv; ++j) {
    double lo = v(0, j), hi = v(0, j);
    for (std::size_t i = 1; i < nkv; ++i) {
      lo = std::min(lo, v(i, j));
      hi = std::max(hi, v(i, j));
    }
    // bounds hold up to the rounding of an nkv-term sum
    const double slack = 8.0 * nkv * std::numeric_limits<double>::epsilon() * std::max(std::abs(lo), std::abs(hi));
    for (std::size_t i = 0; i < nq; ++i) {
      if (out(i, j) < lo - slack || out(i, j) > hi + slack) return "output outside the value range";
    }
  }
  return {};
}

/// `worst` accumulates the largest elementwise deviation seen.
inline std::string self_attention_is_permutation_equivariant(Rng& rng, double& worst) {
  const std::size_t k = draw(rng, 1, 2);
  const bool grouped = k > 1;
  const ModelConfig cfg =
      testing::small_config(8, 4, k, grouped, grouped, grouped && rng.below(2) == 1, draw(rng, 1, 2));
  const Model m = init_params(cfg, rng.next());
  const std::size_t n = draw(rng, 2, 7);
  const Tensor x = testing::random_tensor(rng, {n, 8});
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
  Tensor xp({n, 8});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 8; ++j) xp(i, j) = x(perm[i], j);
  Tape t;
  const Tensor y = encoder_layer_forward(t.constant(x), m.encoder[0], cfg).value();
  const Tensor yp = encoder_layer_forward(t.constant(xp), m.encoder[0], cfg).value();
  double diff = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 8; ++j) diff = std::max(diff, std::abs(yp(i, j) - y(perm[i], j)));
  worst = std::max(worst, diff);
  // keys are summed in a different order, so agreement is to rounding
  if (diff >= 1e-12) return "permuted output differs by " + format_double(diff);
  return {};
}

inline std::string shared_gradient_is_sum_of_uses(Rng& rng) {
  const std::size_t uses = draw(rng, 2, 4), r = draw(rng, 1, 4), p = draw(rng, 1, 5), q = draw(rng, 1, 5);
  Param w = make_param("w", testing::random_tensor(rng, {p, q}));
  std::vector<Tensor> xs, ws;
  for (std::size_t u = 0; u < uses; ++u) {
    xs.push_back(testing::random_tensor(rng, {r, p}));
    ws.push_back(testing::random_tensor(rng, {r, q}));
  }
  auto use = [&](Tape& t, std::size_t u) {
    return sum(mul(softmax_rows(matmul(t.constant(xs[u]), t.param(w))), t.constant(ws[u])));
  };
  Tape t;
  Var total = use(t, 0);
  for (std::size_t u = 1; u < uses; ++u) total = add(total, use(t, u));
  const Tensor g = t.backward(total).at(w.get());
  Tensor expected({p, q});
  for (std::size_t u = 0; u < uses; ++u) {
    Tape tu;
    const Tensor gu = tu.backward(use(tu, u)).at(w.get());
    for (std::size_t i = 0; i < gu.size(); ++i) expected[i] += gu[i];
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::abs(g[i] - expected[i]) > 1e-14) return "shared gradient differs from the sum";
  }
  return {};
}

}  // namespace lwt::properties
