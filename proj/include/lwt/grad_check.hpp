// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lwt/autodiff.hpp"
#include "lwt/rng.hpp"

namespace lwt {

/// Builds a scalar loss from parameters on the given tape. Must be
/// deterministic; it is re-run once per perturbed entry.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every entry; otherwise a seeded sample of this many entries per
  // parameter tensor.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients with central differences
/// (f(p+eps) - f(p-eps)) / (2 eps) entry by entry.
inline GradCheckResult grad_check(const LossFn& f, const std::vector<Param>& params,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.eps >= 1e-6 && opts.eps <= 1e-4)) {
    throw ConfigError("grad_check: eps must lie in [1e-6, 1e-4], got " + std::to_string(opts.eps));
  }
  auto eval = [&f]() {
    Tape tape;
    const double v = f(tape).value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
    return v;
  };

  GradMap grads;
  {
    Tape tape;
    Var loss = f(tape);
    if (!std::isfinite(loss.value()[0])) throw NumericError("grad_check: loss is not finite");
    grads = tape.backward(loss);
  }

  Rng rng(opts.seed);
  GradCheckResult result;
  for (const Param& p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.max_entries_per_param != 0 && opts.max_entries_per_param < n) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < opts.max_entries_per_param; ++i) {
        std::swap(entries[i], entries[i + rng.below(n - i)]);
      }
      entries.resize(opts.max_entries_per_param);
      std::sort(entries.begin(), entries.end());
    }
    const auto git = grads.find(p.get());
    for (std::size_t idx : entries) {
      const double analytic = git == grads.end() ? 0.0 : git->second[idx];
      double& slot = p->value[idx];
      const double saved = slot;
      slot = saved + opts.eps;
      const double up = eval();
      slot = saved - opts.eps;
      const double down = eval();
      slot = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double err = relative_error(analytic, numeric);
      ++result.entries_checked;
      if (result.worst_param.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p->name;
        result.worst_index = idx;
      }
    }
  }
  return result;
}

}  // namespace lwt
