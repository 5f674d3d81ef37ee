// SPDX-License-Identifier: Apache-2.0
//
// Parameter and multiply-accumulate (MAdds) accounting.
//
// Conventions: only the encoder/decoder stack is counted (no embeddings or
// output head); biases and layer-norm affine pairs are counted as auxiliary
// parameters; MAdds are the scalar multiply-accumulates inside matrix
// products, nothing else. Weight sharing changes parameters, never MAdds.

#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lwt/autodiff.hpp"
#include "lwt/config.hpp"
#include "lwt/layers.hpp"

namespace lwt {

struct BudgetRow {
  std::string component;  // enc.attn, enc.ffn, enc.norm, dec.self_attn, ...
  std::size_t layer = 0;
  std::uint64_t weights = 0;
  std::uint64_t aux_params = 0;  // biases and norm affine
  std::uint64_t madds = 0;
};

struct BudgetReport {
  std::vector<BudgetRow> rows;
  std::uint64_t n_q = 0;
  std::uint64_t n_v = 0;

  std::uint64_t total_weights() const {
    std::uint64_t s = 0;
    for (const auto& r : rows) s += r.weights;
    return s;
  }
  std::uint64_t total_aux() const {
    std::uint64_t s = 0;
    for (const auto& r : rows) s += r.aux_params;
    return s;
  }
  std::uint64_t total_params() const { return total_weights() + total_aux(); }
  std::uint64_t total_madds() const {
    std::uint64_t s = 0;
    for (const auto& r : rows) s += r.madds;
    return s;
  }
};

namespace detail {

struct Cost {
  std::uint64_t weights = 0, aux = 0, madds = 0;
};

// One attention sub-layer with n_q query rows and n_kv key/value rows.
inline Cost attention_cost(const ModelConfig& c, std::uint64_t n_q, std::uint64_t n_kv) {
  const std::uint64_t d = c.d, e = c.e;
  const std::uint64_t g = c.attn_groups();
  const std::uint64_t copies = c.attn_copies();
  const std::uint64_t in = d / g;
  Cost cost;
  // Q, K: in x e*in per copy; V: in x in per copy
  cost.weights = copies * (2 * in * e * in + in * in);
  cost.aux = copies * (2 * e * in + in);
  cost.madds = n_q * e * d * d / g + n_kv * e * d * d / g + n_kv * d * d / g;
  if (c.use_glml && g > 1) {
    cost.weights += copies * in * in;
    cost.aux += copies * in;
    cost.madds += n_q * d * d / g;
  } else {
    cost.weights += d * d;
    cost.aux += d;
    cost.madds += n_q * d * d;
  }
  // scores over all heads (Q/K head width e*d_h) and the weighted sum of V
  cost.madds += n_q * n_kv * e * d + n_q * n_kv * d;
  return cost;
}

inline Cost ffn_cost(const ModelConfig& c, std::uint64_t n) {
  const std::uint64_t d = c.d, df = c.d_f;
  const std::uint64_t g = c.ffn_groups();
  const std::uint64_t copies = c.ffn_copies();
  Cost cost;
  if (c.use_gil && g > 1) {
    cost.weights = copies * (d / g) * (df / g);
    cost.aux = copies * (df / g);
    cost.madds = n * d * df / g;
  } else {
    cost.weights = d * df;
    cost.aux = df;
    cost.madds = n * d * df;
  }
  cost.weights += copies * (df / g) * (d / g);
  cost.aux += copies * (d / g);
  cost.madds += n * df * d / g;
  return cost;
}

inline BudgetRow to_row(std::string component, std::size_t layer, const Cost& c) {
  return BudgetRow{std::move(component), layer, c.weights, c.aux, c.madds};
}

}  // namespace detail

/// Closed-form parameter and MAdds accounting for a configuration.
inline BudgetReport count_madds_analytic(const ModelConfig& cfg, std::uint64_t n_q, std::uint64_t n_v) {
  cfg.validate();
  BudgetReport r;
  r.n_q = n_q;
  r.n_v = n_v;
  const std::uint64_t d = cfg.d;
  for (std::size_t i = 0; i < cfg.n_enc; ++i) {
    r.rows.push_back(detail::to_row("enc.attn", i, detail::attention_cost(cfg, n_q, n_q)));
    r.rows.push_back(detail::to_row("enc.ffn", i, detail::ffn_cost(cfg, n_q)));
    r.rows.push_back(BudgetRow{"enc.norm", i, 0, 2 * 2 * d, 0});
  }
  for (std::size_t i = 0; i < cfg.n_dec; ++i) {
    r.rows.push_back(detail::to_row("dec.self_attn", i, detail::attention_cost(cfg, n_v, n_v)));
    r.rows.push_back(detail::to_row("dec.cross_attn", i, detail::attention_cost(cfg, n_v, n_q)));
    r.rows.push_back(detail::to_row("dec.ffn", i, detail::ffn_cost(cfg, n_v)));
    r.rows.push_back(BudgetRow{"dec.norm", i, 0, 3 * 2 * d, 0});
  }
  return r;
}

/// Parameter counts do not depend on sequence length; MAdds columns are zero.
inline BudgetReport count_params_analytic(const ModelConfig& cfg) { return count_madds_analytic(cfg, 0, 0); }

/// Number of distinct stack parameter entries; shared storage counts once.
inline std::uint64_t count_params_actual(const Model& model) {
  std::uint64_t n = 0;
  for (const Param& p : model.stack_parameters()) n += p->value.size();
  return n;
}

/// Runs one stack forward pass on zero inputs in shape-only counting mode
/// and returns the matmul multiply-accumulates it performed.
inline std::uint64_t count_madds_instrumented(const Model& model, std::size_t n_q, std::size_t n_v) {
  if (n_q == 0 || n_v == 0) throw ConfigError("count_madds_instrumented: sequence lengths must be >= 1");
  Tape tape;
  tape.set_shape_only(true);
  Var x = tape.constant(Tensor({n_q, model.cfg.d}));
  Var y = tape.constant(Tensor({n_v, model.cfg.d}));
  (void)stack_forward(model, x, y);
  return tape.madds();
}

// ---------------------------------------------------------------------------
// Formatting

namespace detail {

// value / unit rounded half-to-even to `decimals` fraction digits.
inline std::string round_half_even(std::uint64_t value, std::uint64_t unit, int decimals) {
  std::uint64_t step = unit;
  for (int i = 0; i < decimals; ++i) step /= 10;
  std::uint64_t q = value / step;
  const std::uint64_t rem = value % step;
  if (2 * rem > step || (2 * rem == step && (q % 2 == 1))) ++q;
  std::uint64_t scale = 1;
  for (int i = 0; i < decimals; ++i) scale *= 10;
  std::ostringstream os;
  os << q / scale;
  if (decimals > 0) os << '.' << std::setw(decimals) << std::setfill('0') << q % scale;
  return os.str();
}

}  // namespace detail

/// Millions with one decimal, round-half-even: 44138496 -> "44.1".
inline std::string format_millions(std::uint64_t n) { return detail::round_half_even(n, 1000000, 1); }
/// Billions with two decimals: 2581530624 -> "2.58".
inline std::string format_giga(std::uint64_t n) { return detail::round_half_even(n, 1000000000, 2); }

/// 1 - value/baseline as a percentage string with one decimal.
inline std::string format_reduction(std::uint64_t value, std::uint64_t baseline) {
  if (baseline == 0) return "0.0";
  const double pct = 100.0 * (1.0 - static_cast<double>(value) / static_cast<double>(baseline));
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << (pct == 0.0 ? 0.0 : pct);
  return os.str();
}

inline std::string report_csv(const BudgetReport& r) {
  std::ostringstream os;
  os << "component,layer,weights,aux_params,madds\n";
  for (const auto& row : r.rows) {
    os << row.component << ',' << row.layer << ',' << row.weights << ',' << row.aux_params << ',' << row.madds << '\n';
  }
  os << "total,," << r.total_weights() << ',' << r.total_aux() << ',' << r.total_madds() << '\n';
  return os.str();
}

inline std::string report_text(const BudgetReport& r, const std::string& title) {
  std::ostringstream os;
  os << title << "  (n_q=" << r.n_q << ", n_v=" << r.n_v << ")\n";
  os << std::left << std::setw(16) << "component" << std::right << std::setw(6) << "layer" << std::setw(14)
     << "weights" << std::setw(12) << "aux" << std::setw(16) << "madds" << '\n';
  for (const auto& row : r.rows) {
    os << std::left << std::setw(16) << row.component << std::right << std::setw(6) << row.layer << std::setw(14)
       << row.weights << std::setw(12) << row.aux_params << std::setw(16) << row.madds << '\n';
  }
  os << "params: " << format_millions(r.total_params()) << "M (" << r.total_params() << " = " << r.total_weights()
     << " weights + " << r.total_aux() << " aux)\n";
  os << "weights: " << format_millions(r.total_weights()) << "M\n";
  os << "MAdds:  " << format_giga(r.total_madds()) << "G (" << r.total_madds() << ")\n";
  return os.str();
}

struct TableVariant {
  std::string name;
  ModelConfig cfg;
  std::string note;  // e.g. a known disagreement with published numbers
};

struct TableRow {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t madds = 0;
  std::string params_m;
  std::string madds_g;
  std::string params_reduction;
  std::string madds_reduction;
  std::string note;
};

inline std::vector<TableRow> table_rows(const ModelConfig& baseline, const std::vector<TableVariant>& variants,
                                        std::uint64_t n_q, std::uint64_t n_v) {
  const BudgetReport base = count_madds_analytic(baseline, n_q, n_v);
  std::vector<TableRow> out;
  for (const auto& v : variants) {
    const BudgetReport r = count_madds_analytic(v.cfg, n_q, n_v);
    out.push_back(TableRow{v.name, r.total_params(), r.total_madds(), format_millions(r.total_params()),
                           format_giga(r.total_madds()), format_reduction(r.total_params(), base.total_params()),
                           format_reduction(r.total_madds(), base.total_madds()), v.note});
  }
  return out;
}

/// Comparison table in CSV (csv=true) or aligned text.
inline std::string table_report(const ModelConfig& baseline, const std::vector<TableVariant>& variants,
                                std::uint64_t n_q, std::uint64_t n_v, bool csv) {
  const auto rows = table_rows(baseline, variants, n_q, n_v);
  std::ostringstream os;
  if (csv) {
    os << "model,params,madds,params_m,madds_g,params_reduction_pct,madds_reduction_pct,note\n";
    for (const auto& r : rows) {
      os << r.name << ',' << r.params << ',' << r.madds << ',' << r.params_m << ',' << r.madds_g << ','
         << r.params_reduction << ',' << r.madds_reduction << ',' << r.note << '\n';
    }
    return os.str();
  }
  os << "n_q=" << n_q << ", n_v=" << n_v << '\n';
  os << std::left << std::setw(14) << "model" << std::right << std::setw(10) << "#Params" << std::setw(9) << "MAdds"
     << std::setw(10) << "dParams" << std::setw(10) << "dMAdds" << "  note\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(14) << r.name << std::right << std::setw(9) << r.params_m << 'M' << std::setw(8)
       << r.madds_g << 'G' << std::setw(9) << r.params_reduction << '%' << std::setw(9) << r.madds_reduction << '%'
       << "  " << r.note << '\n';
  }
  return os.str();
}

/// Default sequence lengths: 14 encoder tokens, 100 decoder positions.
inline constexpr std::uint64_t kDefaultNq = 14;
inline constexpr std::uint64_t kDefaultNv = 100;

/// The ablation rows, in table order, built from the named presets.
inline std::vector<TableVariant> ablation_variants() {
  const char* inconsistent = "published count not reproducible by the closed form";
  std::vector<TableVariant> v;
  for (const char* name : {"baseline", "gmha", "gffn", "gmha-gffn", "lw1x", "lw2x", "lw3x", "lw3x-k4", "lw3x-k8",
                           "lw1x-glml", "lw1x-mini", "lw1x-full"}) {
    const std::string n = name;
    const bool odd = n == "gmha-gffn" || n == "lw3x-k4" || n == "lw3x-k8";
    v.push_back(TableVariant{n, *find_preset(n), odd ? inconsistent : ""});
  }
  return v;
}

}  // namespace lwt
