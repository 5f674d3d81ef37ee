// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over Tape/Var. All matrices are row-major; an
// operand of rank > 2 is treated as rows() x cols() where cols() is the last
// dimension.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lwt/autodiff.hpp"

namespace lwt {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// c[m x q] += a[m x p] * b[p x q]
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                    std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * q;
    const double* ai = a.data() + i * p;
    for (std::size_t t = 0; t < p; ++t) {
      const double av = ai[t];
      const double* bt = b.data() + t * q;
      for (std::size_t j = 0; j < q; ++j) ci[j] += av * bt[j];
    }
  }
}

// c[m x p] += a[m x q] * b[p x q]^T
inline void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                    std::size_t q, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * q;
    double* ci = c.data() + i * p;
    for (std::size_t t = 0; t < p; ++t) {
      const double* bt = b.data() + t * q;
      double acc = 0.0;
      for (std::size_t j = 0; j < q; ++j) acc += ai[j] * bt[j];
      ci[t] += acc;
    }
  }
}

// c[p x q] += a[m x p]^T * b[m x q]
inline void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                    std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * p;
    const double* bi = b.data() + i * q;
    for (std::size_t t = 0; t < p; ++t) {
      const double av = ai[t];
      double* ct = c.data() + t * q;
      for (std::size_t j = 0; j < q; ++j) ct[j] += av * bi[j];
    }
  }
}

inline void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

/// C = A B. Counts m*p*q multiply-accumulates on the tape.
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.shape()[0], p = av.shape()[1], q = bv.shape()[1];
  if (bv.shape()[0] != p) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  Tape& tape = a.tape();
  tape.count_madd(static_cast<std::uint64_t>(m) * p * q);
  Tensor c({m, q});
  if (!tape.shape_only()) detail::gemm_nn(av.data(), bv.data(), c.data(), m, p, q);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(c), {a, b}, [ia, ib, m, p, q](Tape& t, std::size_t self) {
    const Tensor& dc = t.grad(self);
    if (t.requires_grad(ia)) detail::gemm_nt(dc.data(), t.value(ib).data(), t.grad(ia).data(), m, q, p);
    if (t.requires_grad(ib)) detail::gemm_tn(t.value(ia).data(), dc.data(), t.grad(ib).data(), m, p, q);
  });
}

inline Var transpose(const Var& a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "transpose");
  const std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = av(i, j);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += g(j, i);
  });
}

inline Var add(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_same_shape(av, bv, "add");
  Tensor out = av;
  detail::accumulate(out, bv);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) detail::accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) detail::accumulate(t.grad(ib), g);
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// Adds a bias vector of length cols() to every row.
inline Var add_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " does not match rows of " +
                         shape_str(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t r = xv.rows(), c = xv.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += bv[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [ix, ib, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) detail::accumulate(t.grad(ix), g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g(i, j);
    }
  });
}

inline Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= c;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    auto in = xv.row(i);
    auto o = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : in) {
      if (std::isnan(v)) throw NumericError("softmax_rows: NaN input");
      mx = std::max(mx, v);
    }
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input");
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (auto& v : o) v /= sum;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < c; ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row over the last dimension, then applies gamma/beta.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = kLayerNormEps) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match last dim of " + shape_str(xv.shape()));
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(r);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    auto in = xv.row(i);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (in[j] - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gv = t.value(ig);
        if (t.requires_grad(ig)) {
          Tensor& dg = t.grad(ig);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dg[j] += g(i, j) * xhat(i, j);
        }
        if (t.requires_grad(ib)) {
          Tensor& db = t.grad(ib);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) db[j] += g(i, j);
        }
        if (t.requires_grad(ix)) {
          Tensor& gx = t.grad(ix);
          const double n = static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g(i, j) * gv[j];
              mean_d += d;
              mean_dx += d * xhat(i, j);
            }
            mean_d /= n;
            mean_dx /= n;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g(i, j) * gv[j];
              gx(i, j) += inv_std[i] * (d - mean_d - xhat(i, j) * mean_dx);
            }
          }
        }
      });
}

/// Splits the last dimension into k equal contiguous slices.
inline std::vector<Var> split_lastdim(const Var& x, std::size_t k) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  if (k == 0 || d % k != 0) {
    throw ConfigError("split_lastdim: last dim " + std::to_string(d) + " is not divisible by k=" + std::to_string(k));
  }
  const std::size_t w = d / k, r = xv.rows();
  std::vector<Var> parts;
  parts.reserve(k);
  for (std::size_t g = 0; g < k; ++g) {
    Shape shape = xv.shape();
    shape.back() = w;
    Tensor part(shape);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) part(i, j) = xv(i, g * w + j);
    const std::size_t ix = x.id();
    parts.push_back(x.tape().record(std::move(part), {x}, [ix, g, w, r](Tape& t, std::size_t self) {
      const Tensor& gp = t.grad(self);
      Tensor& gx = t.grad(ix);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) gx(i, g * w + j) += gp(i, j);
    }));
  }
  return parts;
}

inline Var concat_lastdim(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_lastdim: no parts");
  const Tensor& first = parts.front().value();
  const std::size_t r = first.rows();
  Shape lead(first.shape().begin(), first.shape().end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (Shape(s.begin(), s.end() - 1) != lead) {
      throw DimensionError("concat_lastdim: leading shape mismatch " + shape_str(first.shape()) + " vs " +
                           shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Shape shape = first.shape();
  shape.back() = total;
  Tensor out(shape);
  std::size_t offset = 0;
  std::vector<std::size_t> ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& pv = parts[p].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out(i, offset + j) = pv(i, j);
    offset += widths[p];
    ids.push_back(parts[p].id());
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids = std::move(ids), widths = std::move(widths), r](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (t.requires_grad(ids[p])) {
            Tensor& gp = t.grad(ids[p]);
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < widths[p]; ++j) gp(i, j) += g(i, offset + j);
          }
          offset += widths[p];
        }
      });
}

/// Scalar sum of all entries, shape [1].
inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor({1}, s), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(ix).data()) v += g;
  });
}

/// Row lookup: out[i] = table[ids[i]].
inline Var gather_rows(const Var& table, const std::vector<std::size_t>& ids) {
  const Tensor& tv = table.value();
  detail::require_matrix(tv, "gather_rows");
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t c = tv.cols();
  Tensor out({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw InputError("gather_rows: index " + std::to_string(ids[i]) + " out of range for " + std::to_string(tv.rows()) +
                       " rows");
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) = tv(ids[i], j);
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {table}, [it, ids, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad(it);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gt(ids[i], j) += g(i, j);
  });
}

/// Mean over rows of -log softmax(logits)[target].
inline Var cross_entropy(const Var& logits, const std::vector<std::size_t>& targets) {
  const Tensor& lv = logits.value();
  detail::require_matrix(lv, "cross_entropy");
  const std::size_t r = lv.rows(), c = lv.cols();
  if (targets.size() != r) throw DimensionError("cross_entropy: target count does not match logit rows");
  Tensor probs(lv.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) throw InputError("cross_entropy: target id out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : lv.row(i)) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(lv(i, j) - mx);
      z += probs(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs(i, j) /= z;
    loss += std::log(z) + mx - lv(i, targets[i]);
  }
  loss /= static_cast<double>(r);
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  const std::size_t il = logits.id();
  return logits.tape().record(Tensor({1}, loss), {logits},
                              [il, targets, r, c, probs = std::move(probs)](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0] / static_cast<double>(r);
                                Tensor& gl = t.grad(il);
                                for (std::size_t i = 0; i < r; ++i) {
                                  for (std::size_t j = 0; j < c; ++j) gl(i, j) += g * probs(i, j);
                                  gl(i, targets[i]) -= g;
                                }
                              });
}

}  // namespace lwt
