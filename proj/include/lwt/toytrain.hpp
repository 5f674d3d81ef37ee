// SPDX-License-Identifier: Apache-2.0
//
// Synthetic sequence tasks and a small Adam training loop for them.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lwt/autodiff.hpp"
#include "lwt/config.hpp"
#include "lwt/layers.hpp"
#include "lwt/ops.hpp"
#include "lwt/rng.hpp"

namespace lwt {

enum class TaskKind { copy, retrieval };

inline std::string to_string(TaskKind k) { return k == TaskKind::copy ? "copy" : "retrieval"; }

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "retrieval") return TaskKind::retrieval;
  throw ConfigError("unknown task kind '" + s + "' (expected copy or retrieval)");
}

/// copy: target = source, n_v = n_q.
/// retrieval: source = k1 v1 k2 v2 ... kP vP q with distinct keys, n_q = 2P+1;
/// the single target token is the value stored under q.
struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  std::size_t vocab = 16;
  std::size_t n_q = 8;
  std::size_t n_v = 8;
  std::size_t dataset_size = 4096;
  std::uint64_t seed = 0;

  void validate(std::size_t max_len) const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid task: " + m); };
    if (vocab < 2) fail("vocab must be >= 2");
    if (n_q == 0 || n_v == 0) fail("sequence lengths must be >= 1");
    if (n_q > max_len || n_v > max_len) fail("sequence length exceeds the model's max_len");
    if (dataset_size == 0) fail("dataset_size must be >= 1");
    if (kind == TaskKind::copy && n_v != n_q) fail("copy task needs n_v == n_q");
    if (kind == TaskKind::retrieval) {
      if (n_q % 2 == 0) fail("retrieval task needs odd n_q (pairs plus query)");
      if (n_v != 1) fail("retrieval task needs n_v == 1");
      if ((n_q - 1) / 2 > vocab) fail("vocab too small for " + std::to_string((n_q - 1) / 2) + " distinct keys");
    }
  }
};

struct Example {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};
using Dataset = std::vector<Example>;

inline Dataset gen_task(const TaskSpec& spec) {
  spec.validate(SIZE_MAX);
  Rng rng(spec.seed);
  Dataset data;
  data.reserve(spec.dataset_size);
  for (std::size_t n = 0; n < spec.dataset_size; ++n) {
    Example ex;
    if (spec.kind == TaskKind::copy) {
      for (std::size_t i = 0; i < spec.n_q; ++i) ex.source.push_back(rng.below(spec.vocab));
      ex.target = ex.source;
    } else {
      const std::size_t pairs = (spec.n_q - 1) / 2;
      std::vector<std::size_t> keys(spec.vocab);
      for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i;
      for (std::size_t i = 0; i < pairs; ++i) std::swap(keys[i], keys[i + rng.below(keys.size() - i)]);
      std::vector<std::size_t> values;
      for (std::size_t i = 0; i < pairs; ++i) {
        values.push_back(rng.below(spec.vocab));
        ex.source.push_back(keys[i]);
        ex.source.push_back(values.back());
      }
      const std::size_t q = rng.below(pairs);
      ex.source.push_back(keys[q]);
      ex.target = {values[q]};
    }
    data.push_back(std::move(ex));
  }
  return data;
}

/// The decoder sees token 0 at every target position; only positional
/// encodings tell the positions apart.
inline std::vector<std::size_t> decoder_queries(std::size_t n_v) { return std::vector<std::size_t>(n_v, 0); }

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  struct Moments {
    Tensor m, v;
  };
  std::unordered_map<const ParamStore*, Moments> moments;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update. Each storage is updated once, with its
/// accumulated gradient; storages without a gradient see a zero gradient.
inline void adam_step(const std::vector<Param>& params, const GradMap& grads, AdamState& state, double lr,
                      const AdamConfig& hp = {}) {
  for (const Param& p : params) {
    auto it = grads.find(p.get());
    if (it == grads.end()) continue;
    if (it->second.shape() != p->value.shape()) {
      throw DimensionError("adam_step: gradient shape " + shape_str(it->second.shape()) + " does not match " +
                           p->name + " " + shape_str(p->value.shape()));
    }
    for (double g : it->second.data()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient for " + p->name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  std::unordered_set<const ParamStore*> done;
  for (const Param& p : params) {
    if (!done.insert(p.get()).second) continue;
    auto [mit, inserted] = state.moments.try_emplace(p.get());
    if (inserted) mit->second = {Tensor(p->value.shape()), Tensor(p->value.shape())};
    auto& mom = mit->second;
    auto git = grads.find(p.get());
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      mom.m[i] = hp.beta1 * mom.m[i] + (1.0 - hp.beta1) * gi;
      mom.v[i] = hp.beta2 * mom.v[i] + (1.0 - hp.beta2) * gi * gi;
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double token_accuracy = 0.0;
};

struct TrainOptions {
  std::size_t steps = 3000;
  std::size_t batch_size = 32;
  double base_lr = 1e-3;
  double warmup_frac = 0.1;
  std::size_t eval_interval = 100;
  std::size_t eval_size = 256;
  std::uint64_t seed = 0;  // model init and batch order
  // Stop after an evaluation reaching this accuracy; > 1 disables.
  double stop_accuracy = 2.0;
  std::function<void(const TrainRecord&)> on_record;
};

struct TrainRun {
  Model model;
  AdamState optimizer;
  std::vector<TrainRecord> history;
  std::size_t steps_run = 0;
};

/// Raised when the loss stops being finite; carries the last good step.
struct TrainingDiverged : NumericError {
  TrainingDiverged(const std::string& msg, std::size_t last_valid) : NumericError(msg), last_valid_step(last_valid) {}
  std::size_t last_valid_step;
};

/// Linear warm-up over the first warmup_frac of steps, then constant;
/// grouped configs scale the base rate by sqrt(k).
inline double learning_rate(const ModelConfig& cfg, const TrainOptions& opts, std::size_t step) {
  const double k = cfg.grouped() ? static_cast<double>(cfg.k) : 1.0;
  const double peak = opts.base_lr * std::sqrt(k);
  const auto warm = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(opts.warmup_frac * static_cast<double>(opts.steps))));
  if (step >= warm) return peak;
  return peak * static_cast<double>(step + 1) / static_cast<double>(warm);
}

/// Mean token cross-entropy of one example, recorded on the given tape.
inline Var example_loss(Tape& tape, const Model& model, const Example& ex) {
  Var logits = model_forward(tape, model, ex.source, decoder_queries(ex.target.size()));
  return cross_entropy(logits, ex.target);
}

inline std::size_t argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

inline std::vector<std::size_t> predict(const Model& model, const std::vector<std::size_t>& source, std::size_t n_v) {
  Tape tape;
  const Tensor& logits = model_forward(tape, model, source, decoder_queries(n_v)).value();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < logits.rows(); ++i) out.push_back(argmax_lowest(logits.row(i)));
  return out;
}

/// Greedy token accuracy: correct target tokens / all target tokens.
inline double eval_accuracy(const Model& model, const Dataset& data) {
  std::size_t correct = 0, total = 0;
  for (const auto& ex : data) {
    const auto pred = predict(model, ex.source, ex.target.size());
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ex.target[i];
    total += ex.target.size();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

inline double eval_loss(const Model& model, const Dataset& data) {
  double s = 0.0;
  for (const auto& ex : data) {
    Tape tape;
    s += example_loss(tape, model, ex).value()[0];
  }
  return s / static_cast<double>(data.size());
}

/// Held-out examples drawn from a seed derived from the task seed.
inline Dataset eval_dataset(const TaskSpec& spec, std::size_t n) {
  TaskSpec s = spec;
  s.seed = spec.seed ^ 0x5bd1e9955bd1e995ULL;
  s.dataset_size = n;
  return gen_task(s);
}

inline TrainRun train(const ModelConfig& cfg, const TaskSpec& spec, const TrainOptions& opts) {
  cfg.validate();
  spec.validate(cfg.max_len);
  if (spec.vocab != cfg.vocab) throw ConfigError("task vocab differs from model vocab");
  if (opts.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (opts.eval_interval == 0) throw ConfigError("eval_interval must be >= 1");

  const Dataset data = gen_task(spec);
  const Dataset held_out = eval_dataset(spec, opts.eval_size);
  TrainRun run{init_params(cfg, opts.seed), {}, {}, 0};
  const std::vector<Param> params = run.model.parameters();
  Rng batch_rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);

  auto diverged = [&](const std::string& what, std::size_t step) {
    return TrainingDiverged(what + " at step " + std::to_string(step),
                            run.history.empty() ? 0 : run.history.back().step);
  };
  auto record = [&](std::size_t step) {
    TrainRecord r;
    try {
      r = {step, eval_loss(run.model, held_out), eval_accuracy(run.model, held_out)};
    } catch (const NumericError& e) {
      throw diverged(e.what(), step);
    }
    if (!std::isfinite(r.loss)) throw diverged("loss became non-finite", step);
    run.history.push_back(r);
    if (opts.on_record) opts.on_record(r);
    return r.token_accuracy >= opts.stop_accuracy;
  };

  if (record(0)) return run;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    Tape tape;
    std::vector<Var> losses;
    losses.reserve(opts.batch_size);
    try {
      for (std::size_t b = 0; b < opts.batch_size; ++b) {
        losses.push_back(example_loss(tape, run.model, data[batch_rng.below(data.size())]));
      }
    } catch (const NumericError& e) {
      throw TrainingDiverged(std::string(e.what()) + " at step " + std::to_string(step + 1), run.steps_run);
    }
    Var loss = scale(sum(concat_lastdim(losses)), 1.0 / static_cast<double>(opts.batch_size));
    if (!std::isfinite(loss.value()[0])) {
      throw TrainingDiverged("training loss became non-finite at step " + std::to_string(step + 1),
                             run.steps_run);
    }
    const GradMap grads = tape.backward(loss);
    try {
      adam_step(params, grads, run.optimizer, learning_rate(cfg, opts, step));
    } catch (const NumericError& e) {
      throw TrainingDiverged(e.what(), run.steps_run);
    }
    run.steps_run = step + 1;
    if (run.steps_run % opts.eval_interval == 0 || run.steps_run == opts.steps) {
      if (record(run.steps_run)) break;
    }
  }
  return run;
}

/// Every attention-probability matrix of one forward pass on `ex`.
inline std::vector<AttentionMap> dump_attention(const Model& model, const Example& ex) {
  std::vector<AttentionMap> maps;
  Tape tape;
  tape.set_recorder(&maps);
  (void)model_forward(tape, model, ex.source, decoder_queries(ex.target.size()));
  return maps;
}

}  // namespace lwt
