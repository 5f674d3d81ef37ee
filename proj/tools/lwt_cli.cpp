// SPDX-License-Identifier: Apache-2.0
//
// lwt: budget tables, gradient checks, toy training and attention export.
//
// Exit codes: 0 success, 1 numeric or training failure, 2 usage or
// configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lwt/lwt.hpp"

namespace fs = std::filesystem;
using namespace lwt;

namespace {

constexpr int kOk = 0;
constexpr int kNumericFailure = 1;
constexpr int kUsageError = 2;

/// A preset name, or a JSON config file.
RunConfig resolve_config(const std::string& target) {
  if (auto preset = find_preset(target)) {
    RunConfig rc;
    rc.model = *preset;
    rc.task.vocab = rc.model.vocab;
    return rc;
  }
  if (fs::is_regular_file(target)) return load_run_config(target);
  std::string names;
  for (const auto& p : presets()) names += (names.empty() ? "" : ", ") + p.name;
  throw ConfigError("'" + target + "' is neither a preset (" + names + ") nor a config file");
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("LWT_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("LWT_SEED is not an unsigned integer: ") + s);
  return v;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".lwt_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

struct BudgetArgs {
  std::string target;
  std::uint64_t nq = kDefaultNq;
  std::uint64_t nv = kDefaultNv;
  std::string format = "text";
  bool table = false;
};

int cmd_budget(const BudgetArgs& a) {
  const bool csv = a.format == "csv";
  if (a.table) {
    std::cout << table_report(*find_preset("baseline"), ablation_variants(), a.nq, a.nv, csv);
    return kOk;
  }
  if (a.target.empty()) throw ConfigError("budget needs a preset or config file (or --table)");
  const RunConfig rc = resolve_config(a.target);
  const BudgetReport r = count_madds_analytic(rc.model, a.nq, a.nv);
  std::cout << (csv ? report_csv(r) : report_text(r, a.target));
  return kOk;
}

struct GradcheckArgs {
  std::string target;
  std::optional<std::uint64_t> seed;
  double eps = 1e-5;
  std::size_t width = 64;
  std::size_t entries = 32;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const RunConfig rc = resolve_config(a.target);
  ModelCheckOptions opts;
  opts.width = a.width;
  opts.check.eps = a.eps;
  opts.check.max_entries_per_param = a.entries;
  opts.check.seed = a.seed ? *a.seed : env_seed().value_or(0);
  const GradCheckResult r = check_model_gradients(rc.model, opts);
  const bool pass = r.max_rel_error < 1e-4;
  std::cout << "max relative error: " << format_double(r.max_rel_error) << '\n'
            << "worst entry: " << r.worst_param << '[' << r.worst_index << "]\n"
            << "entries checked: " << r.entries_checked << '\n'
            << (pass ? "PASS" : "FAIL") << '\n';
  if (!pass) {
    std::cerr << "gradient check failed; worst parameter: " << r.worst_param << '\n';
    return kNumericFailure;
  }
  return kOk;
}

struct TrainArgs {
  std::string target;
  std::string task;
  std::optional<std::size_t> steps;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  std::optional<double> stop_accuracy;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = resolve_config(a.target);
  if (!a.task.empty()) {
    const TaskKind kind = parse_task_kind(a.task);
    if (kind != rc.task.kind) {
      rc.task.kind = kind;
      // default lengths for the newly selected task
      rc.task.n_q = kind == TaskKind::copy ? 8 : 7;
      rc.task.n_v = kind == TaskKind::copy ? 8 : 1;
    }
  }
  if (a.steps) rc.training.steps = *a.steps;
  if (a.stop_accuracy) rc.training.stop_accuracy = *a.stop_accuracy;
  if (a.seed) {
    rc.training.seed = *a.seed;
  } else if (auto s = env_seed()) {
    rc.training.seed = *s;
  }
  rc.task.validate(rc.model.max_len);

  const fs::path dir = a.out;
  ensure_dir(dir);
  auto metrics = open_out(dir / "metrics.csv");
  metrics << "step,loss,token_accuracy\n" << std::flush;
  rc.training.on_record = [&metrics](const TrainRecord& r) {
    metrics << r.step << ',' << format_double(r.loss) << ',' << format_double(r.token_accuracy) << '\n'
            << std::flush;
  };

  TrainRun run;
  try {
    run = train(rc.model, rc.task, rc.training);
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << " (last valid step " << e.last_valid_step << ")\n";
    return kNumericFailure;
  }
  save_checkpoint(dir / "model.ckpt", run.model);
  const TrainRecord& last = run.history.back();
  std::cout << "params: " << count_params_actual(run.model) << '\n'
            << "steps: " << run.steps_run << '\n'
            << "final loss: " << format_double(last.loss) << '\n'
            << "final token_accuracy: " << format_double(last.token_accuracy) << '\n';
  return kOk;
}

struct AttnArgs {
  std::string checkpoint;
  std::string target;
  std::uint64_t sample_seed = 0;
  std::string out = "attn";
};

int cmd_attn(const AttnArgs& a) {
  const RunConfig rc = resolve_config(a.target);
  const Model model = init_params(rc.model, 0);
  load_checkpoint(a.checkpoint, model);
  TaskSpec spec = rc.task;
  spec.seed = a.sample_seed;
  spec.dataset_size = 1;
  const Example ex = gen_task(spec).front();
  const auto maps = dump_attention(model, ex);
  ensure_dir(a.out);
  const std::size_t n = write_attention_maps(a.out, maps);
  std::cout << "source:";
  for (auto t : ex.source) std::cout << ' ' << t;
  std::cout << "\nmaps written: " << n << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LW-Transformer toolkit: budgets, gradient checks, toy training, attention export"};
  app.require_subcommand(1);

  BudgetArgs budget;
  auto* b = app.add_subcommand("budget", "parameter and MAdds report for a preset or config file");
  b->add_option("config", budget.target, "preset name or JSON config path");
  b->add_option("--nq", budget.nq, "encoder sequence length")->capture_default_str();
  b->add_option("--nv", budget.nv, "decoder sequence length")->capture_default_str();
  b->add_option("--format", budget.format, "output format")->check(CLI::IsMember({"text", "csv"}))->capture_default_str();
  b->add_flag("--table", budget.table, "comparison table over all ablation presets");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check on a 1+1 layer instance");
  g->add_option("config", gc.target, "preset name or JSON config path")->required();
  g->add_option("--seed", gc.seed, "seed (default: LWT_SEED or 0)");
  g->add_option("--eps", gc.eps, "central-difference step, in [1e-6, 1e-4]")->capture_default_str();
  g->add_option("--width", gc.width, "model width d of the checked instance")->capture_default_str();
  g->add_option("--entries", gc.entries, "entries sampled per parameter tensor, 0 = all")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train on a synthetic task; writes metrics.csv and model.ckpt");
  t->add_option("config", tr.target, "preset name or JSON config path")->required();
  t->add_option("--task", tr.task, "copy or retrieval")->check(CLI::IsMember({"copy", "retrieval"}));
  t->add_option("--steps", tr.steps, "optimizer steps");
  t->add_option("--out", tr.out, "output directory")->capture_default_str();
  t->add_option("--seed", tr.seed, "init and batch-order seed (default: LWT_SEED or config)");
  t->add_option("--stop-accuracy", tr.stop_accuracy, "stop after an evaluation at or above this accuracy");

  AttnArgs at;
  auto* a = app.add_subcommand("attn", "export every attention map for one sample");
  a->add_option("checkpoint", at.checkpoint, "checkpoint written by train")->required();
  a->add_option("config", at.target, "preset name or JSON config path")->required();
  a->add_option("--sample-seed", at.sample_seed, "seed of the sample drawn from the task")->capture_default_str();
  a->add_option("--out", at.out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*b) return cmd_budget(budget);
    if (*g) return cmd_gradcheck(gc);
    if (*t) return cmd_train(tr);
    if (*a) return cmd_attn(at);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
