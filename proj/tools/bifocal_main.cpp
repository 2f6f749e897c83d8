// SPDX-License-Identifier: Apache-2.0
//
// bifocal: train / eval / flops / simulate / gradcheck / generate.
//
// Exit codes: 0 success, 1 validation error, 2 numerical-check failure.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "bifocal/checkpoint.hpp"
#include "bifocal/config.hpp"
#include "bifocal/experiment.hpp"
#include "bifocal/gradcheck.hpp"

namespace {

using nlohmann::json;
using namespace bifocal;

constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;
constexpr double kGradTolerance = 1e-4;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  bool deterministic = false;
  std::string out;
  std::optional<std::size_t> threads;
  std::size_t trials = 20;
  std::size_t log_every = 10;
};

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig c = o.config_path.empty() ? toy_config() : load_config(o.config_path);
  if (o.seed) c.training.seed = *o.seed;
  if (o.threads) c.training.threads = *o.threads;
  if (o.deterministic) c.training.threads = 1;
  c.validate();
  return c;
}

void write_out(const Options& o, const json& j) {
  if (o.out.empty()) return;
  std::ofstream f(o.out);
  if (!f) throw std::runtime_error("cannot write " + o.out);
  f << j.dump(2) << '\n';
}

int run_train(const Options& o) {
  const auto config = resolve_config(o);
  const auto data = prepare_data(config);
  std::printf("training on %zu utterances for %zu steps (seed %llu)\n", data.train.size(), config.training.steps,
              static_cast<unsigned long long>(config.training.seed));
  TrainOptions opts;
  opts.deterministic = o.deterministic || config.training.threads == 1;
  opts.on_step = [&](std::size_t step, double loss) {
    if (o.log_every && (step % o.log_every == 0 || step + 1 == config.training.steps))
      std::printf("step %5zu  loss %.5f\n", step, loss);
  };
  const auto result = train(config, data.train, opts);
  std::printf("monitored loss: initial %.5f  final %.5f  (%.1f%% reduction)\n", result.initial_loss,
              result.final_loss, 100.0 * (1.0 - result.final_loss / result.initial_loss));
  if (!o.checkpoint.empty()) {
    save_checkpoint(o.checkpoint, result.model, to_json(config));
    std::printf("checkpoint written to %s\n", o.checkpoint.c_str());
  }
  write_out(o, {{"config", to_json(config)},
                {"initial_loss", result.initial_loss},
                {"final_loss", result.final_loss},
                {"step_losses", result.step_losses},
                {"checkpoint", o.checkpoint.empty() ? json(nullptr) : json(o.checkpoint)}});
  return 0;
}

int run_eval(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint", "eval requires a checkpoint");
  auto ck = load_checkpoint(o.checkpoint);
  ExperimentConfig config;
  if (!o.config_path.empty()) {
    config = resolve_config(o);
  } else {
    const auto& meta = ck.metadata.at("experiment");
    if (meta.is_null()) throw ConfigError("--config", "checkpoint carries no experiment config; pass --config");
    config = config_from_json(meta);
    if (o.threads) config.training.threads = *o.threads;
  }
  check_compatible(config.resolved_model(), ck.model.config);
  const auto data = prepare_data(config);
  const auto& set = config.eval.split == "train" ? data.train : data.test;
  const auto report = evaluate(config, ck.model, set);
  std::printf("%zu utterances (%s split), beam %zu\n", report.utterances, config.eval.split.c_str(), report.beam_size);
  std::printf("greedy: token error rate %.4f  exact match %.4f\n", report.greedy.token_error_rate,
              report.greedy.exact_match);
  std::printf("beam:   token error rate %.4f  exact match %.4f\n", report.beam.token_error_rate,
              report.beam.exact_match);
  std::printf("mean loss %.5f\n", report.mean_loss);
  auto j = to_json(report);
  j["config"] = to_json(config);
  write_out(o, j);
  return 0;
}

int run_flops(const Options& o) {
  const auto config = resolve_config(o);
  const auto reports = cost_reports(config);
  std::printf("convention: %s\n", config.costing.convention.describe().c_str());
  std::printf("frames %zu, lead-in fraction %.3f\n", config.costing.frames, config.costing.lead_in_fraction);
  std::printf("%-18s %14s %14s %12s %10s\n", "model", "params", "FLOPs", "MFLOPs/frm", "reduction");
  json rows = json::array();
  for (const auto& r : reports) {
    std::printf("%-18s %14llu %14.4g %12.3f %9s\n", r.model.c_str(), static_cast<unsigned long long>(r.params.total),
                r.total_flops, r.total_flops / static_cast<double>(r.frames) / 1e6,
                r.reduction ? (std::to_string(100.0 * *r.reduction).substr(0, 5) + "%").c_str() : "-");
    rows.push_back(to_json(r));
  }
  write_out(o, {{"config", to_json(config)}, {"convention", config.costing.convention.describe()}, {"models", rows}});
  return 0;
}

int run_simulate(const Options& o) {
  const auto config = resolve_config(o);
  const auto report = simulation_report(config);
  std::printf("frame duration %.4f s, lead-in frames %zu\n", config.simulation.frame_duration,
              paper_dims::lead_in_frames(config.costing.frames, config.costing.lead_in_fraction));
  for (std::size_t m = 0; m < report.models.size(); ++m) {
    const auto& t = report.traces[m];
    std::printf("%-12s final lag %.6f s  max backlog %.2f frames  caught up at %s  min catch-up rate %.4g FLOP/s\n",
                report.models[m].c_str(), t.final_lag, t.max_backlog_frames,
                t.caught_up_frame ? ("frame " + std::to_string(*t.caught_up_frame)).c_str() : "never",
                report.min_catch_up_rates[m]);
  }
  if (!report.separating_rates.empty())
    std::printf("rates where %s catches up and %s does not: %.4g .. %.4g FLOP/s\n", report.models[1].c_str(),
                report.models[0].c_str(), report.separating_rates.front(), report.separating_rates.back());
  auto j = to_json(report);
  j["config"] = to_json(config);
  write_out(o, j);
  return 0;
}

int run_gradcheck(const Options& o) {
  GradCheckOptions g;
  g.seed = o.seed.value_or(0);
  g.trials = o.trials;
  const auto results = run_gradient_suite(g);
  bool ok = true;
  json rows = json::array();
  for (const auto& r : results) {
    const bool pass = r.passed(kGradTolerance);
    ok = ok && pass;
    std::printf("%-18s trials %3zu  entries %6zu  max rel. error %.3e  %s\n", r.component.c_str(), r.trials,
                r.entries, r.max_rel_error, pass ? "ok" : "FAIL");
    rows.push_back({{"component", r.component},
                    {"trials", r.trials},
                    {"entries", r.entries},
                    {"max_rel_error", r.max_rel_error},
                    {"worst", r.worst},
                    {"passed", pass}});
  }
  write_out(o, {{"seed", g.seed}, {"trials", g.trials}, {"eps", g.eps}, {"tolerance", kGradTolerance}, {"results", rows}});
  return ok ? 0 : kExitNumeric;
}

int run_generate(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out", "generate requires an output path");
  const auto config = resolve_config(o);
  const auto corpus = generate(config.data.task, config.data.train_utterances + config.data.test_utterances);
  write_dataset(o.out, corpus);
  std::printf("wrote %zu utterances to %s\n", corpus.size(), o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bifocal RNN-T experiment driver"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "experiment config (JSON); default: built-in toy config")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override training seed");
    sub->add_option("--out", o.out, "machine-readable JSON output path");
    sub->add_option("--threads", o.threads, "worker threads");
    sub->add_flag("--deterministic", o.deterministic, "single-threaded, order-fixed reductions");
  };
  auto* train_cmd = app.add_subcommand("train", "train a model");
  common(train_cmd);
  train_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint output path");
  train_cmd->add_option("--log-every", o.log_every, "print every N steps (0: quiet)");
  auto* eval_cmd = app.add_subcommand("eval", "decode and score a checkpoint");
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
  common(app.add_subcommand("flops", "parameter and FLOPs report"));
  common(app.add_subcommand("simulate", "streaming latency simulation"));
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  common(grad_cmd);
  grad_cmd->add_option("--trials", o.trials, "trials per component");
  common(app.add_subcommand("generate", "write the synthetic corpus as a dataset file"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "train") return run_train(o);
    if (cmd == "eval") return run_eval(o);
    if (cmd == "flops") return run_flops(o);
    if (cmd == "simulate") return run_simulate(o);
    if (cmd == "gradcheck") return run_gradcheck(o);
    if (cmd == "generate") return run_generate(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitValidation;
}
