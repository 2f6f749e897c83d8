// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver behind the command-line tool: data preparation, training,
// evaluation and the cost / latency reports.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bifocal/config.hpp"
#include "bifocal/stream_sim.hpp"
#include "bifocal/synth_data.hpp"
#include "bifocal/transducer.hpp"

namespace bifocal {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(AdamConfig config, std::size_t parameter_count);
  void step(const std::vector<TensorRef<float>>& params, const std::vector<TensorRef<const float>>& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

/// Scales grads so their global L2 norm is at most max_norm; returns the
/// norm before clipping. max_norm = 0 leaves grads untouched.
double clip_global_norm(const std::vector<TensorRef<float>>& grads, double max_norm);

/// Train / test utterances per the data section.
Split prepare_data(const ExperimentConfig& config);

/// Per-utterance switch signal from the schedule and the utterance's own
/// wake-word position.
SwitchSignal utterance_schedule(const ScheduleSpec& schedule, const Utterance& utterance);

/// Mean per-utterance negative log-likelihood (inference-mode encoder).
double mean_loss(const TransducerModel<float>& model, const ScheduleSpec& schedule,
                 std::span<const Utterance> utterances, std::size_t threads = 1);

struct TrainOptions {
  /// Reduce per-utterance gradients in index order, so results do not depend
  /// on the thread count.
  bool deterministic = true;
  std::function<void(std::size_t step, double loss)> on_step;
};

struct TrainResult {
  TransducerModel<float> model;
  std::vector<double> step_losses;  // batch mean NLL per step
  double initial_loss = 0;          // monitored loss before the first step
  double final_loss = 0;            // monitored loss after the last step
};

TrainResult train(const ExperimentConfig& config, std::span<const Utterance> train_set,
                  const TrainOptions& options = {});

std::size_t edit_distance(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct UtteranceDecode {
  std::vector<std::size_t> reference;
  std::vector<std::size_t> greedy;
  std::vector<std::size_t> beam;
  double greedy_score = 0;
  double beam_score = 0;
};

struct DecodeMetrics {
  double token_error_rate = 0;
  double exact_match = 0;
};

struct EvalReport {
  std::size_t utterances = 0;
  std::size_t beam_size = 0;
  DecodeMetrics greedy;
  DecodeMetrics beam;
  double mean_loss = 0;
  std::vector<UtteranceDecode> decodes;
};

/// Throws std::invalid_argument on an empty set.
EvalReport evaluate(const ExperimentConfig& config, const TransducerModel<float>& model,
                    std::span<const Utterance> utterances);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const CostReport& report);
nlohmann::json to_json(const LatencyTrace& trace, bool with_frames);

/// Cost table for the configured model (against a one-branch baseline as wide
/// as its widest branch) or for the production-scale preset.
std::vector<CostReport> cost_reports(const ExperimentConfig& config);

struct SimulationReport {
  std::vector<std::string> models;
  std::vector<LatencyTrace> traces;  // at the configured device rate
  SweepResult sweep;
  std::vector<double> min_catch_up_rates;  // per model
  /// Rates in the sweep at which the second model catches up and the first
  /// does not.
  std::vector<double> separating_rates;
};

SimulationReport simulation_report(const ExperimentConfig& config);
nlohmann::json to_json(const SimulationReport& report);

}  // namespace bifocal
