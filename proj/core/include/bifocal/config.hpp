// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one JSON document with sections model, schedule,
// training, data, eval, costing and simulation. Loading rejects unknown keys
// and reports every error with its dotted field path.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bifocal/costing.hpp"
#include "bifocal/schedule.hpp"
#include "bifocal/synth_data.hpp"
#include "bifocal/transducer.hpp"

namespace bifocal {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct TrainingConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Training utterances used for the monitored loss; 0 means all.
  std::size_t monitor_utterances = 0;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct DataConfig {
  TaskSpec task;
  std::optional<std::string> path;  // JSON-lines dataset instead of generation
  std::size_t train_utterances = 256;
  std::size_t test_utterances = 64;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct EvalConfig {
  std::size_t beam_size = 16;
  std::size_t max_symbols_per_frame = kDefaultMaxSymbolsPerFrame;
  std::string split = "test";  // "test" or "train"
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

enum class CostPreset { kModel, kPaperDims };

struct CostingConfig {
  CostPreset preset = CostPreset::kModel;
  CostConvention convention;
  std::size_t frames = paper_dims::kFrames;
  double lead_in_fraction = paper_dims::kLeadInFraction;
  friend bool operator==(const CostingConfig&, const CostingConfig&) = default;
};

struct SimulationConfig {
  double frame_duration = paper_dims::kFrameDurationSeconds;
  std::optional<double> device_rate;  // absent: infinite
  std::vector<double> sweep_rates;    // FLOPs per second; empty: derived grid
  friend bool operator==(const SimulationConfig&, const SimulationConfig&) = default;
};

struct ExperimentConfig {
  /// encoder.transitions is derived from the schedule by resolved_model().
  TransducerConfig model;
  ScheduleSpec schedule;
  TrainingConfig training;
  DataConfig data;
  EvalConfig eval;
  CostingConfig costing;
  SimulationConfig simulation;

  TransducerConfig resolved_model() const;
  /// Cross-section consistency; throws ConfigError.
  void validate() const;
};

/// Small monolithic and bifocal models on the default synthetic task.
ExperimentConfig toy_config(bool bifocal = true);

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

nlohmann::json to_json(const TransducerConfig& config);
TransducerConfig transducer_config_from_json(const nlohmann::json& j, const std::string& path = "model");
nlohmann::json to_json(const TaskSpec& spec);
nlohmann::json to_json(const CostConvention& conv);
nlohmann::json to_json(const ScheduleSpec& spec);

std::string to_string(SwitchInit init);
std::string to_string(JointVariant variant);
std::string to_string(Activation activation);

}  // namespace bifocal
