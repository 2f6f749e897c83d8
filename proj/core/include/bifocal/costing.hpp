// SPDX-License-Identifier: Apache-2.0
//
// Parameter counts and encoder FLOPs accounting.
//
// Every cost is built from three per-operation prices (an LSTM step, a state
// projection event, an output-map application) multiplied by operation
// counts. The counts come either from lazy execution (EncoderCounters filled
// by encode_lazy) or from the switch signal alone (count_lazy_ops); both
// paths go through cost_from_counters, so the model and the executor cannot
// disagree.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bifocal/encoder.hpp"
#include "bifocal/schedule.hpp"
#include "bifocal/transducer.hpp"

namespace bifocal {

struct CostConvention {
  double flops_per_mac = 2.0;
  bool count_bias = true;
  /// Gate products and sums: c = f*c + i*g (3h) and h = o*act(c) (1h).
  bool count_elementwise = true;
  /// Price of one sigmoid / tanh evaluation (5h per step); counted with
  /// the elementwise ops.
  double activation_flops = 4.0;
  bool count_projection_ops = true;

  /// Multiply-accumulates only (2 FLOPs each).
  static CostConvention mac_only();
  void validate() const;
  std::string describe() const;
  friend bool operator==(const CostConvention&, const CostConvention&) = default;
};

std::uint64_t lstm_param_count(std::size_t input_dim, std::size_t hidden_dim, bool with_bias = true);

struct EncoderParamCounts {
  std::vector<std::uint64_t> branches;  // LSTM weights per branch, all layers
  std::uint64_t state_projections = 0;
  std::uint64_t output_maps = 0;
  std::uint64_t total = 0;
};

struct ParamCounts {
  EncoderParamCounts encoder;
  std::uint64_t prediction = 0;
  std::uint64_t joint = 0;
  std::uint64_t total = 0;
};

EncoderParamCounts count_encoder_params(const EncoderConfig& config);
ParamCounts count_params(const TransducerConfig& config);

double lstm_step_flops(std::size_t input_dim, std::size_t hidden_dim, const CostConvention& conv);
/// One switch event in one layer: both the cell and the hidden projection.
double projection_flops(std::size_t source_hidden, std::size_t target_hidden, const CostConvention& conv);
double output_map_flops(std::size_t hidden_dim, std::size_t output_dim, const CostConvention& conv);
/// Per-frame cost of a branch running alone: all layers plus its output map.
double branch_frame_flops(const EncoderConfig& config, std::size_t branch, const CostConvention& conv);

/// Operation counts lazy execution of z performs, derived from z alone.
EncoderCounters count_lazy_ops(const EncoderConfig& config, std::span<const std::size_t> z);

struct CostReport {
  std::string model;
  std::string convention;
  EncoderParamCounts params;
  std::vector<double> branch_frame_flops;
  std::size_t frames = 0;
  std::vector<std::size_t> frames_per_branch;
  std::size_t switches = 0;
  std::size_t projection_events = 0;  // per layer events summed over layers
  double cell_flops = 0;
  double projection_flops = 0;
  double output_flops = 0;
  double total_flops = 0;
  std::optional<std::string> baseline;
  std::optional<double> reduction;  // 1 - total / baseline total
};

CostReport cost_from_counters(const EncoderConfig& config, const EncoderCounters& counters, const CostConvention& conv);
CostReport utterance_cost(const EncoderConfig& config, std::span<const std::size_t> z, const CostConvention& conv);

double cost_reduction(const CostReport& model, const CostReport& baseline);
/// Sets report.baseline / report.reduction.
void attach_baseline(CostReport& report, const CostReport& baseline);

/// FLOPs spent on each frame, with projection events charged to the frame
/// that follows the switch. Sums to utterance_cost(...).total_flops.
std::vector<double> frame_costs(const EncoderConfig& config, std::span<const std::size_t> z, const CostConvention& conv);

// ---------------------------------------------------------------------------
// Production-scale dimensions (cost modelling only, never trained).

namespace paper_dims {

inline constexpr std::size_t kFeatureDim = 192;  // 64 log filterbank energies x 3 stacked frames
inline constexpr std::size_t kLayers = 5;
inline constexpr std::size_t kLargeHidden = 1024;
inline constexpr std::size_t kSmallHidden = 256;
inline constexpr std::size_t kSmallBaselineHidden = 852;
inline constexpr std::size_t kEncoderOutputDim = 1024;
inline constexpr std::size_t kFrames = 260;
inline constexpr double kLeadInFraction = 0.318;
inline constexpr double kFrameDurationSeconds = 0.030;

enum class Model { kBaseline, kBaselineSmall, kBifocal, kBifocalNoProjection, kTrifocalA, kTrifocalB, kTrifocalC };

std::vector<Model> all_models();
std::string name(Model model);
EncoderConfig encoder(Model model);
/// Schedule over `frames` frames with round(lead_in_fraction * frames) lead-in frames.
SwitchSignal schedule(Model model, std::size_t frames = kFrames, double lead_in_fraction = kLeadInFraction);
std::size_t lead_in_frames(std::size_t frames = kFrames, double lead_in_fraction = kLeadInFraction);

/// Cost report for every model, reductions relative to kBaseline.
std::vector<CostReport> cost_table(const CostConvention& conv, std::size_t frames = kFrames,
                                   double lead_in_fraction = kLeadInFraction);

}  // namespace paper_dims

}  // namespace bifocal
