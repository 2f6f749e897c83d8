// SPDX-License-Identifier: Apache-2.0
//
// Streaming latency model for an always-on device.
//
// Audio buffered before the wake-word decision is released at once when the
// decision fires; later frames arrive in real time. A single server processes
// frames in order at a fixed FLOPs rate. Lag is measured against the ideal of
// finishing frame i the moment it arrives.

#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bifocal/costing.hpp"

namespace bifocal {

struct StreamScenario {
  double frame_duration = paper_dims::kFrameDurationSeconds;  // seconds per frame
  /// Last lead-in frame (1-based, inclusive); frames 1..ww all become
  /// available at ww * frame_duration. 0 means a plain real-time stream.
  std::size_t ww_frame_index = 0;
  /// FLOPs per second; infinity means free compute.
  double device_rate = std::numeric_limits<double>::infinity();

  void validate(std::size_t frames) const;
};

struct FrameTiming {
  double available = 0;
  double start = 0;
  double completion = 0;
  double lag = 0;             // completion - i * frame_duration
  double backlog_frames = 0;  // lag / frame_duration
};

struct LatencyTrace {
  std::vector<FrameTiming> frames;
  double final_lag = 0;
  double max_backlog_frames = 0;
  double busy_seconds = 0;
  /// First frame i >= max(ww, 1) (1-based) that completes before frame i+1
  /// would arrive in real time.
  std::optional<std::size_t> caught_up_frame;
  std::optional<double> caught_up_time;  // completion time of that frame
};

LatencyTrace simulate(const StreamScenario& scenario, std::span<const double> frame_flops);

struct SweepModel {
  std::string name;
  std::vector<double> frame_flops;
};

struct SweepCell {
  double rate = 0;
  std::optional<std::size_t> caught_up_frame;
  std::optional<double> caught_up_time;
  double final_lag = 0;
  double max_backlog_frames = 0;
};

struct SweepResult {
  std::vector<double> rates;
  std::vector<std::string> models;
  std::vector<std::vector<SweepCell>> cells;  // [model][rate]
};

/// Runs every model at every rate; `scenario.device_rate` is ignored.
SweepResult sweep(const StreamScenario& scenario, std::span<const double> rates, std::span<const SweepModel> models);

/// Smallest rate (within relative tolerance) at which the stream catches up.
double min_catch_up_rate(const StreamScenario& scenario, std::span<const double> frame_flops, double rel_tol = 1e-6);

}  // namespace bifocal
