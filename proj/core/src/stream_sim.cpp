// SPDX-License-Identifier: Apache-2.0

#include "bifocal/stream_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bifocal {

void StreamScenario::validate(std::size_t frames) const {
  if (!(frame_duration > 0) || !std::isfinite(frame_duration))
    throw std::invalid_argument("stream scenario: frame_duration must be positive");
  if (!(device_rate > 0)) throw std::invalid_argument("stream scenario: device_rate must be positive");
  if (ww_frame_index > frames)
    throw std::invalid_argument("stream scenario: ww_frame_index " + std::to_string(ww_frame_index) +
                                " exceeds frame count " + std::to_string(frames));
}

LatencyTrace simulate(const StreamScenario& scenario, std::span<const double> frame_flops) {
  scenario.validate(frame_flops.size());
  const double d = scenario.frame_duration;
  const double release = static_cast<double>(scenario.ww_frame_index) * d;
  const std::size_t watch_from = std::max<std::size_t>(scenario.ww_frame_index, 1);

  LatencyTrace trace;
  trace.frames.reserve(frame_flops.size());
  double previous = 0;
  for (std::size_t n = 0; n < frame_flops.size(); ++n) {
    if (frame_flops[n] < 0) throw std::invalid_argument("simulate: negative frame cost");
    const std::size_t i = n + 1;
    const double arrival = static_cast<double>(i) * d;
    FrameTiming f;
    f.available = i <= scenario.ww_frame_index ? release : arrival;
    f.start = std::max(f.available, previous);
    const double service = std::isinf(scenario.device_rate) ? 0.0 : frame_flops[n] / scenario.device_rate;
    f.completion = f.start + service;
    f.lag = f.completion - arrival;
    f.backlog_frames = f.lag / d;
    trace.busy_seconds += service;
    trace.max_backlog_frames = std::max(trace.max_backlog_frames, f.backlog_frames);
    if (!trace.caught_up_frame && i >= watch_from && f.completion <= arrival + d) {
      trace.caught_up_frame = i;
      trace.caught_up_time = f.completion;
    }
    previous = f.completion;
    trace.frames.push_back(f);
  }
  if (!trace.frames.empty()) trace.final_lag = trace.frames.back().lag;
  return trace;
}

SweepResult sweep(const StreamScenario& scenario, std::span<const double> rates, std::span<const SweepModel> models) {
  SweepResult result;
  result.rates.assign(rates.begin(), rates.end());
  for (const auto& m : models) {
    result.models.push_back(m.name);
    auto& row = result.cells.emplace_back();
    for (double rate : rates) {
      StreamScenario s = scenario;
      s.device_rate = rate;
      const auto trace = simulate(s, m.frame_flops);
      row.push_back({rate, trace.caught_up_frame, trace.caught_up_time, trace.final_lag, trace.max_backlog_frames});
    }
  }
  return result;
}

double min_catch_up_rate(const StreamScenario& scenario, std::span<const double> frame_flops, double rel_tol) {
  const double total = std::accumulate(frame_flops.begin(), frame_flops.end(), 0.0);
  if (total <= 0) return 0.0;
  auto catches_up = [&](double rate) {
    StreamScenario s = scenario;
    s.device_rate = rate;
    return simulate(s, frame_flops).caught_up_frame.has_value();
  };
  // Finishing all work within one frame period always catches up.
  double hi = total / scenario.frame_duration;
  if (!catches_up(hi)) throw std::logic_error("min_catch_up_rate: upper bracket does not catch up");
  double lo = hi;
  while (catches_up(lo)) {
    lo /= 2;
    if (lo < 1e-300) return 0.0;
  }
  while ((hi - lo) > rel_tol * hi) {
    const double mid = std::sqrt(lo * hi);
    (catches_up(mid) ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace bifocal
