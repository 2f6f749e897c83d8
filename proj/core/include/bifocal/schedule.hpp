// SPDX-License-Identifier: Apache-2.0
//
// Switch signals z_{1:T}: which encoder branch processes each frame.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifocal/bifocal_cell.hpp"

namespace bifocal {

using SwitchSignal = std::vector<std::size_t>;

enum class ScheduleKind {
  kWwPivot,     // lead-in branch through the wake word, then one post-WW branch
  kInterleave,  // lead-in, one frame on the first post-WW branch, then a cyclic pattern
  kCustom,      // explicit per-frame branch list, repeated cyclically
};

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kWwPivot;
  /// Last lead-in frame, 1-based and inclusive (0 means no lead-in).
  std::optional<std::size_t> ww_frame_index;
  /// Cyclic post-WW pattern (interleave) or the full cyclic signal (custom).
  std::vector<std::size_t> pattern;
  std::size_t lead_in_branch = 0;
  /// First entry is the large post-WW branch used right after the pivot.
  std::vector<std::size_t> post_ww_branches{1};

  /// Every branch id this spec can emit.
  std::vector<std::size_t> branches() const;
  /// Directed state projections any signal built from this spec may need.
  std::vector<Transition> transitions() const;
  void validate() const;

  static ScheduleSpec ww_pivot(std::size_t lead_in = 0, std::size_t post_ww = 1);
  /// Interleave over lead-in 0, large 1, small 2 (the three-encoder layout).
  static ScheduleSpec interleave(std::vector<std::size_t> pattern, std::size_t lead_in = 0,
                                 std::vector<std::size_t> post_ww = {1, 2});
  static ScheduleSpec custom(std::vector<std::size_t> z);
};

/// Builds z for T frames. For kWwPivot and kInterleave `ww_frame_index` may
/// be overridden per utterance via `ww_override`.
SwitchSignal build_z(const ScheduleSpec& spec, std::size_t frames,
                     std::optional<std::size_t> ww_override = std::nullopt);

/// Named interleave patterns with branches {0 = lead-in, 1 = large, 2 = small}.
ScheduleSpec trifocal_a();  // (large, large, small, small)
ScheduleSpec trifocal_b();  // (large, small, small)
ScheduleSpec trifocal_c();  // (large, large, small, small, small, small)

struct ScheduleStats {
  std::size_t frames = 0;
  std::vector<std::size_t> frames_per_branch;
  std::vector<double> fraction_per_branch;
  std::size_t switches = 0;
  std::vector<Transition> switch_events;  // one entry per switch, in frame order

  /// Fraction of frames after `start` (0-based, exclusive) on `branch`.
  double fraction_after(std::span<const std::size_t> z, std::size_t start, std::size_t branch) const;
};

ScheduleStats schedule_stats(std::span<const std::size_t> z);

/// Distinct transitions that occur in z.
std::vector<Transition> transitions_in(std::span<const std::size_t> z);

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

}  // namespace bifocal
