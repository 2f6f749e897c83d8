// SPDX-License-Identifier: Apache-2.0

#include "bifocal/schedule.hpp"

#include <algorithm>
#include <set>

namespace bifocal {

std::vector<std::size_t> ScheduleSpec::branches() const {
  std::set<std::size_t> ids;
  if (kind == ScheduleKind::kCustom) {
    ids.insert(pattern.begin(), pattern.end());
  } else {
    ids.insert(lead_in_branch);
    if (!post_ww_branches.empty()) ids.insert(post_ww_branches.front());
    if (kind == ScheduleKind::kInterleave) ids.insert(pattern.begin(), pattern.end());
  }
  return {ids.begin(), ids.end()};
}

std::vector<Transition> ScheduleSpec::transitions() const {
  std::set<Transition> out;
  switch (kind) {
    case ScheduleKind::kWwPivot:
      if (!post_ww_branches.empty() && lead_in_branch != post_ww_branches.front())
        out.insert({lead_in_branch, post_ww_branches.front()});
      break;
    case ScheduleKind::kInterleave: {
      const std::size_t large = post_ww_branches.front();
      if (lead_in_branch != large) out.insert({lead_in_branch, large});
      std::set<std::size_t> post(pattern.begin(), pattern.end());
      post.insert(large);
      for (auto a : post)
        for (auto b : post)
          if (a != b) out.insert({a, b});
      break;
    }
    case ScheduleKind::kCustom:
      for (std::size_t i = 0; i < pattern.size(); ++i) {
        const std::size_t next = pattern[(i + 1) % pattern.size()];
        if (pattern[i] != next) out.insert({pattern[i], next});
      }
      break;
  }
  return {out.begin(), out.end()};
}

void ScheduleSpec::validate() const {
  switch (kind) {
    case ScheduleKind::kWwPivot:
      if (!ww_frame_index) throw ScheduleError("ww_pivot schedule requires ww_frame_index");
      if (post_ww_branches.empty()) throw ScheduleError("ww_pivot schedule requires a post-WW branch");
      break;
    case ScheduleKind::kInterleave:
      if (!ww_frame_index) throw ScheduleError("interleave schedule requires ww_frame_index");
      if (pattern.empty()) throw ScheduleError("interleave schedule requires a non-empty pattern");
      if (post_ww_branches.empty()) throw ScheduleError("interleave schedule requires post-WW branches");
      for (auto b : pattern)
        if (std::find(post_ww_branches.begin(), post_ww_branches.end(), b) == post_ww_branches.end())
          throw ScheduleError("interleave pattern uses branch " + std::to_string(b) +
                              " which is not a post-WW branch");
      break;
    case ScheduleKind::kCustom:
      if (pattern.empty()) throw ScheduleError("custom schedule requires a non-empty pattern");
      break;
  }
}

ScheduleSpec ScheduleSpec::ww_pivot(std::size_t lead_in, std::size_t post_ww) {
  ScheduleSpec s;
  s.kind = ScheduleKind::kWwPivot;
  s.lead_in_branch = lead_in;
  s.post_ww_branches = {post_ww};
  s.ww_frame_index = 0;
  return s;
}

ScheduleSpec ScheduleSpec::interleave(std::vector<std::size_t> pattern, std::size_t lead_in,
                                      std::vector<std::size_t> post_ww) {
  ScheduleSpec s;
  s.kind = ScheduleKind::kInterleave;
  s.lead_in_branch = lead_in;
  s.post_ww_branches = std::move(post_ww);
  s.pattern = std::move(pattern);
  s.ww_frame_index = 0;
  return s;
}

ScheduleSpec ScheduleSpec::custom(std::vector<std::size_t> z) {
  ScheduleSpec s;
  s.kind = ScheduleKind::kCustom;
  s.pattern = std::move(z);
  s.post_ww_branches.clear();
  return s;
}

ScheduleSpec trifocal_a() { return ScheduleSpec::interleave({1, 1, 2, 2}); }
ScheduleSpec trifocal_b() { return ScheduleSpec::interleave({1, 2, 2}); }
ScheduleSpec trifocal_c() { return ScheduleSpec::interleave({1, 1, 2, 2, 2, 2}); }

SwitchSignal build_z(const ScheduleSpec& spec, std::size_t frames, std::optional<std::size_t> ww_override) {
  if (frames == 0) throw ScheduleError("build_z: at least one frame required");
  ScheduleSpec s = spec;
  if (ww_override) s.ww_frame_index = ww_override;
  s.validate();

  SwitchSignal z;
  z.reserve(frames);
  if (s.kind == ScheduleKind::kCustom) {
    for (std::size_t t = 0; t < frames; ++t) z.push_back(s.pattern[t % s.pattern.size()]);
    return z;
  }

  const std::size_t ww = *s.ww_frame_index;
  if (ww > frames)
    throw ScheduleError("build_z: ww_frame_index " + std::to_string(ww) + " exceeds frame count " +
                        std::to_string(frames));
  z.assign(ww, s.lead_in_branch);
  const std::size_t large = s.post_ww_branches.front();
  if (s.kind == ScheduleKind::kWwPivot) {
    z.resize(frames, large);
    return z;
  }
  // Interleave: one frame on the large branch right after the pivot, then the
  // pattern from phase 0.
  if (z.size() < frames) z.push_back(large);
  for (std::size_t phase = 0; z.size() < frames; ++phase) z.push_back(s.pattern[phase % s.pattern.size()]);
  return z;
}

double ScheduleStats::fraction_after(std::span<const std::size_t> z, std::size_t start, std::size_t branch) const {
  if (start >= z.size()) return 0.0;
  const auto n = static_cast<std::size_t>(std::count(z.begin() + static_cast<std::ptrdiff_t>(start), z.end(), branch));
  return static_cast<double>(n) / static_cast<double>(z.size() - start);
}

ScheduleStats schedule_stats(std::span<const std::size_t> z) {
  ScheduleStats st;
  st.frames = z.size();
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (z[t] >= st.frames_per_branch.size()) st.frames_per_branch.resize(z[t] + 1, 0);
    ++st.frames_per_branch[z[t]];
    if (t > 0 && z[t] != z[t - 1]) {
      ++st.switches;
      st.switch_events.push_back({z[t - 1], z[t]});
    }
  }
  for (auto n : st.frames_per_branch)
    st.fraction_per_branch.push_back(z.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(z.size()));
  return st;
}

std::vector<Transition> transitions_in(std::span<const std::size_t> z) {
  std::set<Transition> out;
  for (std::size_t t = 1; t < z.size(); ++t)
    if (z[t] != z[t - 1]) out.insert({z[t - 1], z[t]});
  return {out.begin(), out.end()};
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kWwPivot:
      return "ww_pivot";
    case ScheduleKind::kInterleave:
      return "interleave";
    case ScheduleKind::kCustom:
      return "custom";
  }
  return "unknown";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "ww_pivot") return ScheduleKind::kWwPivot;
  if (name == "interleave") return ScheduleKind::kInterleave;
  if (name == "custom") return ScheduleKind::kCustom;
  throw ScheduleError("unknown schedule kind '" + name + "'");
}

}  // namespace bifocal
