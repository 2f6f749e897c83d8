// SPDX-License-Identifier: Apache-2.0

#include "bifocal/costing.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bifocal {

CostConvention CostConvention::mac_only() {
  CostConvention c;
  c.count_bias = false;
  c.count_elementwise = false;
  return c;
}

void CostConvention::validate() const {
  if (flops_per_mac <= 0) throw std::invalid_argument("cost convention: flops_per_mac must be positive");
  if (activation_flops < 0) throw std::invalid_argument("cost convention: activation_flops must be >= 0");
}

std::string CostConvention::describe() const {
  std::ostringstream os;
  os << "1 MAC = " << flops_per_mac << " FLOPs; biases " << (count_bias ? "counted" : "not counted")
     << "; elementwise gate ops " << (count_elementwise ? "counted (1 FLOP each)" : "not counted");
  if (count_elementwise) os << "; activations " << activation_flops << " FLOPs each";
  os << "; state projections " << (count_projection_ops ? "counted" : "not counted");
  return os.str();
}

std::uint64_t lstm_param_count(std::size_t input_dim, std::size_t hidden_dim, bool with_bias) {
  const std::uint64_t h = hidden_dim;
  return 4 * (h * (input_dim + h) + (with_bias ? h : 0));
}

EncoderParamCounts count_encoder_params(const EncoderConfig& config) {
  config.validate();
  EncoderParamCounts counts;
  counts.branches.assign(config.num_branches(), 0);
  for (std::size_t l = 0; l < config.num_layers; ++l)
    for (std::size_t k = 0; k < config.num_branches(); ++k)
      counts.branches[k] += lstm_param_count(config.layer_input_dim(l, k), config.branch_hidden[k]);
  if (config.switch_init == SwitchInit::kProjection) {
    std::uint64_t per_layer = 0;
    std::vector<Transition> seen;
    for (const auto& tr : config.transitions) {
      if (std::find(seen.begin(), seen.end(), tr) != seen.end()) continue;
      seen.push_back(tr);
      per_layer += 2ULL * config.branch_hidden[tr.first] * config.branch_hidden[tr.second];
    }
    counts.state_projections = per_layer * config.num_layers;
  }
  for (auto h : config.branch_hidden) counts.output_maps += static_cast<std::uint64_t>(h) * config.output_dim;
  counts.total = counts.state_projections + counts.output_maps;
  for (auto b : counts.branches) counts.total += b;
  return counts;
}

ParamCounts count_params(const TransducerConfig& config) {
  config.validate();
  ParamCounts counts;
  counts.encoder = count_encoder_params(config.encoder);
  counts.prediction = static_cast<std::uint64_t>(config.prediction.embed_dim) * config.vocab.size;
  std::size_t in = config.prediction.embed_dim;
  for (auto h : config.prediction.hidden) {
    counts.prediction += lstm_param_count(in, h);
    in = h;
  }
  const std::uint64_t v = config.vocab.size;
  const std::uint64_t dec = config.prediction.output_dim();
  if (config.joint.variant == JointVariant::kAdditive) {
    counts.joint = v * dec + v;
  } else {
    const std::uint64_t j = config.joint.joint_dim;
    counts.joint = j * config.encoder.output_dim + j * dec + v * j + v;
  }
  counts.total = counts.encoder.total + counts.prediction + counts.joint;
  return counts;
}

double lstm_step_flops(std::size_t input_dim, std::size_t hidden_dim, const CostConvention& conv) {
  const double h = static_cast<double>(hidden_dim);
  double flops = 4.0 * h * static_cast<double>(input_dim + hidden_dim) * conv.flops_per_mac;
  if (conv.count_bias) flops += 4.0 * h;
  if (conv.count_elementwise) flops += 4.0 * h + 5.0 * h * conv.activation_flops;
  return flops;
}

double projection_flops(std::size_t source_hidden, std::size_t target_hidden, const CostConvention& conv) {
  if (!conv.count_projection_ops) return 0.0;
  return 2.0 * static_cast<double>(source_hidden) * static_cast<double>(target_hidden) * conv.flops_per_mac;
}

double output_map_flops(std::size_t hidden_dim, std::size_t output_dim, const CostConvention& conv) {
  return static_cast<double>(hidden_dim) * static_cast<double>(output_dim) * conv.flops_per_mac;
}

double branch_frame_flops(const EncoderConfig& config, std::size_t branch, const CostConvention& conv) {
  double flops = 0;
  for (std::size_t l = 0; l < config.num_layers; ++l)
    flops += lstm_step_flops(config.layer_input_dim(l, branch), config.branch_hidden.at(branch), conv);
  return flops + output_map_flops(config.branch_hidden[branch], config.output_dim, conv);
}

EncoderCounters count_lazy_ops(const EncoderConfig& config, std::span<const std::size_t> z) {
  EncoderCounters counters;
  counters.layers.resize(config.num_layers);
  for (auto& c : counters.layers) c.resize(config.num_branches());
  counters.output_maps.assign(config.num_branches(), 0);
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (z[t] >= config.num_branches()) throw std::out_of_range("count_lazy_ops: branch id out of range");
    for (auto& c : counters.layers) {
      ++c.cell_steps[z[t]];
      if (t > 0 && z[t] != z[t - 1]) {
        auto& bucket = config.switch_init == SwitchInit::kZero ? c.zero_inits : c.projections;
        ++bucket[{z[t - 1], z[t]}];
      }
    }
    ++counters.output_maps[z[t]];
  }
  return counters;
}

CostReport cost_from_counters(const EncoderConfig& config, const EncoderCounters& counters, const CostConvention& conv) {
  conv.validate();
  require_dim("cost_from_counters layers", config.num_layers, counters.layers.size());
  CostReport r;
  r.convention = conv.describe();
  r.params = count_encoder_params(config);
  for (std::size_t k = 0; k < config.num_branches(); ++k) r.branch_frame_flops.push_back(branch_frame_flops(config, k, conv));
  r.frames_per_branch.assign(config.num_branches(), 0);
  for (std::size_t k = 0; k < counters.output_maps.size() && k < config.num_branches(); ++k) {
    r.frames_per_branch[k] = counters.output_maps[k];
    r.frames += counters.output_maps[k];
    r.output_flops += static_cast<double>(counters.output_maps[k]) *
                      output_map_flops(config.branch_hidden[k], config.output_dim, conv);
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto& c = counters.layers[l];
    for (std::size_t k = 0; k < c.cell_steps.size(); ++k)
      r.cell_flops += static_cast<double>(c.cell_steps[k]) *
                      lstm_step_flops(config.layer_input_dim(l, k), config.branch_hidden[k], conv);
    for (const auto& [tr, n] : c.projections) {
      r.projection_flops += static_cast<double>(n) *
                            projection_flops(config.branch_hidden[tr.first], config.branch_hidden[tr.second], conv);
      r.projection_events += n;
    }
    if (l == 0) r.switches = c.total_switches();
  }
  r.total_flops = r.cell_flops + r.projection_flops + r.output_flops;
  return r;
}

CostReport utterance_cost(const EncoderConfig& config, std::span<const std::size_t> z, const CostConvention& conv) {
  return cost_from_counters(config, count_lazy_ops(config, z), conv);
}

double cost_reduction(const CostReport& model, const CostReport& baseline) {
  if (baseline.total_flops <= 0) throw std::invalid_argument("cost_reduction: baseline cost must be positive");
  return 1.0 - model.total_flops / baseline.total_flops;
}

void attach_baseline(CostReport& report, const CostReport& baseline) {
  report.baseline = baseline.model;
  report.reduction = cost_reduction(report, baseline);
}

std::vector<double> frame_costs(const EncoderConfig& config, std::span<const std::size_t> z, const CostConvention& conv) {
  std::vector<double> costs;
  costs.reserve(z.size());
  std::vector<double> per_branch;
  for (std::size_t k = 0; k < config.num_branches(); ++k) per_branch.push_back(branch_frame_flops(config, k, conv));
  for (std::size_t t = 0; t < z.size(); ++t) {
    double c = per_branch.at(z[t]);
    if (t > 0 && z[t] != z[t - 1] && config.switch_init == SwitchInit::kProjection)
      c += static_cast<double>(config.num_layers) *
           projection_flops(config.branch_hidden[z[t - 1]], config.branch_hidden[z[t]], conv);
    costs.push_back(c);
  }
  return costs;
}

namespace paper_dims {

std::vector<Model> all_models() {
  return {Model::kBaseline,  Model::kBaselineSmall, Model::kBifocal,  Model::kBifocalNoProjection,
          Model::kTrifocalA, Model::kTrifocalB,     Model::kTrifocalC};
}

std::string name(Model model) {
  switch (model) {
    case Model::kBaseline:
      return "baseline";
    case Model::kBaselineSmall:
      return "baseline_small";
    case Model::kBifocal:
      return "bifocal";
    case Model::kBifocalNoProjection:
      return "bifocal_no_proj";
    case Model::kTrifocalA:
      return "trifocal_a";
    case Model::kTrifocalB:
      return "trifocal_b";
    case Model::kTrifocalC:
      return "trifocal_c";
  }
  return "unknown";
}

namespace {

ScheduleSpec schedule_spec(Model model) {
  switch (model) {
    case Model::kBaseline:
    case Model::kBaselineSmall:
      return ScheduleSpec::custom({0});
    case Model::kBifocal:
    case Model::kBifocalNoProjection:
      return ScheduleSpec::ww_pivot(0, 1);
    case Model::kTrifocalA:
      return trifocal_a();
    case Model::kTrifocalB:
      return trifocal_b();
    case Model::kTrifocalC:
      return trifocal_c();
  }
  throw std::invalid_argument("unknown paper model");
}

}  // namespace

EncoderConfig encoder(Model model) {
  EncoderConfig cfg;
  cfg.feature_dim = kFeatureDim;
  cfg.num_layers = kLayers;
  cfg.output_dim = kEncoderOutputDim;
  switch (model) {
    case Model::kBaseline:
      cfg.branch_hidden = {kLargeHidden};
      break;
    case Model::kBaselineSmall:
      cfg.branch_hidden = {kSmallBaselineHidden};
      break;
    case Model::kBifocal:
    case Model::kBifocalNoProjection:
      cfg.branch_hidden = {kSmallHidden, kLargeHidden};
      break;
    case Model::kTrifocalA:
    case Model::kTrifocalB:
    case Model::kTrifocalC:
      cfg.branch_hidden = {kSmallHidden, kLargeHidden, kSmallHidden};
      break;
  }
  cfg.transitions = schedule_spec(model).transitions();
  if (model == Model::kBifocalNoProjection) cfg.switch_init = SwitchInit::kZero;
  return cfg;
}

std::size_t lead_in_frames(std::size_t frames, double lead_in_fraction) {
  return static_cast<std::size_t>(std::lround(lead_in_fraction * static_cast<double>(frames)));
}

SwitchSignal schedule(Model model, std::size_t frames, double lead_in_fraction) {
  return build_z(schedule_spec(model), frames, lead_in_frames(frames, lead_in_fraction));
}

std::vector<CostReport> cost_table(const CostConvention& conv, std::size_t frames, double lead_in_fraction) {
  std::vector<CostReport> table;
  for (auto m : all_models()) {
    const auto z = schedule(m, frames, lead_in_fraction);
    auto report = utterance_cost(encoder(m), z, conv);
    report.model = name(m);
    table.push_back(std::move(report));
  }
  const CostReport baseline = table.front();
  for (auto& r : table) attach_baseline(r, baseline);
  return table;
}

}  // namespace paper_dims

}  // namespace bifocal
