// SPDX-License-Identifier: Apache-2.0

#include "bifocal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace bifocal {

using nlohmann::json;

Adam::Adam(AdamConfig config, std::size_t parameter_count)
    : config_(config), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

void Adam::step(const std::vector<TensorRef<float>>& params, const std::vector<TensorRef<const float>>& grads) {
  require_dim("Adam tensor count", params.size(), grads.size());
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t offset = 0;
  for (std::size_t n = 0; n < params.size(); ++n) {
    require_dim("Adam tensor " + params[n].name, params[n].data.size(), grads[n].data.size());
    for (std::size_t i = 0; i < params[n].data.size(); ++i, ++offset) {
      if (offset >= m_.size()) throw std::invalid_argument("Adam: more parameters than configured");
      const double g = grads[n].data[i];
      m_[offset] = config_.beta1 * m_[offset] + (1 - config_.beta1) * g;
      v_[offset] = config_.beta2 * v_[offset] + (1 - config_.beta2) * g * g;
      const double update = config_.learning_rate * (m_[offset] / c1) / (std::sqrt(v_[offset] / c2) + config_.epsilon);
      params[n].data[i] = static_cast<float>(params[n].data[i] - update);
    }
  }
  require_dim("Adam parameter count", m_.size(), offset);
}

double clip_global_norm(const std::vector<TensorRef<float>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (float v : g.data) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / norm);
    for (const auto& g : grads)
      for (float& v : g.data) v *= scale;
  }
  return norm;
}

Split prepare_data(const ExperimentConfig& config) {
  const auto& d = config.data;
  if (d.path) {
    auto corpus = read_dataset(*d.path);
    const std::size_t train = std::min(d.train_utterances, corpus.size());
    return split_corpus(std::move(corpus), train);
  }
  return split_corpus(generate(d.task, d.train_utterances + d.test_utterances), d.train_utterances);
}

SwitchSignal utterance_schedule(const ScheduleSpec& schedule, const Utterance& utterance) {
  if (schedule.kind == ScheduleKind::kCustom) return build_z(schedule, utterance.frames.size());
  return build_z(schedule, utterance.frames.size(), utterance.ww_frame_index);
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers, contiguous shards.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * n / threads; i < (w + 1) * n / threads; ++i) fn(i, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void add_grads(TransducerModel<float>& into, const TransducerModel<float>& from) {
  auto dst = into.tensors();
  const auto src = from.tensors();
  for (std::size_t n = 0; n < dst.size(); ++n)
    for (std::size_t i = 0; i < dst[n].data.size(); ++i) dst[n].data[i] += src[n].data[i];
}

std::vector<TensorRef<const float>> const_refs(const std::vector<TensorRef<float>>& refs) {
  std::vector<TensorRef<const float>> out;
  for (const auto& r : refs) out.push_back({r.name, r.rows, r.cols, r.data});
  return out;
}

}  // namespace

double mean_loss(const TransducerModel<float>& model, const ScheduleSpec& schedule,
                 std::span<const Utterance> utterances, std::size_t threads) {
  if (utterances.empty()) throw std::invalid_argument("mean_loss: no utterances");
  std::vector<double> losses(utterances.size());
  parallel_for(utterances.size(), threads, [&](std::size_t i, std::size_t) {
    const auto& u = utterances[i];
    const auto z = utterance_schedule(schedule, u);
    losses[i] = transducer_loss<float>(model, u.frames, z, u.labels);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

TrainResult train(const ExperimentConfig& config, std::span<const Utterance> train_set, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const auto& tc = config.training;
  const TransducerConfig model_config = config.resolved_model();
  for (const auto& u : train_set) {
    model_config.vocab.check_labels(u.labels);
    for (const auto& f : u.frames) require_dim("train: frame width", model_config.encoder.feature_dim, f.size());
  }

  Rng init_rng(tc.seed);
  TrainResult result{TransducerModel<float>::create(model_config, init_rng), {}, 0, 0};
  auto& model = result.model;
  const std::size_t monitor =
      tc.monitor_utterances == 0 ? train_set.size() : std::min(tc.monitor_utterances, train_set.size());
  const auto monitor_set = train_set.first(monitor);
  result.initial_loss = mean_loss(model, config.schedule, monitor_set, tc.threads);

  Adam adam({tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon}, total_size(model.tensors()));
  Rng batch_rng = Rng(tc.seed).fork(0x62617463ULL);
  const std::size_t workers = std::max<std::size_t>(1, std::min(tc.threads, tc.batch_size));

  for (std::size_t step = 0; step < tc.steps; ++step) {
    std::vector<std::size_t> batch(tc.batch_size);
    for (auto& b : batch) b = batch_rng.index(train_set.size());

    std::vector<double> losses(batch.size());
    TransducerModel<float> grads = model.zeros_like();
    if (options.deterministic) {
      std::vector<TransducerModel<float>> per(batch.size());
      parallel_for(batch.size(), workers, [&](std::size_t i, std::size_t) {
        per[i] = model.zeros_like();
        const auto& u = train_set[batch[i]];
        losses[i] = transducer_loss<float>(model, u.frames, utterance_schedule(config.schedule, u), u.labels, &per[i]);
      });
      for (const auto& g : per) add_grads(grads, g);
    } else {
      std::vector<TransducerModel<float>> shard(workers, model.zeros_like());
      parallel_for(batch.size(), workers, [&](std::size_t i, std::size_t w) {
        const auto& u = train_set[batch[i]];
        losses[i] = transducer_loss<float>(model, u.frames, utterance_schedule(config.schedule, u), u.labels, &shard[w]);
      });
      for (const auto& g : shard) add_grads(grads, g);
    }

    auto grad_refs = grads.tensors();
    const auto scale = static_cast<float>(1.0 / static_cast<double>(batch.size()));
    for (auto& g : grad_refs)
      for (float& v : g.data) v *= scale;
    clip_global_norm(grad_refs, tc.clip_norm);
    adam.step(model.tensors(), const_refs(grad_refs));

    const double loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    result.step_losses.push_back(loss);
    if (options.on_step) options.on_step(step, loss);
  }
  result.final_loss = tc.steps == 0 ? result.initial_loss : mean_loss(model, config.schedule, monitor_set, tc.threads);
  return result;
}

std::size_t edit_distance(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

EvalReport evaluate(const ExperimentConfig& config, const TransducerModel<float>& model,
                    std::span<const Utterance> utterances) {
  if (utterances.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  EvalReport r;
  r.utterances = utterances.size();
  r.beam_size = config.eval.beam_size;
  r.decodes.resize(utterances.size());
  parallel_for(utterances.size(), config.training.threads, [&](std::size_t i, std::size_t) {
    const auto& u = utterances[i];
    const auto z = utterance_schedule(config.schedule, u);
    const auto enc = encode_lazy(model.encoder, std::span<const Vector<float>>(u.frames), z);
    const auto g = greedy_decode_encoded<float>(model, enc.frames, config.eval.max_symbols_per_frame);
    const auto b = beam_decode_encoded<float>(model, enc.frames, config.eval.beam_size,
                                              config.eval.max_symbols_per_frame);
    auto& d = r.decodes[i];
    d.reference = u.labels;
    d.greedy = g.labels;
    d.greedy_score = g.score;
    d.beam = b.front().labels;
    d.beam_score = b.front().score;
  });
  std::size_t ref_tokens = 0, greedy_err = 0, beam_err = 0, greedy_exact = 0, beam_exact = 0;
  for (const auto& d : r.decodes) {
    ref_tokens += d.reference.size();
    greedy_err += edit_distance(d.reference, d.greedy);
    beam_err += edit_distance(d.reference, d.beam);
    greedy_exact += d.greedy == d.reference;
    beam_exact += d.beam == d.reference;
  }
  const double n = static_cast<double>(r.utterances);
  r.greedy = {static_cast<double>(greedy_err) / static_cast<double>(ref_tokens), static_cast<double>(greedy_exact) / n};
  r.beam = {static_cast<double>(beam_err) / static_cast<double>(ref_tokens), static_cast<double>(beam_exact) / n};
  r.mean_loss = mean_loss(model, config.schedule, utterances, config.training.threads);
  return r;
}

json to_json(const EvalReport& r) {
  json decodes = json::array();
  for (const auto& d : r.decodes)
    decodes.push_back({{"reference", d.reference},
                       {"greedy", d.greedy},
                       {"greedy_score", d.greedy_score},
                       {"beam", d.beam},
                       {"beam_score", d.beam_score}});
  return json{{"utterances", r.utterances},
              {"beam_size", r.beam_size},
              {"mean_loss", r.mean_loss},
              {"greedy", {{"token_error_rate", r.greedy.token_error_rate}, {"exact_match", r.greedy.exact_match}}},
              {"beam", {{"token_error_rate", r.beam.token_error_rate}, {"exact_match", r.beam.exact_match}}},
              {"decodes", decodes}};
}

json to_json(const CostReport& r) {
  json j{{"model", r.model},
         {"convention", r.convention},
         {"params",
          {{"branches", r.params.branches},
           {"state_projections", r.params.state_projections},
           {"output_maps", r.params.output_maps},
           {"total", r.params.total}}},
         {"branch_frame_flops", r.branch_frame_flops},
         {"frames", r.frames},
         {"frames_per_branch", r.frames_per_branch},
         {"switches", r.switches},
         {"projection_events", r.projection_events},
         {"cell_flops", r.cell_flops},
         {"projection_flops", r.projection_flops},
         {"output_flops", r.output_flops},
         {"total_flops", r.total_flops}};
  if (r.baseline) j["baseline"] = *r.baseline;
  if (r.reduction) j["reduction"] = *r.reduction;
  return j;
}

json to_json(const LatencyTrace& t, bool with_frames) {
  json j{{"final_lag", t.final_lag},
         {"max_backlog_frames", t.max_backlog_frames},
         {"busy_seconds", t.busy_seconds},
         {"caught_up_frame", t.caught_up_frame ? json(*t.caught_up_frame) : json(nullptr)},
         {"caught_up_time", t.caught_up_time ? json(*t.caught_up_time) : json(nullptr)}};
  if (with_frames) {
    json frames = json::array();
    for (std::size_t i = 0; i < t.frames.size(); ++i) {
      const auto& f = t.frames[i];
      frames.push_back({{"frame", i + 1},
                        {"available", f.available},
                        {"start", f.start},
                        {"completion", f.completion},
                        {"lag", f.lag},
                        {"backlog_frames", f.backlog_frames}});
    }
    j["frames"] = frames;
  }
  return j;
}

namespace {

struct CostedModel {
  std::string name;
  EncoderConfig encoder;
  SwitchSignal z;
};

// Baseline first, then the model(s) under study.
std::vector<CostedModel> costed_models(const ExperimentConfig& config, bool all_presets) {
  const auto& c = config.costing;
  std::vector<CostedModel> out;
  if (c.preset == CostPreset::kPaperDims) {
    for (auto m : paper_dims::all_models()) {
      if (!all_presets && m != paper_dims::Model::kBaseline && m != paper_dims::Model::kBifocal) continue;
      out.push_back({paper_dims::name(m), paper_dims::encoder(m), paper_dims::schedule(m, c.frames, c.lead_in_fraction)});
    }
    return out;
  }
  const TransducerConfig model = config.resolved_model();
  EncoderConfig baseline = model.encoder;
  baseline.branch_hidden = {*std::max_element(model.encoder.branch_hidden.begin(), model.encoder.branch_hidden.end())};
  baseline.transitions.clear();
  out.push_back({"baseline", baseline, SwitchSignal(c.frames, 0)});
  const std::size_t ww = paper_dims::lead_in_frames(c.frames, c.lead_in_fraction);
  const SwitchSignal z = config.schedule.kind == ScheduleKind::kCustom ? build_z(config.schedule, c.frames)
                                                                        : build_z(config.schedule, c.frames, ww);
  out.push_back({"model", model.encoder, z});
  return out;
}

}  // namespace

std::vector<CostReport> cost_reports(const ExperimentConfig& config) {
  std::vector<CostReport> reports;
  for (const auto& m : costed_models(config, true)) {
    auto r = utterance_cost(m.encoder, m.z, config.costing.convention);
    r.model = m.name;
    if (!reports.empty()) attach_baseline(r, reports.front());
    reports.push_back(std::move(r));
  }
  return reports;
}

SimulationReport simulation_report(const ExperimentConfig& config) {
  const auto models = costed_models(config, false);
  StreamScenario scenario;
  scenario.frame_duration = config.simulation.frame_duration;
  scenario.ww_frame_index = paper_dims::lead_in_frames(config.costing.frames, config.costing.lead_in_fraction);
  if (config.simulation.device_rate) scenario.device_rate = *config.simulation.device_rate;

  SimulationReport r;
  std::vector<SweepModel> sweep_models;
  for (const auto& m : models) {
    auto costs = frame_costs(m.encoder, m.z, config.costing.convention);
    r.models.push_back(m.name);
    r.traces.push_back(simulate(scenario, costs));
    r.min_catch_up_rates.push_back(min_catch_up_rate(scenario, costs));
    sweep_models.push_back({m.name, std::move(costs)});
  }
  std::vector<double> rates = config.simulation.sweep_rates;
  if (rates.empty()) {
    const auto [lo, hi] = std::minmax_element(r.min_catch_up_rates.begin(), r.min_catch_up_rates.end());
    const double a = std::max(*lo, 1.0) / 2, b = std::max(*hi, 1.0) * 2;
    constexpr int kPoints = 25;
    for (int i = 0; i < kPoints; ++i) rates.push_back(a * std::pow(b / a, i / double(kPoints - 1)));
  }
  std::sort(rates.begin(), rates.end());
  r.sweep = sweep(scenario, rates, sweep_models);
  if (r.sweep.cells.size() >= 2)
    for (std::size_t i = 0; i < rates.size(); ++i)
      if (!r.sweep.cells[0][i].caught_up_frame && r.sweep.cells[1][i].caught_up_frame)
        r.separating_rates.push_back(rates[i]);
  return r;
}

json to_json(const SimulationReport& r) {
  json traces = json::object();
  for (std::size_t m = 0; m < r.models.size(); ++m) traces[r.models[m]] = to_json(r.traces[m], true);
  json sweep = json::array();
  for (std::size_t m = 0; m < r.sweep.models.size(); ++m)
    for (const auto& c : r.sweep.cells[m])
      sweep.push_back({{"model", r.sweep.models[m]},
                       {"rate", c.rate},
                       {"caught_up_frame", c.caught_up_frame ? json(*c.caught_up_frame) : json(nullptr)},
                       {"caught_up_time", c.caught_up_time ? json(*c.caught_up_time) : json(nullptr)},
                       {"final_lag", c.final_lag},
                       {"max_backlog_frames", c.max_backlog_frames}});
  json mins = json::object();
  for (std::size_t m = 0; m < r.models.size(); ++m) mins[r.models[m]] = r.min_catch_up_rates[m];
  return json{{"traces", traces}, {"sweep", sweep}, {"min_catch_up_rate", mins}, {"separating_rates", r.separating_rates}};
}

}  // namespace bifocal
