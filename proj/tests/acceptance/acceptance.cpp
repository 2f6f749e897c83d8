// Acceptance gate: runs the eight release criteria and prints one PASS/FAIL
// line each. Usage: bifocal_acceptance [criterion...]; no arguments runs all.
// Exits non-zero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bifocal/config.hpp"
#include "bifocal/costing.hpp"
#include "bifocal/experiment.hpp"
#include "bifocal/gradcheck.hpp"
#include "bifocal/stream_sim.hpp"
#include "scalar_oracle.hpp"

using namespace bifocal;
namespace pd = bifocal::paper_dims;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// 1. Lattice NLL against explicit alignment enumeration. Logits come from a
// random small model evaluated by the scalar reference, so the library's
// model path and its lattice are both under test.
Outcome lattice_vs_enumeration() {
  Rng rng(1);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    TransducerConfig c;
    c.vocab = {2 + rng.index(3), 0};
    c.encoder.feature_dim = 1 + rng.index(3);
    c.encoder.num_layers = 1 + rng.index(2);
    c.encoder.branch_hidden = {1 + rng.index(3), 1 + rng.index(3)};
    c.encoder.output_dim = 1 + rng.index(3);
    c.encoder.transitions = {{0, 1}, {1, 0}};
    c.prediction = {1 + rng.index(3), {1 + rng.index(3)}};
    c.joint = {JointVariant::kFeedforward, 1 + rng.index(4), Activation::kTanh};
    if (rng.bernoulli(0.5)) {
      c.joint.variant = JointVariant::kAdditive;
      c.encoder.output_dim = c.vocab.size;
    }
    Rng init(1000 + trial);
    const auto model = TransducerModel<double>::create(c, init);

    const std::size_t frames = 1 + rng.index(4), u = rng.index(4);
    std::vector<Vector<double>> xs(frames, Vector<double>(c.encoder.feature_dim));
    for (auto& x : xs)
      for (auto& v : x) v = rng.normal();
    std::vector<std::size_t> z(frames), y(u);
    for (auto& b : z) b = rng.index(2);
    for (auto& k : y) k = 1 + rng.index(c.vocab.size - 1);

    const std::vector<oracle::Vec> fx(xs.begin(), xs.end());
    const auto enc = oracle::encoder(model.encoder, fx, z);
    const auto dec = oracle::prediction(model.prediction, y);
    std::vector<double> logits;
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t j = 0; j <= u; ++j) {
        const auto l = oracle::joint(model.joint, enc[t], dec[j]);
        logits.insert(logits.end(), l.begin(), l.end());
      }
    const double brute = oracle::brute_force_nll(logits, frames, y, c.vocab.size, c.vocab.blank);
    const double lazy = transducer_loss(model, std::span<const Vector<double>>(xs), z, y);
    auto grads = model.zeros_like();
    const double eager = transducer_loss(model, std::span<const Vector<double>>(xs), z, y, &grads);
    worst = std::max({worst, std::abs(lazy - brute) / std::abs(brute), std::abs(eager - brute) / std::abs(brute)});
  }
  return {worst <= 1e-6, fmt("100 instances, max relative error %.2e (tolerance 1e-6)", worst)};
}

// 2. Finite-difference gradient suite.
Outcome gradient_suite() {
  GradCheckOptions opts;
  opts.trials = 20;
  opts.eps = 1e-5;
  bool ok = true;
  std::ostringstream os;
  for (const auto& r : run_gradient_suite(opts)) {
    ok = ok && r.trials == 20 && r.passed(1e-4);
    os << r.component << " " << fmt("%.1e", r.max_rel_error) << "; ";
  }
  return {ok, "20 trials each, max relative error: " + os.str()};
}

// 3. Training-mode and inference-mode encoders forward the same frames, and
// projections run exactly at switches.
Outcome eager_lazy() {
  Rng rng(3);
  double worst = 0;
  bool counts = true;
  for (int trial = 0; trial < 50; ++trial) {
    EncoderConfig c;
    const std::size_t k = 2 + rng.index(2);
    for (std::size_t b = 0; b < k; ++b) c.branch_hidden.push_back(1 + rng.index(8));
    c.feature_dim = 1 + rng.index(8);
    c.output_dim = 1 + rng.index(8);
    c.num_layers = 1 + rng.index(3);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        if (a != b) c.transitions.push_back({a, b});
    Rng init(3000 + trial);
    const auto p = EncoderParams<float>::create(c, init);
    const std::size_t frames = 1 + rng.index(20);
    std::vector<Vector<float>> xs(frames, Vector<float>(c.feature_dim));
    for (auto& x : xs)
      for (auto& v : x) v = static_cast<float>(rng.normal());
    std::vector<std::size_t> z(frames);
    for (auto& b : z) b = rng.index(k);

    const auto eager = encode_eager(p, std::span<const Vector<float>>(xs), z);
    EncoderCounters counters;
    const auto lazy = encode_lazy(p, std::span<const Vector<float>>(xs), z, &counters);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t j = 0; j < c.output_dim; ++j)
        worst = std::max(worst, static_cast<double>(std::abs(eager.frames[t][j] - lazy.frames[t][j])));
    std::size_t switches = 0;
    for (std::size_t t = 1; t < frames; ++t) switches += z[t] != z[t - 1];
    for (const auto& layer : counters.layers) {
      std::size_t n = 0;
      for (const auto& [tr, count] : layer.projections) n += count;
      counts = counts && n == switches;
    }
  }
  return {worst <= 1e-5 && counts,
          fmt("50 trials, max |eager - lazy| %.2e (tolerance 1e-5); projection counts %s", worst,
              counts ? "equal switch counts in every layer" : "MISMATCH")};
}

const CostReport& row(const std::vector<CostReport>& table, pd::Model m) {
  for (const auto& r : table)
    if (r.model == pd::name(m)) return r;
  throw std::runtime_error("cost table lacks " + pd::name(m));
}

// 4. Production-scale cost reductions.
Outcome cost_model() {
  const CostConvention conv;
  const auto table = pd::cost_table(conv);
  const double bif = 100 * *row(table, pd::Model::kBifocal).reduction;
  const double a = 100 * *row(table, pd::Model::kTrifocalA).reduction;
  const double b = 100 * *row(table, pd::Model::kTrifocalB).reduction;
  const double c = 100 * *row(table, pd::Model::kTrifocalC).reduction;
  std::printf("    convention: %s\n", conv.describe().c_str());
  std::printf("    %zu frames, %zu lead-in frames\n", pd::kFrames, pd::lead_in_frames());
  for (const auto& r : table)
    std::printf("    %-16s %.4g FLOPs  reduction %s\n", r.model.c_str(), r.total_flops,
                r.reduction ? fmt("%.2f%%", 100 * *r.reduction).c_str() : "-");
  const bool ok = std::abs(bif - 29.1) <= 1.5 && a < b && b < c;
  return {ok, fmt("bifocal %.2f%% (target 29.1 +- 1.5); trifocal A %.2f%% < B %.2f%% < C %.2f%%", bif, a, b, c)};
}

// 5. Parameter counts.
Outcome param_counts() {
  const auto bif = count_encoder_params(pd::encoder(pd::Model::kBifocal)).total;
  const auto noproj = count_encoder_params(pd::encoder(pd::Model::kBifocalNoProjection)).total;
  const auto base = count_encoder_params(pd::encoder(pd::Model::kBaseline)).total;
  const double delta = static_cast<double>(bif - noproj);
  const bool exact = bif - noproj == 5ull * 2 * 256 * 1024;
  const bool near = std::abs(delta - 2.6e6) / 2.6e6 <= 0.05;
  const double base_err = std::abs(static_cast<double>(base) - 42.7e6) / 42.7e6;
  std::printf("    input dim assumption: %zu (64 filterbank energies x 3 stacked frames), %zu layers, output map %zu\n",
              pd::kFeatureDim, pd::kLayers, pd::kEncoderOutputDim);
  return {exact && near && base_err <= 0.10,
          fmt("projection delta %.0f (expected 2621440, %.1f%% from 2.6M); baseline %.4gM (%.1f%% from 42.7M)", delta,
              100 * std::abs(delta - 2.6e6) / 2.6e6, static_cast<double>(base) / 1e6, 100 * base_err)};
}

// Shared by criteria 6 and 7.
std::optional<TransducerModel<float>> g_trained_bifocal;

TrainResult run_toy(bool bifocal, SwitchInit init, std::uint64_t seed, std::size_t steps) {
  auto c = toy_config(bifocal);
  c.model.encoder.switch_init = init;
  c.training.seed = seed;
  c.training.steps = steps;
  const auto data = prepare_data(c);
  return train(c, data.train);
}

// 6. Desk-scale learnability on the default synthetic task.
Outcome learnability() {
  constexpr std::size_t kBudget = 1000;
  const auto mono200 = run_toy(false, SwitchInit::kProjection, 0, 200);
  const double reduction = 1 - mono200.final_loss / mono200.initial_loss;
  std::printf("    (a) monolithic, 200 steps: loss %.3f -> %.3f (%.1f%% reduction)\n", mono200.initial_loss,
              mono200.final_loss, 100 * reduction);

  const auto mono = run_toy(false, SwitchInit::kProjection, 0, kBudget);
  std::vector<double> proj, zero;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto p = run_toy(true, SwitchInit::kProjection, seed, kBudget);
    auto z = run_toy(true, SwitchInit::kZero, seed, kBudget);
    proj.push_back(p.final_loss);
    zero.push_back(z.final_loss);
    std::printf("    seed %llu, %zu steps: with projections %.3f  zero-init %.3f\n",
                static_cast<unsigned long long>(seed), kBudget, p.final_loss, z.final_loss);
    if (seed == 0) g_trained_bifocal = std::move(p.model);
  }
  const double rel = (proj[0] - mono.final_loss) / mono.final_loss;
  std::printf("    (b) seed 0, %zu steps: monolithic %.3f  bifocal %.3f (%+.1f%%)\n", kBudget, mono.final_loss, proj[0],
              100 * rel);
  int wins = 0;
  for (std::size_t s = 0; s < 5; ++s) wins += proj[s] < zero[s];
  // (b) is read one-sided: the bifocal model may not be more than 15% worse.
  const bool ok = reduction >= 0.5 && rel <= 0.15 && wins >= 4;
  return {ok, fmt("(a) %.1f%% >= 50%%; (b) bifocal %+.1f%% vs monolithic (<= +15%%); (c) projections win %d/5 (>= 4)",
                  100 * reduction, 100 * rel, wins)};
}

// 7. Decoder sanity on 100 utterances.
Outcome decoder() {
  auto c = toy_config(true);
  c.data.test_utterances = 100;
  if (!g_trained_bifocal) {
    std::printf("    (training a bifocal model for 1000 steps)\n");
    g_trained_bifocal = run_toy(true, SwitchInit::kProjection, 0, 1000).model;
  }
  const auto& model = *g_trained_bifocal;
  const auto data = prepare_data(c);
  std::size_t identical = 0, monotone = 0, greedy_exact = 0;
  for (const auto& u : data.test) {
    const auto z = utterance_schedule(c.schedule, u);
    const auto enc = encode_lazy(model.encoder, std::span<const Vector<float>>(u.frames), z);
    const auto g = greedy_decode_encoded<float>(model, enc.frames);
    greedy_exact += g.labels == u.labels;
    bool ok = true;
    float previous = -std::numeric_limits<float>::infinity();
    for (std::size_t beam : {1u, 2u, 4u, 8u, 16u}) {
      const auto b = beam_decode_encoded<float>(model, enc.frames, beam);
      if (beam == 1) identical += b.front().labels == g.labels && b.front().score == g.score;
      ok = ok && b.front().score >= previous;
      previous = b.front().score;
    }
    monotone += ok;
  }
  const std::size_t n = data.test.size();
  return {identical == n && monotone == n,
          fmt("beam 1 == greedy on %zu/%zu; top-1 score non-decreasing over {1,2,4,8,16} on %zu/%zu "
              "(greedy exact match %.2f)",
              identical, n, monotone, n, static_cast<double>(greedy_exact) / n)};
}

// 8. Streaming simulator.
Outcome simulator() {
  const auto base_costs = frame_costs(pd::encoder(pd::Model::kBaseline), pd::schedule(pd::Model::kBaseline), {});
  StreamScenario s;
  s.ww_frame_index = pd::lead_in_frames();
  const auto free = simulate(s, base_costs);
  bool zero_lag = true;
  // Buffered lead-in frames wait for the wake word; from the release onward nothing lags.
  for (std::size_t n = s.ww_frame_index; n < free.frames.size(); ++n) zero_lag = zero_lag && free.frames[n].lag <= 0;
  zero_lag = zero_lag && free.final_lag == 0;

  // All-large encoder at 90% of the rate it needs to keep up with real time.
  s.device_rate = 0.9 * base_costs.back() / s.frame_duration;
  const auto slow = simulate(s, base_costs);
  bool growing = !slow.caught_up_frame;
  for (std::size_t n = 1; n < slow.frames.size(); ++n)
    growing = growing && slow.frames[n].backlog_frames > slow.frames[n - 1].backlog_frames;

  auto c = toy_config();
  c.costing.preset = CostPreset::kPaperDims;
  const auto report = simulation_report(c);
  std::printf("    minimum catch-up rates: %s %.4g, %s %.4g FLOP/s\n", report.models[0].c_str(),
              report.min_catch_up_rates[0], report.models[1].c_str(), report.min_catch_up_rates[1]);
  const bool separated = !report.separating_rates.empty() && report.models[0] == "baseline" &&
                         report.models[1] == "bifocal";
  return {zero_lag && growing && separated,
          fmt("infinite rate lag %s; sub-real-time backlog %s; %zu swept rates where bifocal catches up and baseline "
              "does not%s",
              zero_lag ? "0" : "NON-ZERO", growing ? "grows every frame" : "NOT MONOTONE",
              report.separating_rates.size(),
              separated ? fmt(" (e.g. %.4g FLOP/s)", report.separating_rates.front()).c_str() : "")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"transducer loss vs alignment enumeration", lattice_vs_enumeration},
      {"gradient suite", gradient_suite},
      {"eager / lazy equivalence", eager_lazy},
      {"cost model reproduction", cost_model},
      {"parameter-count consistency", param_counts},
      {"desk-scale learnability", learnability},
      {"decoder sanity", decoder},
      {"simulator properties", simulator},
  };
  const double limits[] = {10, 60, 0, 0, 0, 600, 0, 0};  // seconds; 0 = no limit

  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const long n = std::strtol(argv[i], nullptr, 10);
    if (n < 1 || n > static_cast<long>(criteria.size())) {
      std::fprintf(stderr, "usage: %s [criterion 1-%zu ...]\n", argv[0], criteria.size());
      return 2;
    }
    selected.insert(static_cast<std::size_t>(n - 1));
  }

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i)) continue;
    std::printf("[%zu] %s\n", i + 1, criteria[i].first);
    std::fflush(stdout);
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limits[i] > 0 && secs >= limits[i]) {
      o.pass = false;
      o.detail += fmt("; runtime %.1f s exceeds %.0f s", secs, limits[i]);
    }
    std::printf("criterion %zu %s (%.1f s): %s\n", i + 1, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
