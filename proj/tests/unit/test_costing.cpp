#include <doctest.h>

#include <numeric>

#include "bifocal/costing.hpp"
#include "support/test_support.hpp"

using namespace bifocal;
namespace pd = bifocal::paper_dims;

namespace {

EncoderConfig toy_encoder(std::vector<std::size_t> hidden, std::vector<Transition> tr) {
  EncoderConfig c;
  c.feature_dim = 4;
  c.num_layers = 2;
  c.branch_hidden = std::move(hidden);
  c.output_dim = 6;
  c.transitions = std::move(tr);
  return c;
}

const CostReport& row(const std::vector<CostReport>& table, pd::Model m) {
  for (const auto& r : table)
    if (r.model == pd::name(m)) return r;
  throw std::runtime_error("missing row");
}

}  // namespace

TEST_CASE("unit prices") {
  CHECK(lstm_param_count(1, 1) == 12);
  CHECK(lstm_param_count(1, 1, false) == 8);
  CHECK(lstm_param_count(192, 1024) == 4 * 1024 * (192 + 1024 + 1));
  const auto mac = CostConvention::mac_only();
  CHECK(lstm_step_flops(1, 1, mac) == 16);
  // Default: 16 MAC FLOPs + 4 bias adds + 4 gate products and sums + 5 activations at 4 each.
  CHECK(lstm_step_flops(1, 1, CostConvention{}) == 16 + 4 + 4 + 20);
  CHECK(projection_flops(256, 1024, CostConvention{}) == 2.0 * (1024 * 256) * 2);
  auto no_proj = CostConvention{};
  no_proj.count_projection_ops = false;
  CHECK(projection_flops(256, 1024, no_proj) == 0);
  CHECK(output_map_flops(3, 5, mac) == 30);
  CHECK(CostConvention{}.describe().find("MAC") != std::string::npos);
  auto bad = CostConvention{};
  bad.flops_per_mac = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("parameter counts are exact and match the materialised model") {
  Rng rng(1);
  for (const auto& c : {toy_encoder({3, 5}, {{0, 1}}), toy_encoder({2, 4, 3}, {{0, 1}, {1, 2}, {2, 1}}),
                        toy_encoder({4}, {})}) {
    const auto counts = count_encoder_params(c);
    const auto p = EncoderParams<float>::create(c, rng);
    CHECK(counts.total == total_size(p.tensors()));
    CHECK(counts.total ==
          std::accumulate(counts.branches.begin(), counts.branches.end(), std::uint64_t{0}) +
              counts.state_projections + counts.output_maps);
  }
  auto zero = toy_encoder({3, 5}, {{0, 1}});
  zero.switch_init = SwitchInit::kZero;
  CHECK(count_encoder_params(zero).state_projections == 0);
}

TEST_CASE("paper-dims parameter counts") {
  const auto bif = count_encoder_params(pd::encoder(pd::Model::kBifocal));
  const auto noproj = count_encoder_params(pd::encoder(pd::Model::kBifocalNoProjection));
  CHECK(bif.total - noproj.total == 5ull * 2 * 256 * 1024);
  CHECK(bif.total - noproj.total == 2621440ull);
  const double baseline = static_cast<double>(count_encoder_params(pd::encoder(pd::Model::kBaseline)).total);
  CHECK(std::abs(baseline - 42.7e6) / 42.7e6 <= 0.10);
}

TEST_CASE("small branch costs a fifteenth of the large one per frame") {
  const auto c = pd::encoder(pd::Model::kBifocal);
  double small = 0, large = 0;
  std::size_t in = c.feature_dim;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    small += lstm_step_flops(l == 0 ? in : 256, 256, CostConvention{});
    large += lstm_step_flops(l == 0 ? in : 1024, 1024, CostConvention{});
  }
  CHECK(small / large == doctest::Approx(0.066).epsilon(0.01));
}

TEST_CASE("paper-dims cost table") {
  const auto table = pd::cost_table(CostConvention{});
  REQUIRE(table.size() == pd::all_models().size());
  CHECK(row(table, pd::Model::kBaseline).reduction.value_or(1.0) == 0.0);
  const double bif = *row(table, pd::Model::kBifocal).reduction;
  CHECK(std::abs(100 * bif - 29.1) <= 1.5);
  const double a = *row(table, pd::Model::kTrifocalA).reduction;
  const double b = *row(table, pd::Model::kTrifocalB).reduction;
  const double c = *row(table, pd::Model::kTrifocalC).reduction;
  CHECK(a < b);
  CHECK(b < c);
  // Without projections the bifocal saves slightly more.
  CHECK(*row(table, pd::Model::kBifocalNoProjection).reduction > bif);
  CHECK(pd::lead_in_frames() == 83);
}

TEST_CASE("all-large schedule saves nothing") {
  const auto c = pd::encoder(pd::Model::kBifocal);
  const auto base = utterance_cost(pd::encoder(pd::Model::kBaseline), SwitchSignal(260, 0), CostConvention{});
  const auto large = utterance_cost(c, SwitchSignal(260, 1), CostConvention{});
  CHECK(cost_reduction(large, base) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("signal-derived counts equal the lazy executor's counters") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::size_t> hidden;
    const std::size_t k = 2 + rng.index(2);
    for (std::size_t b = 0; b < k; ++b) hidden.push_back(1 + rng.index(6));
    std::vector<Transition> tr;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        if (a != b) tr.push_back({a, b});
    const auto c = toy_encoder(hidden, tr);
    Rng init(40 + trial);
    const auto p = EncoderParams<float>::create(c, init);
    const std::size_t frames = 1 + rng.index(20);
    const auto xs = testing::random_frames(frames, c.feature_dim, rng);
    const auto z = testing::random_z(frames, k, rng);
    EncoderCounters executed;
    encode_lazy(p, std::span<const Vector<float>>(xs), z, &executed);
    const auto predicted = count_lazy_ops(c, z);
    CHECK(predicted == executed);
    CHECK(executed.total_projections() == c.num_layers * schedule_stats(z).switches);
    const auto from_exec = cost_from_counters(c, executed, CostConvention{});
    const auto from_z = utterance_cost(c, z, CostConvention{});
    CHECK(from_exec.total_flops == from_z.total_flops);
    const auto per_frame = frame_costs(c, z, CostConvention{});
    REQUIRE(per_frame.size() == frames);
    CHECK(std::accumulate(per_frame.begin(), per_frame.end(), 0.0) ==
          doctest::Approx(from_z.total_flops).epsilon(1e-12));
  }
}

TEST_CASE("moving a frame to a smaller branch never raises cost") {
  const auto c = pd::encoder(pd::Model::kTrifocalA);
  Rng rng(3);
  std::size_t checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t frames = 2 + rng.index(40);
    const auto z = build_z(trifocal_a(), frames, rng.index(frames));
    const auto t = rng.index(frames);
    auto moved = z;
    // Branch sizes: 0 and 2 small, 1 large.
    if (z[t] != 1 || (t > 0 && z[t - 1] == 0)) continue;
    moved[t] = 2;
    if (schedule_stats(moved).switches != schedule_stats(z).switches) continue;
    ++checked;
    CHECK(utterance_cost(c, moved, CostConvention{}).total_flops <= utterance_cost(c, z, CostConvention{}).total_flops);
  }
  CHECK(checked > 20);

  // Extending the bifocal lead-in keeps a single switch.
  const auto bif = pd::encoder(pd::Model::kBifocal);
  const auto z = pd::schedule(pd::Model::kBifocal);
  const double total = utterance_cost(bif, z, CostConvention{}).total_flops;
  auto longer = z;
  longer[pd::lead_in_frames()] = 0;
  CHECK(utterance_cost(bif, longer, CostConvention{}).total_flops < total);
}

TEST_CASE("frame costs are shaped by the schedule") {
  const auto c = toy_encoder({2, 6}, {{0, 1}});
  const SwitchSignal z{0, 0, 1, 1};
  const auto f = frame_costs(c, z, CostConvention{});
  CHECK(f[0] == f[1]);
  CHECK(f[3] > f[1]);
  // The switch frame carries the projection events.
  CHECK(f[2] - f[3] == doctest::Approx(c.num_layers * projection_flops(2, 6, CostConvention{})));
}
