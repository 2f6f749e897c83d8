// Library vs. scalar-loop oracle on the fixed seeded instances, plus the
// oracle's own outputs frozen as literals so a regression in either side
// shows up.

#include <doctest.h>

#include "bifocal/bifocal_cell.hpp"
#include "bifocal/encoder.hpp"
#include "bifocal/transducer.hpp"
#include "scalar_oracle.hpp"
#include "support/test_support.hpp"

using namespace bifocal;

namespace {

void check_abs(const oracle::Vec& expected, std::span<const float> actual, double tol) {
  REQUIRE(expected.size() == actual.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(actual[i] - expected[i]) <= tol);
}

}  // namespace

TEST_CASE("lstm step, hidden 2, seed 42, matches the scalar loop") {
  Rng rng(42);
  const auto p = LstmParams<float>::glorot(3, 2, rng);
  const Vector<float> x{0.5f, -1.0f, 2.0f};
  auto s = LstmState<float>::zeros(2);
  oracle::State o = oracle::zeros(2);
  for (int t = 0; t < 3; ++t) {
    s = lstm_step(p, std::span<const float>(x), s);
    o = oracle::lstm(p, {0.5, -1.0, 2.0}, o);
    check_abs(o.c, s.c, 1e-6);
    check_abs(o.h, s.h, 1e-6);
  }
  check_abs({1.05433851, -0.874080966}, s.c, 1e-6);
  check_abs({0.637129689, -0.184399924}, s.h, 1e-6);
}

TEST_CASE("eager cell, dims (2, 3), seed 7, z = (0, 0, 1), matches the scalar loop") {
  Rng rng(7);
  const std::vector<std::size_t> in{2, 2}, hid{2, 3};
  const std::vector<Transition> tr{{0, 1}};
  const auto p = BifocalCellParams<float>::create(in, hid, tr, SwitchInit::kProjection, rng);
  const std::vector<oracle::Vec> xs{{0.3, -0.2}, {1.0, 0.5}, {-0.7, 0.9}};
  std::vector<std::vector<Vector<float>>> inputs;
  std::vector<std::vector<oracle::Vec>> oracle_inputs;
  for (const auto& x : xs) {
    Vector<float> xf(x.begin(), x.end());
    inputs.push_back({xf, xf});
    oracle_inputs.push_back({x, x});
  }
  const std::vector<std::size_t> z{0, 0, 1};
  const auto trace = eager_forward(p, inputs, z);
  const auto expected = oracle::bifocal_eager(p, oracle_inputs, z);
  for (std::size_t t = 0; t < z.size(); ++t)
    for (std::size_t k = 0; k < 2; ++k) {
      check_abs(expected[t][k].c, trace.states[t][k].c, 1e-6);
      check_abs(expected[t][k].h, trace.states[t][k].h, 1e-6);
    }
  // Branch 0 has no projection back from branch 1, so it is cleared.
  check_abs({0, 0}, trace.states[2][0].h, 0);
  check_abs({0.243508834, 0.628475189, 0.0495514886}, trace.states[2][1].c, 1e-6);
  check_abs({0.172003356, 0.250201184, 0.0322984058}, trace.states[2][1].h, 1e-6);
}

TEST_CASE("two-layer encoder, dims (2, 3), T = 4, seed 11, matches the scalar loop") {
  Rng rng(11);
  EncoderConfig c;
  c.feature_dim = 2;
  c.num_layers = 2;
  c.branch_hidden = {2, 3};
  c.output_dim = 2;
  c.transitions = {{0, 1}};
  const auto p = EncoderParams<float>::create(c, rng);
  const std::vector<oracle::Vec> f{{0.1, 0.2}, {-0.3, 0.4}, {0.5, -0.6}, {0.7, 0.8}};
  std::vector<Vector<float>> frames;
  for (const auto& x : f) frames.emplace_back(x.begin(), x.end());
  const std::vector<std::size_t> z{0, 0, 1, 1};

  const auto expected = oracle::encoder(p, f, z);
  const auto eager = encode_eager(p, std::span<const Vector<float>>(frames), z);
  const auto lazy = encode_lazy(p, std::span<const Vector<float>>(frames), z);
  const std::vector<oracle::Vec> frozen{{0.0107038367, -0.00120844487},
                                        {0.00539665124, 0.0154606849},
                                        {0.0298976877, -0.00922167091},
                                        {0.0361679316, -0.0164758865}};
  for (std::size_t t = 0; t < z.size(); ++t) {
    check_abs(expected[t], eager.frames[t], 1e-6);
    check_abs(expected[t], lazy.frames[t], 1e-6);
    check_abs(frozen[t], eager.frames[t], 1e-6);
  }
}

TEST_CASE("prediction network, y = (2, 1), matches the scalar loop") {
  Rng rng(5);
  const auto net = PredictionNet<float>::create({3, {4, 3}}, 4, rng);
  const std::vector<std::size_t> y{2, 1};
  const auto states = predict_states(net, std::span<const std::size_t>(y));
  const auto expected = oracle::prediction(net, y);
  REQUIRE(states.size() == 3);
  for (std::size_t m = 0; m < 3; ++m) check_abs(expected[m], states[m], 1e-6);
  check_abs({0, 0, 0}, states[0], 0);
  check_abs({-0.00354742644, 0.016608568, 0.0138065202}, states[1], 1e-6);
  check_abs({0.00918015075, 0.0129501866, 0.0492037754}, states[2], 1e-6);
}

TEST_CASE("feedforward joint, small random dims, matches the scalar loop") {
  Rng rng(9);
  const auto j = JointNet<float>::create({JointVariant::kFeedforward, 4, Activation::kTanh}, 3, 2, 5, rng);
  const Vector<float> enc{0.2f, -0.4f, 0.6f}, dec{1.0f, -0.5f};
  const auto logits = joint_logits(j, std::span<const float>(enc), std::span<const float>(dec));
  check_abs(oracle::joint(j, {0.2, -0.4, 0.6}, {1.0, -0.5}), logits, 1e-6);
  check_abs({-0.069882714, -0.639933933, -0.19041557, -0.304316767, -0.306666267}, logits, 1e-6);

  for (auto act : {Activation::kRelu, Activation::kIdentity}) {
    Rng r2(10);
    const auto j2 = JointNet<float>::create({JointVariant::kFeedforward, 4, act}, 3, 2, 5, r2);
    check_abs(oracle::joint(j2, {0.2, -0.4, 0.6}, {1.0, -0.5}),
              joint_logits(j2, std::span<const float>(enc), std::span<const float>(dec)), 1e-6);
  }
}

TEST_CASE("additive joint matches the scalar loop") {
  Rng rng(3);
  const auto j = JointNet<float>::create({JointVariant::kAdditive, 0, Activation::kTanh}, 4, 3, 4, rng);
  const Vector<float> enc{0.5f, -1.0f, 0.25f, 2.0f}, dec{0.1f, 0.2f, -0.3f};
  check_abs(oracle::joint(j, {0.5, -1.0, 0.25, 2.0}, {0.1, 0.2, -0.3}),
            joint_logits(j, std::span<const float>(enc), std::span<const float>(dec)), 1e-6);
}

TEST_CASE("uniform logits, T = 2, U = 1, vocab 3: lattice equals path enumeration") {
  // Two alignments, each with three symbols at probability 1/3: P = 2/27.
  const std::vector<double> logits(2 * 2 * 3, 0.0);
  std::size_t paths = 0;
  const double brute = oracle::brute_force_nll(logits, 2, {1}, 3, 0, &paths);
  CHECK(paths == 2);
  CHECK(brute == doctest::Approx(std::log(13.5)).epsilon(1e-15));
  const std::vector<std::size_t> y{1};
  const auto r = transducer_lattice<double>(logits, 2, y, Vocab{3, 0});
  CHECK(r.nll == doctest::Approx(brute).epsilon(1e-15));
}

TEST_CASE("brute-force enumeration visits C(T - 1 + U, U) alignments") {
  Rng rng(1);
  for (std::size_t frames = 1; frames <= 4; ++frames)
    for (std::size_t u = 0; u <= 3; ++u) {
      std::vector<std::size_t> y(u, 1);
      std::vector<double> logits(frames * (u + 1) * 3);
      for (auto& v : logits) v = rng.normal();
      std::size_t paths = 0;
      oracle::brute_force_nll(logits, frames, y, 3, 0, &paths);
      CHECK(paths == oracle::choose(frames - 1 + u, u));
    }
}

TEST_CASE("lattice matches enumeration on random instances with a non-zero blank id") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t vocab = 2 + rng.index(3);
    const std::size_t blank = rng.index(vocab);
    const std::size_t frames = 1 + rng.index(4);
    const std::size_t u = rng.index(4);
    std::vector<std::size_t> y;
    while (y.size() < u) {
      const std::size_t k = rng.index(vocab);
      if (k != blank) y.push_back(k);
    }
    std::vector<double> logits(frames * (u + 1) * vocab);
    for (auto& v : logits) v = 2.0 * rng.normal();
    const double brute = oracle::brute_force_nll(logits, frames, y, vocab, blank);
    const auto r = transducer_lattice<double>(logits, frames, y, Vocab{vocab, blank});
    CHECK(r.nll == doctest::Approx(brute).epsilon(1e-10));
  }
}
