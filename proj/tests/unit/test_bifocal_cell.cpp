#include <doctest.h>

#include "bifocal/bifocal_cell.hpp"
#include "bifocal/gradcheck.hpp"
#include "support/test_support.hpp"

using namespace bifocal;

namespace {

std::vector<Transition> all_pairs(std::size_t k) {
  std::vector<Transition> out;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      if (a != b) out.push_back({a, b});
  return out;
}

template <typename T>
BifocalCellParams<T> make_cell(std::vector<std::size_t> hidden, std::size_t input, std::uint64_t seed,
                               SwitchInit init = SwitchInit::kProjection, std::vector<Transition> tr = {}) {
  Rng rng(seed);
  if (tr.empty()) tr = all_pairs(hidden.size());
  const std::vector<std::size_t> in(hidden.size(), input);
  return BifocalCellParams<T>::create(in, hidden, tr, init, rng);
}

template <typename T>
std::vector<std::vector<Vector<T>>> shared_inputs(const std::vector<Vector<T>>& xs, std::size_t k) {
  std::vector<std::vector<Vector<T>>> out;
  for (const auto& x : xs) out.emplace_back(k, x);
  return out;
}

}  // namespace

TEST_CASE("with z fixed on branch 0, branch 1 always holds the projection of branch 0") {
  const auto p = make_cell<double>({2, 3}, 2, 1, SwitchInit::kProjection, {{0, 1}});
  Rng rng(2);
  const auto xs = testing::random_frames<double>(6, 2, rng);
  const std::vector<std::size_t> z(6, 0);
  const auto trace = eager_forward(p, shared_inputs(xs, 2), z);
  const auto& proj = *p.projection(0, 1);
  for (const auto& s : trace.states) {
    CHECK(testing::max_abs_diff(s[1].c, matvec(proj.cell, std::span<const double>(s[0].c))) == 0);
    CHECK(testing::max_abs_diff(s[1].h, matvec(proj.hidden, std::span<const double>(s[0].h))) == 0);
  }
}

TEST_CASE("zero projections behave exactly like zero-init switching") {
  auto p = make_cell<float>({2, 3}, 2, 4, SwitchInit::kProjection, {{0, 1}});
  for (auto& [key, proj] : p.projections) {
    proj.cell.fill(0);
    proj.hidden.fill(0);
  }
  auto zero_mode = p;
  zero_mode.projections.clear();
  zero_mode.switch_init = SwitchInit::kZero;

  Rng rng(5);
  const auto xs = testing::random_frames(8, 2, rng);
  const std::vector<std::size_t> z{0, 0, 0, 0, 1, 1, 1, 1};  // switch entering frame 5
  const auto a = eager_forward(p, shared_inputs(xs, 2), z);
  const auto b = eager_forward(zero_mode, shared_inputs(xs, 2), z);
  // Branch 1's state entering frame 5 (after frame 4) is exactly zero.
  for (float v : a.states[3][1].c) CHECK(v == 0);
  for (float v : a.states[3][1].h) CHECK(v == 0);
  for (std::size_t t = 0; t < z.size(); ++t) CHECK(a.states[t][1] == b.states[t][1]);
}

TEST_CASE("constant z in lazy mode is a plain LSTM") {
  const auto p = make_cell<float>({3, 5}, 4, 6);
  Rng rng(7);
  const auto xs = testing::random_frames(12, 4, rng);
  for (std::size_t branch : {0u, 1u}) {
    const std::vector<std::size_t> z(12, branch);
    SwitchCounters counters;
    const auto lazy = lazy_forward(p, xs, z, &counters);
    const auto plain = lstm_unroll(p.branches[branch], std::span<const Vector<float>>(xs));
    for (std::size_t t = 0; t < 12; ++t) CHECK(lazy[t] == plain[t]);
    CHECK(counters.total_projections() == 0);
    CHECK(counters.cell_steps[branch] == 12);
    CHECK(counters.cell_steps[1 - branch] == 0);
  }
}

TEST_CASE("lazy and eager agree on the active branch around a switch") {
  const auto p = make_cell<float>({3, 5}, 4, 8, SwitchInit::kProjection, {{0, 1}});
  Rng rng(9);
  const auto xs = testing::random_frames(10, 4, rng);
  const std::vector<std::size_t> z{0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  const auto eager = eager_forward(p, shared_inputs(xs, 2), z);
  const auto lazy = lazy_forward(p, xs, z);
  for (std::size_t t = 0; t < z.size(); ++t) CHECK(testing::max_abs_diff(lazy[t].h, eager.states[t][z[t]].h) <= 1e-5);
}

TEST_CASE("alternating z projects once per change") {
  const auto p = make_cell<float>({2, 4, 3}, 3, 10);
  Rng rng(11);
  const auto xs = testing::random_frames(15, 3, rng);
  std::vector<std::size_t> z;
  for (std::size_t t = 0; t < 15; ++t) z.push_back(t % 3 == 0 ? 0 : (t % 2) + 1);
  std::size_t changes = 0;
  for (std::size_t t = 1; t < z.size(); ++t) changes += z[t] != z[t - 1];
  SwitchCounters counters;
  lazy_forward(p, xs, z, &counters);
  CHECK(counters.total_projections() == changes);
  CHECK(counters.total_switches() == changes);
  CHECK(counters.total_cell_steps() == 15);
}

TEST_CASE("eager/lazy equivalence on random schedules, float and double") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 2 + rng.index(2);
    std::vector<std::size_t> hidden;
    for (std::size_t b = 0; b < k; ++b) hidden.push_back(1 + rng.index(8));
    const std::size_t input = 1 + rng.index(8);
    const std::size_t frames = 1 + rng.index(20);
    const auto init = rng.bernoulli(0.25) ? SwitchInit::kZero : SwitchInit::kProjection;
    const auto z = testing::random_z(frames, k, rng);

    const auto pf = make_cell<float>(hidden, input, 1000 + trial, init);
    const auto xs = testing::random_frames(frames, input, rng);
    const auto eager = eager_forward(pf, shared_inputs(xs, k), z);
    const auto lazy = lazy_forward(pf, xs, z);
    for (std::size_t t = 0; t < frames; ++t) CHECK(testing::max_abs_diff(lazy[t].h, eager.states[t][z[t]].h) <= 1e-5);

    const auto pd = make_cell<double>(hidden, input, 1000 + trial, init);
    std::vector<Vector<double>> xd;
    for (const auto& x : xs) xd.emplace_back(x.begin(), x.end());
    const auto eager_d = eager_forward(pd, shared_inputs(xd, k), z);
    const auto lazy_d = lazy_forward(pd, xd, z);
    for (std::size_t t = 0; t < frames; ++t) {
      CHECK(testing::max_abs_diff(lazy_d[t].h, eager_d.states[t][z[t]].h) <= 1e-10);
      CHECK(testing::max_abs_diff(lazy_d[t].c, eager_d.states[t][z[t]].c) <= 1e-10);
    }
  }
}

TEST_CASE("a single branch is a plain LSTM, bitwise") {
  const auto p = make_cell<float>({4}, 3, 13);
  CHECK(p.projections.empty());
  Rng rng(14);
  const auto xs = testing::random_frames(9, 3, rng);
  const std::vector<std::size_t> z(9, 0);
  const auto plain = lstm_unroll(p.branches[0], std::span<const Vector<float>>(xs));
  const auto eager = eager_forward(p, shared_inputs(xs, 1), z);
  SwitchCounters counters;
  const auto lazy = lazy_forward(p, xs, z, &counters);
  for (std::size_t t = 0; t < 9; ++t) {
    CHECK(eager.states[t][0] == plain[t]);
    CHECK(lazy[t] == plain[t]);
  }
  CHECK(counters.total_switches() == 0);
}

TEST_CASE("zero-init switches are counted apart from projections") {
  const auto p = make_cell<float>({2, 3}, 2, 15, SwitchInit::kZero);
  CHECK(p.projections.empty());
  Rng rng(16);
  const auto xs = testing::random_frames(6, 2, rng);
  const std::vector<std::size_t> z{0, 1, 1, 0, 1, 0};
  SwitchCounters counters;
  lazy_forward(p, xs, z, &counters);
  CHECK(counters.total_projections() == 0);
  CHECK(counters.total_switches() == 4);
  CHECK(counters.zero_inits.at({0, 1}) == 2);
  CHECK(counters.zero_inits.at({1, 0}) == 2);
}

TEST_CASE("missing projections and bad branch ids are rejected") {
  const auto p = make_cell<float>({2, 3}, 2, 17, SwitchInit::kProjection, {{0, 1}});
  const std::vector<std::size_t> ok{0, 0, 1}, back{0, 1, 0}, bad{0, 2};
  CHECK_NOTHROW(p.check_schedule(ok));
  try {
    p.check_schedule(back);
    FAIL("expected MissingProjectionError");
  } catch (const MissingProjectionError& e) {
    CHECK(e.transition() == Transition{1, 0});
  }
  CHECK_THROWS_AS(p.check_schedule(bad), std::out_of_range);
  Rng rng(1);
  const auto xs = testing::random_frames(3, 2, rng);
  CHECK_THROWS_AS(lazy_forward(p, xs, back), MissingProjectionError);
  CHECK_THROWS_AS(eager_forward(p, shared_inputs(xs, 2), back), MissingProjectionError);
}

TEST_CASE("projection matrices are target x source") {
  const auto p = make_cell<float>({2, 5, 3}, 4, 18);
  for (const auto& [key, proj] : p.projections) {
    CHECK(proj.cell.rows() == p.hidden_dim(key.second));
    CHECK(proj.cell.cols() == p.hidden_dim(key.first));
    CHECK(proj.hidden.rows() == p.hidden_dim(key.second));
    CHECK(proj.hidden.cols() == p.hidden_dim(key.first));
  }
  CHECK(p.projections.size() == 6);
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("a dead branch receives no gradient") {
  // z stays on branch 0, so branch 1 is overwritten every frame and its own
  // step never reaches a loss that reads only branch 0.
  const auto p = make_cell<double>({3, 4}, 2, 19, SwitchInit::kProjection, {{0, 1}});
  Rng rng(20);
  const auto xs = testing::random_frames<double>(5, 2, rng);
  const std::vector<std::size_t> z(5, 0);
  const auto trace = eager_forward(p, shared_inputs(xs, 2), z);
  std::vector<BifocalState<double>> grad(5, BifocalState<double>(2));
  for (auto& g : grad) g[0] = {testing::random_vector<double>(3, rng), testing::random_vector<double>(3, rng)};
  auto grads = p.zeros_like();
  eager_backward(p, trace, grad, grads);
  for (const auto& t : grads.tensors()) {
    if (t.name.rfind("branch1.", 0) != 0 && t.name.rfind("proj", 0) != 0) continue;
    for (double v : t.data) CHECK(v == 0);
  }
  double branch0 = 0;
  for (const auto& t : grads.branches[0].tensors())
    for (double v : t.data) branch0 += std::abs(v);
  CHECK(branch0 > 0);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  const auto p = make_cell<double>({2, 3}, 2, 21);
  Rng rng(22);
  const auto xs = testing::random_frames<double>(4, 2, rng);
  const std::vector<std::size_t> z{0, 1, 1, 0};
  const auto trace = eager_forward(p, shared_inputs(xs, 2), z);
  const std::vector<BifocalState<double>> grad(4, BifocalState<double>(2));
  auto grads = p.zeros_like();
  const auto dx = eager_backward(p, trace, grad, grads);
  for (const auto& t : grads.tensors())
    for (double v : t.data) CHECK(v == 0);
  for (const auto& frame : dx)
    for (const auto& g : frame)
      for (double v : g) CHECK(v == 0);
}

TEST_CASE("eager backward matches finite differences, dims (2, 3), T = 3") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = make_cell<double>({2, 3}, 2, 300 + trial);
    auto xs = testing::random_frames<double>(3, 2, rng);
    const auto z = testing::random_z(3, 2, rng);
    std::vector<BifocalState<double>> weights(3, BifocalState<double>(2));
    for (auto& w : weights)
      for (std::size_t k = 0; k < 2; ++k)
        w[k] = {testing::random_vector<double>(p.hidden_dim(k), rng), testing::random_vector<double>(p.hidden_dim(k), rng)};

    auto loss = [&] {
      const auto trace = eager_forward(p, shared_inputs(xs, 2), z);
      double l = 0;
      for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < 2; ++k)
          for (std::size_t j = 0; j < p.hidden_dim(k); ++j)
            l += weights[t][k].c[j] * trace.states[t][k].c[j] + weights[t][k].h[j] * trace.states[t][k].h[j];
      return l;
    };
    const auto trace = eager_forward(p, shared_inputs(xs, 2), z);
    auto grads = p.zeros_like();
    eager_backward(p, trace, weights, grads);

    GradCheckResult result{"bifocal_cell"};
    check_tensors(result, loss, p.tensors(), std::as_const(grads).tensors(), 1e-5);
    CHECK(result.passed(1e-4));
    INFO(result.worst);
  }
}
