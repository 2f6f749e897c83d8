// SPDX-License-Identifier: Apache-2.0

#include "bifocal/bifocal_cell.hpp"

#include <stdexcept>

namespace bifocal {

template <typename T>
BifocalCellParams<T> BifocalCellParams<T>::create(std::span<const std::size_t> input_dims,
                                                  std::span<const std::size_t> hidden_dims,
                                                  std::span<const Transition> transitions, SwitchInit init,
                                                  Rng& rng, Rng* projection_rng) {
  Rng& prng = projection_rng ? *projection_rng : rng;
  require_dim("BifocalCellParams input dims per branch", hidden_dims.size(), input_dims.size());
  if (hidden_dims.empty()) throw std::invalid_argument("BifocalCellParams: at least one branch required");
  BifocalCellParams p;
  p.switch_init = init;
  for (std::size_t k = 0; k < hidden_dims.size(); ++k)
    p.branches.push_back(LstmParams<T>::glorot(input_dims[k], hidden_dims[k], rng));
  if (init == SwitchInit::kProjection) {
    for (const auto& [from, to] : transitions) {
      if (from >= hidden_dims.size() || to >= hidden_dims.size() || from == to)
        throw std::invalid_argument("BifocalCellParams: invalid transition " + std::to_string(from) + " -> " +
                                    std::to_string(to));
      if (p.projections.contains({from, to})) continue;
      StateProjection<T> proj{glorot_init<T>(hidden_dims[to], hidden_dims[from], prng),
                              glorot_init<T>(hidden_dims[to], hidden_dims[from], prng)};
      p.projections.emplace(Transition{from, to}, std::move(proj));
    }
  }
  return p;
}

template <typename T>
const StateProjection<T>* BifocalCellParams<T>::projection(std::size_t from, std::size_t to) const {
  auto it = projections.find({from, to});
  return it == projections.end() ? nullptr : &it->second;
}

template <typename T>
void BifocalCellParams<T>::check_schedule(std::span<const std::size_t> z) const {
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (z[t] >= branches.size())
      throw std::out_of_range("switch signal frame " + std::to_string(t) + " selects branch " +
                              std::to_string(z[t]) + " of " + std::to_string(branches.size()));
    if (t > 0 && z[t] != z[t - 1] && switch_init == SwitchInit::kProjection &&
        projection(z[t - 1], z[t]) == nullptr)
      throw MissingProjectionError(z[t - 1], z[t]);
  }
}

template <typename T>
void BifocalCellParams<T>::validate() const {
  if (branches.empty()) throw std::invalid_argument("BifocalCellParams: no branches");
  for (const auto& b : branches) b.validate();
  for (const auto& [key, proj] : projections) {
    const auto [from, to] = key;
    if (from >= branches.size() || to >= branches.size() || from == to)
      throw std::invalid_argument("BifocalCellParams: invalid projection key");
    for (const Matrix<T>* m : {&proj.cell, &proj.hidden}) {
      require_dim("state projection rows (target hidden)", branches[to].hidden_dim, m->rows());
      require_dim("state projection cols (source hidden)", branches[from].hidden_dim, m->cols());
    }
  }
}

template <typename T>
BifocalCellParams<T> BifocalCellParams<T>::zeros_like() const {
  BifocalCellParams z;
  z.switch_init = switch_init;
  for (const auto& b : branches) z.branches.push_back(b.zeros_like());
  for (const auto& [key, proj] : projections)
    z.projections.emplace(key, StateProjection<T>{Matrix<T>(proj.cell.rows(), proj.cell.cols()),
                                                  Matrix<T>(proj.hidden.rows(), proj.hidden.cols())});
  return z;
}

template <typename T>
BifocalState<T> zero_state(const BifocalCellParams<T>& p) {
  BifocalState<T> s;
  s.reserve(p.num_branches());
  for (const auto& b : p.branches) s.push_back(LstmState<T>::zeros(b.hidden_dim));
  return s;
}

namespace {

template <typename T>
LstmState<T> apply_projection(const StateProjection<T>& proj, const LstmState<T>& source) {
  return {matvec(proj.cell, std::span<const T>(source.c)), matvec(proj.hidden, std::span<const T>(source.h))};
}

// Eager-mode rewrite target: projection when present, otherwise cleared.
template <typename T>
LstmState<T> rewrite_state(const BifocalCellParams<T>& p, const LstmState<T>& source, std::size_t from,
                           std::size_t to) {
  if (p.switch_init == SwitchInit::kProjection) {
    if (const auto* proj = p.projection(from, to)) return apply_projection(*proj, source);
  }
  return LstmState<T>::zeros(p.hidden_dim(to));
}

}  // namespace

template <typename T>
LstmState<T> project_state(const BifocalCellParams<T>& p, const LstmState<T>& source, std::size_t from,
                           std::size_t to) {
  require_dim("project_state source", p.hidden_dim(from), source.dim());
  if (p.switch_init == SwitchInit::kZero) return LstmState<T>::zeros(p.hidden_dim(to));
  const auto* proj = p.projection(from, to);
  if (proj == nullptr) throw MissingProjectionError(from, to);
  return apply_projection(*proj, source);
}

template <typename T>
BifocalState<T> eager_step(const BifocalCellParams<T>& p, const std::vector<Vector<T>>& inputs,
                           const BifocalState<T>& prev, std::size_t active, EagerStepTape<T>* tape) {
  const std::size_t k_branches = p.num_branches();
  require_dim("eager_step inputs per branch", k_branches, inputs.size());
  require_dim("eager_step states per branch", k_branches, prev.size());
  if (active >= k_branches)
    throw std::out_of_range("eager_step: active branch " + std::to_string(active) + " of " +
                            std::to_string(k_branches));

  if (tape != nullptr) {
    tape->active = active;
    tape->branch_tapes.assign(k_branches, StepTape<T>{});
  }
  BifocalState<T> computed(k_branches);
  for (std::size_t k = 0; k < k_branches; ++k)
    computed[k] = lstm_step(p.branches[k], std::span<const T>(inputs[k]), prev[k],
                            tape != nullptr ? &tape->branch_tapes[k] : nullptr);

  BifocalState<T> out(k_branches);
  for (std::size_t k = 0; k < k_branches; ++k)
    if (k != active) out[k] = rewrite_state(p, computed[active], active, k);
  if (tape != nullptr) tape->active_state = computed[active];
  out[active] = std::move(computed[active]);
  return out;
}

template <typename T>
EagerStepGradients<T> eager_step_backward(const BifocalCellParams<T>& p, const EagerStepTape<T>& tape,
                                          const BifocalState<T>& grad_out, BifocalCellParams<T>& grads) {
  const std::size_t k_branches = p.num_branches();
  require_dim("eager_step_backward grads per branch", k_branches, grad_out.size());
  require_dim("eager_step_backward tape branches", k_branches, tape.branch_tapes.size());
  const std::size_t a = tape.active;
  const std::size_t n_a = p.hidden_dim(a);

  Vector<T> gc(n_a, T{0});
  Vector<T> gh(n_a, T{0});
  if (!grad_out[a].c.empty()) add_into(std::span<T>(gc), std::span<const T>(grad_out[a].c));
  if (!grad_out[a].h.empty()) add_into(std::span<T>(gh), std::span<const T>(grad_out[a].h));

  if (p.switch_init == SwitchInit::kProjection) {
    for (std::size_t b = 0; b < k_branches; ++b) {
      if (b == a) continue;
      const auto* proj = p.projection(a, b);
      if (proj == nullptr) continue;
      auto& gproj = grads.projections.at({a, b});
      if (!grad_out[b].c.empty()) {
        const std::span<const T> g(grad_out[b].c);
        outer_accumulate(gproj.cell, g, std::span<const T>(tape.active_state.c));
        matvec_transposed_accumulate(proj->cell, g, std::span<T>(gc));
      }
      if (!grad_out[b].h.empty()) {
        const std::span<const T> g(grad_out[b].h);
        outer_accumulate(gproj.hidden, g, std::span<const T>(tape.active_state.h));
        matvec_transposed_accumulate(proj->hidden, g, std::span<T>(gh));
      }
    }
  }

  EagerStepGradients<T> out;
  out.inputs.resize(k_branches);
  out.prev.resize(k_branches);
  for (std::size_t k = 0; k < k_branches; ++k) {
    if (k == a) continue;
    // Inactive computed states were overwritten, so nothing flows into them.
    out.inputs[k].assign(p.branches[k].input_dim, T{0});
    out.prev[k] = LstmState<T>::zeros(p.hidden_dim(k));
  }
  auto step = lstm_backward(p.branches[a], tape.branch_tapes[a], std::span<const T>(gc), std::span<const T>(gh),
                            grads.branches[a]);
  out.inputs[a] = std::move(step.x);
  out.prev[a] = {std::move(step.c_prev), std::move(step.h_prev)};
  return out;
}

std::size_t SwitchCounters::total_cell_steps() const {
  std::size_t n = 0;
  for (auto v : cell_steps) n += v;
  return n;
}

std::size_t SwitchCounters::total_projections() const {
  std::size_t n = 0;
  for (const auto& [k, v] : projections) n += v;
  return n;
}

std::size_t SwitchCounters::total_switches() const {
  std::size_t n = total_projections();
  for (const auto& [k, v] : zero_inits) n += v;
  return n;
}

template <typename T>
LstmState<T> lazy_step(const BifocalCellParams<T>& p, std::span<const T> x_active, const LstmState<T>& carried,
                       std::size_t active, std::optional<std::size_t> previous, SwitchCounters* counters) {
  if (active >= p.num_branches())
    throw std::out_of_range("lazy_step: active branch " + std::to_string(active) + " of " +
                            std::to_string(p.num_branches()));
  if (counters != nullptr) counters->resize(p.num_branches());
  if (previous && *previous != active) {
    if (*previous >= p.num_branches()) throw std::out_of_range("lazy_step: previous branch out of range");
    LstmState<T> entry = project_state(p, carried, *previous, active);
    if (counters != nullptr) {
      auto& bucket = p.switch_init == SwitchInit::kZero ? counters->zero_inits : counters->projections;
      ++bucket[{*previous, active}];
      ++counters->cell_steps[active];
    }
    return lstm_step(p.branches[active], x_active, entry);
  }
  if (counters != nullptr) ++counters->cell_steps[active];
  return lstm_step(p.branches[active], x_active, carried);
}

template <typename T>
EagerTrace<T> eager_forward(const BifocalCellParams<T>& p, const std::vector<std::vector<Vector<T>>>& inputs,
                            std::span<const std::size_t> z) {
  require_dim("eager_forward switch signal length", inputs.size(), z.size());
  p.check_schedule(z);
  EagerTrace<T> trace;
  trace.states.reserve(z.size());
  trace.tapes.resize(z.size());
  BifocalState<T> state = zero_state(p);
  for (std::size_t t = 0; t < z.size(); ++t) {
    state = eager_step(p, inputs[t], state, z[t], &trace.tapes[t]);
    trace.states.push_back(state);
  }
  return trace;
}

template <typename T>
std::vector<std::vector<Vector<T>>> eager_backward(const BifocalCellParams<T>& p, const EagerTrace<T>& trace,
                                                   const std::vector<BifocalState<T>>& grad_states,
                                                   BifocalCellParams<T>& grads) {
  const std::size_t steps = trace.tapes.size();
  require_dim("eager_backward gradient frames", steps, grad_states.size());
  const std::size_t k_branches = p.num_branches();
  std::vector<std::vector<Vector<T>>> input_grads(steps);
  BifocalState<T> carry = zero_state(p);
  for (std::size_t t = steps; t-- > 0;) {
    BifocalState<T> total = carry;
    const auto& g = grad_states[t];
    if (!g.empty()) {
      require_dim("eager_backward gradient branches", k_branches, g.size());
      for (std::size_t k = 0; k < k_branches; ++k) {
        if (!g[k].c.empty()) add_into(std::span<T>(total[k].c), std::span<const T>(g[k].c));
        if (!g[k].h.empty()) add_into(std::span<T>(total[k].h), std::span<const T>(g[k].h));
      }
    }
    auto step = eager_step_backward(p, trace.tapes[t], total, grads);
    input_grads[t] = std::move(step.inputs);
    carry = std::move(step.prev);
  }
  return input_grads;
}

template <typename T>
std::vector<LstmState<T>> lazy_forward(const BifocalCellParams<T>& p, const std::vector<Vector<T>>& inputs,
                                       std::span<const std::size_t> z, SwitchCounters* counters) {
  require_dim("lazy_forward switch signal length", inputs.size(), z.size());
  p.check_schedule(z);
  std::vector<LstmState<T>> out;
  out.reserve(z.size());
  LstmState<T> carried;
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (t == 0) carried = LstmState<T>::zeros(p.hidden_dim(z[0]));
    const std::optional<std::size_t> previous = t == 0 ? std::nullopt : std::optional<std::size_t>(z[t - 1]);
    carried = lazy_step(p, std::span<const T>(inputs[t]), carried, z[t], previous, counters);
    out.push_back(carried);
  }
  return out;
}

#define BIFOCAL_INSTANTIATE(T)                                                                                 \
  template struct BifocalCellParams<T>;                                                                        \
  template BifocalState<T> zero_state(const BifocalCellParams<T>&);                                            \
  template LstmState<T> project_state(const BifocalCellParams<T>&, const LstmState<T>&, std::size_t,           \
                                      std::size_t);                                                            \
  template BifocalState<T> eager_step(const BifocalCellParams<T>&, const std::vector<Vector<T>>&,              \
                                      const BifocalState<T>&, std::size_t, EagerStepTape<T>*);                 \
  template EagerStepGradients<T> eager_step_backward(const BifocalCellParams<T>&, const EagerStepTape<T>&,     \
                                                     const BifocalState<T>&, BifocalCellParams<T>&);           \
  template LstmState<T> lazy_step(const BifocalCellParams<T>&, std::span<const T>, const LstmState<T>&,        \
                                  std::size_t, std::optional<std::size_t>, SwitchCounters*);                   \
  template EagerTrace<T> eager_forward(const BifocalCellParams<T>&, const std::vector<std::vector<Vector<T>>>&, \
                                       std::span<const std::size_t>);                                          \
  template std::vector<std::vector<Vector<T>>> eager_backward(                                                 \
      const BifocalCellParams<T>&, const EagerTrace<T>&, const std::vector<BifocalState<T>>&,                  \
      BifocalCellParams<T>&);                                                                                  \
  template std::vector<LstmState<T>> lazy_forward(const BifocalCellParams<T>&, const std::vector<Vector<T>>&,  \
                                                  std::span<const std::size_t>, SwitchCounters*);

BIFOCAL_INSTANTIATE(float)
BIFOCAL_INSTANTIATE(double)
#undef BIFOCAL_INSTANTIATE

}  // namespace bifocal
