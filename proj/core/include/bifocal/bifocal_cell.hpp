// SPDX-License-Identifier: Apache-2.0
//
// Switching recurrent cell: K LSTM sub-cells of different widths plus learned
// directional projections that translate (c, h) between their state spaces.
//
// Two execution modes share one set of parameters:
//
//  * eager: every sub-cell runs on every frame; afterwards each inactive
//    branch b has its state overwritten with P^{a->b} applied to the active
//    branch a's state. Fully differentiable; used for training.
//  * lazy: only the selected sub-cell runs. When the selection changes, the
//    carried state is projected into the new branch before it steps.
//
// Because eager mode rewrites inactive states every frame, the branch that
// becomes active at frame t starts from P^{a->b} applied to the state of
// frame t-1, which is exactly what lazy mode computes at the switch.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bifocal/numerics.hpp"
#include "bifocal/recurrent.hpp"

namespace bifocal {

/// Directed branch pair (source, target).
using Transition = std::pair<std::size_t, std::size_t>;

/// What an inactive or newly activated branch receives at a switch.
enum class SwitchInit {
  kProjection,  // learned state projection
  kZero,        // zero state ("no projection" ablation)
};

class MissingProjectionError : public std::invalid_argument {
 public:
  MissingProjectionError(std::size_t from, std::size_t to)
      : std::invalid_argument("no state projection for branch transition " + std::to_string(from) + " -> " +
                              std::to_string(to)),
        transition_(from, to) {}
  Transition transition() const noexcept { return transition_; }

 private:
  Transition transition_;
};

/// Pure linear maps (no bias), target_hidden x source_hidden.
template <typename T>
struct StateProjection {
  Matrix<T> cell;
  Matrix<T> hidden;
};

template <typename T>
struct BifocalCellParams {
  std::vector<LstmParams<T>> branches;
  std::map<Transition, StateProjection<T>> projections;
  SwitchInit switch_init = SwitchInit::kProjection;

  /// Glorot-initialized sub-cells and projections for the given transitions.
  /// In kZero mode no projection matrices are created. Projections draw from
  /// `projection_rng` when given, so branch weights do not depend on them.
  static BifocalCellParams create(std::span<const std::size_t> input_dims, std::span<const std::size_t> hidden_dims,
                                  std::span<const Transition> transitions, SwitchInit init, Rng& rng,
                                  Rng* projection_rng = nullptr);

  std::size_t num_branches() const noexcept { return branches.size(); }
  std::size_t hidden_dim(std::size_t branch) const { return branches.at(branch).hidden_dim; }

  const StateProjection<T>* projection(std::size_t from, std::size_t to) const;

  /// Throws MissingProjectionError if a switch in `z` has no projection
  /// (never in kZero mode), std::out_of_range for bad branch ids.
  void check_schedule(std::span<const std::size_t> z) const;

  void validate() const;
  BifocalCellParams zeros_like() const;

  std::vector<TensorRef<T>> tensors() { return collect(*this); }
  std::vector<TensorRef<const T>> tensors() const { return collect(*this); }

 private:
  template <typename Self>
  static auto collect(Self& p) {
    using Ref = decltype(tensor_ref("", p.branches.front().w_f));
    std::vector<Ref> out;
    for (std::size_t k = 0; k < p.branches.size(); ++k)
      append(out, p.branches[k].tensors(), "branch" + std::to_string(k) + ".");
    for (auto& [key, proj] : p.projections) {
      const std::string prefix = "proj" + std::to_string(key.first) + "to" + std::to_string(key.second) + ".";
      out.push_back(tensor_ref(prefix + "P_c", proj.cell));
      out.push_back(tensor_ref(prefix + "P_h", proj.hidden));
    }
    return out;
  }
};

/// Per-branch (c, h) states.
template <typename T>
using BifocalState = std::vector<LstmState<T>>;

template <typename T>
BifocalState<T> zero_state(const BifocalCellParams<T>& p);

/// Maps `source` (state of branch `from`) into branch `to`'s state space,
/// honoring the cell's SwitchInit mode.
template <typename T>
LstmState<T> project_state(const BifocalCellParams<T>& p, const LstmState<T>& source, std::size_t from,
                           std::size_t to);

template <typename T>
struct EagerStepTape {
  std::size_t active = 0;
  std::vector<StepTape<T>> branch_tapes;
  LstmState<T> active_state;  // active branch's computed state (projection source)
};

/// Eager step. `inputs[k]` feeds branch k. Inactive branches without a
/// projection from the active branch are cleared to zero; such a branch can
/// only become active again through a transition check_schedule rejects.
template <typename T>
BifocalState<T> eager_step(const BifocalCellParams<T>& p, const std::vector<Vector<T>>& inputs,
                           const BifocalState<T>& prev, std::size_t active, EagerStepTape<T>* tape = nullptr);

template <typename T>
struct EagerStepGradients {
  std::vector<Vector<T>> inputs;  // dL/dx per branch
  BifocalState<T> prev;           // dL/d(previous state) per branch
};

/// Backward of eager_step. `grad_out` holds dL/d(c, h) of each branch's
/// output state; empty vectors mean zero.
template <typename T>
EagerStepGradients<T> eager_step_backward(const BifocalCellParams<T>& p, const EagerStepTape<T>& tape,
                                          const BifocalState<T>& grad_out, BifocalCellParams<T>& grads);

/// Operation counts recorded during lazy execution.
struct SwitchCounters {
  std::vector<std::size_t> cell_steps;                // per branch
  std::map<Transition, std::size_t> projections;      // state projection events
  std::map<Transition, std::size_t> zero_inits;       // switches served by zero init

  void resize(std::size_t branches) { cell_steps.resize(branches, 0); }
  std::size_t total_cell_steps() const;
  std::size_t total_projections() const;
  std::size_t total_switches() const;
  friend bool operator==(const SwitchCounters&, const SwitchCounters&) = default;
};

/// Lazy step: one sub-cell executes. If `previous` names a different branch,
/// `carried` is first projected (or zeroed) into branch `active`.
template <typename T>
LstmState<T> lazy_step(const BifocalCellParams<T>& p, std::span<const T> x_active, const LstmState<T>& carried,
                       std::size_t active, std::optional<std::size_t> previous, SwitchCounters* counters = nullptr);

/// Eager pass over a sequence; inputs[t][k] feeds branch k at frame t.
template <typename T>
struct EagerTrace {
  std::vector<BifocalState<T>> states;  // output state after each frame
  std::vector<EagerStepTape<T>> tapes;
};

template <typename T>
EagerTrace<T> eager_forward(const BifocalCellParams<T>& p, const std::vector<std::vector<Vector<T>>>& inputs,
                            std::span<const std::size_t> z);

/// Backpropagation through time over an eager trace. grad_states[t] holds
/// dL/d(output state at t) per branch (entries may be empty). Returns
/// dL/dinputs[t][k]; parameter gradients accumulate into `grads`.
template <typename T>
std::vector<std::vector<Vector<T>>> eager_backward(const BifocalCellParams<T>& p, const EagerTrace<T>& trace,
                                                   const std::vector<BifocalState<T>>& grad_states,
                                                   BifocalCellParams<T>& grads);

/// Lazy pass: inputs[t] is the active branch's input at frame t. Returns the
/// active branch state per frame.
template <typename T>
std::vector<LstmState<T>> lazy_forward(const BifocalCellParams<T>& p, const std::vector<Vector<T>>& inputs,
                                       std::span<const std::size_t> z, SwitchCounters* counters = nullptr);

}  // namespace bifocal
