// SPDX-License-Identifier: Apache-2.0
//
// Standard LSTM cell: forward step plus the exact single-step backward pass.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bifocal/numerics.hpp"

namespace bifocal {

/// Nonlinearity applied to the cell state when forming the hidden output.
/// kTanh is the standard cell; kSigmoid reproduces the o * sigma(c) reading.
enum class CellOutput { kTanh, kSigmoid };

#if defined(BIFOCAL_LITERAL_SIGMOID_OUTPUT) && BIFOCAL_LITERAL_SIGMOID_OUTPUT
inline constexpr CellOutput kDefaultCellOutput = CellOutput::kSigmoid;
#else
inline constexpr CellOutput kDefaultCellOutput = CellOutput::kTanh;
#endif

inline constexpr double kForgetBiasInit = 1.0;

template <typename T>
struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  // Input transforms, hidden_dim x input_dim.
  Matrix<T> w_f, w_i, w_o, w_c;
  // Recurrent transforms, hidden_dim x hidden_dim.
  Matrix<T> u_f, u_i, u_o, u_c;
  Vector<T> b_f, b_i, b_o, b_c;
  CellOutput output = kDefaultCellOutput;

  static LstmParams zeros(std::size_t input_dim, std::size_t hidden_dim);
  /// Glorot-uniform weights, zero biases except the forget gate (1.0).
  static LstmParams glorot(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

  LstmParams zeros_like() const;
  void validate() const;
  std::size_t parameter_count() const;

  std::vector<TensorRef<T>> tensors() { return collect(*this); }
  std::vector<TensorRef<const T>> tensors() const { return collect(*this); }

  template <typename U>
  LstmParams<U> cast() const;

 private:
  template <typename Self>
  static auto collect(Self& p) {
    std::vector<decltype(tensor_ref("", p.w_f))> out;
    out.push_back(tensor_ref("W_f", p.w_f));
    out.push_back(tensor_ref("W_i", p.w_i));
    out.push_back(tensor_ref("W_o", p.w_o));
    out.push_back(tensor_ref("W_c", p.w_c));
    out.push_back(tensor_ref("U_f", p.u_f));
    out.push_back(tensor_ref("U_i", p.u_i));
    out.push_back(tensor_ref("U_o", p.u_o));
    out.push_back(tensor_ref("U_c", p.u_c));
    out.push_back(tensor_ref("b_f", p.b_f));
    out.push_back(tensor_ref("b_i", p.b_i));
    out.push_back(tensor_ref("b_o", p.b_o));
    out.push_back(tensor_ref("b_c", p.b_c));
    return out;
  }
};

template <typename T>
struct LstmState {
  Vector<T> c;
  Vector<T> h;

  static LstmState zeros(std::size_t hidden_dim) { return {Vector<T>(hidden_dim, T{0}), Vector<T>(hidden_dim, T{0})}; }
  std::size_t dim() const noexcept { return h.size(); }
  friend bool operator==(const LstmState&, const LstmState&) = default;
};

/// Intermediates of one forward step, consumed by lstm_backward.
template <typename T>
struct StepTape {
  Vector<T> x;
  Vector<T> c_prev;
  Vector<T> h_prev;
  Vector<T> f, i, o, g;
  Vector<T> c;
  Vector<T> act_c;  // tanh(c) or sigmoid(c)
};

template <typename T>
struct StepGradients {
  Vector<T> x;
  Vector<T> c_prev;
  Vector<T> h_prev;
};

/// One LSTM step. When `tape` is non-null it receives the intermediates
/// needed by lstm_backward.
template <typename T>
LstmState<T> lstm_step(const LstmParams<T>& p, std::span<const T> x, const LstmState<T>& prev,
                       StepTape<T>* tape = nullptr);

/// Backward through one step given dL/dc_t and dL/dh_t (either may be empty,
/// meaning zero). Parameter gradients are added into `grads`; gradients with
/// respect to the input and previous state are returned.
template <typename T>
StepGradients<T> lstm_backward(const LstmParams<T>& p, const StepTape<T>& tape,
                               std::span<const T> grad_c, std::span<const T> grad_h,
                               LstmParams<T>& grads);

/// Runs a plain LSTM over a sequence from a zero state; returns h per step.
template <typename T>
std::vector<LstmState<T>> lstm_unroll(const LstmParams<T>& p, std::span<const Vector<T>> xs);

}  // namespace bifocal
