// SPDX-License-Identifier: Apache-2.0

#include "bifocal/recurrent.hpp"

#include <cmath>
#include <stdexcept>

namespace bifocal {

template <typename T>
LstmParams<T> LstmParams<T>::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  if (input_dim == 0 || hidden_dim == 0) throw std::invalid_argument("LstmParams: dims must be >= 1");
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  for (Matrix<T>* w : {&p.w_f, &p.w_i, &p.w_o, &p.w_c}) *w = Matrix<T>(hidden_dim, input_dim);
  for (Matrix<T>* u : {&p.u_f, &p.u_i, &p.u_o, &p.u_c}) *u = Matrix<T>(hidden_dim, hidden_dim);
  for (Vector<T>* b : {&p.b_f, &p.b_i, &p.b_o, &p.b_c}) b->assign(hidden_dim, T{0});
  return p;
}

template <typename T>
LstmParams<T> LstmParams<T>::glorot(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  LstmParams p = zeros(input_dim, hidden_dim);
  for (Matrix<T>* w : {&p.w_f, &p.w_i, &p.w_o, &p.w_c}) *w = glorot_init<T>(hidden_dim, input_dim, rng);
  for (Matrix<T>* u : {&p.u_f, &p.u_i, &p.u_o, &p.u_c}) *u = glorot_init<T>(hidden_dim, hidden_dim, rng);
  p.b_f.assign(hidden_dim, static_cast<T>(kForgetBiasInit));
  return p;
}

template <typename T>
LstmParams<T> LstmParams<T>::zeros_like() const {
  LstmParams z = zeros(input_dim, hidden_dim);
  z.output = output;
  return z;
}

template <typename T>
void LstmParams<T>::validate() const {
  for (const Matrix<T>* w : {&w_f, &w_i, &w_o, &w_c}) {
    require_dim("LSTM input transform rows", hidden_dim, w->rows());
    require_dim("LSTM input transform cols", input_dim, w->cols());
  }
  for (const Matrix<T>* u : {&u_f, &u_i, &u_o, &u_c}) {
    require_dim("LSTM recurrent transform rows", hidden_dim, u->rows());
    require_dim("LSTM recurrent transform cols", hidden_dim, u->cols());
  }
  for (const Vector<T>* b : {&b_f, &b_i, &b_o, &b_c}) require_dim("LSTM bias", hidden_dim, b->size());
}

template <typename T>
std::size_t LstmParams<T>::parameter_count() const {
  return 4 * (hidden_dim * (input_dim + hidden_dim) + hidden_dim);
}

template <typename T>
template <typename U>
LstmParams<U> LstmParams<T>::cast() const {
  LstmParams<U> q;
  q.input_dim = input_dim;
  q.hidden_dim = hidden_dim;
  q.output = output;
  q.w_f = w_f.template cast<U>();
  q.w_i = w_i.template cast<U>();
  q.w_o = w_o.template cast<U>();
  q.w_c = w_c.template cast<U>();
  q.u_f = u_f.template cast<U>();
  q.u_i = u_i.template cast<U>();
  q.u_o = u_o.template cast<U>();
  q.u_c = u_c.template cast<U>();
  q.b_f = cast_vector<U>(std::span<const T>(b_f));
  q.b_i = cast_vector<U>(std::span<const T>(b_i));
  q.b_o = cast_vector<U>(std::span<const T>(b_o));
  q.b_c = cast_vector<U>(std::span<const T>(b_c));
  return q;
}

namespace {

template <typename T>
Vector<T> gate_preactivation(const Matrix<T>& w, const Matrix<T>& u, const Vector<T>& b,
                             std::span<const T> x, std::span<const T> h_prev) {
  Vector<T> a(b);
  matvec_accumulate(w, x, std::span<T>(a));
  matvec_accumulate(u, h_prev, std::span<T>(a));
  return a;
}

}  // namespace

template <typename T>
LstmState<T> lstm_step(const LstmParams<T>& p, std::span<const T> x, const LstmState<T>& prev,
                       StepTape<T>* tape) {
  require_dim("lstm_step input", p.input_dim, x.size());
  require_dim("lstm_step previous hidden", p.hidden_dim, prev.h.size());
  require_dim("lstm_step previous cell", p.hidden_dim, prev.c.size());

  const std::span<const T> h_prev(prev.h);
  Vector<T> f = gate_preactivation(p.w_f, p.u_f, p.b_f, x, h_prev);
  Vector<T> i = gate_preactivation(p.w_i, p.u_i, p.b_i, x, h_prev);
  Vector<T> o = gate_preactivation(p.w_o, p.u_o, p.b_o, x, h_prev);
  Vector<T> g = gate_preactivation(p.w_c, p.u_c, p.b_c, x, h_prev);

  const std::size_t n = p.hidden_dim;
  LstmState<T> next{Vector<T>(n), Vector<T>(n)};
  Vector<T> act_c(n);
  for (std::size_t k = 0; k < n; ++k) {
    f[k] = sigmoid(f[k]);
    i[k] = sigmoid(i[k]);
    o[k] = sigmoid(o[k]);
    g[k] = std::tanh(g[k]);
    next.c[k] = f[k] * prev.c[k] + i[k] * g[k];
    act_c[k] = p.output == CellOutput::kTanh ? std::tanh(next.c[k]) : sigmoid(next.c[k]);
    next.h[k] = o[k] * act_c[k];
  }

  if (tape != nullptr) {
    tape->x.assign(x.begin(), x.end());
    tape->c_prev = prev.c;
    tape->h_prev = prev.h;
    tape->f = std::move(f);
    tape->i = std::move(i);
    tape->o = std::move(o);
    tape->g = std::move(g);
    tape->c = next.c;
    tape->act_c = std::move(act_c);
  }
  return next;
}

template <typename T>
StepGradients<T> lstm_backward(const LstmParams<T>& p, const StepTape<T>& tape,
                               std::span<const T> grad_c, std::span<const T> grad_h,
                               LstmParams<T>& grads) {
  const std::size_t n = p.hidden_dim;
  require_dim("lstm_backward tape", n, tape.c.size());
  require_dim("lstm_backward tape input", p.input_dim, tape.x.size());
  if (!grad_c.empty()) require_dim("lstm_backward grad_c", n, grad_c.size());
  if (!grad_h.empty()) require_dim("lstm_backward grad_h", n, grad_h.size());
  require_dim("lstm_backward gradient accumulator", n, grads.hidden_dim);
  require_dim("lstm_backward gradient accumulator input", p.input_dim, grads.input_dim);

  Vector<T> da_f(n), da_i(n), da_o(n), da_c(n);
  StepGradients<T> out{Vector<T>(p.input_dim, T{0}), Vector<T>(n, T{0}), Vector<T>(n, T{0})};
  for (std::size_t k = 0; k < n; ++k) {
    const T dh = grad_h.empty() ? T{0} : grad_h[k];
    const T a = tape.act_c[k];
    const T act_grad = p.output == CellOutput::kTanh ? T{1} - a * a : a * (T{1} - a);
    const T dc = (grad_c.empty() ? T{0} : grad_c[k]) + dh * tape.o[k] * act_grad;
    const T d_o = dh * a;
    const T d_f = dc * tape.c_prev[k];
    const T d_i = dc * tape.g[k];
    const T d_g = dc * tape.i[k];
    out.c_prev[k] = dc * tape.f[k];
    da_f[k] = d_f * tape.f[k] * (T{1} - tape.f[k]);
    da_i[k] = d_i * tape.i[k] * (T{1} - tape.i[k]);
    da_o[k] = d_o * tape.o[k] * (T{1} - tape.o[k]);
    da_c[k] = d_g * (T{1} - tape.g[k] * tape.g[k]);
  }

  const std::span<const T> x(tape.x);
  const std::span<const T> h_prev(tape.h_prev);
  auto accumulate_gate = [&](const Vector<T>& da, const Matrix<T>& w, const Matrix<T>& u, Matrix<T>& gw,
                             Matrix<T>& gu, Vector<T>& gb) {
    const std::span<const T> d(da);
    outer_accumulate(gw, d, x);
    outer_accumulate(gu, d, h_prev);
    add_into(std::span<T>(gb), d);
    matvec_transposed_accumulate(w, d, std::span<T>(out.x));
    matvec_transposed_accumulate(u, d, std::span<T>(out.h_prev));
  };
  accumulate_gate(da_f, p.w_f, p.u_f, grads.w_f, grads.u_f, grads.b_f);
  accumulate_gate(da_i, p.w_i, p.u_i, grads.w_i, grads.u_i, grads.b_i);
  accumulate_gate(da_o, p.w_o, p.u_o, grads.w_o, grads.u_o, grads.b_o);
  accumulate_gate(da_c, p.w_c, p.u_c, grads.w_c, grads.u_c, grads.b_c);
  return out;
}

template <typename T>
std::vector<LstmState<T>> lstm_unroll(const LstmParams<T>& p, std::span<const Vector<T>> xs) {
  std::vector<LstmState<T>> states;
  states.reserve(xs.size());
  LstmState<T> s = LstmState<T>::zeros(p.hidden_dim);
  for (const auto& x : xs) {
    s = lstm_step(p, std::span<const T>(x), s);
    states.push_back(s);
  }
  return states;
}

#define BIFOCAL_INSTANTIATE(T)                                                                     \
  template struct LstmParams<T>;                                                                   \
  template LstmState<T> lstm_step(const LstmParams<T>&, std::span<const T>, const LstmState<T>&,   \
                                  StepTape<T>*);                                                   \
  template StepGradients<T> lstm_backward(const LstmParams<T>&, const StepTape<T>&,                \
                                          std::span<const T>, std::span<const T>, LstmParams<T>&); \
  template std::vector<LstmState<T>> lstm_unroll(const LstmParams<T>&, std::span<const Vector<T>>);

BIFOCAL_INSTANTIATE(float)
BIFOCAL_INSTANTIATE(double)
#undef BIFOCAL_INSTANTIATE

template LstmParams<double> LstmParams<float>::cast<double>() const;
template LstmParams<float> LstmParams<double>::cast<float>() const;
template LstmParams<float> LstmParams<float>::cast<float>() const;
template LstmParams<double> LstmParams<double>::cast<double>() const;

}  // namespace bifocal
