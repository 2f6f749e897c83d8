// SPDX-License-Identifier: Apache-2.0

#include "bifocal/transducer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace bifocal {

void Vocab::validate() const {
  if (size < 2) throw std::invalid_argument("vocab: size must be >= 2 (one label plus blank)");
  if (blank >= size) throw std::invalid_argument("vocab: blank id out of range");
}

void Vocab::check_labels(std::span<const std::size_t> labels) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!is_label(labels[i]))
      throw InvalidLabelError("invalid label id " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                              (labels[i] == blank ? " (blank is not a target)" : ""));
}

void PredictionConfig::validate() const {
  if (embed_dim == 0) throw std::invalid_argument("prediction: embed_dim must be >= 1");
  if (hidden.empty()) throw std::invalid_argument("prediction: at least one LSTM layer required");
  for (auto h : hidden)
    if (h == 0) throw std::invalid_argument("prediction: hidden dims must be >= 1");
}

void TransducerConfig::validate() const {
  encoder.validate();
  prediction.validate();
  vocab.validate();
  if (joint.variant == JointVariant::kAdditive) {
    if (encoder.output_dim != vocab.size)
      throw DimensionError("additive joint: encoder output_dim must equal vocab size", vocab.size, encoder.output_dim);
  } else if (joint.joint_dim == 0) {
    throw std::invalid_argument("feedforward joint: joint_dim must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Prediction network

template <typename T>
PredictionNet<T> PredictionNet<T>::create(const PredictionConfig& config, std::size_t vocab_size, Rng& rng) {
  config.validate();
  PredictionNet net;
  net.embedding = glorot_init<T>(config.embed_dim, vocab_size, rng);
  std::size_t in = config.embed_dim;
  for (auto h : config.hidden) {
    net.layers.push_back(LstmParams<T>::glorot(in, h, rng));
    in = h;
  }
  return net;
}

template <typename T>
PredictionNet<T> PredictionNet<T>::zeros_like() const {
  PredictionNet z;
  z.embedding = Matrix<T>(embedding.rows(), embedding.cols());
  for (const auto& l : layers) z.layers.push_back(l.zeros_like());
  return z;
}

template <typename T>
PredictionState<T> prediction_start(const PredictionNet<T>& net) {
  PredictionState<T> s;
  for (const auto& l : net.layers) s.layers.push_back(LstmState<T>::zeros(l.hidden_dim));
  return s;
}

template <typename T>
PredictionState<T> prediction_advance(const PredictionNet<T>& net, const PredictionState<T>& state,
                                      std::size_t label, std::vector<StepTape<T>>* tapes) {
  if (label >= net.embedding.cols())
    throw InvalidLabelError("prediction network: label " + std::to_string(label) + " out of range");
  Vector<T> x(net.embedding.rows());
  for (std::size_t r = 0; r < x.size(); ++r) x[r] = net.embedding(r, label);
  if (tapes != nullptr) tapes->assign(net.layers.size(), StepTape<T>{});
  PredictionState<T> next;
  next.layers.reserve(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    next.layers.push_back(lstm_step(net.layers[l], std::span<const T>(x), state.layers[l],
                                    tapes != nullptr ? &(*tapes)[l] : nullptr));
    x = next.layers.back().h;
  }
  return next;
}

template <typename T>
std::vector<Vector<T>> predict_states(const PredictionNet<T>& net, std::span<const std::size_t> labels,
                                      std::vector<std::vector<StepTape<T>>>* tapes) {
  std::vector<Vector<T>> out;
  out.reserve(labels.size() + 1);
  PredictionState<T> s = prediction_start(net);
  out.push_back(s.output());
  if (tapes != nullptr) tapes->assign(labels.size(), {});
  for (std::size_t m = 0; m < labels.size(); ++m) {
    s = prediction_advance(net, s, labels[m], tapes != nullptr ? &(*tapes)[m] : nullptr);
    out.push_back(s.output());
  }
  return out;
}

template <typename T>
void predict_states_backward(const PredictionNet<T>& net, std::span<const std::size_t> labels,
                             const std::vector<std::vector<StepTape<T>>>& tapes,
                             std::span<const Vector<T>> grad_outputs, PredictionNet<T>& grads) {
  require_dim("prediction backward tapes", labels.size(), tapes.size());
  require_dim("prediction backward output gradients", labels.size() + 1, grad_outputs.size());
  const std::size_t n_layers = net.layers.size();
  std::vector<LstmState<T>> carry;
  for (const auto& l : net.layers) carry.push_back(LstmState<T>::zeros(l.hidden_dim));

  for (std::size_t m = labels.size(); m-- > 0;) {
    Vector<T> from_above = grad_outputs[m + 1];
    for (std::size_t l = n_layers; l-- > 0;) {
      Vector<T> gh = carry[l].h;
      if (!from_above.empty()) add_into(std::span<T>(gh), std::span<const T>(from_above));
      auto step = lstm_backward(net.layers[l], tapes[m][l], std::span<const T>(carry[l].c), std::span<const T>(gh),
                                grads.layers[l]);
      carry[l] = {std::move(step.c_prev), std::move(step.h_prev)};
      from_above = std::move(step.x);
    }
    for (std::size_t r = 0; r < from_above.size(); ++r) grads.embedding(r, labels[m]) += from_above[r];
  }
}

// ---------------------------------------------------------------------------
// Joint network

namespace {

template <typename T>
T activate(Activation a, T x) {
  switch (a) {
    case Activation::kTanh:
      return std::tanh(x);
    case Activation::kRelu:
      return x > T{0} ? x : T{0};
    case Activation::kIdentity:
      return x;
  }
  return x;
}

// Derivative expressed through the activation's output.
template <typename T>
T activate_grad(Activation a, T y) {
  switch (a) {
    case Activation::kTanh:
      return T{1} - y * y;
    case Activation::kRelu:
      return y > T{0} ? T{1} : T{0};
    case Activation::kIdentity:
      return T{1};
  }
  return T{1};
}

}  // namespace

template <typename T>
JointNet<T> JointNet<T>::create(const JointConfig& config, std::size_t enc_dim, std::size_t dec_dim,
                                std::size_t vocab, Rng& rng) {
  JointNet j;
  j.variant = config.variant;
  j.activation = config.activation;
  if (config.variant == JointVariant::kAdditive) {
    require_dim("additive joint encoder-side logits", vocab, enc_dim);
    j.dec_map = glorot_init<T>(vocab, dec_dim, rng);
    j.dec_bias.assign(vocab, T{0});
  } else {
    j.w = glorot_init<T>(config.joint_dim, enc_dim, rng);
    j.v = glorot_init<T>(config.joint_dim, dec_dim, rng);
    j.out = glorot_init<T>(vocab, config.joint_dim, rng);
    j.out_bias.assign(vocab, T{0});
  }
  return j;
}

template <typename T>
JointNet<T> JointNet<T>::zeros_like() const {
  JointNet z;
  z.variant = variant;
  z.activation = activation;
  z.dec_map = Matrix<T>(dec_map.rows(), dec_map.cols());
  z.dec_bias.assign(dec_bias.size(), T{0});
  z.w = Matrix<T>(w.rows(), w.cols());
  z.v = Matrix<T>(v.rows(), v.cols());
  z.out = Matrix<T>(out.rows(), out.cols());
  z.out_bias.assign(out_bias.size(), T{0});
  return z;
}

template <typename T>
std::size_t JointNet<T>::vocab_size() const {
  return variant == JointVariant::kAdditive ? dec_bias.size() : out_bias.size();
}

template <typename T>
Vector<T> joint_logits(const JointNet<T>& joint, std::span<const T> h_enc, std::span<const T> h_dec,
                       JointTape<T>* tape) {
  Vector<T> logits;
  if (joint.variant == JointVariant::kAdditive) {
    require_dim("additive joint encoder logits", joint.dec_bias.size(), h_enc.size());
    logits = affine(joint.dec_map, h_dec, std::span<const T>(joint.dec_bias));
    add_into(std::span<T>(logits), h_enc);
  } else {
    Vector<T> hidden = matvec(joint.w, h_enc);
    matvec_accumulate(joint.v, h_dec, std::span<T>(hidden));
    for (T& x : hidden) x = activate(joint.activation, x);
    logits = affine(joint.out, std::span<const T>(hidden), std::span<const T>(joint.out_bias));
    if (tape != nullptr) tape->hidden = std::move(hidden);
  }
  if (tape != nullptr) {
    tape->h_enc.assign(h_enc.begin(), h_enc.end());
    tape->h_dec.assign(h_dec.begin(), h_dec.end());
  }
  return logits;
}

template <typename T>
JointGradients<T> joint_backward(const JointNet<T>& joint, const JointTape<T>& tape, std::span<const T> grad_logits,
                                 JointNet<T>& grads) {
  JointGradients<T> g{Vector<T>(tape.h_enc.size(), T{0}), Vector<T>(tape.h_dec.size(), T{0})};
  if (joint.variant == JointVariant::kAdditive) {
    require_dim("additive joint gradient", joint.dec_bias.size(), grad_logits.size());
    add_into(std::span<T>(g.h_enc), grad_logits);
    outer_accumulate(grads.dec_map, grad_logits, std::span<const T>(tape.h_dec));
    add_into(std::span<T>(grads.dec_bias), grad_logits);
    matvec_transposed_accumulate(joint.dec_map, grad_logits, std::span<T>(g.h_dec));
    return g;
  }
  require_dim("feedforward joint gradient", joint.out_bias.size(), grad_logits.size());
  outer_accumulate(grads.out, grad_logits, std::span<const T>(tape.hidden));
  add_into(std::span<T>(grads.out_bias), grad_logits);
  Vector<T> d_hidden(tape.hidden.size(), T{0});
  matvec_transposed_accumulate(joint.out, grad_logits, std::span<T>(d_hidden));
  for (std::size_t i = 0; i < d_hidden.size(); ++i) d_hidden[i] *= activate_grad(joint.activation, tape.hidden[i]);
  const std::span<const T> dh(d_hidden);
  outer_accumulate(grads.w, dh, std::span<const T>(tape.h_enc));
  outer_accumulate(grads.v, dh, std::span<const T>(tape.h_dec));
  matvec_transposed_accumulate(joint.w, dh, std::span<T>(g.h_enc));
  matvec_transposed_accumulate(joint.v, dh, std::span<T>(g.h_dec));
  return g;
}

// ---------------------------------------------------------------------------
// Lattice

template <typename T>
LatticeResult<T> transducer_lattice(std::span<const T> logits, std::size_t frames, std::span<const std::size_t> labels,
                                    const Vocab& vocab, bool with_gradients) {
  vocab.validate();
  vocab.check_labels(labels);
  if (frames == 0) throw std::invalid_argument("transducer loss: at least one frame required");
  const std::size_t n_labels = labels.size();
  const std::size_t width = n_labels + 1;
  const std::size_t v = vocab.size;
  require_dim("transducer lattice logits", frames * width * v, logits.size());

  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  std::vector<T> log_probs(logits.size());
  for (std::size_t cell = 0; cell < frames * width; ++cell) {
    auto lp = log_softmax(logits.subspan(cell * v, v));
    std::copy(lp.begin(), lp.end(), log_probs.begin() + static_cast<std::ptrdiff_t>(cell * v));
  }
  auto lp = [&](std::size_t t, std::size_t u, std::size_t k) { return log_probs[(t * width + u) * v + k]; };

  LatticeResult<T> r;
  r.frames = frames;
  r.labels = n_labels;
  r.vocab = v;
  r.log_alpha.assign(frames * width, kNegInf);
  r.log_beta.assign(frames * width, kNegInf);
  auto alpha = [&](std::size_t t, std::size_t u) -> T& { return r.log_alpha[t * width + u]; };
  auto beta = [&](std::size_t t, std::size_t u) -> T& { return r.log_beta[t * width + u]; };

  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t u = 0; u < width; ++u) {
      if (t == 0 && u == 0) {
        alpha(t, u) = T{0};
        continue;
      }
      T a = kNegInf;
      if (t > 0) a = alpha(t - 1, u) + lp(t - 1, u, vocab.blank);
      if (u > 0) a = log_sum_exp(a, alpha(t, u - 1) + lp(t, u - 1, labels[u - 1]));
      alpha(t, u) = a;
    }
  }
  const std::size_t last_t = frames - 1;
  r.log_likelihood_forward = alpha(last_t, n_labels) + lp(last_t, n_labels, vocab.blank);

  for (std::size_t t = frames; t-- > 0;) {
    for (std::size_t u = width; u-- > 0;) {
      if (t == last_t && u == n_labels) {
        beta(t, u) = lp(t, u, vocab.blank);
        continue;
      }
      T b = kNegInf;
      if (t < last_t) b = beta(t + 1, u) + lp(t, u, vocab.blank);
      if (u < n_labels) b = log_sum_exp(b, beta(t, u + 1) + lp(t, u, labels[u]));
      beta(t, u) = b;
    }
  }
  r.log_likelihood_backward = beta(0, 0);
  const T log_p = r.log_likelihood_forward;
  r.nll = -log_p;

  if (with_gradients) {
    r.grad_logits.assign(logits.size(), T{0});
    std::vector<T> d_lp(v);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t u = 0; u < width; ++u) {
        std::fill(d_lp.begin(), d_lp.end(), T{0});
        const T a = alpha(t, u);
        if (t < last_t)
          d_lp[vocab.blank] = -std::exp(a + lp(t, u, vocab.blank) + beta(t + 1, u) - log_p);
        else if (u == n_labels)
          d_lp[vocab.blank] = -std::exp(a + lp(t, u, vocab.blank) - log_p);
        if (u < n_labels) d_lp[labels[u]] += -std::exp(a + lp(t, u, labels[u]) + beta(t, u + 1) - log_p);
        T sum{0};
        for (T d : d_lp) sum += d;
        T* g = r.grad_logits.data() + (t * width + u) * v;
        for (std::size_t k = 0; k < v; ++k) g[k] = d_lp[k] - std::exp(lp(t, u, k)) * sum;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
TransducerModel<T> TransducerModel<T>::create(const TransducerConfig& config, Rng& rng) {
  config.validate();
  TransducerModel m;
  m.config = config;
  m.encoder = EncoderParams<T>::create(config.encoder, rng);
  m.prediction = PredictionNet<T>::create(config.prediction, config.vocab.size, rng);
  m.joint = JointNet<T>::create(config.joint, config.encoder.output_dim, config.prediction.output_dim(),
                                config.vocab.size, rng);
  return m;
}

template <typename T>
TransducerModel<T> TransducerModel<T>::zeros_like() const {
  TransducerModel z;
  z.config = config;
  z.encoder = encoder.zeros_like();
  z.prediction = prediction.zeros_like();
  z.joint = joint.zeros_like();
  return z;
}

template <typename T>
T transducer_loss_from_encoder(const TransducerModel<T>& model, std::span<const Vector<T>> enc,
                               std::span<const std::size_t> labels, TransducerModel<T>* grads,
                               std::vector<Vector<T>>* grad_enc) {
  const Vocab& vocab = model.config.vocab;
  vocab.check_labels(labels);
  if (enc.empty()) throw std::invalid_argument("transducer loss: at least one frame required");
  const std::size_t frames = enc.size();
  const std::size_t width = labels.size() + 1;
  const std::size_t v = vocab.size;
  const bool backprop = grads != nullptr;

  std::vector<std::vector<StepTape<T>>> pred_tapes;
  const auto dec = predict_states(model.prediction, labels, backprop ? &pred_tapes : nullptr);

  std::vector<T> logits(frames * width * v);
  std::vector<JointTape<T>> joint_tapes(backprop ? frames * width : 0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t u = 0; u < width; ++u) {
      auto l = joint_logits(model.joint, std::span<const T>(enc[t]), std::span<const T>(dec[u]),
                            backprop ? &joint_tapes[t * width + u] : nullptr);
      std::copy(l.begin(), l.end(), logits.begin() + static_cast<std::ptrdiff_t>((t * width + u) * v));
    }

  auto lattice = transducer_lattice(std::span<const T>(logits), frames, labels, vocab, backprop);
  if (!backprop) return lattice.nll;

  std::vector<Vector<T>> g_enc(frames, Vector<T>(model.config.encoder.output_dim, T{0}));
  std::vector<Vector<T>> g_dec(width, Vector<T>(model.prediction.output_dim(), T{0}));
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t u = 0; u < width; ++u) {
      const std::span<const T> gl(lattice.grad_logits.data() + (t * width + u) * v, v);
      auto jg = joint_backward(model.joint, joint_tapes[t * width + u], gl, grads->joint);
      add_into(std::span<T>(g_enc[t]), std::span<const T>(jg.h_enc));
      add_into(std::span<T>(g_dec[u]), std::span<const T>(jg.h_dec));
    }
  predict_states_backward(model.prediction, labels, pred_tapes, std::span<const Vector<T>>(g_dec), grads->prediction);
  if (grad_enc != nullptr) *grad_enc = std::move(g_enc);
  return lattice.nll;
}

template <typename T>
T transducer_loss(const TransducerModel<T>& model, std::span<const Vector<T>> frames,
                  std::span<const std::size_t> z, std::span<const std::size_t> labels, TransducerModel<T>* grads) {
  if (frames.empty()) throw std::invalid_argument("transducer loss: at least one frame required");
  if (grads == nullptr) {
    auto enc = encode_lazy(model.encoder, frames, z);
    return transducer_loss_from_encoder<T>(model, enc.frames, labels, nullptr, nullptr);
  }
  EncoderTape<T> tape;
  auto enc = encode_eager(model.encoder, frames, z, &tape);
  std::vector<Vector<T>> grad_enc;
  const T nll = transducer_loss_from_encoder<T>(model, enc.frames, labels, grads, &grad_enc);
  encode_eager_backward(model.encoder, tape, std::span<const Vector<T>>(grad_enc), grads->encoder);
  return nll;
}

#define BIFOCAL_INSTANTIATE(T)                                                                                  \
  template struct PredictionNet<T>;                                                                             \
  template struct JointNet<T>;                                                                                  \
  template struct TransducerModel<T>;                                                                           \
  template PredictionState<T> prediction_start(const PredictionNet<T>&);                                        \
  template PredictionState<T> prediction_advance(const PredictionNet<T>&, const PredictionState<T>&,            \
                                                 std::size_t, std::vector<StepTape<T>>*);                       \
  template std::vector<Vector<T>> predict_states(const PredictionNet<T>&, std::span<const std::size_t>,         \
                                                 std::vector<std::vector<StepTape<T>>>*);                       \
  template void predict_states_backward(const PredictionNet<T>&, std::span<const std::size_t>,                  \
                                        const std::vector<std::vector<StepTape<T>>>&,                           \
                                        std::span<const Vector<T>>, PredictionNet<T>&);                         \
  template Vector<T> joint_logits(const JointNet<T>&, std::span<const T>, std::span<const T>, JointTape<T>*);   \
  template JointGradients<T> joint_backward(const JointNet<T>&, const JointTape<T>&, std::span<const T>,        \
                                            JointNet<T>&);                                                      \
  template LatticeResult<T> transducer_lattice(std::span<const T>, std::size_t, std::span<const std::size_t>,   \
                                               const Vocab&, bool);                                             \
  template T transducer_loss_from_encoder(const TransducerModel<T>&, std::span<const Vector<T>>,                \
                                          std::span<const std::size_t>, TransducerModel<T>*,                    \
                                          std::vector<Vector<T>>*);                                             \
  template T transducer_loss(const TransducerModel<T>&, std::span<const Vector<T>>,                             \
                             std::span<const std::size_t>, std::span<const std::size_t>, TransducerModel<T>*);

BIFOCAL_INSTANTIATE(float)
BIFOCAL_INSTANTIATE(double)
#undef BIFOCAL_INSTANTIATE

}  // namespace bifocal
