// SPDX-License-Identifier: Apache-2.0
//
// RNN-T assembly: prediction network over label history, joint network, the
// alignment-lattice loss, and greedy / beam decoding.
//
// Lattice convention (frames t = 1..T, emitted labels u = 0..U):
//   alpha(1, 0) = 1
//   alpha(t, u) = alpha(t-1, u) P(blank | t-1, u) + alpha(t, u-1) P(y_u | t, u-1)
//   P(y | x)    = alpha(T, U) P(blank | T, U)
// Every alignment consumes all T frames with blanks and ends with the blank
// at (T, U). All quantities are kept in log space.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bifocal/encoder.hpp"
#include "bifocal/numerics.hpp"
#include "bifocal/recurrent.hpp"

namespace bifocal {

/// Label ids are 0..size-1; `blank` is reserved and never a target.
struct Vocab {
  std::size_t size = 0;
  std::size_t blank = 0;

  bool is_label(std::size_t id) const noexcept { return id < size && id != blank; }
  void validate() const;
  friend bool operator==(const Vocab&, const Vocab&) = default;
  void check_labels(std::span<const std::size_t> labels) const;
};

class InvalidLabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Prediction network

struct PredictionConfig {
  std::size_t embed_dim = 0;
  std::vector<std::size_t> hidden;  // LSTM widths, bottom to top

  std::size_t output_dim() const { return hidden.empty() ? 0 : hidden.back(); }
  void validate() const;
  friend bool operator==(const PredictionConfig&, const PredictionConfig&) = default;
};

template <typename T>
struct PredictionNet {
  Matrix<T> embedding;  // embed_dim x vocab_size, one column per label
  std::vector<LstmParams<T>> layers;

  static PredictionNet create(const PredictionConfig& config, std::size_t vocab_size, Rng& rng);
  PredictionNet zeros_like() const;
  std::size_t output_dim() const { return layers.back().hidden_dim; }

  std::vector<TensorRef<T>> tensors() { return collect(*this); }
  std::vector<TensorRef<const T>> tensors() const { return collect(*this); }

 private:
  template <typename Self>
  static auto collect(Self& p) {
    std::vector<decltype(tensor_ref("", p.embedding))> out;
    out.push_back(tensor_ref("embedding", p.embedding));
    for (std::size_t l = 0; l < p.layers.size(); ++l) append(out, p.layers[l].tensors(), "lstm" + std::to_string(l) + ".");
    return out;
  }
};

/// Recurrent state after consuming a label history; the empty history is the
/// all-zero state whose output is the zero vector.
template <typename T>
struct PredictionState {
  std::vector<LstmState<T>> layers;

  const Vector<T>& output() const { return layers.back().h; }
};

template <typename T>
PredictionState<T> prediction_start(const PredictionNet<T>& net);

/// Consumes one label. `tapes`, when given, receives one tape per layer.
template <typename T>
PredictionState<T> prediction_advance(const PredictionNet<T>& net, const PredictionState<T>& state,
                                      std::size_t label, std::vector<StepTape<T>>* tapes = nullptr);

/// h_dec_0 .. h_dec_U for a label sequence (h_dec_0 is the empty history).
template <typename T>
std::vector<Vector<T>> predict_states(const PredictionNet<T>& net, std::span<const std::size_t> labels,
                                      std::vector<std::vector<StepTape<T>>>* tapes = nullptr);

/// Backward of predict_states; grad_outputs has U+1 entries (the first is
/// ignored, the empty-history output does not depend on parameters).
template <typename T>
void predict_states_backward(const PredictionNet<T>& net, std::span<const std::size_t> labels,
                             const std::vector<std::vector<StepTape<T>>>& tapes,
                             std::span<const Vector<T>> grad_outputs, PredictionNet<T>& grads);

// ---------------------------------------------------------------------------
// Joint network

enum class JointVariant {
  kAdditive,     // enc_logits + (V_dec h_dec + b)
  kFeedforward,  // O psi(W h_enc + V h_dec) + b
};

enum class Activation { kTanh, kRelu, kIdentity };

struct JointConfig {
  JointVariant variant = JointVariant::kFeedforward;
  std::size_t joint_dim = 0;  // feedforward only
  Activation activation = Activation::kTanh;
  friend bool operator==(const JointConfig&, const JointConfig&) = default;
};

template <typename T>
struct JointNet {
  JointVariant variant = JointVariant::kFeedforward;
  Activation activation = Activation::kTanh;
  // Additive: decoder-side logit map.
  Matrix<T> dec_map;   // vocab x dec_dim
  Vector<T> dec_bias;  // vocab
  // Feedforward.
  Matrix<T> w;         // joint x enc_dim
  Matrix<T> v;         // joint x dec_dim
  Matrix<T> out;       // vocab x joint
  Vector<T> out_bias;  // vocab

  static JointNet create(const JointConfig& config, std::size_t enc_dim, std::size_t dec_dim, std::size_t vocab,
                         Rng& rng);
  JointNet zeros_like() const;
  std::size_t vocab_size() const;

  std::vector<TensorRef<T>> tensors() { return collect(*this); }
  std::vector<TensorRef<const T>> tensors() const { return collect(*this); }

 private:
  template <typename Self>
  static auto collect(Self& j) {
    std::vector<decltype(tensor_ref("", j.w))> refs;
    if (j.variant == JointVariant::kAdditive) {
      refs.push_back(tensor_ref("dec_map", j.dec_map));
      refs.push_back(tensor_ref("dec_bias", j.dec_bias));
    } else {
      refs.push_back(tensor_ref("W", j.w));
      refs.push_back(tensor_ref("V", j.v));
      refs.push_back(tensor_ref("out", j.out));
      refs.push_back(tensor_ref("out_bias", j.out_bias));
    }
    return refs;
  }
};

template <typename T>
struct JointTape {
  Vector<T> h_enc;
  Vector<T> h_dec;
  Vector<T> hidden;  // psi output (feedforward)
};

template <typename T>
Vector<T> joint_logits(const JointNet<T>& joint, std::span<const T> h_enc, std::span<const T> h_dec,
                       JointTape<T>* tape = nullptr);

template <typename T>
struct JointGradients {
  Vector<T> h_enc;
  Vector<T> h_dec;
};

template <typename T>
JointGradients<T> joint_backward(const JointNet<T>& joint, const JointTape<T>& tape, std::span<const T> grad_logits,
                                 JointNet<T>& grads);

// ---------------------------------------------------------------------------
// Alignment lattice

template <typename T>
struct LatticeResult {
  std::size_t frames = 0;
  std::size_t labels = 0;
  std::size_t vocab = 0;
  T nll{};
  T log_likelihood_forward{};   // log alpha(T, U) + log P(blank | T, U)
  T log_likelihood_backward{};  // log beta(1, 0)
  std::vector<T> log_alpha;     // frames x (labels + 1)
  std::vector<T> log_beta;      // frames x (labels + 1)
  std::vector<T> grad_logits;   // frames x (labels + 1) x vocab, dNLL/dlogits

  T alpha(std::size_t t, std::size_t u) const { return log_alpha[t * (labels + 1) + u]; }
  T beta(std::size_t t, std::size_t u) const { return log_beta[t * (labels + 1) + u]; }
};

/// Transducer NLL from raw joint logits laid out [t][u][k].
template <typename T>
LatticeResult<T> transducer_lattice(std::span<const T> logits, std::size_t frames, std::span<const std::size_t> labels,
                                    const Vocab& vocab, bool with_gradients = true);

// ---------------------------------------------------------------------------
// Model

struct TransducerConfig {
  EncoderConfig encoder;
  PredictionConfig prediction;
  JointConfig joint;
  Vocab vocab;

  void validate() const;
  friend bool operator==(const TransducerConfig&, const TransducerConfig&) = default;
};

template <typename T>
struct TransducerModel {
  TransducerConfig config;
  EncoderParams<T> encoder;
  PredictionNet<T> prediction;
  JointNet<T> joint;

  static TransducerModel create(const TransducerConfig& config, Rng& rng);
  TransducerModel zeros_like() const;

  std::vector<TensorRef<T>> tensors() { return collect(*this); }
  std::vector<TensorRef<const T>> tensors() const { return collect(*this); }

 private:
  template <typename Self>
  static auto collect(Self& m) {
    auto out = m.encoder.tensors();
    prefix_names(out, "encoder.");
    append(out, m.prediction.tensors(), "prediction.");
    append(out, m.joint.tensors(), "joint.");
    return out;
  }
};

/// Negative log-likelihood of `labels` given `frames`. When `grads` is
/// non-null the encoder runs in eager mode and all parameter gradients are
/// accumulated into it; otherwise the encoder runs lazily.
template <typename T>
T transducer_loss(const TransducerModel<T>& model, std::span<const Vector<T>> frames,
                  std::span<const std::size_t> z, std::span<const std::size_t> labels,
                  TransducerModel<T>* grads = nullptr);

/// Loss from precomputed encoder outputs; gradients w.r.t. them are written
/// to `grad_enc` when non-null (prediction / joint grads go to `grads`).
template <typename T>
T transducer_loss_from_encoder(const TransducerModel<T>& model, std::span<const Vector<T>> enc,
                               std::span<const std::size_t> labels, TransducerModel<T>* grads,
                               std::vector<Vector<T>>* grad_enc);

// ---------------------------------------------------------------------------
// Decoding

template <typename T>
struct Hypothesis {
  std::vector<std::size_t> labels;
  T score{};  // log probability
};

/// Merges hypotheses with identical label histories (log-sum-exp of scores)
/// and returns them sorted by descending score.
template <typename T>
std::vector<Hypothesis<T>> merge_hypotheses(std::vector<Hypothesis<T>> hyps);

inline constexpr std::size_t kDefaultMaxSymbolsPerFrame = 5;

/// Per frame, emits argmax labels until blank or the per-frame cap. The score
/// sums the log probabilities of the chosen symbols; a frame ended by the cap
/// advances without a blank.
template <typename T>
Hypothesis<T> greedy_decode(const TransducerModel<T>& model, std::span<const Vector<T>> frames,
                            std::span<const std::size_t> z, std::size_t max_symbols_per_frame = kDefaultMaxSymbolsPerFrame);

/// Frame-synchronous beam search returning the final beam sorted by score.
/// Within a frame, finished (blank-terminated) and still-emitting hypotheses
/// compete for the same `beam_size` slots; finished hypotheses with identical
/// histories are merged. With beam_size = 1 this reduces to greedy_decode.
template <typename T>
std::vector<Hypothesis<T>> beam_decode(const TransducerModel<T>& model, std::span<const Vector<T>> frames,
                                       std::span<const std::size_t> z, std::size_t beam_size,
                                       std::size_t max_symbols_per_frame = kDefaultMaxSymbolsPerFrame);

/// Same searches over precomputed encoder outputs.
template <typename T>
Hypothesis<T> greedy_decode_encoded(const TransducerModel<T>& model, std::span<const Vector<T>> enc,
                                    std::size_t max_symbols_per_frame = kDefaultMaxSymbolsPerFrame);
template <typename T>
std::vector<Hypothesis<T>> beam_decode_encoded(const TransducerModel<T>& model, std::span<const Vector<T>> enc,
                                               std::size_t beam_size,
                                               std::size_t max_symbols_per_frame = kDefaultMaxSymbolsPerFrame);

}  // namespace bifocal
