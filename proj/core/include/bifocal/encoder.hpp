// SPDX-License-Identifier: Apache-2.0
//
// Transcription network: stacked bifocal layers with a per-branch output map
// onto a shared output dimension. The switch signal selects which branch's
// mapped output is forwarded for each frame.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "bifocal/bifocal_cell.hpp"
#include "bifocal/numerics.hpp"

namespace bifocal {

struct EncoderConfig {
  std::size_t feature_dim = 0;
  std::size_t num_layers = 1;
  /// Hidden width of each branch; every layer of a branch has this width.
  std::vector<std::size_t> branch_hidden;
  std::size_t output_dim = 0;
  /// Directed state projections instantiated in every layer.
  std::vector<Transition> transitions;
  SwitchInit switch_init = SwitchInit::kProjection;

  std::size_t num_branches() const noexcept { return branch_hidden.size(); }
  std::size_t layer_input_dim(std::size_t layer, std::size_t branch) const {
    return layer == 0 ? feature_dim : branch_hidden.at(branch);
  }
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  std::vector<BifocalCellParams<T>> layers;
  /// Per-branch output map, output_dim x branch_hidden (no bias).
  std::vector<Matrix<T>> output_maps;

  static EncoderParams create(const EncoderConfig& config, Rng& rng);
  EncoderParams zeros_like() const;
  void validate() const;

  std::vector<TensorRef<T>> tensors() { return collect(*this); }
  std::vector<TensorRef<const T>> tensors() const { return collect(*this); }

 private:
  template <typename Self>
  static auto collect(Self& p) {
    using Ref = decltype(tensor_ref("", p.output_maps.front()));
    std::vector<Ref> out;
    for (std::size_t l = 0; l < p.layers.size(); ++l) append(out, p.layers[l].tensors(), "layer" + std::to_string(l) + ".");
    for (std::size_t k = 0; k < p.output_maps.size(); ++k)
      out.push_back(tensor_ref("output_map" + std::to_string(k), p.output_maps[k]));
    return out;
  }
};

template <typename T>
struct EncoderOutput {
  std::vector<Vector<T>> frames;     // forwarded output per frame
  std::vector<std::size_t> active;   // branch that produced each frame
};

template <typename T>
struct EncoderTape {
  std::vector<EagerTrace<T>> layers;
  std::vector<std::size_t> z;
};

/// Per-layer lazy-execution counters plus output-map applications per branch.
struct EncoderCounters {
  std::vector<SwitchCounters> layers;
  std::vector<std::size_t> output_maps;

  std::size_t total_projections() const;
  friend bool operator==(const EncoderCounters&, const EncoderCounters&) = default;
};

/// Training-mode pass: every branch of every layer runs on every frame.
template <typename T>
EncoderOutput<T> encode_eager(const EncoderParams<T>& params, std::span<const Vector<T>> frames,
                              std::span<const std::size_t> z, EncoderTape<T>* tape = nullptr);

/// Backward of encode_eager. grad_out[t] is dL/d(forwarded output t).
/// Returns dL/dframes; parameter gradients accumulate into `grads`.
template <typename T>
std::vector<Vector<T>> encode_eager_backward(const EncoderParams<T>& params, const EncoderTape<T>& tape,
                                             std::span<const Vector<T>> grad_out, EncoderParams<T>& grads);

/// Frame-synchronous inference: one sub-cell per layer per frame, with
/// projections only where the selected branch changes.
template <typename T>
class EncoderStream {
 public:
  explicit EncoderStream(const EncoderParams<T>& params, EncoderCounters* counters = nullptr);

  Vector<T> push(std::span<const T> frame, std::size_t branch);
  std::size_t frames_seen() const noexcept { return frames_seen_; }

 private:
  const EncoderParams<T>* params_;
  EncoderCounters* counters_;
  std::vector<LstmState<T>> carried_;
  std::optional<std::size_t> previous_;
  std::size_t frames_seen_ = 0;
};

template <typename T>
EncoderOutput<T> encode_lazy(const EncoderParams<T>& params, std::span<const Vector<T>> frames,
                             std::span<const std::size_t> z, EncoderCounters* counters = nullptr);

/// Concatenates `stack` consecutive frames every `stride` frames.
template <typename T>
std::vector<Vector<T>> stack_frames(std::span<const Vector<T>> frames, std::size_t stack = 3, std::size_t stride = 2);

}  // namespace bifocal
