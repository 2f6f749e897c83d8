// SPDX-License-Identifier: Apache-2.0
//
// Greedy and beam search over the transducer output lattice.
//
// Both searches rank symbols in the same fixed order (blank first, then label
// ids ascending) and break score ties by that order, which is what makes a
// beam of width one reproduce greedy decoding exactly.

#include <algorithm>
#include <map>
#include <stdexcept>

#include "bifocal/transducer.hpp"

namespace bifocal {

namespace {

template <typename T>
class PredictionCache {
 public:
  explicit PredictionCache(const PredictionNet<T>& net) : net_(net) {
    states_.emplace(std::vector<std::size_t>{}, prediction_start(net));
  }

  /// Output for a history whose every proper prefix has been requested before
  /// (always true for histories grown one label at a time).
  const Vector<T>& output(const std::vector<std::size_t>& history) { return state(history).output(); }

 private:
  const PredictionState<T>& state(const std::vector<std::size_t>& history) {
    auto it = states_.find(history);
    if (it != states_.end()) return it->second;
    std::vector<std::size_t> parent(history.begin(), history.end() - 1);
    PredictionState<T> next = prediction_advance(net_, state(parent), history.back());
    return states_.emplace(history, std::move(next)).first->second;
  }

  const PredictionNet<T>& net_;
  std::map<std::vector<std::size_t>, PredictionState<T>> states_;
};

template <typename T>
Vector<T> symbol_log_probs(const TransducerModel<T>& model, std::span<const T> enc, std::span<const T> dec) {
  auto logits = joint_logits(model.joint, enc, dec);
  return log_softmax(std::span<const T>(logits));
}

// Merges entries with equal label histories in place, keeping the position of
// the first occurrence.
template <typename T>
void merge_in_place(std::vector<Hypothesis<T>>& hyps) {
  std::map<std::vector<std::size_t>, std::size_t> first;
  std::vector<Hypothesis<T>> merged;
  merged.reserve(hyps.size());
  for (auto& h : hyps) {
    auto [it, inserted] = first.emplace(h.labels, merged.size());
    if (inserted) {
      merged.push_back(std::move(h));
    } else {
      auto& target = merged[it->second];
      target.score = log_sum_exp(target.score, h.score);
    }
  }
  hyps = std::move(merged);
}

template <typename T>
void sort_by_score(std::vector<Hypothesis<T>>& hyps) {
  std::stable_sort(hyps.begin(), hyps.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
}

}  // namespace

template <typename T>
std::vector<Hypothesis<T>> merge_hypotheses(std::vector<Hypothesis<T>> hyps) {
  merge_in_place(hyps);
  sort_by_score(hyps);
  return hyps;
}

template <typename T>
Hypothesis<T> greedy_decode_encoded(const TransducerModel<T>& model, std::span<const Vector<T>> enc,
                                    std::size_t max_symbols_per_frame) {
  if (max_symbols_per_frame == 0) throw std::invalid_argument("greedy_decode: max_symbols_per_frame must be >= 1");
  const Vocab& vocab = model.config.vocab;
  Hypothesis<T> hyp;
  PredictionState<T> state = prediction_start(model.prediction);
  for (const auto& frame : enc) {
    for (std::size_t s = 0; s < max_symbols_per_frame; ++s) {
      const auto lp = symbol_log_probs(model, std::span<const T>(frame), std::span<const T>(state.output()));
      std::size_t best = vocab.blank;
      for (std::size_t k = 0; k < vocab.size; ++k)
        if (k != vocab.blank && lp[k] > lp[best]) best = k;
      hyp.score += lp[best];
      if (best == vocab.blank) break;
      hyp.labels.push_back(best);
      state = prediction_advance(model.prediction, state, best);
    }
  }
  return hyp;
}

template <typename T>
std::vector<Hypothesis<T>> beam_decode_encoded(const TransducerModel<T>& model, std::span<const Vector<T>> enc,
                                               std::size_t beam_size, std::size_t max_symbols_per_frame) {
  if (beam_size == 0) throw std::invalid_argument("beam_decode: beam_size must be >= 1");
  if (max_symbols_per_frame == 0) throw std::invalid_argument("beam_decode: max_symbols_per_frame must be >= 1");
  const Vocab& vocab = model.config.vocab;
  PredictionCache<T> cache(model.prediction);

  std::vector<Hypothesis<T>> beam{Hypothesis<T>{}};
  for (const auto& frame : enc) {
    std::vector<Hypothesis<T>> finished;
    std::vector<Hypothesis<T>> active = std::move(beam);
    for (std::size_t s = 0; s < max_symbols_per_frame && !active.empty(); ++s) {
      struct Candidate {
        Hypothesis<T> hyp;
        bool finished;
      };
      std::vector<Candidate> pool;
      for (auto& f : finished) pool.push_back({std::move(f), true});
      std::vector<Hypothesis<T>> extended;
      for (const auto& h : active) {
        const auto lp = symbol_log_probs(model, std::span<const T>(frame), std::span<const T>(cache.output(h.labels)));
        pool.push_back({Hypothesis<T>{h.labels, h.score + lp[vocab.blank]}, true});
        for (std::size_t k = 0; k < vocab.size; ++k) {
          if (k == vocab.blank) continue;
          Hypothesis<T> next{h.labels, h.score + lp[k]};
          next.labels.push_back(k);
          pool.push_back({std::move(next), false});
        }
      }
      // Merge equal histories within each class, preserving candidate order.
      std::map<std::pair<bool, std::vector<std::size_t>>, std::size_t> index;
      std::vector<Candidate> merged;
      for (auto& c : pool) {
        auto [it, inserted] = index.emplace(std::make_pair(c.finished, c.hyp.labels), merged.size());
        if (inserted)
          merged.push_back(std::move(c));
        else
          merged[it->second].hyp.score = log_sum_exp(merged[it->second].hyp.score, c.hyp.score);
      }
      std::stable_sort(merged.begin(), merged.end(),
                       [](const Candidate& a, const Candidate& b) { return a.hyp.score > b.hyp.score; });
      if (merged.size() > beam_size) merged.resize(beam_size);
      finished.clear();
      active.clear();
      for (auto& c : merged) (c.finished ? finished : active).push_back(std::move(c.hyp));
    }
    // Hypotheses still emitting when the cap is hit advance without a blank.
    for (auto& h : active) finished.push_back(std::move(h));
    merge_in_place(finished);
    sort_by_score(finished);
    if (finished.size() > beam_size) finished.resize(beam_size);
    beam = std::move(finished);
  }
  return beam;
}

template <typename T>
Hypothesis<T> greedy_decode(const TransducerModel<T>& model, std::span<const Vector<T>> frames,
                            std::span<const std::size_t> z, std::size_t max_symbols_per_frame) {
  const auto enc = encode_lazy(model.encoder, frames, z);
  return greedy_decode_encoded<T>(model, enc.frames, max_symbols_per_frame);
}

template <typename T>
std::vector<Hypothesis<T>> beam_decode(const TransducerModel<T>& model, std::span<const Vector<T>> frames,
                                       std::span<const std::size_t> z, std::size_t beam_size,
                                       std::size_t max_symbols_per_frame) {
  const auto enc = encode_lazy(model.encoder, frames, z);
  return beam_decode_encoded<T>(model, enc.frames, beam_size, max_symbols_per_frame);
}

#define BIFOCAL_INSTANTIATE(T)                                                                                \
  template std::vector<Hypothesis<T>> merge_hypotheses(std::vector<Hypothesis<T>>);                           \
  template Hypothesis<T> greedy_decode_encoded(const TransducerModel<T>&, std::span<const Vector<T>>,         \
                                               std::size_t);                                                  \
  template std::vector<Hypothesis<T>> beam_decode_encoded(const TransducerModel<T>&,                          \
                                                          std::span<const Vector<T>>, std::size_t,            \
                                                          std::size_t);                                       \
  template Hypothesis<T> greedy_decode(const TransducerModel<T>&, std::span<const Vector<T>>,                 \
                                       std::span<const std::size_t>, std::size_t);                            \
  template std::vector<Hypothesis<T>> beam_decode(const TransducerModel<T>&, std::span<const Vector<T>>,      \
                                                  std::span<const std::size_t>, std::size_t, std::size_t);

BIFOCAL_INSTANTIATE(float)
BIFOCAL_INSTANTIATE(double)
#undef BIFOCAL_INSTANTIATE

}  // namespace bifocal
