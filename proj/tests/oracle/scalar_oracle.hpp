// Independent scalar-loop reference implementations.
//
// Plain double loops over the library's parameter containers, written from
// the model equations and sharing no code with core/ beyond reading the
// weights. Used by the oracle tests and the acceptance gate.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "bifocal/bifocal_cell.hpp"
#include "bifocal/encoder.hpp"
#include "bifocal/recurrent.hpp"
#include "bifocal/transducer.hpp"

namespace oracle {

using Vec = std::vector<double>;

struct State {
  Vec c;
  Vec h;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename M>
double row_dot(const M& m, std::size_t r, const Vec& x) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(m(r, i)) * x[i];
  return s;
}

template <typename T>
State lstm(const bifocal::LstmParams<T>& p, const Vec& x, const State& prev) {
  const std::size_t n = p.hidden_dim;
  State s{Vec(n), Vec(n)};
  for (std::size_t j = 0; j < n; ++j) {
    const double f = logistic(p.b_f[j] + row_dot(p.w_f, j, x) + row_dot(p.u_f, j, prev.h));
    const double i = logistic(p.b_i[j] + row_dot(p.w_i, j, x) + row_dot(p.u_i, j, prev.h));
    const double o = logistic(p.b_o[j] + row_dot(p.w_o, j, x) + row_dot(p.u_o, j, prev.h));
    const double g = std::tanh(p.b_c[j] + row_dot(p.w_c, j, x) + row_dot(p.u_c, j, prev.h));
    s.c[j] = f * prev.c[j] + i * g;
    s.h[j] = o * (p.output == bifocal::CellOutput::kTanh ? std::tanh(s.c[j]) : logistic(s.c[j]));
  }
  return s;
}

inline State zeros(std::size_t n) { return {Vec(n, 0.0), Vec(n, 0.0)}; }

template <typename M>
Vec matmul(const M& m, const Vec& x) {
  Vec y(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] = row_dot(m, r, x);
  return y;
}

/// Eager switching cell: every branch steps, then inactive branches are
/// overwritten from the active one (projection, or zero when absent).
/// Returns the per-branch states after every frame.
template <typename T>
std::vector<std::vector<State>> bifocal_eager(const bifocal::BifocalCellParams<T>& p,
                                              const std::vector<std::vector<Vec>>& inputs,
                                              const std::vector<std::size_t>& z) {
  const std::size_t k = p.branches.size();
  std::vector<State> s;
  for (const auto& b : p.branches) s.push_back(zeros(b.hidden_dim));
  std::vector<std::vector<State>> out;
  for (std::size_t t = 0; t < z.size(); ++t) {
    for (std::size_t b = 0; b < k; ++b) s[b] = lstm(p.branches[b], inputs[t][b], s[b]);
    const std::size_t a = z[t];
    for (std::size_t b = 0; b < k; ++b) {
      if (b == a) continue;
      const auto it = p.projections.find({a, b});
      if (p.switch_init == bifocal::SwitchInit::kProjection && it != p.projections.end())
        s[b] = {matmul(it->second.cell, s[a].c), matmul(it->second.hidden, s[a].h)};
      else
        s[b] = zeros(p.branches[b].hidden_dim);
    }
    out.push_back(s);
  }
  return out;
}

/// Stacked eager encoder; returns the forwarded (output-mapped) frame per t.
template <typename T>
std::vector<Vec> encoder(const bifocal::EncoderParams<T>& p, const std::vector<Vec>& frames,
                         const std::vector<std::size_t>& z) {
  const std::size_t k = p.config.num_branches();
  std::vector<std::vector<Vec>> inputs(frames.size(), std::vector<Vec>(k));
  for (std::size_t t = 0; t < frames.size(); ++t)
    for (std::size_t b = 0; b < k; ++b) inputs[t][b] = frames[t];
  for (const auto& layer : p.layers) {
    const auto states = bifocal_eager(layer, inputs, z);
    for (std::size_t t = 0; t < frames.size(); ++t)
      for (std::size_t b = 0; b < k; ++b) inputs[t][b] = states[t][b].h;
  }
  std::vector<Vec> out;
  for (std::size_t t = 0; t < frames.size(); ++t) out.push_back(matmul(p.output_maps[z[t]], inputs[t][z[t]]));
  return out;
}

/// Decoder outputs for the empty history and after each label.
template <typename T>
std::vector<Vec> prediction(const bifocal::PredictionNet<T>& net, const std::vector<std::size_t>& labels) {
  std::vector<State> s;
  for (const auto& l : net.layers) s.push_back(zeros(l.hidden_dim));
  std::vector<Vec> out{Vec(net.layers.back().hidden_dim, 0.0)};
  for (std::size_t y : labels) {
    Vec x(net.embedding.rows());
    for (std::size_t r = 0; r < x.size(); ++r) x[r] = net.embedding(r, y);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      s[l] = lstm(net.layers[l], x, s[l]);
      x = s[l].h;
    }
    out.push_back(x);
  }
  return out;
}

template <typename T>
Vec joint(const bifocal::JointNet<T>& j, const Vec& h_enc, const Vec& h_dec) {
  if (j.variant == bifocal::JointVariant::kAdditive) {
    Vec y = matmul(j.dec_map, h_dec);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += h_enc[k] + j.dec_bias[k];
    return y;
  }
  Vec a = matmul(j.w, h_enc);
  const Vec b = matmul(j.v, h_dec);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] + b[i];
    switch (j.activation) {
      case bifocal::Activation::kTanh: a[i] = std::tanh(x); break;
      case bifocal::Activation::kRelu: a[i] = x > 0 ? x : 0.0; break;
      case bifocal::Activation::kIdentity: a[i] = x; break;
    }
  }
  Vec y = matmul(j.out, a);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += j.out_bias[k];
  return y;
}

inline Vec log_probs(const double* logits, std::size_t vocab) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < vocab; ++k) m = std::max(m, logits[k]);
  double s = 0;
  for (std::size_t k = 0; k < vocab; ++k) s += std::exp(logits[k] - m);
  Vec out(vocab);
  for (std::size_t k = 0; k < vocab; ++k) out[k] = logits[k] - m - std::log(s);
  return out;
}

/// Walks every alignment explicitly: from (t, u) either emit label u+1 and
/// stay on frame t, or emit blank and move to frame t+1. A path ends with the
/// blank on the last frame after all labels. Logits are [t][u][k].
inline double brute_force_nll(const std::vector<double>& logits, std::size_t frames,
                              const std::vector<std::size_t>& labels, std::size_t vocab, std::size_t blank,
                              std::size_t* path_count = nullptr) {
  const std::size_t u_max = labels.size();
  std::vector<double> path_scores;
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t t, std::size_t u, double score) {
    const Vec lp = log_probs(&logits[(t * (u_max + 1) + u) * vocab], vocab);
    if (u < u_max) walk(t, u + 1, score + lp[labels[u]]);
    if (t + 1 < frames) walk(t + 1, u, score + lp[blank]);
    else if (u == u_max) path_scores.push_back(score + lp[blank]);
  };
  walk(0, 0, 0.0);
  if (path_count) *path_count = path_scores.size();
  double m = -std::numeric_limits<double>::infinity();
  for (double s : path_scores) m = std::max(m, s);
  double sum = 0;
  for (double s : path_scores) sum += std::exp(s - m);
  return -(m + std::log(sum));
}

/// n choose k, for counting alignments.
inline std::size_t choose(std::size_t n, std::size_t k) {
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace oracle
