// SPDX-License-Identifier: Apache-2.0

#include "bifocal/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "bifocal/encoder.hpp"
#include "bifocal/schedule.hpp"
#include "bifocal/transducer.hpp"

namespace bifocal {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

void check_tensors(GradCheckResult& result, const std::function<double()>& loss,
                   const std::vector<TensorRef<double>>& params, const std::vector<TensorRef<const double>>& analytic,
                   double eps, const std::string& label) {
  require_dim("check_tensors tensor count", params.size(), analytic.size());
  for (std::size_t n = 0; n < params.size(); ++n) {
    require_dim("check_tensors " + params[n].name, params[n].data.size(), analytic[n].data.size());
    for (std::size_t i = 0; i < params[n].data.size(); ++i) {
      double& x = params[n].data[i];
      const double saved = x;
      x = saved + eps;
      const double up = loss();
      x = saved - eps;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2 * eps);
      const double err = relative_error(analytic[n].data[i], numeric);
      ++result.entries;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst = label + " " + params[n].name + "[" + std::to_string(i) + "] analytic " +
                       std::to_string(analytic[n].data[i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
}

namespace {

using Vec = Vector<double>;

Vec random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Vec v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Glorot leaves biases at constants; nudge every tensor so no entry sits at
// a special value.
template <typename Refs>
void jitter(const Refs& refs, Rng& rng, double scale = 0.1) {
  for (const auto& r : refs)
    for (auto& v : r.data) v += scale * rng.normal();
}

template <typename T>
std::vector<TensorRef<const T>> as_const(std::vector<TensorRef<T>> refs) {
  std::vector<TensorRef<const T>> out;
  for (auto& r : refs) out.push_back({r.name, r.rows, r.cols, r.data});
  return out;
}

std::size_t dim(Rng& rng, std::size_t max) { return 1 + rng.index(max); }

SwitchSignal random_z(std::size_t frames, std::size_t branches, Rng& rng) {
  SwitchSignal z(frames);
  for (auto& b : z) b = rng.index(branches);
  return z;
}

void check_lstm(GradCheckResult& r, Rng& rng, double eps, const std::string& label) {
  const std::size_t in = dim(rng, 5), hidden = dim(rng, 5), steps = dim(rng, 3);
  auto p = LstmParams<double>::glorot(in, hidden, rng);
  jitter(p.tensors(), rng);
  std::vector<Vec> xs;
  for (std::size_t t = 0; t < steps; ++t) xs.push_back(random_vector(in, rng));
  LstmState<double> s0{random_vector(hidden, rng, 0.5), random_vector(hidden, rng, 0.5)};
  std::vector<Vec> rc, rh;
  for (std::size_t t = 0; t < steps; ++t) {
    rc.push_back(random_vector(hidden, rng));
    rh.push_back(random_vector(hidden, rng));
  }

  auto loss = [&] {
    double l = 0;
    LstmState<double> s = s0;
    for (std::size_t t = 0; t < steps; ++t) {
      s = lstm_step<double>(p, xs[t], s);
      l += dot(rc[t], s.c) + dot(rh[t], s.h);
    }
    return l;
  };

  std::vector<StepTape<double>> tapes(steps);
  LstmState<double> s = s0;
  for (std::size_t t = 0; t < steps; ++t) s = lstm_step<double>(p, xs[t], s, &tapes[t]);
  auto grads = p.zeros_like();
  std::vector<Vec> gx(steps);
  Vec carry_c(hidden, 0.0), carry_h(hidden, 0.0);
  for (std::size_t t = steps; t-- > 0;) {
    Vec gc = rc[t], gh = rh[t];
    add_into<double>(gc, carry_c);
    add_into<double>(gh, carry_h);
    auto g = lstm_backward<double>(p, tapes[t], gc, gh, grads);
    gx[t] = g.x;
    carry_c = g.c_prev;
    carry_h = g.h_prev;
  }

  auto params = p.tensors();
  auto analytic = as_const(grads.tensors());
  for (std::size_t t = 0; t < steps; ++t) {
    params.push_back(tensor_ref("x" + std::to_string(t), xs[t]));
    analytic.push_back(tensor_ref("x" + std::to_string(t), std::as_const(gx[t])));
  }
  params.push_back(tensor_ref("c0", s0.c));
  analytic.push_back(tensor_ref("c0", std::as_const(carry_c)));
  params.push_back(tensor_ref("h0", s0.h));
  analytic.push_back(tensor_ref("h0", std::as_const(carry_h)));
  check_tensors(r, loss, params, analytic, eps, label);
}

void check_bifocal(GradCheckResult& r, Rng& rng, double eps, const std::string& label) {
  const std::size_t k = 2 + rng.index(2), in = dim(rng, 4), frames = dim(rng, 5);
  std::vector<std::size_t> inputs(k, in), hidden;
  for (std::size_t b = 0; b < k; ++b) hidden.push_back(dim(rng, 4));
  const auto z = random_z(frames, k, rng);
  // Half the trials instantiate every direction, half only those z uses (the
  // remaining inactive branches are then cleared each frame).
  std::vector<Transition> transitions = transitions_in(z);
  if (rng.bernoulli(0.5)) {
    transitions.clear();
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        if (a != b) transitions.push_back({a, b});
  }
  const SwitchInit init = rng.bernoulli(0.25) ? SwitchInit::kZero : SwitchInit::kProjection;
  auto p = BifocalCellParams<double>::create(inputs, hidden, transitions, init, rng);
  jitter(p.tensors(), rng);
  std::vector<std::vector<Vec>> xs(frames);
  for (auto& frame : xs)
    for (std::size_t b = 0; b < k; ++b) frame.push_back(random_vector(in, rng));
  std::vector<BifocalState<double>> weights(frames);
  for (auto& w : weights)
    for (std::size_t b = 0; b < k; ++b) w.push_back({random_vector(hidden[b], rng), random_vector(hidden[b], rng)});

  auto loss = [&] {
    const auto trace = eager_forward(p, xs, z);
    double l = 0;
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t b = 0; b < k; ++b)
        l += dot(weights[t][b].c, trace.states[t][b].c) + dot(weights[t][b].h, trace.states[t][b].h);
    return l;
  };

  const auto trace = eager_forward(p, xs, z);
  auto grads = p.zeros_like();
  auto gx = eager_backward(p, trace, weights, grads);

  auto params = p.tensors();
  auto analytic = as_const(grads.tensors());
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < k; ++b) {
      const std::string name = "x" + std::to_string(t) + "." + std::to_string(b);
      params.push_back(tensor_ref(name, xs[t][b]));
      analytic.push_back(tensor_ref(name, std::as_const(gx[t][b])));
    }
  check_tensors(r, loss, params, analytic, eps, label);
}

void check_encoder(GradCheckResult& r, Rng& rng, double eps, const std::string& label) {
  EncoderConfig cfg;
  cfg.feature_dim = dim(rng, 4);
  cfg.num_layers = dim(rng, 3);
  cfg.output_dim = dim(rng, 4);
  const std::size_t k = dim(rng, 3);
  for (std::size_t b = 0; b < k; ++b) cfg.branch_hidden.push_back(dim(rng, 4));
  const std::size_t frames = dim(rng, 5);
  const auto z = random_z(frames, k, rng);
  cfg.transitions = transitions_in(z);
  if (rng.bernoulli(0.25)) cfg.switch_init = SwitchInit::kZero;
  auto p = EncoderParams<double>::create(cfg, rng);
  jitter(p.tensors(), rng);
  std::vector<Vec> xs;
  for (std::size_t t = 0; t < frames; ++t) xs.push_back(random_vector(cfg.feature_dim, rng));
  std::vector<Vec> weights;
  for (std::size_t t = 0; t < frames; ++t) weights.push_back(random_vector(cfg.output_dim, rng));

  auto loss = [&] {
    const auto out = encode_eager<double>(p, xs, z);
    double l = 0;
    for (std::size_t t = 0; t < frames; ++t) l += dot(weights[t], out.frames[t]);
    return l;
  };

  EncoderTape<double> tape;
  encode_eager<double>(p, xs, z, &tape);
  auto grads = p.zeros_like();
  auto gx = encode_eager_backward<double>(p, tape, weights, grads);

  auto params = p.tensors();
  auto analytic = as_const(grads.tensors());
  for (std::size_t t = 0; t < frames; ++t) {
    params.push_back(tensor_ref("frame" + std::to_string(t), xs[t]));
    analytic.push_back(tensor_ref("frame" + std::to_string(t), std::as_const(gx[t])));
  }
  check_tensors(r, loss, params, analytic, eps, label);
}

void check_joint(GradCheckResult& r, Rng& rng, double eps, const std::string& label, JointVariant variant,
                 std::size_t trial) {
  const std::size_t vocab = 2 + rng.index(4), dec = dim(rng, 4);
  JointConfig cfg;
  cfg.variant = variant;
  cfg.joint_dim = dim(rng, 4);
  constexpr Activation kActs[] = {Activation::kTanh, Activation::kRelu, Activation::kIdentity};
  cfg.activation = kActs[trial % 3];
  const std::size_t enc = variant == JointVariant::kAdditive ? vocab : dim(rng, 4);
  auto j = JointNet<double>::create(cfg, enc, dec, vocab, rng);
  jitter(j.tensors(), rng);
  Vec h_enc = random_vector(enc, rng), h_dec = random_vector(dec, rng), w = random_vector(vocab, rng);

  auto loss = [&] { return dot(w, joint_logits<double>(j, h_enc, h_dec)); };

  JointTape<double> tape;
  joint_logits<double>(j, h_enc, h_dec, &tape);
  auto grads = j.zeros_like();
  auto g = joint_backward<double>(j, tape, w, grads);

  auto params = j.tensors();
  auto analytic = as_const(grads.tensors());
  params.push_back(tensor_ref("h_enc", h_enc));
  analytic.push_back(tensor_ref("h_enc", std::as_const(g.h_enc)));
  params.push_back(tensor_ref("h_dec", h_dec));
  analytic.push_back(tensor_ref("h_dec", std::as_const(g.h_dec)));
  check_tensors(r, loss, params, analytic, eps, label);
}

void check_lattice(GradCheckResult& r, Rng& rng, double eps, const std::string& label) {
  const std::size_t frames = dim(rng, 4), vocab = 2 + rng.index(3), n_labels = rng.index(4);
  const Vocab v{vocab, rng.index(vocab)};
  std::vector<std::size_t> labels;
  for (std::size_t u = 0; u < n_labels; ++u) {
    std::size_t l = rng.index(vocab - 1);
    labels.push_back(l >= v.blank ? l + 1 : l);
  }
  Vec logits = random_vector(frames * (n_labels + 1) * vocab, rng);
  auto loss = [&] { return transducer_lattice<double>(logits, frames, labels, v, false).nll; };
  const auto res = transducer_lattice<double>(logits, frames, labels, v, true);
  std::vector<TensorRef<double>> params{tensor_ref("logits", logits)};
  std::vector<TensorRef<const double>> analytic{{"logits", logits.size(), 1, std::span<const double>(res.grad_logits)}};
  check_tensors(r, loss, params, analytic, eps, label);
}

void check_model(GradCheckResult& r, Rng& rng, double eps, const std::string& label, std::size_t trial) {
  TransducerConfig cfg;
  cfg.vocab = {2 + rng.index(3), 0};
  cfg.encoder.feature_dim = dim(rng, 3);
  cfg.encoder.num_layers = dim(rng, 2);
  const std::size_t k = dim(rng, 2);
  for (std::size_t b = 0; b < k; ++b) cfg.encoder.branch_hidden.push_back(dim(rng, 3));
  cfg.prediction = {dim(rng, 3), {dim(rng, 3)}};
  cfg.joint.variant = trial % 2 == 0 ? JointVariant::kFeedforward : JointVariant::kAdditive;
  cfg.joint.joint_dim = dim(rng, 3);
  cfg.encoder.output_dim = cfg.joint.variant == JointVariant::kAdditive ? cfg.vocab.size : dim(rng, 3);
  const std::size_t frames = dim(rng, 4);
  const auto z = random_z(frames, k, rng);
  cfg.encoder.transitions = transitions_in(z);
  if (rng.bernoulli(0.25)) cfg.encoder.switch_init = SwitchInit::kZero;
  auto model = TransducerModel<double>::create(cfg, rng);
  jitter(model.tensors(), rng);
  std::vector<Vec> xs;
  for (std::size_t t = 0; t < frames; ++t) xs.push_back(random_vector(cfg.encoder.feature_dim, rng));
  std::vector<std::size_t> labels;
  for (std::size_t u = rng.index(4); u > 0; --u) labels.push_back(1 + rng.index(cfg.vocab.size - 1));

  auto loss = [&] { return transducer_loss<double>(model, xs, z, labels); };
  auto grads = model.zeros_like();
  transducer_loss<double>(model, xs, z, labels, &grads);
  check_tensors(r, loss, model.tensors(), as_const(grads.tensors()), eps, label);
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options) {
  const Rng root(options.seed);
  std::vector<GradCheckResult> results;
  auto run = [&](const std::string& name, std::uint64_t stream, auto&& body) {
    GradCheckResult r;
    r.component = name;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      Rng rng = root.fork(stream * 1000003ULL + trial);
      body(r, rng, "trial " + std::to_string(trial), trial);
      ++r.trials;
    }
    results.push_back(std::move(r));
  };
  const double eps = options.eps;
  run("lstm_cell", 1, [&](auto& r, Rng& rng, const std::string& l, std::size_t) { check_lstm(r, rng, eps, l); });
  run("bifocal_cell", 2, [&](auto& r, Rng& rng, const std::string& l, std::size_t) { check_bifocal(r, rng, eps, l); });
  run("encoder", 3, [&](auto& r, Rng& rng, const std::string& l, std::size_t) { check_encoder(r, rng, eps, l); });
  run("joint_additive", 4, [&](auto& r, Rng& rng, const std::string& l, std::size_t t) {
    check_joint(r, rng, eps, l, JointVariant::kAdditive, t);
  });
  run("joint_feedforward", 5, [&](auto& r, Rng& rng, const std::string& l, std::size_t t) {
    check_joint(r, rng, eps, l, JointVariant::kFeedforward, t);
  });
  run("transducer_logits", 6, [&](auto& r, Rng& rng, const std::string& l, std::size_t) { check_lattice(r, rng, eps, l); });
  run("transducer_model", 7, [&](auto& r, Rng& rng, const std::string& l, std::size_t t) { check_model(r, rng, eps, l, t); });
  return results;
}

}  // namespace bifocal
