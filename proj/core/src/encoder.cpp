// SPDX-License-Identifier: Apache-2.0

#include "bifocal/encoder.hpp"

#include <stdexcept>
#include <string>

namespace bifocal {

void EncoderConfig::validate() const {
  if (num_layers == 0) throw std::invalid_argument("encoder: num_layers must be >= 1");
  if (branch_hidden.empty()) throw std::invalid_argument("encoder: at least one branch required");
  if (feature_dim == 0) throw std::invalid_argument("encoder: feature_dim must be >= 1");
  if (output_dim == 0) throw std::invalid_argument("encoder: output_dim must be >= 1");
  for (auto h : branch_hidden)
    if (h == 0) throw std::invalid_argument("encoder: branch hidden dims must be >= 1");
  for (const auto& [from, to] : transitions)
    if (from >= branch_hidden.size() || to >= branch_hidden.size() || from == to)
      throw std::invalid_argument("encoder: invalid transition " + std::to_string(from) + " -> " +
                                  std::to_string(to));
}

std::size_t EncoderCounters::total_projections() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.total_projections();
  return n;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::create(const EncoderConfig& config, Rng& rng) {
  config.validate();
  EncoderParams p;
  p.config = config;
  // Separate stream: with and without projections share all other weights.
  Rng projection_rng = rng.fork(0x70726f6aULL);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    std::vector<std::size_t> inputs;
    for (std::size_t k = 0; k < config.num_branches(); ++k) inputs.push_back(config.layer_input_dim(l, k));
    p.layers.push_back(BifocalCellParams<T>::create(inputs, config.branch_hidden, config.transitions,
                                                    config.switch_init, rng, &projection_rng));
  }
  for (auto h : config.branch_hidden) p.output_maps.push_back(glorot_init<T>(config.output_dim, h, rng));
  return p;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::zeros_like() const {
  EncoderParams z;
  z.config = config;
  for (const auto& l : layers) z.layers.push_back(l.zeros_like());
  for (const auto& m : output_maps) z.output_maps.emplace_back(m.rows(), m.cols());
  return z;
}

template <typename T>
void EncoderParams<T>::validate() const {
  config.validate();
  require_dim("encoder layers", config.num_layers, layers.size());
  require_dim("encoder output maps", config.num_branches(), output_maps.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    require_dim("encoder layer branches", config.num_branches(), layers[l].num_branches());
    for (std::size_t k = 0; k < config.num_branches(); ++k) {
      require_dim("encoder layer input dim", config.layer_input_dim(l, k), layers[l].branches[k].input_dim);
      require_dim("encoder layer hidden dim", config.branch_hidden[k], layers[l].branches[k].hidden_dim);
    }
  }
  for (std::size_t k = 0; k < output_maps.size(); ++k) {
    require_dim("encoder output map rows", config.output_dim, output_maps[k].rows());
    require_dim("encoder output map cols", config.branch_hidden[k], output_maps[k].cols());
  }
}

namespace {

template <typename T>
void check_frames(const EncoderConfig& cfg, std::span<const Vector<T>> frames, std::span<const std::size_t> z) {
  require_dim("encoder switch signal length", frames.size(), z.size());
  for (const auto& f : frames) require_dim("encoder frame", cfg.feature_dim, f.size());
}

}  // namespace

template <typename T>
EncoderOutput<T> encode_eager(const EncoderParams<T>& params, std::span<const Vector<T>> frames,
                              std::span<const std::size_t> z, EncoderTape<T>* tape) {
  const auto& cfg = params.config;
  check_frames(cfg, frames, z);
  const std::size_t steps = frames.size();
  const std::size_t k_branches = cfg.num_branches();

  std::vector<std::vector<Vector<T>>> inputs(steps, std::vector<Vector<T>>(k_branches));
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t k = 0; k < k_branches; ++k) inputs[t][k] = frames[t];

  std::vector<EagerTrace<T>> traces;
  traces.reserve(cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    traces.push_back(eager_forward(params.layers[l], inputs, z));
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t k = 0; k < k_branches; ++k) inputs[t][k] = traces.back().states[t][k].h;
  }

  EncoderOutput<T> out;
  out.active.assign(z.begin(), z.end());
  out.frames.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t)
    out.frames.push_back(matvec(params.output_maps[z[t]], std::span<const T>(inputs[t][z[t]])));

  if (tape != nullptr) {
    tape->layers = std::move(traces);
    tape->z.assign(z.begin(), z.end());
  }
  return out;
}

template <typename T>
std::vector<Vector<T>> encode_eager_backward(const EncoderParams<T>& params, const EncoderTape<T>& tape,
                                             std::span<const Vector<T>> grad_out, EncoderParams<T>& grads) {
  const auto& cfg = params.config;
  const std::size_t steps = tape.z.size();
  require_dim("encode_eager_backward gradient frames", steps, grad_out.size());
  require_dim("encode_eager_backward tape layers", cfg.num_layers, tape.layers.size());
  const std::size_t k_branches = cfg.num_branches();

  // Gradients on the top layer's output states.
  std::vector<BifocalState<T>> grad_states(steps, BifocalState<T>(k_branches));
  const auto& top = tape.layers.back();
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t a = tape.z[t];
    if (grad_out[t].empty()) continue;
    const std::span<const T> g(grad_out[t]);
    require_dim("encode_eager_backward output gradient", cfg.output_dim, g.size());
    outer_accumulate(grads.output_maps[a], g, std::span<const T>(top.states[t][a].h));
    grad_states[t][a].h.assign(cfg.branch_hidden[a], T{0});
    matvec_transposed_accumulate(params.output_maps[a], g, std::span<T>(grad_states[t][a].h));
  }

  std::vector<Vector<T>> frame_grads(steps, Vector<T>(cfg.feature_dim, T{0}));
  for (std::size_t l = cfg.num_layers; l-- > 0;) {
    auto input_grads = eager_backward(params.layers[l], tape.layers[l], grad_states, grads.layers[l]);
    if (l == 0) {
      for (std::size_t t = 0; t < steps; ++t)
        for (const auto& g : input_grads[t]) add_into(std::span<T>(frame_grads[t]), std::span<const T>(g));
      break;
    }
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t k = 0; k < k_branches; ++k) {
        grad_states[t][k].c.clear();
        grad_states[t][k].h = std::move(input_grads[t][k]);
      }
  }
  return frame_grads;
}

template <typename T>
EncoderStream<T>::EncoderStream(const EncoderParams<T>& params, EncoderCounters* counters)
    : params_(&params), counters_(counters), carried_(params.config.num_layers) {
  if (counters_ != nullptr) {
    counters_->layers.resize(params.config.num_layers);
    for (auto& c : counters_->layers) c.resize(params.config.num_branches());
    counters_->output_maps.resize(params.config.num_branches(), 0);
  }
}

template <typename T>
Vector<T> EncoderStream<T>::push(std::span<const T> frame, std::size_t branch) {
  const auto& cfg = params_->config;
  require_dim("encoder frame", cfg.feature_dim, frame.size());
  if (branch >= cfg.num_branches())
    throw std::out_of_range("encoder: branch " + std::to_string(branch) + " of " +
                            std::to_string(cfg.num_branches()));
  if (previous_ && *previous_ != branch && cfg.switch_init == SwitchInit::kProjection &&
      params_->layers.front().projection(*previous_, branch) == nullptr)
    throw MissingProjectionError(*previous_, branch);

  Vector<T> x(frame.begin(), frame.end());
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    if (!previous_) carried_[l] = LstmState<T>::zeros(cfg.branch_hidden[branch]);
    carried_[l] = lazy_step(params_->layers[l], std::span<const T>(x), carried_[l], branch, previous_,
                            counters_ != nullptr ? &counters_->layers[l] : nullptr);
    x = carried_[l].h;
  }
  if (counters_ != nullptr) ++counters_->output_maps[branch];
  previous_ = branch;
  ++frames_seen_;
  return matvec(params_->output_maps[branch], std::span<const T>(x));
}

template <typename T>
EncoderOutput<T> encode_lazy(const EncoderParams<T>& params, std::span<const Vector<T>> frames,
                             std::span<const std::size_t> z, EncoderCounters* counters) {
  check_frames(params.config, frames, z);
  EncoderStream<T> stream(params, counters);
  EncoderOutput<T> out;
  out.active.assign(z.begin(), z.end());
  out.frames.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) out.frames.push_back(stream.push(std::span<const T>(frames[t]), z[t]));
  return out;
}

template <typename T>
std::vector<Vector<T>> stack_frames(std::span<const Vector<T>> frames, std::size_t stack, std::size_t stride) {
  if (stack == 0 || stride == 0) throw std::invalid_argument("stack_frames: stack and stride must be >= 1");
  std::vector<Vector<T>> out;
  for (std::size_t start = 0; start + stack <= frames.size(); start += stride) {
    Vector<T> v;
    for (std::size_t j = 0; j < stack; ++j) {
      if (j > 0) require_dim("stack_frames frame", frames[start].size(), frames[start + j].size());
      v.insert(v.end(), frames[start + j].begin(), frames[start + j].end());
    }
    out.push_back(std::move(v));
  }
  return out;
}

#define BIFOCAL_INSTANTIATE(T)                                                                              \
  template struct EncoderParams<T>;                                                                         \
  template class EncoderStream<T>;                                                                          \
  template EncoderOutput<T> encode_eager(const EncoderParams<T>&, std::span<const Vector<T>>,               \
                                         std::span<const std::size_t>, EncoderTape<T>*);                    \
  template std::vector<Vector<T>> encode_eager_backward(const EncoderParams<T>&, const EncoderTape<T>&,     \
                                                        std::span<const Vector<T>>, EncoderParams<T>&);     \
  template EncoderOutput<T> encode_lazy(const EncoderParams<T>&, std::span<const Vector<T>>,                \
                                        std::span<const std::size_t>, EncoderCounters*);                    \
  template std::vector<Vector<T>> stack_frames(std::span<const Vector<T>>, std::size_t, std::size_t);

BIFOCAL_INSTANTIATE(float)
BIFOCAL_INSTANTIATE(double)
#undef BIFOCAL_INSTANTIATE

}  // namespace bifocal
