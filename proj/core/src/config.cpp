// SPDX-License-Identifier: Apache-2.0

#include "bifocal/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

namespace bifocal {

using nlohmann::json;

ConfigError::ConfigError(const std::string& path, const std::string& what)
    : std::invalid_argument(path + ": " + what), path_(path) {}

namespace {

template <typename T>
void read_value(const json& j, T& out, const std::string& path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError(path, "expected a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_unsigned()) throw ConfigError(path, "expected a non-negative integer");
    out = j.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
    out = j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw ConfigError(path, "expected a string");
    out = j.get<std::string>();
  } else {
    if (!j.is_array()) throw ConfigError(path, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
      typename T::value_type v{};
      read_value(j[i], v, path + "[" + std::to_string(i) + "]");
      out.push_back(v);
    }
  }
}

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) read_value(j_.at(key), out, child(key));
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    read_value(j_.at(key), v, child(key));
    out = v;
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.contains(key)) throw ConfigError(child(key), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

SwitchInit switch_init_from(const std::string& s, const std::string& path) {
  if (s == "projection") return SwitchInit::kProjection;
  if (s == "zero") return SwitchInit::kZero;
  throw ConfigError(path, "expected 'projection' or 'zero', got '" + s + "'");
}

JointVariant joint_variant_from(const std::string& s, const std::string& path) {
  if (s == "additive") return JointVariant::kAdditive;
  if (s == "feedforward") return JointVariant::kFeedforward;
  throw ConfigError(path, "expected 'additive' or 'feedforward', got '" + s + "'");
}

Activation activation_from(const std::string& s, const std::string& path) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw ConfigError(path, "expected 'tanh', 'relu' or 'identity', got '" + s + "'");
}

ScheduleSpec schedule_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  ScheduleSpec spec;
  std::string kind = to_string(spec.kind);
  s.get("kind", kind);
  try {
    spec.kind = schedule_kind_from_string(kind);
  } catch (const ScheduleError& e) {
    throw ConfigError(s.child("kind"), e.what());
  }
  spec.ww_frame_index.reset();
  s.get_optional("ww_frame_index", spec.ww_frame_index);
  s.get("pattern", spec.pattern);
  s.get("lead_in_branch", spec.lead_in_branch);
  if (spec.kind == ScheduleKind::kInterleave) spec.post_ww_branches = {1, 2};
  if (spec.kind == ScheduleKind::kCustom) spec.post_ww_branches.clear();
  s.get("post_ww_branches", spec.post_ww_branches);
  s.finish();
  return spec;
}

TaskSpec task_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  TaskSpec t;
  s.get("vocab_size", t.vocab_size);
  s.get("feature_dim", t.feature_dim);
  s.get("frames_per_token", t.frames_per_token);
  s.get("duration_jitter", t.duration_jitter);
  s.get("lead_in_alphabet", t.lead_in_alphabet);
  s.get("body_alphabet", t.body_alphabet);
  s.get("lead_in_fraction", t.lead_in_fraction);
  s.get("noise_std", t.noise_std);
  s.get("channel_std", t.channel_std);
  s.get("min_tokens", t.min_tokens);
  s.get("max_tokens", t.max_tokens);
  s.get("seed", t.seed);
  s.finish();
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return t;
}

CostConvention convention_from(Section& s) {
  CostConvention c;
  s.get("flops_per_mac", c.flops_per_mac);
  s.get("count_bias", c.count_bias);
  s.get("count_elementwise", c.count_elementwise);
  s.get("activation_flops", c.activation_flops);
  s.get("count_projection_ops", c.count_projection_ops);
  return c;
}

void add_convention(json& j, const CostConvention& c) {
  j["flops_per_mac"] = c.flops_per_mac;
  j["count_bias"] = c.count_bias;
  j["count_elementwise"] = c.count_elementwise;
  j["activation_flops"] = c.activation_flops;
  j["count_projection_ops"] = c.count_projection_ops;
}

}  // namespace

std::string to_string(SwitchInit init) { return init == SwitchInit::kZero ? "zero" : "projection"; }
std::string to_string(JointVariant variant) {
  return variant == JointVariant::kAdditive ? "additive" : "feedforward";
}
std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kIdentity:
      return "identity";
  }
  return "unknown";
}

TransducerConfig transducer_config_from_json(const json& j, const std::string& path) {
  Section s(j, path);
  TransducerConfig m;
  m.vocab = {33, 0};
  s.get("vocab_size", m.vocab.size);
  s.get("blank", m.vocab.blank);

  const json* enc = s.sub("encoder");
  if (!enc) throw ConfigError(s.child("encoder"), "missing section");
  {
    Section e(*enc, s.child("encoder"));
    e.get("feature_dim", m.encoder.feature_dim);
    e.get("num_layers", m.encoder.num_layers);
    e.get("branch_hidden", m.encoder.branch_hidden);
    e.get("output_dim", m.encoder.output_dim);
    std::string init = to_string(m.encoder.switch_init);
    e.get("switch_init", init);
    m.encoder.switch_init = switch_init_from(init, e.child("switch_init"));
    if (const json* tr = e.sub("transitions")) {
      std::vector<std::vector<std::size_t>> pairs;
      read_value(*tr, pairs, e.child("transitions"));
      for (const auto& p : pairs) {
        if (p.size() != 2) throw ConfigError(e.child("transitions"), "each transition is a [from, to] pair");
        m.encoder.transitions.push_back({p[0], p[1]});
      }
    }
    e.finish();
  }
  const json* pred = s.sub("prediction");
  if (!pred) throw ConfigError(s.child("prediction"), "missing section");
  {
    Section p(*pred, s.child("prediction"));
    p.get("embed_dim", m.prediction.embed_dim);
    p.get("hidden", m.prediction.hidden);
    p.finish();
  }
  if (const json* joint = s.sub("joint")) {
    Section jn(*joint, s.child("joint"));
    std::string variant = to_string(m.joint.variant);
    jn.get("variant", variant);
    m.joint.variant = joint_variant_from(variant, jn.child("variant"));
    jn.get("joint_dim", m.joint.joint_dim);
    std::string act = to_string(m.joint.activation);
    jn.get("activation", act);
    m.joint.activation = activation_from(act, jn.child("activation"));
    jn.finish();
  }
  s.finish();
  return m;
}

json to_json(const TransducerConfig& m) {
  json tr = json::array();
  for (const auto& [a, b] : m.encoder.transitions) tr.push_back({a, b});
  return json{{"vocab_size", m.vocab.size},
              {"blank", m.vocab.blank},
              {"encoder",
               {{"feature_dim", m.encoder.feature_dim},
                {"num_layers", m.encoder.num_layers},
                {"branch_hidden", m.encoder.branch_hidden},
                {"output_dim", m.encoder.output_dim},
                {"switch_init", to_string(m.encoder.switch_init)},
                {"transitions", tr}}},
              {"prediction", {{"embed_dim", m.prediction.embed_dim}, {"hidden", m.prediction.hidden}}},
              {"joint",
               {{"variant", to_string(m.joint.variant)},
                {"joint_dim", m.joint.joint_dim},
                {"activation", to_string(m.joint.activation)}}}};
}

json to_json(const TaskSpec& t) {
  return json{{"vocab_size", t.vocab_size},
              {"feature_dim", t.feature_dim},
              {"frames_per_token", t.frames_per_token},
              {"duration_jitter", t.duration_jitter},
              {"lead_in_alphabet", t.lead_in_alphabet},
              {"body_alphabet", t.body_alphabet},
              {"lead_in_fraction", t.lead_in_fraction},
              {"noise_std", t.noise_std},
              {"channel_std", t.channel_std},
              {"min_tokens", t.min_tokens},
              {"max_tokens", t.max_tokens},
              {"seed", t.seed}};
}

json to_json(const CostConvention& c) {
  json j = json::object();
  add_convention(j, c);
  return j;
}

json to_json(const ScheduleSpec& s) {
  return json{{"kind", to_string(s.kind)},
              {"ww_frame_index", s.ww_frame_index ? json(*s.ww_frame_index) : json(nullptr)},
              {"pattern", s.pattern},
              {"lead_in_branch", s.lead_in_branch},
              {"post_ww_branches", s.post_ww_branches}};
}

TransducerConfig ExperimentConfig::resolved_model() const {
  TransducerConfig m = model;
  m.encoder.transitions = schedule.transitions();
  return m;
}

void ExperimentConfig::validate() const {
  const TransducerConfig m = resolved_model();
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model", e.what());
  }
  for (auto b : schedule.branches())
    if (b >= m.encoder.num_branches())
      throw ConfigError("schedule", "uses branch " + std::to_string(b) + " but the encoder has " +
                                        std::to_string(m.encoder.num_branches()) + " branches");
  try {
    ScheduleSpec probe = schedule;
    if (!probe.ww_frame_index) probe.ww_frame_index = 0;
    probe.validate();
  } catch (const ScheduleError& e) {
    throw ConfigError("schedule", e.what());
  }
  if (!data.path) {
    if (data.task.feature_dim != m.encoder.feature_dim)
      throw ConfigError("data.task.feature_dim", "is " + std::to_string(data.task.feature_dim) +
                                                     " but model.encoder.feature_dim is " +
                                                     std::to_string(m.encoder.feature_dim));
    if (data.task.model_vocab() > m.vocab.size)
      throw ConfigError("data.task.vocab_size", "labels 1.." + std::to_string(data.task.vocab_size) +
                                                    " do not fit model.vocab_size " + std::to_string(m.vocab.size));
    if (m.vocab.blank != 0 && m.vocab.blank <= data.task.vocab_size)
      throw ConfigError("model.blank", "collides with a synthetic task label");
  }
  if (training.batch_size == 0) throw ConfigError("training.batch_size", "must be >= 1");
  if (training.threads == 0) throw ConfigError("training.threads", "must be >= 1");
  if (!(training.learning_rate > 0)) throw ConfigError("training.learning_rate", "must be positive");
  if (!(training.beta1 >= 0 && training.beta1 < 1)) throw ConfigError("training.beta1", "must be in [0, 1)");
  if (!(training.beta2 >= 0 && training.beta2 < 1)) throw ConfigError("training.beta2", "must be in [0, 1)");
  if (!(training.epsilon > 0)) throw ConfigError("training.epsilon", "must be positive");
  if (!(training.clip_norm >= 0)) throw ConfigError("training.clip_norm", "must be >= 0");
  if (eval.beam_size == 0) throw ConfigError("eval.beam_size", "must be >= 1");
  if (eval.max_symbols_per_frame == 0) throw ConfigError("eval.max_symbols_per_frame", "must be >= 1");
  if (eval.split != "test" && eval.split != "train") throw ConfigError("eval.split", "expected 'test' or 'train'");
  if (costing.frames == 0) throw ConfigError("costing.frames", "must be >= 1");
  if (!(costing.lead_in_fraction >= 0 && costing.lead_in_fraction < 1))
    throw ConfigError("costing.lead_in_fraction", "must be in [0, 1)");
  try {
    costing.convention.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("costing", e.what());
  }
  if (!(simulation.frame_duration > 0)) throw ConfigError("simulation.frame_duration", "must be positive");
  if (simulation.device_rate && !(*simulation.device_rate > 0))
    throw ConfigError("simulation.device_rate", "must be positive");
  for (auto r : simulation.sweep_rates)
    if (!(r > 0)) throw ConfigError("simulation.sweep_rates", "rates must be positive");
}

ExperimentConfig toy_config(bool bifocal) {
  ExperimentConfig c;
  c.model.vocab = {33, 0};
  c.model.encoder.feature_dim = 16;
  c.model.encoder.num_layers = 2;
  c.model.encoder.output_dim = 32;
  c.model.prediction = {16, {32}};
  c.model.joint = {JointVariant::kFeedforward, 32, Activation::kTanh};
  if (bifocal) {
    c.model.encoder.branch_hidden = {16, 32};
    c.schedule = ScheduleSpec::ww_pivot(0, 1);
    c.schedule.ww_frame_index.reset();
  } else {
    c.model.encoder.branch_hidden = {32};
    c.schedule = ScheduleSpec::custom({0});
  }
  c.training.learning_rate = 1e-2;
  return c;
}

ExperimentConfig config_from_json(const json& j) {
  Section root(j, "");
  // Omitted sections keep the toy defaults, the same ones the CLI uses when
  // no config is given.
  ExperimentConfig c = toy_config();
  if (const json* model = root.sub("model")) {
    c.model = transducer_config_from_json(*model, "model");
    if (!c.model.encoder.transitions.empty())
      throw ConfigError("model.encoder.transitions", "derived from the schedule; do not set it in a config");
    c.schedule = ScheduleSpec{};
  }
  if (const json* sched = root.sub("schedule")) c.schedule = schedule_from_json(*sched, "schedule");
  else c.schedule.ww_frame_index.reset();

  if (const json* tr = root.sub("training")) {
    Section s(*tr, "training");
    auto& t = c.training;
    s.get("steps", t.steps);
    s.get("batch_size", t.batch_size);
    s.get("learning_rate", t.learning_rate);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("epsilon", t.epsilon);
    s.get("clip_norm", t.clip_norm);
    s.get("seed", t.seed);
    s.get("threads", t.threads);
    s.get("monitor_utterances", t.monitor_utterances);
    s.finish();
  }
  if (const json* data = root.sub("data")) {
    Section s(*data, "data");
    if (const json* task = s.sub("task")) c.data.task = task_from_json(*task, "data.task");
    s.get_optional("path", c.data.path);
    s.get("train_utterances", c.data.train_utterances);
    s.get("test_utterances", c.data.test_utterances);
    s.finish();
  }
  if (const json* ev = root.sub("eval")) {
    Section s(*ev, "eval");
    s.get("beam_size", c.eval.beam_size);
    s.get("max_symbols_per_frame", c.eval.max_symbols_per_frame);
    s.get("split", c.eval.split);
    s.finish();
  }
  if (const json* cost = root.sub("costing")) {
    Section s(*cost, "costing");
    std::string preset = "model";
    s.get("preset", preset);
    if (preset == "model") c.costing.preset = CostPreset::kModel;
    else if (preset == "paper_dims") c.costing.preset = CostPreset::kPaperDims;
    else throw ConfigError("costing.preset", "expected 'model' or 'paper_dims', got '" + preset + "'");
    c.costing.convention = convention_from(s);
    s.get("frames", c.costing.frames);
    s.get("lead_in_fraction", c.costing.lead_in_fraction);
    s.finish();
  }
  if (const json* sim = root.sub("simulation")) {
    Section s(*sim, "simulation");
    s.get("frame_duration", c.simulation.frame_duration);
    s.get_optional("device_rate", c.simulation.device_rate);
    s.get("sweep_rates", c.simulation.sweep_rates);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  json model = to_json(c.model);
  model["encoder"].erase("transitions");
  json costing{{"preset", c.costing.preset == CostPreset::kPaperDims ? "paper_dims" : "model"},
               {"frames", c.costing.frames},
               {"lead_in_fraction", c.costing.lead_in_fraction}};
  add_convention(costing, c.costing.convention);
  return json{
      {"model", model},
      {"schedule", to_json(c.schedule)},
      {"training",
       {{"steps", c.training.steps},
        {"batch_size", c.training.batch_size},
        {"learning_rate", c.training.learning_rate},
        {"beta1", c.training.beta1},
        {"beta2", c.training.beta2},
        {"epsilon", c.training.epsilon},
        {"clip_norm", c.training.clip_norm},
        {"seed", c.training.seed},
        {"threads", c.training.threads},
        {"monitor_utterances", c.training.monitor_utterances}}},
      {"data",
       {{"task", to_json(c.data.task)},
        {"path", c.data.path ? json(*c.data.path) : json(nullptr)},
        {"train_utterances", c.data.train_utterances},
        {"test_utterances", c.data.test_utterances}}},
      {"eval",
       {{"beam_size", c.eval.beam_size},
        {"max_symbols_per_frame", c.eval.max_symbols_per_frame},
        {"split", c.eval.split}}},
      {"costing", costing},
      {"simulation",
       {{"frame_duration", c.simulation.frame_duration},
        {"device_rate", c.simulation.device_rate ? json(*c.simulation.device_rate) : json(nullptr)},
        {"sweep_rates", c.simulation.sweep_rates}}},
  };
}

}  // namespace bifocal
