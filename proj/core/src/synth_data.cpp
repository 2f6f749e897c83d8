// SPDX-License-Identifier: Apache-2.0

#include "bifocal/synth_data.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace bifocal {

namespace {

constexpr std::uint64_t kEmbeddingStream = 0x656d6265ULL;
constexpr char kFormatName[] = "bifocal-dataset";

void check_alphabet(const std::vector<std::size_t>& alphabet, std::size_t vocab_size, const char* name) {
  for (auto t : alphabet)
    if (t == 0 || t > vocab_size)
      throw std::invalid_argument(std::string("task spec: ") + name + " token " + std::to_string(t) +
                                  " outside 1.." + std::to_string(vocab_size));
}

}  // namespace

std::vector<std::size_t> TaskSpec::resolved_body_alphabet() const {
  if (!body_alphabet.empty()) return body_alphabet;
  std::vector<std::size_t> all(vocab_size);
  for (std::size_t t = 0; t < vocab_size; ++t) all[t] = t + 1;
  return all;
}

void TaskSpec::validate() const {
  if (vocab_size == 0) throw std::invalid_argument("task spec: vocab_size must be >= 1");
  if (feature_dim == 0) throw std::invalid_argument("task spec: feature_dim must be >= 1");
  if (frames_per_token == 0) throw std::invalid_argument("task spec: frames_per_token must be >= 1");
  if (lead_in_alphabet.empty()) throw std::invalid_argument("task spec: lead-in alphabet is empty");
  if (resolved_body_alphabet().empty()) throw std::invalid_argument("task spec: body alphabet is empty");
  check_alphabet(lead_in_alphabet, vocab_size, "lead-in alphabet");
  check_alphabet(body_alphabet, vocab_size, "body alphabet");
  if (!(lead_in_fraction > 0 && lead_in_fraction < 1))
    throw std::invalid_argument("task spec: lead_in_fraction must be in (0, 1)");
  if (!(noise_std >= 0) || !(channel_std >= 0)) throw std::invalid_argument("task spec: noise levels must be >= 0");
  if (min_tokens < 2 || max_tokens < min_tokens)
    throw std::invalid_argument("task spec: need 2 <= min_tokens <= max_tokens");
}

Matrix<float> token_embeddings(const TaskSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).fork(kEmbeddingStream);
  Matrix<float> e(spec.vocab_size, spec.feature_dim);
  for (auto& v : e.data()) v = static_cast<float>(rng.normal());
  return e;
}

Utterance generate_one(const TaskSpec& spec, const Matrix<float>& embeddings, std::size_t index) {
  require_dim("token embeddings rows", spec.vocab_size, embeddings.rows());
  require_dim("token embeddings cols", spec.feature_dim, embeddings.cols());
  Rng rng = Rng(spec.seed).fork(index);
  const auto body = spec.resolved_body_alphabet();

  const std::size_t n = spec.min_tokens + rng.index(spec.max_tokens - spec.min_tokens + 1);
  const double target = spec.lead_in_fraction * static_cast<double>(n);
  std::size_t lead = static_cast<std::size_t>(std::floor(target));
  if (rng.uniform() < target - std::floor(target)) ++lead;
  lead = std::clamp<std::size_t>(lead, 1, n - 1);

  Utterance u;
  for (std::size_t j = 0; j < n; ++j) {
    const auto& alphabet = j < lead ? spec.lead_in_alphabet : body;
    u.labels.push_back(alphabet[rng.index(alphabet.size())]);
  }
  Vector<float> channel(spec.feature_dim, 0.0f);
  if (spec.channel_std > 0)
    for (auto& c : channel) c = static_cast<float>(spec.channel_std * rng.normal());
  const std::size_t shortest = spec.frames_per_token > spec.duration_jitter ? spec.frames_per_token - spec.duration_jitter : 1;
  const std::size_t longest = spec.frames_per_token + spec.duration_jitter;
  for (std::size_t j = 0; j < u.labels.size(); ++j) {
    const auto row = embeddings.row(u.labels[j] - 1);
    const std::size_t duration = spec.duration_jitter == 0 ? spec.frames_per_token
                                                           : shortest + rng.index(longest - shortest + 1);
    for (std::size_t r = 0; r < duration; ++r) {
      Vector<float> f(row.begin(), row.end());
      for (std::size_t d = 0; d < f.size(); ++d) {
        f[d] += channel[d];
        if (spec.noise_std > 0) f[d] += static_cast<float>(spec.noise_std * rng.normal());
      }
      u.frames.push_back(std::move(f));
    }
    if (j + 1 == lead) u.ww_frame_index = u.frames.size();
  }
  return u;
}

std::vector<Utterance> generate(const TaskSpec& spec, std::size_t n, std::size_t first) {
  const auto emb = token_embeddings(spec);
  std::vector<Utterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_one(spec, emb, first + i));
  return out;
}

DatasetError::DatasetError(const std::string& what, std::size_t line)
    : std::runtime_error("dataset line " + std::to_string(line) + ": " + what), line_(line) {}

nlohmann::json to_json(const Utterance& u) {
  nlohmann::json j;
  j["frames"] = u.frames;
  j["ww_frame_index"] = u.ww_frame_index;
  j["labels"] = u.labels;
  return j;
}

Utterance utterance_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not an object");
  for (const auto& [key, _] : j.items())
    if (key != "frames" && key != "ww_frame_index" && key != "labels")
      throw std::invalid_argument("unknown field '" + key + "'");
  for (const char* key : {"frames", "ww_frame_index", "labels"})
    if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  Utterance u;
  const auto& frames = j.at("frames");
  if (!frames.is_array()) throw std::invalid_argument("'frames' is not an array");
  for (const auto& f : frames) {
    if (!f.is_array()) throw std::invalid_argument("frame is not an array");
    Vector<float> v;
    for (const auto& x : f) {
      if (!x.is_number()) throw std::invalid_argument("frame value is not a number");
      v.push_back(x.get<float>());
    }
    if (!u.frames.empty() && v.size() != u.frames.front().size())
      throw std::invalid_argument("frames have inconsistent widths");
    u.frames.push_back(std::move(v));
  }
  if (!j.at("ww_frame_index").is_number_unsigned()) throw std::invalid_argument("'ww_frame_index' must be a non-negative integer");
  u.ww_frame_index = j.at("ww_frame_index").get<std::size_t>();
  if (!j.at("labels").is_array()) throw std::invalid_argument("'labels' is not an array");
  for (const auto& l : j.at("labels")) {
    if (!l.is_number_unsigned()) throw std::invalid_argument("label is not a non-negative integer");
    u.labels.push_back(l.get<std::size_t>());
  }
  if (u.labels.empty()) throw std::invalid_argument("'labels' is empty");
  if (u.frames.empty()) throw std::invalid_argument("'frames' is empty");
  if (u.ww_frame_index >= u.frames.size()) throw std::invalid_argument("'ww_frame_index' must be below the frame count");
  return u;
}

void write_dataset(std::ostream& out, std::span<const Utterance> corpus) {
  if (corpus.empty()) return;
  out << nlohmann::json{{"format", kFormatName}, {"version", kDatasetVersion}}.dump() << '\n';
  for (const auto& u : corpus) out << to_json(u).dump() << '\n';
}

std::vector<Utterance> read_dataset(std::istream& in) {
  std::vector<Utterance> corpus;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!header) {
      if (!j.is_object() || j.value("format", "") != kFormatName)
        throw DatasetError("missing dataset header", line_no);
      if (j.value("version", -1) != kDatasetVersion)
        throw DatasetError("unsupported dataset version " + j.value("version", nlohmann::json()).dump(), line_no);
      header = true;
      continue;
    }
    try {
      corpus.push_back(utterance_from_json(j));
    } catch (const std::exception& e) {
      throw DatasetError(e.what(), line_no);
    }
  }
  return corpus;
}

void write_dataset(const std::filesystem::path& path, std::span<const Utterance> corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open dataset for writing: " + path.string());
  write_dataset(out, corpus);
  if (!out) throw std::runtime_error("failed writing dataset: " + path.string());
}

std::vector<Utterance> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
  return read_dataset(in);
}

Split split_corpus(std::vector<Utterance> corpus, std::size_t train_count) {
  if (train_count > corpus.size())
    throw std::invalid_argument("split_corpus: train_count " + std::to_string(train_count) + " exceeds corpus size " +
                                std::to_string(corpus.size()));
  Split s;
  s.test.assign(std::make_move_iterator(corpus.begin() + static_cast<std::ptrdiff_t>(train_count)),
                std::make_move_iterator(corpus.end()));
  corpus.resize(train_count);
  s.train = std::move(corpus);
  return s;
}

std::vector<std::size_t> nearest_tokens(const Matrix<float>& embeddings, std::span<const Vector<float>> frames) {
  std::vector<std::size_t> out;
  for (const auto& f : frames) {
    require_dim("nearest_tokens frame", embeddings.cols(), f.size());
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t r = 0; r < embeddings.rows(); ++r) {
      double d2 = 0;
      const auto row = embeddings.row(r);
      for (std::size_t c = 0; c < f.size(); ++c) d2 += (double(f[c]) - row[c]) * (double(f[c]) - row[c]);
      if (d2 < best) {
        best = d2;
        arg = r;
      }
    }
    out.push_back(arg + 1);
  }
  return out;
}

}  // namespace bifocal
