// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic wake-word transduction task.
//
// Every token owns a fixed random embedding; an utterance is a token sequence
// whose frames are those embeddings, each repeated about frames_per_token
// times, plus Gaussian noise. The first tokens of each utterance come from a small
// lead-in alphabet, the rest from the body alphabet. Utterance i depends only
// on (spec, i).

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bifocal/numerics.hpp"

namespace bifocal {

struct TaskSpec {
  std::size_t vocab_size = 32;  // real tokens, ids 1..vocab_size; 0 is blank
  std::size_t feature_dim = 16;
  std::size_t frames_per_token = 4;
  /// Each token lasts frames_per_token +- jitter frames (uniform, at least 1).
  std::size_t duration_jitter = 0;
  std::vector<std::size_t> lead_in_alphabet{1, 2, 3};
  std::vector<std::size_t> body_alphabet;  // empty means every token
  double lead_in_fraction = 0.318;
  double noise_std = 0.3;
  /// Per-utterance offset added to every frame (a channel effect shared by
  /// the lead-in and the body).
  double channel_std = 0.0;
  std::size_t min_tokens = 4;
  std::size_t max_tokens = 8;
  std::uint64_t seed = 0;

  std::size_t model_vocab() const noexcept { return vocab_size + 1; }
  std::vector<std::size_t> resolved_body_alphabet() const;
  void validate() const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct Utterance {
  std::vector<Vector<float>> frames;
  std::size_t ww_frame_index = 0;  // number of lead-in frames
  std::vector<std::size_t> labels;
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Token embeddings, row t - 1 for token t.
Matrix<float> token_embeddings(const TaskSpec& spec);

Utterance generate_one(const TaskSpec& spec, const Matrix<float>& embeddings, std::size_t index);
/// Utterances [first, first + n).
std::vector<Utterance> generate(const TaskSpec& spec, std::size_t n, std::size_t first = 0);

class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& what, std::size_t line);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline constexpr int kDatasetVersion = 1;

/// JSON lines. A header line {"format":"bifocal-dataset","version":1}
/// precedes the first record; an empty corpus is an empty file.
void write_dataset(const std::filesystem::path& path, std::span<const Utterance> corpus);
std::vector<Utterance> read_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, std::span<const Utterance> corpus);
std::vector<Utterance> read_dataset(std::istream& in);

nlohmann::json to_json(const Utterance& u);
Utterance utterance_from_json(const nlohmann::json& j);

struct Split {
  std::vector<Utterance> train;
  std::vector<Utterance> test;
};

/// First `train_count` utterances train, the rest test.
Split split_corpus(std::vector<Utterance> corpus, std::size_t train_count);

/// Nearest-embedding token per frame (the noise-free recovery ceiling).
std::vector<std::size_t> nearest_tokens(const Matrix<float>& embeddings, std::span<const Vector<float>> frames);

}  // namespace bifocal
