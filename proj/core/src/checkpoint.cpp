// SPDX-License-Identifier: Apache-2.0

#include "bifocal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "bifocal/config.hpp"

namespace bifocal {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'B', 'F', 'R', 'N', 'N', 'T', '\0', '\0'};

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U take(std::istream& in, const char* what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) throw CheckpointError(std::string("truncated checkpoint reading ") + what);
  return v;
}

std::string take_string(std::istream& in, std::uint64_t n, const char* what) {
  if (n > (1ULL << 32)) throw CheckpointError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError(std::string("truncated checkpoint reading ") + what);
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TransducerModel<float>& model,
                     const nlohmann::json& experiment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  const std::string meta = nlohmann::json{{"model", to_json(model.config)}, {"experiment", experiment}}.dump();
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  const auto tensors = model.tensors();
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint64_t>(out, t.rows);
    put<std::uint64_t>(out, t.cols);
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size_bytes()));
  }
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path.string());
  const auto version = take<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = take<std::uint64_t>(in, "metadata length");
  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(take_string(in, meta_len, "metadata"));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  if (!ck.metadata.contains("model")) throw CheckpointError("checkpoint metadata lacks a model config");
  const TransducerConfig config = transducer_config_from_json(ck.metadata.at("model"), "checkpoint.model");
  Rng unused;
  ck.model = TransducerModel<float>::create(config, unused);
  auto tensors = ck.model.tensors();
  const auto count = take<std::uint64_t>(in, "tensor count");
  if (count != tensors.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(tensors.size()));
  for (auto& t : tensors) {
    const auto name_len = take<std::uint32_t>(in, "tensor name length");
    const std::string name = take_string(in, name_len, "tensor name");
    const auto rows = take<std::uint64_t>(in, "tensor rows");
    const auto cols = take<std::uint64_t>(in, "tensor cols");
    if (name != t.name) throw CheckpointError("expected tensor '" + t.name + "', found '" + name + "'");
    if (rows != t.rows || cols != t.cols)
      throw CheckpointError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                            ", expected " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size_bytes())))
      throw CheckpointError("truncated checkpoint reading tensor '" + name + "'");
  }
  return ck;
}

void check_compatible(const TransducerConfig& expected, const TransducerConfig& found) {
  if (expected == found) return;
  const auto a = to_json(expected);
  const auto b = to_json(found);
  const auto diff = nlohmann::json::diff(a, b);
  std::string where = diff.empty() ? "model" : diff.front().value("path", std::string("model"));
  throw CheckpointError("checkpoint incompatible with config at " + where + ": config has " +
                        a.value(nlohmann::json::json_pointer(where), nlohmann::json()).dump() + ", checkpoint has " +
                        b.value(nlohmann::json::json_pointer(where), nlohmann::json()).dump());
}

}  // namespace bifocal
