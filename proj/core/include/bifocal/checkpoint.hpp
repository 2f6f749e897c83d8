// SPDX-License-Identifier: Apache-2.0
//
// Binary model checkpoints.
//
// Layout (little-endian): magic "BFRNNT\0\0", u32 version, u64 length + JSON
// metadata (model config and the experiment config that produced it), u64
// tensor count, then per tensor: u32 name length, name, u64 rows, u64 cols,
// rows * cols float32 values.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "bifocal/transducer.hpp"

namespace bifocal {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json metadata;  // {"model": ..., "experiment": ...}
  TransducerModel<float> model;
};

void save_checkpoint(const std::filesystem::path& path, const TransducerModel<float>& model,
                     const nlohmann::json& experiment = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError naming the first mismatch.
void check_compatible(const TransducerConfig& expected, const TransducerConfig& found);

}  // namespace bifocal
