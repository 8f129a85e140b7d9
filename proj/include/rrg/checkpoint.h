#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "rrg/metrics.h"
#include "rrg/model.h"

namespace rrg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian layout:
///   "LMRRG1" | u32 version | str config | u8 has_weights | f64 intercept, coef[4]
///   | u32 n, str token × n | u32 k, (str name, str description) × k
///   | u32 tensors, (str name | u32 ndim | u64 dims… | u64 count) × tensors
///   | f32 payload in manifest order
/// where str is a u32 byte length followed by UTF-8 bytes.
struct Checkpoint {
  Config config;
  ModelState model;
  std::optional<RadCliqWeights> weights;
};

void save_checkpoint(const std::filesystem::path& path, const Config& config, const ModelState& model,
                     const std::optional<RadCliqWeights>& weights);
/// Throws DataError (naming the byte offset) on a malformed file and
/// IoError when it cannot be read.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_bytes(const Config& config, const ModelState& model,
                             const std::optional<RadCliqWeights>& weights);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

}  // namespace rrg
