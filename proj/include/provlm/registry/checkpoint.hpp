#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "provlm/model/params.hpp"
#include "provlm/trainer/optimizer.hpp"

namespace provlm::registry {

// Checkpoint file layout (all integers little-endian):
//
//   "LCKP"                      4 bytes
//   version                     u32 (kCheckpointVersion)
//   section_count               u32
//   section table, per section:
//     name_len u16, name bytes (UTF-8)
//     offset u64                absolute file offset of the payload
//     length u64                payload bytes
//     dtype u8                  model::DType
//     ndim u8, dims u64[ndim]
//   payloads                    in table order, no padding
//   "HASH" + SHA-256            over every preceding byte
//
// Sections: "meta" (u8, JSON), "param/<tensor>" (f32, or bf16 when the
// precision tag is half), "optim/m/<tensor>", "optim/v/<tensor>" (f32),
// "optim/step" (u64[1]) and "rng" (u8, serialized xoshiro256** state).
// A sidecar "<file>.sha256" holds the same hash as lowercase hex.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr int kCheckpointSchemaVersion = 1;

using trainer::CheckpointPrecision;

struct Checkpoint {
  std::uint32_t index = 0;  // chunk boundaries passed; 0 is the initial state
  std::uint64_t step = 0;
  model::ParameterSet<float> params;
  std::optional<trainer::OptimizerState<float>> optimizer;
  std::vector<std::uint8_t> rng_state;
  CheckpointPrecision precision = CheckpointPrecision::full;
  std::string manifest_checksum;
  int schema_version = kCheckpointSchemaVersion;
  nlohmann::json run_state = nlohmann::json::object();  // trainer bookkeeping, opaque here
};

struct SaveOptions {
  // Test hook: write this many bytes of the temp file, then throw IoError
  // as if the process died mid-save.
  std::optional<std::size_t> crash_after_bytes;
};

struct LoadOptions {
  std::optional<model::ModelConfig> expect_config;
  std::optional<std::string> expect_manifest_checksum;
  bool require_optimizer = true;
  bool running_full_precision = true;  // loading a half checkpoint then warns
};

struct LoadReport {
  std::string content_hash;
  std::vector<std::string> warnings;
};

std::string checkpoint_file_name(std::uint32_t index);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const LoadOptions& options = {},
                             LoadReport* report = nullptr);

/// Writes `dir/checkpoint_file_name(c.index)` atomically plus its sidecar and
/// returns the path. Existing checkpoints are never touched on failure.
std::filesystem::path save_checkpoint(const Checkpoint& c, const std::filesystem::path& dir,
                                      const SaveOptions& options = {});

/// Throws CheckpointError on bad magic, version, hash, shapes, missing
/// optimizer state (unless not required) or manifest mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {},
                           LoadReport* report = nullptr);

/// Completed checkpoints in `dir`, ordered by index. Temp files are ignored.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir);

/// Reads the trailing hash without decoding tensors.
std::string checkpoint_hash(const std::filesystem::path& path);

std::uint16_t float_to_bf16(float f);
float bf16_to_float(std::uint16_t b);

}  // namespace provlm::registry
