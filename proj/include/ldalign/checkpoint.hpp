#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldalign/params.hpp"

namespace ldalign {

inline constexpr int kCheckpointFormatVersion = 1;

// On-disk layout of a checkpoint directory:
//   manifest.json  kind, config, format version, array names/shapes/offsets,
//                  dtype, content hash (SHA-256 of params.bin)
//   params.bin     little-endian float32 arrays concatenated in manifest order
struct Checkpoint {
  std::string kind;  // "lm" or "guide"
  nlohmann::json config;
  std::vector<ParamEntry> arrays;
  std::vector<float> values;
  std::string content_hash;
};

void write_checkpoint(const std::string& dir, const std::string& kind,
                      const nlohmann::json& config, const ParamTable& table,
                      std::span<const float> values);

// Verifies format version, array bookkeeping and the content hash.
Checkpoint read_checkpoint(const std::string& dir);

// Hash recorded in a checkpoint's manifest, without loading the data.
std::string checkpoint_hash(const std::string& dir);

// Throws ConfigError unless `arrays` matches `table` name-by-name.
void check_layout(const std::vector<ParamEntry>& arrays, const ParamTable& table);

}  // namespace ldalign
