#pragma once

#include <map>
#include <string>
#include <vector>

#include "dspr/tensor.hpp"

namespace dspr {

inline constexpr uint32_t kCheckpointVersion = 1;

/// Versioned binary container: 8-byte magic, version word, JSON manifest
/// (seed, config echo, metric snapshot, parameter table), then raw
/// little-endian float64 blobs in manifest order. Round-trips are bit-exact.
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  uint64_t seed = 0;
  std::string config_json = "{}";
  std::map<std::string, double> metrics;
  std::vector<NamedTensor> params;  // tapeless value tensors
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Throws on missing file, corrupt container, or version mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dspr
