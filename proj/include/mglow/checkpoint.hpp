#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mglow/model.hpp"
#include "mglow/nn.hpp"

namespace mglow {

// Checkpoint files: "MGCK", u16 version, u32 header length, a JSON header
// (config, manifolds, latent shapes, tensor names and shapes, step), u64
// parameter count, little-endian float64 parameters followed by the Adam
// first and second moments, and a trailing crc32 of everything before it.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct TensorInfo {
  std::string name;
  long rows = 0;
  long cols = 0;
  bool operator==(const TensorInfo&) const = default;
};

struct Checkpoint {
  std::string config_yaml;
  std::string source_manifold;
  std::string target_manifold;
  std::vector<std::string> latent_shapes;  // "source:2x2x2*4" style, both streams
  long step = 0;
  long adam_t = 0;
  std::vector<TensorInfo> tensors;
  VectorXd params, adam_m, adam_v;
};

std::vector<TensorInfo> tensor_schema(const ConditionalModel& model);
std::vector<std::string> latent_schedule(const ConditionalModel& model);

Checkpoint make_checkpoint(const ConditionalModel& model, const Adam& adam, long step, const std::string& config_yaml);

std::string encode_checkpoint(const Checkpoint& c);
// Throws FormatError on bad magic or truncation, ChecksumError when the crc
// does not match, and FormatError naming both versions on a version mismatch.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Copies parameters (and optionally the Adam state) into a model built for
// the same configuration. Throws ShapeError naming the first differing tensor.
void restore_checkpoint(const Checkpoint& c, ConditionalModel& model, Adam* adam = nullptr);

}  // namespace mglow
