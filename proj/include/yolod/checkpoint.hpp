#pragma once

// Weight checkpoint file, little-endian:
//   "YLDW" | u32 version | records until EOF
//   record: u32 name_len | name (UTF-8) | u32 rank | u32 extent * rank | f32 payload

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "yolod/tensor.hpp"

namespace yolod {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool operator==(const NamedTensor&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
// Throws FormatError on bad magic, unknown version, or truncation.
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace yolod
