#pragma once

// PRLW weights container:
//   "PRLW" | u32 version (=1) | u32 entry count
//   per entry: u16 name length | UTF-8 name | u8 rank | u32 extents[rank] |
//              little-endian f32 data[numel]
// All integers little-endian, no padding, no compression.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prl/tensor.hpp"

namespace prl {

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline constexpr std::uint32_t kWeightsVersion = 1;

std::vector<std::uint8_t> encode_weights(const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> decode_weights(const std::vector<std::uint8_t>& bytes);

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

}  // namespace prl
