#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "histlayer/tensor.hpp"

namespace histlayer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// HPRM layout, little-endian:
///   "HPRM" | version u32 | count u32 |
///   per parameter: name_len u32, name bytes, 4 x u32 shape,
///                  float64 values, float64 momentum, u8 lock mask
std::vector<std::uint8_t> encode_checkpoint(std::span<const Parameter* const> params);
std::vector<Parameter> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params);
std::vector<Parameter> load_checkpoint(const std::filesystem::path& path);

}  // namespace histlayer
