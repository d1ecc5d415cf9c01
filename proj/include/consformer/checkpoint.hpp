#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "consformer/graph.hpp"

namespace cf {

// Binary parameter checkpoint, little-endian throughout:
//   "VCFK" | version u32 | entry count u32 |
//   per entry: name length u16 | UTF-8 name | rank u8 | extents u64 × rank |
//              float64 payload, row-major
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store);
// Throws ValidationError on malformed input.
ParamStore decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

// Copies every value from `source` into `target`; names and shapes must match.
void assign_parameters(ParamStore& target, const ParamStore& source);

}  // namespace cf
