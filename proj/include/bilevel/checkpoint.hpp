#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bilevel/params.hpp"

namespace bilevel {

// Binary layout (little-endian):
//   "BILEV01"
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, rank x u32 dims
//   f64 parameter data in layout order
std::vector<std::uint8_t> encode_checkpoint(const ThetaParams& theta);
ThetaParams decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ThetaParams& theta);
ThetaParams load_checkpoint(const std::filesystem::path& path);

// Loads and checks names and shapes against `expected`; the returned
// parameters carry `expected` (including its nonneg flags).
ThetaParams load_checkpoint(const std::filesystem::path& path, const ParamLayout& expected);

}  // namespace bilevel
