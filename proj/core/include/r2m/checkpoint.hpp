#pragma once

#include <filesystem>

#include "r2m/net.hpp"

namespace r2m {

/// Binary parameter container. Layout: 8-byte magic "R2MPARAM", u32 length +
/// UTF-8 JSON of the model config, u32 tensor count, then per tensor:
/// u32 name length, name bytes, u32 rank, u64 extents, little-endian f64
/// values. Round-trips byte-identically.
void save_checkpoint(const std::filesystem::path& path,
                     const R2MNetParams& params);

R2MNetParams load_checkpoint(const std::filesystem::path& path);

}  // namespace r2m
