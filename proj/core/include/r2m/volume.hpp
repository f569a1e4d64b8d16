#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "r2m/errors.hpp"

namespace r2m {

enum class VolumeStage : std::uint8_t { raw = 0, normalized = 1, resampled = 2 };

/// A 3D scan block. Voxels are Hounsfield units while `stage == raw` and
/// unit-interval intensities afterwards.
struct CtVolume {
  std::array<std::int64_t, 3> extents{};     // [D,H,W]
  std::array<double, 3> spacing_mm{1, 1, 1};  // [z,y,x]
  std::vector<double> voxels;                 // row-major
  VolumeStage stage = VolumeStage::raw;

  std::int64_t numel() const { return extents[0] * extents[1] * extents[2]; }
  double at(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return voxels[static_cast<std::size_t>((d * extents[1] + h) * extents[2] + w)];
  }
  void validate() const;
};

inline constexpr double kHuClipLo = -1200.0;
inline constexpr double kHuClipHi = 600.0;

/// Clamp HU into [-1200, 600] and map affinely onto [0, 1].
CtVolume clip_normalize_hu(const CtVolume& v);

/// Trilinear resample onto a uniform grid of `target_mm` spacing. New extents
/// are round(extent * spacing / target) per axis.
CtVolume resample_isotropic(const CtVolume& v, double target_mm = 1.0);

/// Cubic crop of `size` voxels centered at `center` (voxel coordinates,
/// [d,h,w]); regions outside the volume are zero-filled. The crop starts at
/// center - size/2 per axis.
CtVolume crop_nodule(const CtVolume& v, const std::array<std::int64_t, 3>& center,
                     std::int64_t size);

/// Binary volume file: 8-byte magic "R2MVOL1\0", stage byte, 3 x u32 extents,
/// 3 x f64 spacing, little-endian f64 voxels. Round-trips byte-identically.
void save_volume(const std::filesystem::path& path, const CtVolume& v);
CtVolume load_volume(const std::filesystem::path& path);

}  // namespace r2m
