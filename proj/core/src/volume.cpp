#include "r2m/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "r2m/interp.hpp"

static_assert(std::endian::native == std::endian::little,
              "volume i/o assumes a little-endian host");

namespace r2m {

void CtVolume::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (extents[static_cast<std::size_t>(a)] < 1) {
      throw ValidationError("volume: axis " + std::to_string(a) +
                            " has extent " +
                            std::to_string(extents[static_cast<std::size_t>(a)]));
    }
    if (!(spacing_mm[static_cast<std::size_t>(a)] > 0.0)) {
      throw ValidationError("volume: spacing on axis " + std::to_string(a) +
                            " must be positive");
    }
  }
  if (numel() != static_cast<std::int64_t>(voxels.size())) {
    throw ValidationError("volume: extents imply " + std::to_string(numel()) +
                          " voxels, got " + std::to_string(voxels.size()));
  }
  if (stage != VolumeStage::raw) {
    for (double v : voxels) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError(
            "volume: normalized volume holds a voxel outside [0,1]");
      }
    }
  }
}

CtVolume clip_normalize_hu(const CtVolume& v) {
  if (v.stage != VolumeStage::raw) {
    throw ValidationError("clip_normalize_hu: volume is already normalized");
  }
  CtVolume out = v;
  out.stage = VolumeStage::normalized;
  for (auto& x : out.voxels) {
    x = (std::clamp(x, kHuClipLo, kHuClipHi) - kHuClipLo) / (kHuClipHi - kHuClipLo);
  }
  return out;
}

CtVolume resample_isotropic(const CtVolume& v, double target_mm) {
  if (!(target_mm > 0.0)) {
    throw ValidationError("resample_isotropic: target spacing must be positive");
  }
  v.validate();
  std::array<std::int64_t, 3> dst_ext{};
  for (int a = 0; a < 3; ++a) {
    const auto i = static_cast<std::size_t>(a);
    if (v.extents[i] < 2) {
      throw ValidationError("resample_isotropic: axis " + std::to_string(a) +
                            " is degenerate (extent " +
                            std::to_string(v.extents[i]) + ")");
    }
    dst_ext[i] = static_cast<std::int64_t>(
        std::llround(static_cast<double>(v.extents[i]) * v.spacing_mm[i] / target_mm));
    dst_ext[i] = std::max<std::int64_t>(1, dst_ext[i]);
  }
  CtVolume out;
  out.extents = dst_ext;
  out.spacing_mm = {target_mm, target_mm, target_mm};
  out.voxels = interp::resize_trilinear(v.voxels, v.extents, dst_ext);
  out.stage = v.stage == VolumeStage::normalized ? VolumeStage::resampled : v.stage;
  return out;
}

CtVolume crop_nodule(const CtVolume& v, const std::array<std::int64_t, 3>& center,
                     std::int64_t size) {
  if (size <= 0) {
    throw ValidationError("crop_nodule: size must be positive");
  }
  for (int a = 0; a < 3; ++a) {
    const auto i = static_cast<std::size_t>(a);
    if (center[i] < 0 || center[i] >= v.extents[i]) {
      throw ValidationError("crop_nodule: center coordinate " +
                            std::to_string(center[i]) + " on axis " +
                            std::to_string(a) + " lies outside extent " +
                            std::to_string(v.extents[i]));
    }
  }
  CtVolume out;
  out.extents = {size, size, size};
  out.spacing_mm = v.spacing_mm;
  out.stage = v.stage;
  out.voxels.assign(static_cast<std::size_t>(size * size * size), 0.0);
  const std::array<std::int64_t, 3> start{center[0] - size / 2,
                                          center[1] - size / 2,
                                          center[2] - size / 2};
  for (std::int64_t d = 0; d < size; ++d) {
    const std::int64_t sd = start[0] + d;
    if (sd < 0 || sd >= v.extents[0]) continue;
    for (std::int64_t h = 0; h < size; ++h) {
      const std::int64_t sh = start[1] + h;
      if (sh < 0 || sh >= v.extents[1]) continue;
      for (std::int64_t w = 0; w < size; ++w) {
        const std::int64_t sw = start[2] + w;
        if (sw < 0 || sw >= v.extents[2]) continue;
        out.voxels[static_cast<std::size_t>((d * size + h) * size + w)] =
            v.at(sd, sh, sw);
      }
    }
  }
  return out;
}

namespace {
constexpr char kMagic[8] = {'R', '2', 'M', 'V', 'O', 'L', '1', '\0'};
}

void save_volume(const std::filesystem::path& path, const CtVolume& v) {
  v.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("volume: cannot open for writing: " + path.string());
  os.write(kMagic, sizeof kMagic);
  const auto stage = static_cast<std::uint8_t>(v.stage);
  os.write(reinterpret_cast<const char*>(&stage), 1);
  for (auto e : v.extents) {
    const auto u = static_cast<std::uint32_t>(e);
    os.write(reinterpret_cast<const char*>(&u), sizeof u);
  }
  for (auto s : v.spacing_mm) {
    os.write(reinterpret_cast<const char*>(&s), sizeof s);
  }
  os.write(reinterpret_cast<const char*>(v.voxels.data()),
           static_cast<std::streamsize>(v.voxels.size() * sizeof(double)));
  if (!os) throw IoError("volume: write failed: " + path.string());
}

CtVolume load_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("volume: cannot open: " + path.string());
  char magic[8] = {};
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("volume: bad magic in " + path.string());
  }
  std::uint8_t stage = 0;
  if (!is.read(reinterpret_cast<char*>(&stage), 1) || stage > 2) {
    throw IoError("volume: bad stage tag in " + path.string());
  }
  CtVolume v;
  v.stage = static_cast<VolumeStage>(stage);
  for (auto& e : v.extents) {
    std::uint32_t u = 0;
    if (!is.read(reinterpret_cast<char*>(&u), sizeof u)) {
      throw IoError("volume: truncated extents in " + path.string());
    }
    e = static_cast<std::int64_t>(u);
  }
  for (auto& s : v.spacing_mm) {
    if (!is.read(reinterpret_cast<char*>(&s), sizeof s)) {
      throw IoError("volume: truncated spacing in " + path.string());
    }
  }
  v.voxels.resize(static_cast<std::size_t>(v.numel()));
  if (!is.read(reinterpret_cast<char*>(v.voxels.data()),
               static_cast<std::streamsize>(v.voxels.size() * sizeof(double)))) {
    throw IoError("volume: truncated voxel data in " + path.string());
  }
  char extra = 0;
  if (is.read(&extra, 1)) {
    throw IoError("volume: trailing bytes in " + path.string());
  }
  v.validate();
  return v;
}

}  // namespace r2m
