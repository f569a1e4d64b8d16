#include "r2m/augment.hpp"

#include <algorithm>
#include <cmath>

#include "r2m/interp.hpp"

namespace r2m {

AugmentParams AugmentParams::sample(Rng& rng) {
  AugmentParams p;
  for (auto& f : p.flip) f = rng.uniform() < 0.5;
  for (auto& q : p.quarter_turns) q = static_cast<int>(rng.uniform_int(0, 3));
  p.scale = rng.uniform(0.9, 1.1);
  return p;
}

namespace {

using Grid = std::vector<double>;

// One 90-degree turn about `axis` of a [E,E,E] cube. The rotated plane's
// (a,b) indices map as (a,b) -> (b, E-1-a).
Grid rot90_once(const Grid& src, std::int64_t e, int axis) {
  Grid dst(src.size());
  for (std::int64_t d = 0; d < e; ++d) {
    for (std::int64_t h = 0; h < e; ++h) {
      for (std::int64_t w = 0; w < e; ++w) {
        std::int64_t sd = d, sh = h, sw = w;
        switch (axis) {
          case 0:  // plane (H,W)
            sh = w;
            sw = e - 1 - h;
            break;
          case 1:  // plane (D,W)
            sd = w;
            sw = e - 1 - d;
            break;
          default:  // plane (D,H)
            sd = h;
            sh = e - 1 - d;
            break;
        }
        dst[static_cast<std::size_t>((d * e + h) * e + w)] =
            src[static_cast<std::size_t>((sd * e + sh) * e + sw)];
      }
    }
  }
  return dst;
}

Grid flip_axis(const Grid& src, std::int64_t e, int axis) {
  Grid dst(src.size());
  for (std::int64_t d = 0; d < e; ++d) {
    for (std::int64_t h = 0; h < e; ++h) {
      for (std::int64_t w = 0; w < e; ++w) {
        const std::int64_t sd = axis == 0 ? e - 1 - d : d;
        const std::int64_t sh = axis == 1 ? e - 1 - h : h;
        const std::int64_t sw = axis == 2 ? e - 1 - w : w;
        dst[static_cast<std::size_t>((d * e + h) * e + w)] =
            src[static_cast<std::size_t>((sd * e + sh) * e + sw)];
      }
    }
  }
  return dst;
}

// Rescale then center-crop or zero-pad back to extent e.
Grid rescale_to_same(const Grid& src, std::int64_t e, double scale) {
  const std::int64_t scaled =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(
                                    static_cast<double>(e) * scale)));
  if (scaled == e) return src;
  Grid resized = interp::resize_trilinear(src, {e, e, e}, {scaled, scaled, scaled});
  Grid out(static_cast<std::size_t>(e * e * e), 0.0);
  const std::int64_t offset = (scaled - e) / 2;  // negative when padding
  for (std::int64_t d = 0; d < e; ++d) {
    const std::int64_t sd = d + offset;
    if (sd < 0 || sd >= scaled) continue;
    for (std::int64_t h = 0; h < e; ++h) {
      const std::int64_t sh = h + offset;
      if (sh < 0 || sh >= scaled) continue;
      for (std::int64_t w = 0; w < e; ++w) {
        const std::int64_t sw = w + offset;
        if (sw < 0 || sw >= scaled) continue;
        out[static_cast<std::size_t>((d * e + h) * e + w)] =
            resized[static_cast<std::size_t>((sd * scaled + sh) * scaled + sw)];
      }
    }
  }
  return out;
}

}  // namespace

VolumeSample apply_augment(const VolumeSample& s, const AugmentParams& params) {
  const auto& ext = s.volume.extents;
  if (ext[0] != ext[1] || ext[1] != ext[2]) {
    throw ValidationError("augment: sample '" + s.source_id + "' is not cubic");
  }
  const std::int64_t e = ext[0];
  VolumeSample out = s;
  Grid g = s.volume.voxels;
  if (params.scale != 1.0) g = rescale_to_same(g, e, params.scale);
  for (int axis = 0; axis < 3; ++axis) {
    const int turns = ((params.quarter_turns[static_cast<std::size_t>(axis)] % 4) + 4) % 4;
    for (int t = 0; t < turns; ++t) g = rot90_once(g, e, axis);
  }
  for (int axis = 0; axis < 3; ++axis) {
    if (params.flip[static_cast<std::size_t>(axis)]) g = flip_axis(g, e, axis);
  }
  out.volume.voxels = std::move(g);
  return out;
}

VolumeSample augment(const VolumeSample& s, Rng& rng) {
  return apply_augment(s, AugmentParams::sample(rng));
}

}  // namespace r2m
