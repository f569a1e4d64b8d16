#pragma once

#include <array>

#include "r2m/dataset.hpp"
#include "r2m/rng.hpp"

namespace r2m {

/// One drawn augmentation: isotropic rescale, quarter turns about each axis,
/// then axis flips. Labels are never touched.
struct AugmentParams {
  double scale = 1.0;                        // in [0.9, 1.1]
  std::array<int, 3> quarter_turns{0, 0, 0};  // about axes D, H, W
  std::array<bool, 3> flip{false, false, false};

  static AugmentParams identity() { return {}; }
  static AugmentParams sample(Rng& rng);
};

/// Applies the transform; extent and value range are preserved. Rescaling
/// resamples trilinearly, then center-crops or zero-pads back to size.
VolumeSample apply_augment(const VolumeSample& s, const AugmentParams& params);

/// Random draw + apply.
VolumeSample augment(const VolumeSample& s, Rng& rng);

}  // namespace r2m
