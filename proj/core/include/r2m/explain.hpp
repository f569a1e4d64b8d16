#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "r2m/tensor.hpp"
#include "r2m/volume.hpp"

namespace r2m {

/// Channel weights: the softmax over channels of the per-channel spatial
/// means. Always a probability vector.
Tensor cdam_weights(const Tensor& activations);

/// ReLU of the weight-combined channel maps: [C,D,H,W] x [C] -> [D,H,W],
/// non-negative.
Tensor cdam_map(const Tensor& activations, const Tensor& weights);

enum class UpsampleMode { trilinear, slice_bicubic };

UpsampleMode upsample_mode_from_string(const std::string& s);
std::string to_string(UpsampleMode m);

/// Interpolates a [D,H,W] map up to the target extents (each >= source) and
/// clamps at zero from below.
Tensor upsample_to_input(const Tensor& map,
                         const std::array<std::int64_t, 3>& target,
                         UpsampleMode mode = UpsampleMode::trilinear);

struct Heatmap {
  Tensor saliency;   // input resolution, >= 0
  double peak = 0.0;  // max before unit scaling at render time
};

/// Full pipeline over a cached activation set: weights, map, upsample.
Heatmap make_heatmap(const Tensor& activations,
                     const std::array<std::int64_t, 3>& input_extent,
                     UpsampleMode mode = UpsampleMode::trilinear);

/// Center axial slice rendered as binary PPM (P6). Saliency is scaled by its
/// peak, mapped through a fixed 256-entry blue-to-red table and alpha-blended
/// (0.5) over the grayscale underlay; an all-zero map gives the plain
/// underlay.
std::vector<std::uint8_t> render_heatmap(const Heatmap& heatmap,
                                         const CtVolume& underlay);

}  // namespace r2m
