#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace r2m::interp {

/// Trilinear resize of a row-major [D,H,W] grid. Coordinates follow the
/// half-voxel (cell center) convention: source index = (dst + 0.5) * ratio
/// - 0.5, clamped at the borders. Constants are preserved exactly; linear
/// ramps are reproduced exactly away from the clamped edge.
std::vector<double> resize_trilinear(const std::vector<double>& src,
                                     const std::array<std::int64_t, 3>& src_ext,
                                     const std::array<std::int64_t, 3>& dst_ext);

/// Depth by nearest-slice replication, then Catmull-Rom bicubic within each
/// axial slice. Can overshoot; callers clamp as their range demands.
std::vector<double> resize_slice_bicubic(
    const std::vector<double>& src, const std::array<std::int64_t, 3>& src_ext,
    const std::array<std::int64_t, 3>& dst_ext);

}  // namespace r2m::interp
