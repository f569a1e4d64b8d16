#include "r2m/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "r2m/interp.hpp"

namespace r2m {

Tensor cdam_weights(const Tensor& activations) {
  if (activations.shape().size() != 4) {
    throw ValidationError("cdam_weights: activations must be [C,D,H,W], got " +
                          shape_str(activations.shape()));
  }
  return softmax(global_avg_pool(activations.detached()));
}

Tensor cdam_map(const Tensor& activations, const Tensor& weights) {
  if (activations.shape().size() != 4) {
    throw ValidationError("cdam_map: activations must be [C,D,H,W]");
  }
  const std::int64_t c = activations.shape()[0];
  if (weights.shape().size() != 1 || weights.shape()[0] != c) {
    throw ValidationError("cdam_map: weight length " +
                          (weights.shape().empty()
                               ? std::string("0")
                               : std::to_string(weights.shape()[0])) +
                          " does not match " + std::to_string(c) + " channels");
  }
  const std::int64_t voxels = activations.numel() / c;
  std::vector<double> out(static_cast<std::size_t>(voxels), 0.0);
  const auto& ad = activations.data();
  const auto& wd = weights.data();
  for (std::int64_t n = 0; n < c; ++n) {
    const double w = wd[static_cast<std::size_t>(n)];
    const std::size_t base = static_cast<std::size_t>(n * voxels);
    for (std::int64_t i = 0; i < voxels; ++i) {
      out[static_cast<std::size_t>(i)] += w * ad[base + i];
    }
  }
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  Shape shape(activations.shape().begin() + 1, activations.shape().end());
  return Tensor::from(std::move(out), std::move(shape));
}

UpsampleMode upsample_mode_from_string(const std::string& s) {
  if (s == "trilinear") return UpsampleMode::trilinear;
  if (s == "slice-bicubic") return UpsampleMode::slice_bicubic;
  throw ValidationError("unknown upsample mode '" + s + "'");
}

std::string to_string(UpsampleMode m) {
  return m == UpsampleMode::trilinear ? "trilinear" : "slice-bicubic";
}

Tensor upsample_to_input(const Tensor& map,
                         const std::array<std::int64_t, 3>& target,
                         UpsampleMode mode) {
  if (map.shape().size() != 3) {
    throw ValidationError("upsample_to_input: map must be [D,H,W], got " +
                          shape_str(map.shape()));
  }
  const std::array<std::int64_t, 3> src{map.shape()[0], map.shape()[1],
                                        map.shape()[2]};
  for (int a = 0; a < 3; ++a) {
    const auto i = static_cast<std::size_t>(a);
    if (target[i] < src[i]) {
      throw ValidationError("upsample_to_input: target extent " +
                            std::to_string(target[i]) + " on axis " +
                            std::to_string(a) + " is below the source " +
                            std::to_string(src[i]));
    }
  }
  std::vector<double> out =
      mode == UpsampleMode::trilinear
          ? interp::resize_trilinear(map.data(), src, target)
          : interp::resize_slice_bicubic(map.data(), src, target);
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::from(std::move(out), {target[0], target[1], target[2]});
}

Heatmap make_heatmap(const Tensor& activations,
                     const std::array<std::int64_t, 3>& input_extent,
                     UpsampleMode mode) {
  const Tensor alpha = cdam_weights(activations);
  const Tensor raw = cdam_map(activations, alpha);
  Heatmap h;
  h.saliency = upsample_to_input(raw, input_extent, mode);
  h.peak = *std::max_element(h.saliency.data().begin(), h.saliency.data().end());
  return h;
}

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

// Fixed blue -> cyan -> yellow -> red ramp; entry 255 is pure red.
std::array<Rgb, 256> color_table() {
  std::array<Rgb, 256> table{};
  constexpr Rgb anchors[4] = {{0, 0, 255}, {0, 255, 255}, {255, 255, 0}, {255, 0, 0}};
  for (int i = 0; i < 256; ++i) {
    const double t = static_cast<double>(i) / 255.0 * 3.0;
    const int seg = std::min(2, static_cast<int>(t));
    const double f = t - seg;
    const Rgb& a = anchors[seg];
    const Rgb& b = anchors[seg + 1];
    table[static_cast<std::size_t>(i)] = {
        static_cast<std::uint8_t>(std::lround(a.r + (b.r - a.r) * f)),
        static_cast<std::uint8_t>(std::lround(a.g + (b.g - a.g) * f)),
        static_cast<std::uint8_t>(std::lround(a.b + (b.b - a.b) * f))};
  }
  return table;
}

}  // namespace

std::vector<std::uint8_t> render_heatmap(const Heatmap& heatmap,
                                         const CtVolume& underlay) {
  const auto& ext = underlay.extents;
  const Shape expected{ext[0], ext[1], ext[2]};
  if (heatmap.saliency.shape() != expected) {
    throw ValidationError("render_heatmap: saliency " +
                          shape_str(heatmap.saliency.shape()) +
                          " does not match the underlay " + shape_str(expected));
  }
  if (underlay.stage == VolumeStage::raw) {
    throw ValidationError("render_heatmap: underlay must be normalized");
  }
  const std::int64_t slice = ext[0] / 2;
  const std::int64_t height = ext[1];
  const std::int64_t width = ext[2];
  const auto table = color_table();
  const double peak = heatmap.peak;

  char header[64];
  const int header_len = std::snprintf(header, sizeof header, "P6\n%lld %lld\n255\n",
                                       static_cast<long long>(width),
                                       static_cast<long long>(height));
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(header_len + height * width * 3));
  out.insert(out.end(), header, header + header_len);

  const auto& sal = heatmap.saliency.data();
  for (std::int64_t h = 0; h < height; ++h) {
    for (std::int64_t w = 0; w < width; ++w) {
      const double gray = underlay.at(slice, h, w) * 255.0;
      double r = gray, g = gray, b = gray;
      if (peak > 0.0) {
        const double t =
            sal[static_cast<std::size_t>((slice * height + h) * width + w)] / peak;
        const auto& c = table[static_cast<std::size_t>(
            std::clamp(std::lround(t * 255.0), 0L, 255L))];
        r = 0.5 * c.r + 0.5 * gray;
        g = 0.5 * c.g + 0.5 * gray;
        b = 0.5 * c.b + 0.5 * gray;
      }
      out.push_back(static_cast<std::uint8_t>(std::lround(r)));
      out.push_back(static_cast<std::uint8_t>(std::lround(g)));
      out.push_back(static_cast<std::uint8_t>(std::lround(b)));
    }
  }
  return out;
}

}  // namespace r2m
