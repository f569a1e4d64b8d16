#include "r2m/interp.hpp"

#include <algorithm>
#include <cmath>

namespace r2m::interp {

namespace {

// src = (dst + 0.5) * (src_ext / dst_ext) - 0.5, clamped into [0, ext-1].
double source_coord(std::int64_t dst, std::int64_t dst_ext, std::int64_t src_ext) {
  if (dst_ext == src_ext) return static_cast<double>(dst);
  const double ratio = static_cast<double>(src_ext) / static_cast<double>(dst_ext);
  const double s = (static_cast<double>(dst) + 0.5) * ratio - 0.5;
  return std::clamp(s, 0.0, static_cast<double>(src_ext - 1));
}

struct Lin {
  std::int64_t i0, i1;
  double w1;  // weight of i1
};

Lin lin_coeff(double s, std::int64_t ext) {
  Lin c{};
  c.i0 = static_cast<std::int64_t>(std::floor(s));
  c.i0 = std::clamp<std::int64_t>(c.i0, 0, ext - 1);
  c.i1 = std::min<std::int64_t>(c.i0 + 1, ext - 1);
  c.w1 = s - static_cast<double>(c.i0);
  return c;
}

// Catmull-Rom kernel weights for the four taps around s; taps clamped.
struct Cub {
  std::array<std::int64_t, 4> idx;
  std::array<double, 4> w;
};

Cub cub_coeff(double s, std::int64_t ext) {
  Cub c{};
  const std::int64_t i = static_cast<std::int64_t>(std::floor(s));
  const double t = s - static_cast<double>(i);
  const double t2 = t * t;
  const double t3 = t2 * t;
  c.w = {-0.5 * t3 + t2 - 0.5 * t, 1.5 * t3 - 2.5 * t2 + 1.0,
         -1.5 * t3 + 2.0 * t2 + 0.5 * t, 0.5 * t3 - 0.5 * t2};
  for (int k = 0; k < 4; ++k) {
    c.idx[static_cast<std::size_t>(k)] =
        std::clamp<std::int64_t>(i - 1 + k, 0, ext - 1);
  }
  return c;
}

}  // namespace

std::vector<double> resize_trilinear(const std::vector<double>& src,
                                     const std::array<std::int64_t, 3>& se,
                                     const std::array<std::int64_t, 3>& de) {
  std::vector<double> dst(static_cast<std::size_t>(de[0] * de[1] * de[2]));
  std::vector<Lin> ld(static_cast<std::size_t>(de[0]));
  std::vector<Lin> lh(static_cast<std::size_t>(de[1]));
  std::vector<Lin> lw(static_cast<std::size_t>(de[2]));
  for (std::int64_t i = 0; i < de[0]; ++i)
    ld[static_cast<std::size_t>(i)] = lin_coeff(source_coord(i, de[0], se[0]), se[0]);
  for (std::int64_t i = 0; i < de[1]; ++i)
    lh[static_cast<std::size_t>(i)] = lin_coeff(source_coord(i, de[1], se[1]), se[1]);
  for (std::int64_t i = 0; i < de[2]; ++i)
    lw[static_cast<std::size_t>(i)] = lin_coeff(source_coord(i, de[2], se[2]), se[2]);

  auto at = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
    return src[static_cast<std::size_t>((d * se[1] + h) * se[2] + w)];
  };
  std::size_t o = 0;
  for (std::int64_t d = 0; d < de[0]; ++d) {
    const Lin& cd = ld[static_cast<std::size_t>(d)];
    for (std::int64_t h = 0; h < de[1]; ++h) {
      const Lin& ch = lh[static_cast<std::size_t>(h)];
      for (std::int64_t w = 0; w < de[2]; ++w, ++o) {
        const Lin& cw = lw[static_cast<std::size_t>(w)];
        const double v00 = at(cd.i0, ch.i0, cw.i0) * (1 - cw.w1) +
                           at(cd.i0, ch.i0, cw.i1) * cw.w1;
        const double v01 = at(cd.i0, ch.i1, cw.i0) * (1 - cw.w1) +
                           at(cd.i0, ch.i1, cw.i1) * cw.w1;
        const double v10 = at(cd.i1, ch.i0, cw.i0) * (1 - cw.w1) +
                           at(cd.i1, ch.i0, cw.i1) * cw.w1;
        const double v11 = at(cd.i1, ch.i1, cw.i0) * (1 - cw.w1) +
                           at(cd.i1, ch.i1, cw.i1) * cw.w1;
        const double v0 = v00 * (1 - ch.w1) + v01 * ch.w1;
        const double v1 = v10 * (1 - ch.w1) + v11 * ch.w1;
        dst[o] = v0 * (1 - cd.w1) + v1 * cd.w1;
      }
    }
  }
  return dst;
}

std::vector<double> resize_slice_bicubic(
    const std::vector<double>& src, const std::array<std::int64_t, 3>& se,
    const std::array<std::int64_t, 3>& de) {
  std::vector<double> dst(static_cast<std::size_t>(de[0] * de[1] * de[2]));
  std::vector<Cub> ch(static_cast<std::size_t>(de[1]));
  std::vector<Cub> cw(static_cast<std::size_t>(de[2]));
  for (std::int64_t i = 0; i < de[1]; ++i)
    ch[static_cast<std::size_t>(i)] = cub_coeff(source_coord(i, de[1], se[1]), se[1]);
  for (std::int64_t i = 0; i < de[2]; ++i)
    cw[static_cast<std::size_t>(i)] = cub_coeff(source_coord(i, de[2], se[2]), se[2]);

  std::size_t o = 0;
  for (std::int64_t d = 0; d < de[0]; ++d) {
    const std::int64_t sd = std::clamp<std::int64_t>(
        static_cast<std::int64_t>(std::llround(source_coord(d, de[0], se[0]))),
        0, se[0] - 1);
    const double* slice = src.data() + sd * se[1] * se[2];
    for (std::int64_t h = 0; h < de[1]; ++h) {
      const Cub& kh = ch[static_cast<std::size_t>(h)];
      for (std::int64_t w = 0; w < de[2]; ++w, ++o) {
        const Cub& kw = cw[static_cast<std::size_t>(w)];
        double acc = 0.0;
        for (int a = 0; a < 4; ++a) {
          const double* row = slice + kh.idx[static_cast<std::size_t>(a)] * se[2];
          double r = 0.0;
          for (int b = 0; b < 4; ++b) {
            r += kw.w[static_cast<std::size_t>(b)] *
                 row[kw.idx[static_cast<std::size_t>(b)]];
          }
          acc += kh.w[static_cast<std::size_t>(a)] * r;
        }
        dst[o] = acc;
      }
    }
  }
  return dst;
}

}  // namespace r2m::interp
