#include "r2m/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "r2m/rng.hpp"

namespace r2m {

void PhantomSpec::validate() const {
  if (volume_extent < 16) {
    throw ValidationError("phantom: volume_extent must be >= 16");
  }
  auto mean = [](const std::array<double, 2>& r) { return 0.5 * (r[0] + r[1]); };
  if (!(benign_radius[0] > 0 && benign_radius[1] >= benign_radius[0]) ||
      !(malignant_radius[0] > 0 && malignant_radius[1] >= malignant_radius[0])) {
    throw ValidationError("phantom: radius ranges must be positive and ordered");
  }
  if (!(mean(malignant_radius) > mean(benign_radius))) {
    throw ValidationError(
        "phantom: malignant mean radius must exceed the benign one");
  }
  if (!(malignant_irregularity > benign_irregularity) ||
      !(benign_irregularity >= 0.0) || !(malignant_irregularity < 1.0)) {
    throw ValidationError(
        "phantom: irregularity amplitudes must satisfy 0 <= benign < malignant < 1");
  }
  if (!(cn_core_mean > sn_core_mean && sn_core_mean > mggo_core_mean() &&
        mggo_core_mean() > ggo_core_mean)) {
    throw ValidationError(
        "phantom: core densities must be strictly ordered CN > SN > MGGO > GGO");
  }
  if (malignant_radius[1] * (1.0 + malignant_irregularity) >
      0.45 * volume_extent) {
    throw ValidationError("phantom: largest nodule would not fit the volume");
  }
  if (noise_level < 0.0 || vessel_count < 0) {
    throw ValidationError("phantom: noise_level and vessel_count must be >= 0");
  }
}

namespace {

struct Vec3 {
  double d, h, w;
};

double dot(const Vec3& a, const Vec3& b) {
  return a.d * b.d + a.h * b.h + a.w * b.w;
}

Vec3 sub(const Vec3& a, const Vec3& b) { return {a.d - b.d, a.h - b.h, a.w - b.w}; }

// Low-order direction harmonics for the lobed surface perturbation.
// Normalized so the combined perturbation stays within [-1, 1].
struct LobeField {
  std::array<double, 8> coeff{};
  double norm = 1.0;

  static LobeField draw(Rng& rng) {
    LobeField f;
    double total = 0.0;
    for (auto& c : f.coeff) {
      c = rng.uniform(-1.0, 1.0);
      total += std::abs(c);
    }
    f.norm = std::max(total, 1e-12);
    return f;
  }

  double eval(const Vec3& u) const {
    const std::array<double, 8> basis{
        u.d,         u.h,         u.w,         u.d * u.h,
        u.h * u.w,   u.d * u.w,   u.d * u.d - u.w * u.w,
        u.h * u.h - u.w * u.w};
    double s = 0.0;
    for (int i = 0; i < 8; ++i) {
      s += coeff[static_cast<std::size_t>(i)] * basis[static_cast<std::size_t>(i)];
    }
    return s / norm;
  }
};

// Smooth bimodal split for MGGO: three random plane waves, solid where the
// sum is positive.
struct SplitField {
  std::array<Vec3, 3> wave{};
  std::array<double, 3> phase{};

  static SplitField draw(Rng& rng, double extent) {
    SplitField f;
    for (int i = 0; i < 3; ++i) {
      // high enough that even the smallest nodule straddles several solid and
      // ground-glass patches; a low-frequency field can realize a mixed
      // nodule as uniformly one component
      const double freq = rng.uniform(4.0, 7.0) * 2.0 * 3.14159265358979323846 / extent;
      // random direction on the sphere via normalized gaussians
      Vec3 dir{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
      const double len = std::sqrt(std::max(dot(dir, dir), 1e-12));
      f.wave[static_cast<std::size_t>(i)] = {dir.d / len * freq, dir.h / len * freq,
                                             dir.w / len * freq};
      f.phase[static_cast<std::size_t>(i)] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    }
    return f;
  }

  bool solid(const Vec3& p) const {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      s += std::sin(dot(wave[static_cast<std::size_t>(i)], p) +
                    phase[static_cast<std::size_t>(i)]);
    }
    return s > 0.0;
  }
};

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = sub(b, a);
  const double len2 = std::max(dot(ab, ab), 1e-12);
  const double t = std::clamp(dot(sub(p, a), ab) / len2, 0.0, 1.0);
  const Vec3 q{a.d + t * ab.d, a.h + t * ab.h, a.w + t * ab.w};
  const Vec3 dp = sub(p, q);
  return std::sqrt(dot(dp, dp));
}

}  // namespace

PhantomResult generate_phantom(const PhantomSpec& spec, RadiologyClass radiology,
                               Malignancy malignancy) {
  spec.validate();
  const std::int64_t ext = spec.volume_extent;
  const std::size_t n = static_cast<std::size_t>(ext * ext * ext);
  Rng rng(mix_seed(spec.rng_seed, 0x9a0d));

  // Background parenchyma texture.
  std::vector<double> hu(n);
  for (auto& v : hu) {
    v = spec.background_mean + spec.background_stddev * spec.noise_level * rng.normal(0, 1);
  }

  // Vessel distractors: thin bright capsules across the volume.
  for (int vi = 0; vi < spec.vessel_count; ++vi) {
    const Vec3 a{rng.uniform(0, static_cast<double>(ext - 1)),
                 rng.uniform(0, static_cast<double>(ext - 1)),
                 rng.uniform(0, static_cast<double>(ext - 1))};
    const Vec3 b{rng.uniform(0, static_cast<double>(ext - 1)),
                 rng.uniform(0, static_cast<double>(ext - 1)),
                 rng.uniform(0, static_cast<double>(ext - 1))};
    const double radius = rng.uniform(0.8, 1.4);
    const double vessel_hu = rng.normal(-100.0, 30.0);
    std::size_t idx = 0;
    for (std::int64_t d = 0; d < ext; ++d) {
      for (std::int64_t h = 0; h < ext; ++h) {
        for (std::int64_t w = 0; w < ext; ++w, ++idx) {
          const Vec3 p{static_cast<double>(d), static_cast<double>(h),
                       static_cast<double>(w)};
          const double dist = segment_distance(p, a, b);
          const double cover = std::clamp(radius - dist + 0.5, 0.0, 1.0);
          if (cover > 0.0) hu[idx] = cover * vessel_hu + (1.0 - cover) * hu[idx];
        }
      }
    }
  }

  // Nodule geometry.
  const bool is_malignant = malignancy == Malignancy::malignant;
  const auto& radius_range = is_malignant ? spec.malignant_radius : spec.benign_radius;
  const double amplitude =
      is_malignant ? spec.malignant_irregularity : spec.benign_irregularity;
  const double c0 = static_cast<double>(ext) / 2.0;
  const Vec3 center{c0 + static_cast<double>(rng.uniform_int(-2, 2)),
                    c0 + static_cast<double>(rng.uniform_int(-2, 2)),
                    c0 + static_cast<double>(rng.uniform_int(-2, 2))};
  const double base_radius = rng.uniform(radius_range[0], radius_range[1]);
  const LobeField lobes = LobeField::draw(rng);
  const SplitField split = SplitField::draw(rng, static_cast<double>(ext));

  auto core_hu = [&](const Vec3& p) {
    switch (radiology) {
      case RadiologyClass::GGO:
        return rng.normal(spec.ggo_core_mean, spec.ggo_core_stddev);
      case RadiologyClass::SN:
        return rng.normal(spec.sn_core_mean, spec.sn_core_stddev);
      case RadiologyClass::CN:
        return rng.normal(spec.cn_core_mean, spec.cn_core_stddev);
      case RadiologyClass::MGGO:
        return split.solid(p)
                   ? rng.normal(spec.mggo_solid_mean, spec.mggo_solid_stddev)
                   : rng.normal(spec.mggo_ggo_mean, spec.mggo_ggo_stddev);
    }
    throw ValidationError("unknown radiology class");
  };

  std::vector<std::uint8_t> mask(n, 0);
  const double reach = base_radius * (1.0 + amplitude) + 1.0;
  const auto lo = [&](double c) {
    return std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c - reach)));
  };
  const auto hi = [&](double c) {
    return std::min<std::int64_t>(ext - 1, static_cast<std::int64_t>(std::ceil(c + reach)));
  };
  for (std::int64_t d = lo(center.d); d <= hi(center.d); ++d) {
    for (std::int64_t h = lo(center.h); h <= hi(center.h); ++h) {
      for (std::int64_t w = lo(center.w); w <= hi(center.w); ++w) {
        const Vec3 p{static_cast<double>(d), static_cast<double>(h),
                     static_cast<double>(w)};
        const Vec3 rel = sub(p, center);
        const double dist = std::sqrt(dot(rel, rel));
        Vec3 u{0, 0, 0};
        if (dist > 1e-9) u = {rel.d / dist, rel.h / dist, rel.w / dist};
        const double local_radius = base_radius * (1.0 + amplitude * lobes.eval(u));
        const double cover = std::clamp(local_radius - dist + 0.5, 0.0, 1.0);
        if (cover <= 0.0) continue;
        const std::size_t idx = static_cast<std::size_t>((d * ext + h) * ext + w);
        hu[idx] = cover * core_hu(p) + (1.0 - cover) * hu[idx];
        if (cover >= 0.5) mask[idx] = 1;
      }
    }
  }

  for (auto& v : hu) v = std::clamp(v, kHuClipLo, kHuClipHi);

  CtVolume raw;
  raw.extents = {ext, ext, ext};
  raw.spacing_mm = {1.0, 1.0, 1.0};
  raw.voxels = std::move(hu);
  raw.stage = VolumeStage::raw;

  PhantomResult result;
  result.sample.volume = clip_normalize_hu(raw);
  result.sample.volume.stage = VolumeStage::resampled;  // generated at 1 mm
  result.sample.radiology_label = radiology;
  result.sample.malignancy_label = malignancy;
  char id[32];
  std::snprintf(id, sizeof id, "phantom-%016llx",
                static_cast<unsigned long long>(spec.rng_seed));
  result.sample.source_id = id;
  result.meta.center = {center.d, center.h, center.w};
  result.meta.base_radius = base_radius;
  result.nodule_mask = std::move(mask);
  return result;
}

}  // namespace r2m
