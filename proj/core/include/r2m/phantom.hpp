#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "r2m/dataset.hpp"

namespace r2m {

/// Generator parameters for synthetic nodule volumes. Malignant nodules are
/// larger and more irregular than benign ones; the four radiology classes
/// are separated by core density, strictly ordered CN > SN > MGGO > GGO.
struct PhantomSpec {
  std::uint64_t rng_seed = 0;
  int volume_extent = 32;

  // Nodule radius ranges in voxels, [lo, hi] per malignancy.
  std::array<double, 2> benign_radius{3.5, 5.5};
  std::array<double, 2> malignant_radius{6.0, 9.0};

  // Lobed surface perturbation amplitude per malignancy, in (0, 1).
  double benign_irregularity = 0.10;
  double malignant_irregularity = 0.35;

  // Core densities per radiology class (HU mean / stddev). MGGO cores mix
  // the solid and ground-glass components half and half.
  double ggo_core_mean = -700.0, ggo_core_stddev = 80.0;
  double mggo_solid_mean = -50.0, mggo_solid_stddev = 60.0;
  double mggo_ggo_mean = -650.0, mggo_ggo_stddev = 80.0;
  double sn_core_mean = -50.0, sn_core_stddev = 60.0;
  double cn_core_mean = 300.0, cn_core_stddev = 100.0;

  // Lung parenchyma background plus small bright vessel distractors.
  double background_mean = -850.0, background_stddev = 40.0;
  double noise_level = 1.0;
  int vessel_count = 2;

  void validate() const;

  /// Effective MGGO core mean (midpoint of its two components), used for the
  /// density ordering check.
  double mggo_core_mean() const { return 0.5 * (mggo_solid_mean + mggo_ggo_mean); }
};

struct PhantomMeta {
  std::array<double, 3> center{};  // nodule center, voxel coordinates [d,h,w]
  double base_radius = 0.0;        // radius before surface perturbation
};

struct PhantomResult {
  VolumeSample sample;
  PhantomMeta meta;
  /// 1 where the nodule covers at least half the voxel; same layout as the
  /// volume. Kept out of the sample so datasets stay label-only.
  std::vector<std::uint8_t> nodule_mask;
};

/// Deterministic per spec.rng_seed: identical seeds give bit-identical
/// volumes. Output intensities are already clip-normalized into [0,1].
PhantomResult generate_phantom(const PhantomSpec& spec, RadiologyClass radiology,
                               Malignancy malignancy);

}  // namespace r2m
