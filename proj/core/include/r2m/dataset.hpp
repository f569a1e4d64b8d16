#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "r2m/tensor.hpp"
#include "r2m/volume.hpp"

namespace r2m {

enum class RadiologyClass : std::uint8_t { SN = 0, MGGO = 1, GGO = 2, CN = 3 };
enum class Malignancy : std::uint8_t { benign = 0, malignant = 1 };

inline constexpr int kNumRadiologyClasses = 4;

std::string to_string(RadiologyClass c);
std::string to_string(Malignancy m);
RadiologyClass radiology_from_string(const std::string& s);
Malignancy malignancy_from_string(const std::string& s);

/// One training/evaluation unit: a normalized cubic crop plus both labels.
struct VolumeSample {
  CtVolume volume;
  RadiologyClass radiology_label = RadiologyClass::SN;
  Malignancy malignancy_label = Malignancy::benign;
  std::string source_id;

  /// [1, D, H, W] network input.
  Tensor to_tensor() const;
  void validate(std::int64_t expected_extent) const;
};

struct ManifestEntry {
  std::string source_id;
  std::string path;  // relative to the manifest's directory
  RadiologyClass radiology_label = RadiologyClass::SN;
  Malignancy malignancy_label = Malignancy::benign;
};

void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

/// Loads every volume listed by the manifest at `manifest_path`.
std::vector<VolumeSample> load_dataset(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// Fold splitting
// ---------------------------------------------------------------------------

struct LabeledId {
  std::string id;
  RadiologyClass radiology = RadiologyClass::SN;
  Malignancy malignancy = Malignancy::benign;
};

struct FoldSplit {
  int k = 0;
  std::vector<std::vector<std::string>> fold_ids;
  /// Per-fold counts indexed [fold][malignancy].
  std::vector<std::array<int, 2>> malignancy_histogram;
  /// Per-fold counts indexed [fold][radiology class].
  std::vector<std::array<int, 4>> radiology_histogram;
};

/// Deterministic stratified partition: items are bucketed by
/// (radiology, malignancy), shuffled per bucket under the seed, and dealt
/// round-robin so per-fold label fractions track the global ones.
FoldSplit kfold_split(std::span<const LabeledId> items, int k = 5,
                      std::uint64_t seed = 0);

/// Stratified (train, eval) index split. Both malignancy classes are kept
/// on both sides; requires at least two samples per malignancy class.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    std::span<const LabeledId> items, double fraction, std::uint64_t seed);

}  // namespace r2m
