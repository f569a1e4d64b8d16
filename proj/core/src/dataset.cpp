#include "r2m/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <map>

#include "r2m/rng.hpp"

namespace r2m {

using nlohmann::json;

std::string to_string(RadiologyClass c) {
  switch (c) {
    case RadiologyClass::SN: return "SN";
    case RadiologyClass::MGGO: return "MGGO";
    case RadiologyClass::GGO: return "GGO";
    case RadiologyClass::CN: return "CN";
  }
  throw ValidationError("unknown radiology class");
}

std::string to_string(Malignancy m) {
  return m == Malignancy::benign ? "benign" : "malignant";
}

RadiologyClass radiology_from_string(const std::string& s) {
  if (s == "SN") return RadiologyClass::SN;
  if (s == "MGGO") return RadiologyClass::MGGO;
  if (s == "GGO") return RadiologyClass::GGO;
  if (s == "CN") return RadiologyClass::CN;
  throw ValidationError("unknown radiology label '" + s + "'");
}

Malignancy malignancy_from_string(const std::string& s) {
  if (s == "benign") return Malignancy::benign;
  if (s == "malignant") return Malignancy::malignant;
  throw ValidationError("unknown malignancy label '" + s + "'");
}

Tensor VolumeSample::to_tensor() const {
  const auto& e = volume.extents;
  return Tensor::from(volume.voxels, {1, e[0], e[1], e[2]});
}

void VolumeSample::validate(std::int64_t expected_extent) const {
  volume.validate();
  if (volume.stage == VolumeStage::raw) {
    throw ValidationError("sample '" + source_id + "': volume is not normalized");
  }
  for (auto e : volume.extents) {
    if (e != expected_extent) {
      throw ValidationError("sample '" + source_id + "': extent " +
                            std::to_string(e) + " does not match configured " +
                            std::to_string(expected_extent));
    }
  }
}

void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries) {
  json samples = json::array();
  for (const auto& e : entries) {
    samples.push_back({{"source_id", e.source_id},
                       {"path", e.path},
                       {"radiology_label", to_string(e.radiology_label)},
                       {"malignancy_label", to_string(e.malignancy_label)}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("manifest: cannot open for writing: " + path.string());
  os << json{{"samples", samples}}.dump(2) << "\n";
  if (!os) throw IoError("manifest: write failed: " + path.string());
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw IoError("manifest: malformed JSON in " + path.string() + ": " + e.what());
  }
  std::vector<ManifestEntry> entries;
  for (const auto& s : j.at("samples")) {
    ManifestEntry e;
    e.source_id = s.at("source_id").get<std::string>();
    e.path = s.at("path").get<std::string>();
    e.radiology_label = radiology_from_string(s.at("radiology_label").get<std::string>());
    e.malignancy_label = malignancy_from_string(s.at("malignancy_label").get<std::string>());
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<VolumeSample> load_dataset(const std::filesystem::path& manifest_path) {
  const auto entries = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  std::vector<VolumeSample> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) {
    VolumeSample s;
    s.volume = load_volume(dir / e.path);
    s.radiology_label = e.radiology_label;
    s.malignancy_label = e.malignancy_label;
    s.source_id = e.source_id;
    samples.push_back(std::move(s));
  }
  return samples;
}

FoldSplit kfold_split(std::span<const LabeledId> items, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("kfold_split: k must be >= 2");
  std::array<int, 2> malignancy_counts{0, 0};
  for (const auto& it : items) {
    ++malignancy_counts[static_cast<std::size_t>(it.malignancy)];
  }
  for (int m = 0; m < 2; ++m) {
    if (malignancy_counts[static_cast<std::size_t>(m)] < k) {
      throw ValidationError("kfold_split: class '" +
                            to_string(static_cast<Malignancy>(m)) + "' has " +
                            std::to_string(malignancy_counts[static_cast<std::size_t>(m)]) +
                            " samples, need at least k=" + std::to_string(k));
    }
  }

  // Buckets keyed by (radiology, malignancy); map order is deterministic.
  std::map<std::pair<int, int>, std::vector<std::string>> buckets;
  for (const auto& it : items) {
    buckets[{static_cast<int>(it.radiology), static_cast<int>(it.malignancy)}]
        .push_back(it.id);
  }

  FoldSplit split;
  split.k = k;
  split.fold_ids.resize(static_cast<std::size_t>(k));
  split.malignancy_histogram.assign(static_cast<std::size_t>(k), {0, 0});
  split.radiology_histogram.assign(static_cast<std::size_t>(k), {0, 0, 0, 0});

  std::size_t assigned = 0;
  std::uint64_t bucket_index = 0;
  for (auto& [key, ids] : buckets) {
    std::sort(ids.begin(), ids.end());
    Rng rng(mix_seed(seed, 0xf01d5 + bucket_index++));
    rng.shuffle(ids);
    for (const auto& id : ids) {
      const auto fold = (assigned++) % static_cast<std::size_t>(k);
      split.fold_ids[fold].push_back(id);
      ++split.radiology_histogram[fold][static_cast<std::size_t>(key.first)];
      ++split.malignancy_histogram[fold][static_cast<std::size_t>(key.second)];
    }
  }
  return split;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    std::span<const LabeledId> items, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("stratified_holdout: fraction must lie in (0,1)");
  }
  std::array<int, 2> totals{0, 0};
  for (const auto& it : items) ++totals[static_cast<std::size_t>(it.malignancy)];
  for (int m = 0; m < 2; ++m) {
    if (totals[static_cast<std::size_t>(m)] < 2) {
      throw ValidationError("stratified_holdout: class '" +
                            to_string(static_cast<Malignancy>(m)) +
                            "' needs at least 2 samples");
    }
  }

  std::map<std::pair<int, int>, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < items.size(); ++i) {
    buckets[{static_cast<int>(items[i].radiology),
             static_cast<int>(items[i].malignancy)}]
        .push_back(i);
  }

  std::vector<std::size_t> train_idx, eval_idx;
  std::array<int, 2> eval_counts{0, 0}, train_counts{0, 0};
  std::uint64_t bucket_index = 0;
  for (auto& [key, idx] : buckets) {
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return items[a].id < items[b].id; });
    Rng rng(mix_seed(seed, 0x601d0 + bucket_index++));
    rng.shuffle(idx);
    const auto take = static_cast<std::size_t>(std::llround(
        fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const bool to_eval = i < take;
      (to_eval ? eval_idx : train_idx).push_back(idx[i]);
      ++(to_eval ? eval_counts : train_counts)[static_cast<std::size_t>(key.second)];
    }
  }

  // both malignancy classes must appear on both sides
  for (int m = 0; m < 2; ++m) {
    auto needs_move = [&](std::array<int, 2>& from, std::array<int, 2>& to,
                          std::vector<std::size_t>& src, std::vector<std::size_t>& dst) {
      if (to[static_cast<std::size_t>(m)] > 0) return;
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (static_cast<int>(items[src[i]].malignancy) == m) {
          dst.push_back(src[i]);
          src.erase(src.begin() + static_cast<std::ptrdiff_t>(i));
          --from[static_cast<std::size_t>(m)];
          ++to[static_cast<std::size_t>(m)];
          return;
        }
      }
    };
    needs_move(train_counts, eval_counts, train_idx, eval_idx);
    needs_move(eval_counts, train_counts, eval_idx, train_idx);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  return {std::move(train_idx), std::move(eval_idx)};
}

}  // namespace r2m
