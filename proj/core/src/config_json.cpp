#include "r2m/config_json.hpp"

#include <fstream>

namespace r2m {

using nlohmann::json;

json to_json(const TrainConfig& cfg) {
  json j{{"epochs", cfg.epochs},
         {"learning_rate", cfg.learning_rate},
         {"batch_size", cfg.batch_size},
         {"augment", cfg.augment},
         {"seed", cfg.seed},
         {"preset", cfg.preset},
         {"threads", cfg.threads},
         {"holdout_fraction", cfg.holdout_fraction}};
  j["loss_lambda"] = cfg.loss_lambda ? json(*cfg.loss_lambda) : json(nullptr);
  return j;
}

json to_json(const PhantomSpec& spec) {
  return json{{"rng_seed", spec.rng_seed},
              {"volume_extent", spec.volume_extent},
              {"benign_radius", spec.benign_radius},
              {"malignant_radius", spec.malignant_radius},
              {"benign_irregularity", spec.benign_irregularity},
              {"malignant_irregularity", spec.malignant_irregularity},
              {"ggo_core_mean", spec.ggo_core_mean},
              {"ggo_core_stddev", spec.ggo_core_stddev},
              {"mggo_solid_mean", spec.mggo_solid_mean},
              {"mggo_solid_stddev", spec.mggo_solid_stddev},
              {"mggo_ggo_mean", spec.mggo_ggo_mean},
              {"mggo_ggo_stddev", spec.mggo_ggo_stddev},
              {"sn_core_mean", spec.sn_core_mean},
              {"sn_core_stddev", spec.sn_core_stddev},
              {"cn_core_mean", spec.cn_core_mean},
              {"cn_core_stddev", spec.cn_core_stddev},
              {"background_mean", spec.background_mean},
              {"background_stddev", spec.background_stddev},
              {"noise_level", spec.noise_level},
              {"vessel_count", spec.vessel_count}};
}

ModelConfig apply_model_overrides(ModelConfig base, const json& j) {
  base.input_size = j.value("input_size", base.input_size);
  base.stem_channels = j.value("stem_channels", base.stem_channels);
  base.block_channels = j.value("block_channels", base.block_channels);
  base.units_per_block = j.value("units_per_block", base.units_per_block);
  base.num_radiology_classes =
      j.value("num_radiology_classes", base.num_radiology_classes);
  base.num_malignancy_classes =
      j.value("num_malignancy_classes", base.num_malignancy_classes);
  base.se_reduction_ratio = j.value("se_reduction_ratio", base.se_reduction_ratio);
  base.loss_lambda = j.value("loss_lambda", base.loss_lambda);
  if (j.contains("variant")) {
    base.variant = net_variant_from_string(j.at("variant").get<std::string>());
  }
  return base;
}

TrainConfig apply_train_overrides(TrainConfig base, const json& j) {
  base.epochs = j.value("epochs", base.epochs);
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  if (j.contains("loss_lambda") && !j.at("loss_lambda").is_null()) {
    base.loss_lambda = j.at("loss_lambda").get<double>();
  }
  base.batch_size = j.value("batch_size", base.batch_size);
  base.augment = j.value("augment", base.augment);
  base.seed = j.value("seed", base.seed);
  base.preset = j.value("preset", base.preset);
  base.threads = j.value("threads", base.threads);
  base.holdout_fraction = j.value("holdout_fraction", base.holdout_fraction);
  return base;
}

PhantomSpec apply_phantom_overrides(PhantomSpec base, const json& j) {
  base.rng_seed = j.value("rng_seed", base.rng_seed);
  base.volume_extent = j.value("volume_extent", base.volume_extent);
  base.benign_radius = j.value("benign_radius", base.benign_radius);
  base.malignant_radius = j.value("malignant_radius", base.malignant_radius);
  base.benign_irregularity = j.value("benign_irregularity", base.benign_irregularity);
  base.malignant_irregularity =
      j.value("malignant_irregularity", base.malignant_irregularity);
  base.ggo_core_mean = j.value("ggo_core_mean", base.ggo_core_mean);
  base.ggo_core_stddev = j.value("ggo_core_stddev", base.ggo_core_stddev);
  base.mggo_solid_mean = j.value("mggo_solid_mean", base.mggo_solid_mean);
  base.mggo_solid_stddev = j.value("mggo_solid_stddev", base.mggo_solid_stddev);
  base.mggo_ggo_mean = j.value("mggo_ggo_mean", base.mggo_ggo_mean);
  base.mggo_ggo_stddev = j.value("mggo_ggo_stddev", base.mggo_ggo_stddev);
  base.sn_core_mean = j.value("sn_core_mean", base.sn_core_mean);
  base.sn_core_stddev = j.value("sn_core_stddev", base.sn_core_stddev);
  base.cn_core_mean = j.value("cn_core_mean", base.cn_core_mean);
  base.cn_core_stddev = j.value("cn_core_stddev", base.cn_core_stddev);
  base.background_mean = j.value("background_mean", base.background_mean);
  base.background_stddev = j.value("background_stddev", base.background_stddev);
  base.noise_level = j.value("noise_level", base.noise_level);
  base.vessel_count = j.value("vessel_count", base.vessel_count);
  return base;
}

RunConfig RunConfig::from_preset(const std::string& preset) {
  RunConfig cfg;
  cfg.preset = preset;
  if (preset == "desk") {
    cfg.model = ModelConfig::desk();
    cfg.train = TrainConfig::desk();
    cfg.phantom = PhantomSpec{};
  } else if (preset == "paper") {
    cfg.model = ModelConfig::paper();
    cfg.train = TrainConfig::paper();
    cfg.phantom = PhantomSpec{};
    cfg.phantom.volume_extent = 96;
    cfg.phantom.benign_radius = {10.5, 16.5};
    cfg.phantom.malignant_radius = {18.0, 27.0};
  } else {
    throw ValidationError("unknown preset '" + preset + "' (desk | paper)");
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path,
                          const std::string& preset_flag) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open: " + path.string());
    try {
      is >> j;
    } catch (const json::parse_error& e) {
      throw IoError("config: malformed JSON in " + path.string() + ": " + e.what());
    }
  }
  const std::string preset =
      !preset_flag.empty() ? preset_flag : j.value("preset", std::string("desk"));
  RunConfig cfg = from_preset(preset);
  if (j.contains("model")) cfg.model = apply_model_overrides(cfg.model, j.at("model"));
  if (j.contains("train")) cfg.train = apply_train_overrides(cfg.train, j.at("train"));
  if (j.contains("phantom")) {
    cfg.phantom = apply_phantom_overrides(cfg.phantom, j.at("phantom"));
  }
  return cfg;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  phantom.validate();
  if (phantom.volume_extent != model.input_size) {
    throw ValidationError(
        "config: phantom volume_extent " + std::to_string(phantom.volume_extent) +
        " does not match model input_size " + std::to_string(model.input_size));
  }
}

json RunConfig::to_json() const {
  return json{{"preset", preset},
              {"model", r2m::to_json(model)},
              {"train", r2m::to_json(train)},
              {"phantom", r2m::to_json(phantom)}};
}

}  // namespace r2m
