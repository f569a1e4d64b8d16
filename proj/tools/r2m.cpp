// Command-line front end: phantom dataset generation, training, k-fold
// cross-validation and saliency explanation over the same library layers the
// tests drive.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "r2m/checkpoint.hpp"
#include "r2m/config_json.hpp"
#include "r2m/explain.hpp"
#include "r2m/metrics.hpp"
#include "r2m/parallel.hpp"
#include "r2m/phantom.hpp"
#include "r2m/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

/// Staging directory that becomes `final_path` only on commit, so failed runs
/// never leave partial output behind.
class OutputDir {
 public:
  explicit OutputDir(const fs::path& final_path) : final_(final_path) {
    if (fs::exists(final_)) {
      throw r2m::ValidationError("output path already exists: " + final_.string());
    }
    if (!final_.parent_path().empty()) {
      fs::create_directories(final_.parent_path());
    }
    staging_ = final_;
    staging_ += ".tmp-" + std::to_string(::getpid());
    fs::create_directories(staging_);
  }

  ~OutputDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& path() const { return staging_; }

  void commit() {
    fs::rename(staging_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, staging_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw r2m::IoError("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw r2m::IoError("write failed: " + path.string());
}

struct CommonFlags {
  std::string config_file;
  std::string preset;
  std::int64_t seed = -1;
  int epochs = -1;
  double learning_rate = -1;
  double lambda = -1;
  int batch = -1;
  int threads = -1;
  int augment = -1;  // tri-state: unset / off / on

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON config file");
    cmd->add_option("--preset", preset, "desk | paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--seed", seed, "master RNG seed");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--lr", learning_rate, "learning rate");
    cmd->add_option("--lambda", lambda, "task weight in [0,1]");
    cmd->add_option("--batch", batch, "gradient accumulation count");
    cmd->add_option("--threads", threads, "worker threads (0 = all cores)");
    cmd->add_flag("--augment,!--no-augment", augment, "toggle augmentation");
  }

  r2m::RunConfig resolve() const {
    r2m::RunConfig cfg = r2m::RunConfig::load(config_file, preset);
    if (seed >= 0) {
      cfg.train.seed = static_cast<std::uint64_t>(seed);
      cfg.phantom.rng_seed = static_cast<std::uint64_t>(seed);
    }
    if (epochs >= 0) cfg.train.epochs = epochs;
    if (learning_rate >= 0) cfg.train.learning_rate = learning_rate;
    if (lambda >= 0) cfg.train.loss_lambda = lambda;
    if (batch >= 0) cfg.train.batch_size = batch;
    if (threads >= 0) cfg.train.threads = threads;
    if (augment == 0) cfg.train.augment = false;
    if (augment == 1) cfg.train.augment = true;
    cfg.validate();
    return cfg;
  }
};

std::vector<r2m::VolumeSample> load_data_dir(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) {
    throw r2m::IoError("no manifest.json under " + dir.string());
  }
  return r2m::load_dataset(manifest);
}

int run_gen_data(const CommonFlags& flags, const std::string& out, int count) {
  if (count < 1) {
    throw r2m::ValidationError("gen-data: --count must be >= 1");
  }
  const r2m::RunConfig cfg = flags.resolve();
  OutputDir staging{fs::path(out)};

  std::vector<r2m::ManifestEntry> entries;
  std::array<std::array<int, 2>, 4> counts{};
  for (int i = 0; i < count; ++i) {
    r2m::PhantomSpec spec = cfg.phantom;
    spec.rng_seed = r2m::mix_seed(cfg.phantom.rng_seed, static_cast<std::uint64_t>(i));
    const auto radiology = static_cast<r2m::RadiologyClass>(i % 4);
    const auto malignancy = static_cast<r2m::Malignancy>((i / 4) % 2);
    auto result = r2m::generate_phantom(spec, radiology, malignancy);

    char name[32];
    std::snprintf(name, sizeof name, "vol-%06d.r2mvol", i);
    char sid[32];
    std::snprintf(sid, sizeof sid, "phantom-%06d", i);
    result.sample.source_id = sid;
    r2m::save_volume(staging.path() / name, result.sample.volume);
    entries.push_back({result.sample.source_id, name, radiology, malignancy});
    ++counts[static_cast<std::size_t>(radiology)][static_cast<std::size_t>(malignancy)];
  }
  r2m::save_manifest(staging.path() / "manifest.json", entries);
  write_text(staging.path() / "config.json", cfg.to_json().dump(2) + "\n");
  staging.commit();

  std::printf("wrote %d samples to %s\n", count, out.c_str());
  for (int r = 0; r < 4; ++r) {
    std::printf("  %-5s benign=%d malignant=%d\n",
                r2m::to_string(static_cast<r2m::RadiologyClass>(r)).c_str(),
                counts[static_cast<std::size_t>(r)][0],
                counts[static_cast<std::size_t>(r)][1]);
  }
  return kExitOk;
}

int run_train(const CommonFlags& flags, const std::string& data,
              const std::string& out) {
  const r2m::RunConfig cfg = flags.resolve();
  const auto dataset = load_data_dir(data);

  std::vector<r2m::LabeledId> ids;
  for (const auto& s : dataset) {
    ids.push_back({s.source_id, s.radiology_label, s.malignancy_label});
  }
  const auto [train_idx, eval_idx] =
      r2m::stratified_holdout(ids, cfg.train.holdout_fraction, cfg.train.seed);
  std::vector<r2m::VolumeSample> train_set, eval_set;
  for (auto i : train_idx) train_set.push_back(dataset[i]);
  for (auto i : eval_idx) eval_set.push_back(dataset[i]);

  OutputDir staging{fs::path(out)};
  std::ofstream log(staging.path() / "epochs.jsonl", std::ios::trunc);
  r2m::TrainResult result =
      r2m::train(train_set, cfg.model, cfg.train,
                 [&log](const r2m::EpochStats& e, const r2m::R2MNetParams&) {
        log << json{{"epoch", e.epoch},
                    {"mean_loss", e.mean_loss},
                    {"lr", e.learning_rate}}
                   .dump()
            << "\n";
      });
  log.close();

  r2m::save_checkpoint(staging.path() / "checkpoint.r2mparam", result.params);
  const r2m::EvalReport report =
      r2m::evaluate(result.params, eval_set,
                    cfg.train.threads == 0 ? r2m::hardware_threads() : cfg.train.threads);
  write_text(staging.path() / "eval.json", r2m::to_json(report).dump(2) + "\n");
  write_text(staging.path() / "config.json", cfg.to_json().dump(2) + "\n");
  staging.commit();

  std::printf("trained on %zu samples, evaluated on %zu held-out\n",
              train_set.size(), eval_set.size());
  std::printf("malignancy: accuracy %.4f auc %.4f\n", report.malignancy.accuracy,
              report.malignancy.auc);
  if (report.radiology) {
    std::printf("radiology:  accuracy %.4f auc %.4f\n", report.radiology->accuracy,
                report.radiology->auc);
  }
  return kExitOk;
}

int run_cv(const CommonFlags& flags, const std::string& data,
           const std::string& out, int k) {
  const r2m::RunConfig cfg = flags.resolve();
  const auto dataset = load_data_dir(data);

  const r2m::CvResult result = r2m::cross_validate(dataset, cfg.model, cfg.train, k);

  OutputDir staging{fs::path(out)};
  for (const auto& fold : result.folds) {
    write_text(staging.path() / ("fold-" + std::to_string(fold.fold_id) + ".json"),
               r2m::to_json(fold).dump(2) + "\n");
  }
  write_text(staging.path() / "folds.json", r2m::to_json(result.split).dump(2) + "\n");
  write_text(staging.path() / "summary.json", [&] {
    json j;
    j["malignancy"] = {{"accuracy",
                        {{"mean", result.summary.malignancy_accuracy.mean},
                         {"sd", result.summary.malignancy_accuracy.sd}}},
                       {"auc",
                        {{"mean", result.summary.malignancy_auc.mean},
                         {"sd", result.summary.malignancy_auc.sd}}}};
    if (result.summary.radiology_accuracy) {
      j["radiology"] = {{"accuracy",
                         {{"mean", result.summary.radiology_accuracy->mean},
                          {"sd", result.summary.radiology_accuracy->sd}}},
                        {"auc",
                         {{"mean", result.summary.radiology_auc->mean},
                          {"sd", result.summary.radiology_auc->sd}}}};
    } else {
      j["radiology"] = nullptr;
    }
    return j.dump(2) + "\n";
  }());
  write_text(staging.path() / "config.json", cfg.to_json().dump(2) + "\n");
  staging.commit();

  std::printf("%d folds over %zu samples\n", k, dataset.size());
  std::printf("malignancy: accuracy %.4f±%.4f auc %.4f±%.4f\n",
              result.summary.malignancy_accuracy.mean,
              result.summary.malignancy_accuracy.sd,
              result.summary.malignancy_auc.mean, result.summary.malignancy_auc.sd);
  if (result.summary.radiology_accuracy) {
    std::printf("radiology:  accuracy %.4f±%.4f auc %.4f±%.4f\n",
                result.summary.radiology_accuracy->mean,
                result.summary.radiology_accuracy->sd,
                result.summary.radiology_auc->mean,
                result.summary.radiology_auc->sd);
  }
  return kExitOk;
}

int run_explain(const std::string& checkpoint_file, const std::string& sample_file,
                const std::string& out, const std::string& mode_name,
                const std::string& dump_saliency) {
  const r2m::R2MNetParams params = r2m::load_checkpoint(checkpoint_file);
  const r2m::CtVolume volume = r2m::load_volume(sample_file);

  const std::int64_t s = params.config.input_size;
  if (volume.extents != std::array<std::int64_t, 3>{s, s, s}) {
    throw r2m::ValidationError(
        "explain: sample extents [" + std::to_string(volume.extents[0]) + "," +
        std::to_string(volume.extents[1]) + "," + std::to_string(volume.extents[2]) +
        "] do not match the checkpoint input size " + std::to_string(s));
  }
  if (volume.stage == r2m::VolumeStage::raw) {
    throw r2m::ValidationError("explain: sample volume is not normalized");
  }
  const r2m::UpsampleMode mode = r2m::upsample_mode_from_string(mode_name);

  const r2m::Tensor x = r2m::Tensor::from(
      volume.voxels, {1, volume.extents[0], volume.extents[1], volume.extents[2]});
  r2m::Tensor activation;
  if (params.config.variant == r2m::NetVariant::mnet_only) {
    r2m::BranchTrace trace = r2m::branch_forward(x, params.mnet, params.config);
    activation = trace.last_activation;
    const auto probs = r2m::softmax(trace.logits).data();
    std::printf("malignancy: benign=%.6f malignant=%.6f\n", probs[0], probs[1]);
  } else {
    const bool gates = params.config.variant == r2m::NetVariant::r2mnet;
    r2m::ForwardTrace trace = r2m::r2mnet_forward(x, params, gates);
    activation = trace.mnet_last_activation;
    const auto rp = r2m::softmax(trace.radiology_logits).data();
    std::printf("radiology: SN=%.6f MGGO=%.6f GGO=%.6f CN=%.6f\n", rp[0], rp[1],
                rp[2], rp[3]);
    const auto mp = r2m::softmax(trace.malignancy_logits).data();
    std::printf("malignancy: benign=%.6f malignant=%.6f\n", mp[0], mp[1]);
  }

  const r2m::Heatmap heatmap = r2m::make_heatmap(
      activation, {volume.extents[0], volume.extents[1], volume.extents[2]}, mode);
  const auto ppm = r2m::render_heatmap(heatmap, volume);

  const fs::path out_path(out);
  if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
  fs::path tmp = out_path;
  tmp += ".tmp-" + std::to_string(::getpid());
  std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
  if (!os) throw r2m::IoError("cannot open for writing: " + out_path.string());
  os.write(reinterpret_cast<const char*>(ppm.data()),
           static_cast<std::streamsize>(ppm.size()));
  os.close();
  fs::rename(tmp, out_path);

  if (!dump_saliency.empty()) {
    r2m::CtVolume sal;
    sal.extents = volume.extents;
    sal.spacing_mm = volume.spacing_mm;
    sal.voxels = heatmap.saliency.data();
    sal.stage = r2m::VolumeStage::raw;  // unbounded saliency values
    r2m::save_volume(dump_saliency, sal);
  }
  std::printf("wrote %s\n", out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  r2m::set_blas_threads(1);

  CLI::App app{"twin-branch 3D nodule classifier with gated feature exchange"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, cv_flags;

  auto* gen = app.add_subcommand("gen-data", "generate a phantom nodule dataset");
  std::string gen_out;
  int gen_count = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of samples")->required();
  gen_flags.attach(gen);

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  std::string train_data, train_out;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train_flags.attach(train);

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  std::string cv_data, cv_out;
  int cv_k = 5;
  cv->add_option("--data", cv_data, "dataset directory")->required();
  cv->add_option("--out", cv_out, "output directory")->required();
  cv->add_option("--k", cv_k, "fold count")->default_val(5);
  cv_flags.attach(cv);

  auto* explain = app.add_subcommand("explain", "saliency heatmap for one sample");
  std::string ex_checkpoint, ex_sample, ex_out, ex_dump;
  std::string ex_mode = "trilinear";
  explain->add_option("--checkpoint", ex_checkpoint, "checkpoint file")->required();
  explain->add_option("--sample", ex_sample, "volume file")->required();
  explain->add_option("--out", ex_out, "output PPM image")->required();
  explain->add_option("--mode", ex_mode, "trilinear | slice-bicubic")
      ->check(CLI::IsMember({"trilinear", "slice-bicubic"}));
  explain->add_option("--dump-saliency", ex_dump, "also dump the raw saliency volume");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return run_gen_data(gen_flags, gen_out, gen_count);
    if (train->parsed()) return run_train(train_flags, train_data, train_out);
    if (cv->parsed()) return run_cv(cv_flags, cv_data, cv_out, cv_k);
    if (explain->parsed()) {
      return run_explain(ex_checkpoint, ex_sample, ex_out, ex_mode, ex_dump);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  } catch (const r2m::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitValidation;
}
