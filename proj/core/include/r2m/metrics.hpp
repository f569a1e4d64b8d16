#pragma once

#include <json.hpp>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "r2m/train.hpp"

namespace r2m {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;  // (0,0) .. (1,1), nondecreasing
  double auc = 0.0;              // Mann-Whitney statistic, ties count half
};

/// `scored` pairs a positive-class score with a 0/1 truth label. Both classes
/// must be present.
RocResult roc_auc(std::span<const std::pair<double, int>> scored);

struct TaskMetrics {
  double accuracy = 0.0;
  /// Recall per class; NaN for classes absent from the evaluation set.
  std::vector<double> per_class_accuracy;
  double auc = 0.0;  // binary: Mann-Whitney; multi-class: macro one-vs-rest
  std::vector<RocPoint> roc;  // binary tasks only
};

struct EvalReport {
  int fold_id = -1;
  std::size_t sample_count = 0;
  std::optional<TaskMetrics> radiology;  // absent for the mnet_only variant
  TaskMetrics malignancy;
};

/// Argmax predictions for accuracy; AUC from softmax scores. The radiology
/// AUC is a macro average of one-vs-rest AUCs over the classes present.
EvalReport evaluate(const R2MNetParams& params,
                    const std::vector<VolumeSample>& samples, int threads = 1);

struct CvStat {
  double mean = 0.0;
  double sd = 0.0;
};

struct CvSummary {
  std::optional<CvStat> radiology_accuracy, radiology_auc;
  CvStat malignancy_accuracy, malignancy_auc;
};

struct CvResult {
  FoldSplit split;
  std::vector<EvalReport> folds;
  CvSummary summary;
};

/// Observer for per-fold artifacts (checkpointing, reuse); called from
/// worker threads, one call per fold.
using FoldCallback = std::function<void(int fold, const TrainResult& result)>;

/// Trains k independent models, each evaluated on its held-out fold. Folds
/// run in parallel over `cfg.threads`; results are order-deterministic.
CvResult cross_validate(const std::vector<VolumeSample>& dataset,
                        const ModelConfig& model, const TrainConfig& cfg,
                        int k = 5, const FoldCallback& on_fold = {});

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const CvResult& result);
nlohmann::json to_json(const FoldSplit& split);

}  // namespace r2m
