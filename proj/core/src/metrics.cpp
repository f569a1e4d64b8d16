#include "r2m/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "r2m/parallel.hpp"
#include "r2m/rng.hpp"

namespace r2m {

using nlohmann::json;

RocResult roc_auc(std::span<const std::pair<double, int>> scored) {
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& [score, truth] : scored) {
    (truth ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("roc_auc: both classes must be present (" +
                          std::to_string(n_pos) + " positive, " +
                          std::to_string(n_neg) + " negative)");
  }

  // Mann-Whitney via midranks.
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].first < scored[b].first;
  });
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() &&
           scored[order[j]].first == scored[order[i]].first) {
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t t = i; t < j; ++t) {
      if (scored[order[t]].second) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;

  RocResult result;
  result.auc = u / (np * nn);

  // Threshold sweep over distinct scores, descending; tied scores fall into
  // one step so the curve carries the diagonal segments the half-tie rule
  // implies.
  result.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (auto it = order.rbegin(); it != order.rend();) {
    const double s = scored[*it].first;
    while (it != order.rend() && scored[*it].first == s) {
      (scored[*it].second ? tp : fp) += 1;
      ++it;
    }
    result.points.push_back({static_cast<double>(fp) / nn,
                             static_cast<double>(tp) / np});
  }
  return result;
}

namespace {

struct SampleScores {
  std::vector<double> radiology;  // softmax probabilities, empty for mnet_only
  std::vector<double> malignancy;
};

SampleScores score_sample(const R2MNetParams& params, const VolumeSample& s) {
  const Tensor x = s.to_tensor();
  SampleScores out;
  switch (params.config.variant) {
    case NetVariant::r2mnet:
    case NetVariant::r2mnet_no_agu: {
      const bool gates = params.config.variant == NetVariant::r2mnet;
      ForwardTrace trace = r2mnet_forward(x, params, gates);
      out.radiology = softmax(trace.radiology_logits).data();
      out.malignancy = softmax(trace.malignancy_logits).data();
      break;
    }
    case NetVariant::mnet_only: {
      BranchTrace trace = branch_forward(x, params.mnet, params.config);
      out.malignancy = softmax(trace.logits).data();
      break;
    }
  }
  return out;
}

std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

TaskMetrics task_metrics(const std::vector<std::vector<double>>& probs,
                         const std::vector<int>& labels, int num_classes,
                         bool keep_roc) {
  TaskMetrics tm;
  std::vector<int> per_class_total(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> per_class_correct(static_cast<std::size_t>(num_classes), 0);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int pred = static_cast<int>(argmax(probs[i]));
    ++per_class_total[static_cast<std::size_t>(labels[i])];
    if (pred == labels[i]) {
      ++correct;
      ++per_class_correct[static_cast<std::size_t>(labels[i])];
    }
  }
  tm.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  tm.per_class_accuracy.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const auto i = static_cast<std::size_t>(c);
    tm.per_class_accuracy[i] =
        per_class_total[i] == 0
            ? std::numeric_limits<double>::quiet_NaN()
            : static_cast<double>(per_class_correct[i]) / per_class_total[i];
  }

  if (num_classes == 2) {
    std::vector<std::pair<double, int>> scored;
    scored.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scored.emplace_back(probs[i][1], labels[i] == 1 ? 1 : 0);
    }
    RocResult roc = roc_auc(scored);
    tm.auc = roc.auc;
    if (keep_roc) tm.roc = std::move(roc.points);
  } else {
    // Macro one-vs-rest over the classes present with both sides populated.
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < num_classes; ++c) {
      const auto i = static_cast<std::size_t>(c);
      if (per_class_total[i] == 0 ||
          per_class_total[i] == static_cast<int>(labels.size())) {
        continue;
      }
      std::vector<std::pair<double, int>> scored;
      scored.reserve(labels.size());
      for (std::size_t s = 0; s < labels.size(); ++s) {
        scored.emplace_back(probs[s][i], labels[s] == c ? 1 : 0);
      }
      sum += roc_auc(scored).auc;
      ++used;
    }
    tm.auc = used > 0 ? sum / used : std::numeric_limits<double>::quiet_NaN();
  }
  return tm;
}

}  // namespace

EvalReport evaluate(const R2MNetParams& params,
                    const std::vector<VolumeSample>& samples, int threads) {
  if (samples.empty()) throw ValidationError("evaluate: no samples");
  for (const auto& s : samples) s.validate(params.config.input_size);

  std::vector<SampleScores> scores(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    scores[i] = score_sample(params, samples[i]);
  });

  EvalReport report;
  report.sample_count = samples.size();

  std::vector<int> mal_labels(samples.size());
  std::vector<std::vector<double>> mal_probs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    mal_labels[i] = static_cast<int>(samples[i].malignancy_label);
    mal_probs[i] = scores[i].malignancy;
  }
  report.malignancy = task_metrics(mal_probs, mal_labels,
                                   params.config.num_malignancy_classes, true);

  if (params.config.variant != NetVariant::mnet_only) {
    std::vector<int> rad_labels(samples.size());
    std::vector<std::vector<double>> rad_probs(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      rad_labels[i] = static_cast<int>(samples[i].radiology_label);
      rad_probs[i] = scores[i].radiology;
    }
    report.radiology = task_metrics(rad_probs, rad_labels,
                                    params.config.num_radiology_classes, false);
  }
  return report;
}

namespace {

CvStat stat_over_folds(const std::vector<double>& xs) {
  CvStat st;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) st.mean += x;
  st.mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - st.mean) * (x - st.mean);
  st.sd = std::sqrt(var / n);
  return st;
}

}  // namespace

CvResult cross_validate(const std::vector<VolumeSample>& dataset,
                        const ModelConfig& model, const TrainConfig& cfg,
                        int k, const FoldCallback& on_fold) {
  std::vector<LabeledId> items;
  items.reserve(dataset.size());
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    if (!index_of.emplace(s.source_id, i).second) {
      throw ValidationError("cross_validate: duplicate source_id '" +
                            s.source_id + "'");
    }
    items.push_back({s.source_id, s.radiology_label, s.malignancy_label});
  }

  CvResult result;
  result.split = kfold_split(items, k, cfg.seed);
  result.folds.resize(static_cast<std::size_t>(k));

  const int threads = cfg.threads == 0 ? hardware_threads() : cfg.threads;
  parallel_for(static_cast<std::size_t>(k), threads, [&](std::size_t fold) {
    std::set<std::string> held_out(result.split.fold_ids[fold].begin(),
                                   result.split.fold_ids[fold].end());
    std::vector<VolumeSample> train_set, eval_set;
    for (const auto& s : dataset) {
      (held_out.count(s.source_id) ? eval_set : train_set).push_back(s);
    }
    TrainConfig fold_cfg = cfg;
    fold_cfg.threads = 1;
    fold_cfg.seed = mix_seed(cfg.seed, 0xcf01d + fold);
    TrainResult trained = train(train_set, model, fold_cfg);
    if (on_fold) on_fold(static_cast<int>(fold), trained);
    EvalReport report = evaluate(trained.params, eval_set);
    report.fold_id = static_cast<int>(fold);
    result.folds[fold] = std::move(report);
  });

  std::vector<double> m_acc, m_auc, r_acc, r_auc;
  for (const auto& f : result.folds) {
    m_acc.push_back(f.malignancy.accuracy);
    m_auc.push_back(f.malignancy.auc);
    if (f.radiology) {
      r_acc.push_back(f.radiology->accuracy);
      r_auc.push_back(f.radiology->auc);
    }
  }
  result.summary.malignancy_accuracy = stat_over_folds(m_acc);
  result.summary.malignancy_auc = stat_over_folds(m_auc);
  if (!r_acc.empty()) {
    result.summary.radiology_accuracy = stat_over_folds(r_acc);
    result.summary.radiology_auc = stat_over_folds(r_auc);
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

json task_to_json(const TaskMetrics& tm, std::span<const char* const> labels) {
  json per_class = json::object();
  for (std::size_t i = 0; i < tm.per_class_accuracy.size(); ++i) {
    const double v = tm.per_class_accuracy[i];
    per_class[labels[i]] = std::isnan(v) ? json(nullptr) : json(v);
  }
  json roc = json::array();
  for (const auto& p : tm.roc) roc.push_back({p.fpr, p.tpr});
  json j{{"accuracy", tm.accuracy},
         {"per_class_accuracy", per_class},
         {"auc", tm.auc}};
  if (!tm.roc.empty()) j["roc"] = roc;
  return j;
}

constexpr const char* kRadiologyLabels[] = {"SN", "MGGO", "GGO", "CN"};
constexpr const char* kMalignancyLabels[] = {"benign", "malignant"};

json stat_to_json(const CvStat& st) {
  return json{{"mean", st.mean}, {"sd", st.sd}};
}

}  // namespace

json to_json(const EvalReport& report) {
  json j{{"fold_id", report.fold_id},
         {"sample_count", report.sample_count},
         {"malignancy", task_to_json(report.malignancy, kMalignancyLabels)}};
  j["radiology"] = report.radiology
                       ? task_to_json(*report.radiology, kRadiologyLabels)
                       : json(nullptr);
  return j;
}

json to_json(const FoldSplit& split) {
  json folds = json::array();
  for (const auto& ids : split.fold_ids) folds.push_back(ids);
  json mal = json::array(), rad = json::array();
  for (const auto& h : split.malignancy_histogram) mal.push_back(h);
  for (const auto& h : split.radiology_histogram) rad.push_back(h);
  return json{{"k", split.k},
              {"folds", folds},
              {"malignancy_histogram", mal},
              {"radiology_histogram", rad}};
}

json to_json(const CvResult& result) {
  json folds = json::array();
  for (const auto& f : result.folds) folds.push_back(to_json(f));
  json summary;
  summary["malignancy"] = {
      {"accuracy", stat_to_json(result.summary.malignancy_accuracy)},
      {"auc", stat_to_json(result.summary.malignancy_auc)}};
  if (result.summary.radiology_accuracy) {
    summary["radiology"] = {
        {"accuracy", stat_to_json(*result.summary.radiology_accuracy)},
        {"auc", stat_to_json(*result.summary.radiology_auc)}};
  } else {
    summary["radiology"] = nullptr;
  }
  return json{{"split", to_json(result.split)},
              {"folds", folds},
              {"summary", summary}};
}

}  // namespace r2m
