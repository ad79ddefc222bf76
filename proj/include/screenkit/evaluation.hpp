#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "screenkit/adjudication.hpp"
#include "screenkit/corpus.hpp"

namespace screenkit {

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ScoredPrediction {
  std::string record_id;
  Decision decision = Decision::Exclude;
  double confidence = 0.0;
  bool truth = false;  // human include

  // Score used for ranking: confidence for includes, 1 - confidence for excludes.
  // Snapped to a 1e-12 grid so an include at 0.3 ties an exclude at 0.7.
  double p_include() const noexcept {
    const double p = decision == Decision::Include ? confidence : 1.0 - confidence;
    return std::round(p * 1e12) / 1e12;
  }
  bool correct() const noexcept { return (decision == Decision::Include) == truth; }
};

// Missing values mean the denominator was zero.
struct ClassificationMetrics {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> accuracy;
  std::optional<double> precision;
};

struct TargetSetMetrics {
  std::optional<double> recall;
  std::optional<double> precision;
  std::size_t overlap = 0;
};

struct RocPoint {
  double threshold = 0.0;  // +inf for the origin
  double fpr = 0.0;
  double tpr = 0.0;
};

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_confidence;
  std::optional<double> accuracy;

  double center() const noexcept { return (lower + upper) / 2.0; }
};

inline constexpr std::size_t kDefaultEceBins = 10;

struct EvaluationReport {
  LabelLevel level = LabelLevel::Final;
  ConfusionMatrix confusion;
  ClassificationMetrics metrics;
  std::optional<double> auc;  // undefined when only one class is present
  double brier = 0.0;
  double ece = 0.0;
  TargetSetMetrics target;
  std::size_t n_evaluated = 0;
  std::size_t n_unlabeled = 0;            // decided but without a human label
  std::size_t n_missing_predictions = 0;  // labeled but without a final decision
  std::vector<RocPoint> roc;
  std::vector<ReliabilityBin> reliability;
};

// Records without a label are skipped; *unlabeled receives their count.
ConfusionMatrix confusion(std::span<const FinalDecision> finals, const LabelSet& labels,
                          std::size_t* unlabeled = nullptr);

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

TargetSetMetrics target_set_metrics(const std::set<std::string>& ai_includes,
                                    const std::set<std::string>& human_includes);

std::vector<ScoredPrediction> score(std::span<const FinalDecision> finals, const LabelSet& labels);

// Tie-aware rank-sum AUC over p_include. Throws DegenerateLabels for one class.
double roc_auc(std::span<const ScoredPrediction> preds);

// Mean squared gap between confidence and decision correctness.
double brier(std::span<const ScoredPrediction> preds);

// Equal-width bins over [0, 1]: the first is [0, 1/n], the rest (k/n, (k+1)/n].
std::size_t ece_bin(double confidence, std::size_t n_bins);
double ece(std::span<const ScoredPrediction> preds, std::size_t n_bins = kDefaultEceBins);
std::vector<ReliabilityBin> reliability_bins(std::span<const ScoredPrediction> preds,
                                             std::size_t n_bins = kDefaultEceBins);

std::vector<RocPoint> roc_points(std::span<const ScoredPrediction> preds);

EvaluationReport evaluate(std::span<const FinalDecision> finals, const LabelSet& labels,
                          LabelLevel level);

nlohmann::json to_json(const EvaluationReport& report);
// ROC points and reliability bins as JSON arrays (threshold "inf" at the origin).
nlohmann::json plot_data_json(const EvaluationReport& report);
std::string roc_points_csv(const std::vector<RocPoint>& points);
std::string reliability_bins_csv(const std::vector<ReliabilityBin>& bins);

}  // namespace screenkit
