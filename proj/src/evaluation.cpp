#include "screenkit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "screenkit/csv.hpp"
#include "screenkit/error.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

void require_nonempty(std::span<const ScoredPrediction> preds, const char* what) {
  if (preds.empty()) fail(ErrorCode::InvalidArgument, std::string(what) + " of no predictions");
}

}  // namespace

ConfusionMatrix confusion(std::span<const FinalDecision> finals, const LabelSet& labels,
                          std::size_t* unlabeled) {
  ConfusionMatrix cm;
  std::size_t skipped = 0;
  for (const auto& f : finals) {
    const auto truth = labels.truth(f.record_id);
    if (!truth) {
      ++skipped;
      continue;
    }
    if (f.includes()) {
      ++(*truth ? cm.tp : cm.fp);
    } else {
      ++(*truth ? cm.fn : cm.tn);
    }
  }
  if (unlabeled) *unlabeled = skipped;
  if (cm.total() == 0) fail(ErrorCode::NoLabeledRecords, "no decided record carries a label");
  return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  return {ratio(cm.tp, cm.tp + cm.fn), ratio(cm.tn, cm.tn + cm.fp),
          ratio(cm.tp + cm.tn, cm.total()), ratio(cm.tp, cm.tp + cm.fp)};
}

TargetSetMetrics target_set_metrics(const std::set<std::string>& ai_includes,
                                    const std::set<std::string>& human_includes) {
  if (human_includes.empty()) fail(ErrorCode::EmptyTargetSet, "no human includes");
  TargetSetMetrics m;
  for (const auto& id : ai_includes) {
    if (human_includes.contains(id)) ++m.overlap;
  }
  m.recall = ratio(m.overlap, human_includes.size());
  m.precision = ratio(m.overlap, ai_includes.size());
  return m;
}

std::vector<ScoredPrediction> score(std::span<const FinalDecision> finals, const LabelSet& labels) {
  std::vector<ScoredPrediction> out;
  for (const auto& f : finals) {
    if (auto truth = labels.truth(f.record_id)) {
      out.push_back({f.record_id, f.decision, f.aggregated_confidence, *truth});
    }
  }
  return out;
}

double roc_auc(std::span<const ScoredPrediction> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].p_include() < preds[b].p_include();
  });

  // Average (1-based) ranks over tied groups.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    const double v = preds[order[i]].p_include();
    while (j < order.size() && preds[order[j]].p_include() == v) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (preds[order[k]].truth) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = preds.size() - positives;
  if (positives == 0 || negatives == 0) {
    fail(ErrorCode::DegenerateLabels, "AUC needs both include and exclude labels");
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double brier(std::span<const ScoredPrediction> preds) {
  require_nonempty(preds, "Brier score");
  double sum = 0.0;
  for (const auto& p : preds) {
    const double gap = p.confidence - (p.correct() ? 1.0 : 0.0);
    sum += gap * gap;
  }
  return sum / static_cast<double>(preds.size());
}

std::size_t ece_bin(double confidence, std::size_t n_bins) {
  if (n_bins == 0) fail(ErrorCode::InvalidArgument, "n_bins must be at least 1");
  if (!(confidence > 0.0)) return 0;
  const double n = static_cast<double>(n_bins);
  std::size_t k = std::min(n_bins - 1, static_cast<std::size_t>(std::floor(confidence * n)));
  // Settle floating-point edge cases against the exact edge values k / n.
  while (k > 0 && confidence <= static_cast<double>(k) / n) --k;
  while (k + 1 < n_bins && confidence > static_cast<double>(k + 1) / n) ++k;
  return k;
}

std::vector<ReliabilityBin> reliability_bins(std::span<const ScoredPrediction> preds,
                                             std::size_t n_bins) {
  if (n_bins == 0) fail(ErrorCode::InvalidArgument, "n_bins must be at least 1");
  std::vector<ReliabilityBin> bins(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> correct(n_bins, 0);
  const double n = static_cast<double>(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    bins[k].lower = static_cast<double>(k) / n;
    bins[k].upper = static_cast<double>(k + 1) / n;
  }
  for (const auto& p : preds) {
    const auto k = ece_bin(p.confidence, n_bins);
    ++bins[k].count;
    conf_sum[k] += p.confidence;
    if (p.correct()) ++correct[k];
  }
  for (std::size_t k = 0; k < n_bins; ++k) {
    if (bins[k].count == 0) continue;
    const double c = static_cast<double>(bins[k].count);
    bins[k].mean_confidence = conf_sum[k] / c;
    bins[k].accuracy = static_cast<double>(correct[k]) / c;
  }
  return bins;
}

double ece(std::span<const ScoredPrediction> preds, std::size_t n_bins) {
  require_nonempty(preds, "ECE");
  const auto bins = reliability_bins(preds, n_bins);
  const double total = static_cast<double>(preds.size());
  double sum = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    sum += static_cast<double>(b.count) / total * std::abs(*b.accuracy - *b.mean_confidence);
  }
  return sum;
}

std::vector<RocPoint> roc_points(std::span<const ScoredPrediction> preds) {
  std::size_t pos = 0;
  for (const auto& p : preds) pos += p.truth ? 1 : 0;
  const std::size_t neg = preds.size() - pos;

  std::vector<const ScoredPrediction*> sorted;
  for (const auto& p : preds) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return a->p_include() > b->p_include();
  });

  auto rate = [](std::size_t k, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
  };
  std::vector<RocPoint> points{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i]->p_include();
    while (i < sorted.size() && sorted[i]->p_include() == t) {
      ++(sorted[i]->truth ? tp : fp);
      ++i;
    }
    points.push_back({t, rate(fp, neg), rate(tp, pos)});
  }
  return points;
}

EvaluationReport evaluate(std::span<const FinalDecision> finals, const LabelSet& labels,
                          LabelLevel level) {
  if (labels.level != level) {
    fail(ErrorCode::InvalidArgument, "labels are " + std::string(to_string(labels.level)) +
                                         "-level but " + std::string(to_string(level)) +
                                         " was requested");
  }
  EvaluationReport r;
  r.level = level;
  r.confusion = confusion(finals, labels, &r.n_unlabeled);
  r.metrics = classification_metrics(r.confusion);
  r.n_evaluated = r.confusion.total();

  std::set<std::string> decided;
  std::set<std::string> ai_includes;
  for (const auto& f : finals) {
    decided.insert(f.record_id);
    if (f.includes()) ai_includes.insert(f.record_id);
  }
  for (const auto* set : {&labels.includes, &labels.excludes}) {
    for (const auto& id : *set) {
      if (!decided.contains(id)) ++r.n_missing_predictions;
    }
  }

  const auto preds = score(finals, labels);
  if (r.confusion.tp + r.confusion.fn > 0 && r.confusion.fp + r.confusion.tn > 0) {
    r.auc = roc_auc(preds);
  }
  r.brier = brier(preds);
  r.ece = ece(preds);
  if (!labels.includes.empty()) r.target = target_set_metrics(ai_includes, labels.includes);
  r.roc = roc_points(preds);
  r.reliability = reliability_bins(preds);
  return r;
}

nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["level"] = std::string(to_string(r.level));
  j["confusion"] = {{"tp", r.confusion.tp},
                    {"fp", r.confusion.fp},
                    {"fn", r.confusion.fn},
                    {"tn", r.confusion.tn}};
  j["sensitivity"] = opt(r.metrics.sensitivity);
  j["specificity"] = opt(r.metrics.specificity);
  j["accuracy"] = opt(r.metrics.accuracy);
  j["precision"] = opt(r.metrics.precision);
  j["auc"] = opt(r.auc);
  j["brier"] = r.brier;
  j["ece"] = r.ece;
  j["target_recall"] = opt(r.target.recall);
  j["target_precision"] = opt(r.target.precision);
  j["overlap"] = r.target.overlap;
  j["n_evaluated"] = r.n_evaluated;
  j["n_unlabeled"] = r.n_unlabeled;
  j["n_missing_predictions"] = r.n_missing_predictions;
  j["metadata"] = {
      {"undefined_marker", "null"},
      {"auc_score", "p_include = confidence if decision is include, else 1 - confidence (1e-12 grid)"},
      {"calibration_target", "stated confidence vs correctness of the decision"},
      {"ece_bins", r.reliability.size()},
      {"ece_binning", "equal-width; first bin [0, 1/n], others (k/n, (k+1)/n]"},
  };
  return j;
}

nlohmann::json plot_data_json(const EvaluationReport& r) {
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : r.roc) {
    roc.push_back({{"threshold", std::isinf(p.threshold) ? nlohmann::json("inf")
                                                         : nlohmann::json(p.threshold)},
                   {"fpr", p.fpr},
                   {"tpr", p.tpr}});
  }
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.reliability) {
    bins.push_back({{"bin_center", b.center()},
                    {"mean_confidence", opt(b.mean_confidence)},
                    {"accuracy", opt(b.accuracy)},
                    {"count", b.count}});
  }
  return {{"roc_points", roc}, {"reliability_bins", bins}};
}

std::string roc_points_csv(const std::vector<RocPoint>& points) {
  std::string out = csv::format_row({"threshold", "fpr", "tpr"});
  for (const auto& p : points) {
    out += csv::format_row({std::isinf(p.threshold) ? "inf" : text::format_double(p.threshold),
                            text::format_double(p.fpr), text::format_double(p.tpr)});
  }
  return out;
}

std::string reliability_bins_csv(const std::vector<ReliabilityBin>& bins) {
  std::string out = csv::format_row({"bin_center", "mean_confidence", "accuracy", "count"});
  for (const auto& b : bins) {
    out += csv::format_row({text::format_double(b.center()),
                            b.mean_confidence ? text::format_double(*b.mean_confidence) : "",
                            b.accuracy ? text::format_double(*b.accuracy) : "",
                            std::to_string(b.count)});
  }
  return out;
}

}  // namespace screenkit
