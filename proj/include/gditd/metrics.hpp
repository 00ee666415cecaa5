#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace gditd {

// Exact threshold-sweep metrics. Scores: higher means "more positive".
// Labels: nonzero = positive.
using BinaryLabels = std::span<const std::uint8_t>;

double id_accuracy(std::span<const int> predicted, std::span<const int> truth);

// Mann-Whitney probability that a positive outscores a negative, ties 1/2.
double auroc(std::span<const double> scores, BinaryLabels positive);

// Step-wise area under the precision-recall curve: the sum over distinct
// thresholds t (descending) of (recall(t) - recall(previous t)) * precision(t),
// where a sample is called positive when its score is >= t.
double aupr(std::span<const double> scores, BinaryLabels positive);

// Positives are ID samples. Picks the largest threshold t whose acceptance
// rate on positives (score >= t) reaches target_tpr, and returns the
// fraction of negatives rejected (score < t).
double tnr_at_tpr(std::span<const double> scores, BinaryLabels positive, double target_tpr = 0.85);

struct CurvePoint {
  double threshold;
  double x;  // FPR for ROC, recall for PR
  double y;  // TPR for ROC, precision for PR
};

std::vector<CurvePoint> roc_curve(std::span<const double> scores, BinaryLabels positive);
std::vector<CurvePoint> pr_curve(std::span<const double> scores, BinaryLabels positive);

// The single OOD-positive score: larger means more likely OOD.
inline double ood_score(double id_confidence) { return -id_confidence; }

// One scored test row. Classes are head indices; -1 marks OOD.
struct ScoredSample {
  double confidence = 0.0;  // higher = more ID
  bool is_ood = false;
  int true_class = -1;
  int predicted_class = -1;
  std::vector<double> class_confidence;  // for one-vs-rest minority AUPR
};

struct ClassStats {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t support = 0;
};

struct RunEcho {
  std::string method;
  std::string beta_mode;
  double mdsr = 1.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t folds = 0;
  std::string loss_terms;
};

struct EvalReport {
  double id_accuracy = 0.0;
  std::optional<double> minority_aupr;
  std::optional<double> ood_tnr_at_85tpr;
  std::optional<double> ood_auroc;
  std::optional<double> ood_aupr;
  std::vector<ClassStats> per_class;
  RunEcho echo;
  std::vector<std::string> warnings;
  std::size_t id_samples = 0;
  std::size_t ood_samples = 0;
};

// minority: head index of the minority class, if any.
EvalReport evaluate(std::span<const ScoredSample> samples, const std::vector<std::string>& class_names,
                    std::optional<int> minority, const RunEcho& echo);

// Field-wise mean of fold reports (missing fields stay missing when absent
// from every fold); warnings are concatenated.
EvalReport mean_report(std::span<const EvalReport> reports);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

// Two-column CSV: header then one point per line.
std::string curve_csv(const std::vector<CurvePoint>& points, const char* x_name, const char* y_name);

}  // namespace gditd
