#include "gditd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gditd/error.hpp"

namespace gditd {
namespace {

void check_inputs(std::span<const double> scores, BinaryLabels positive, const char* who) {
  require(scores.size() == positive.size(), std::string(who) + ": scores and labels differ in length");
  for (double s : scores) require(!std::isnan(s), std::string(who) + ": NaN score");
}

std::pair<std::size_t, std::size_t> class_counts(BinaryLabels positive) {
  const auto pos = static_cast<std::size_t>(std::count_if(positive.begin(), positive.end(), [](auto v) { return v != 0; }));
  return {pos, positive.size() - pos};
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Calls visit(threshold, tp, fp) once per distinct score, descending, with
// the counts of samples scoring >= threshold.
template <typename Visit>
void sweep(std::span<const double> scores, BinaryLabels positive, Visit visit) {
  const auto order = descending(scores);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      positive[order[i]] ? ++tp : ++fp;
      ++i;
    }
    visit(t, tp, fp);
  }
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

double id_accuracy(std::span<const int> predicted, std::span<const int> truth) {
  require(predicted.size() == truth.size(), "id_accuracy: length mismatch");
  require(!truth.empty(), "id_accuracy: no samples");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

double auroc(std::span<const double> scores, BinaryLabels positive) {
  check_inputs(scores, positive, "auroc");
  const auto [pos, neg] = class_counts(positive);
  require(pos > 0 && neg > 0, "auroc: both classes must be present");
  // Rank sum with mid-ranks for ties, ascending order.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t p = i; p < j; ++p) {
      if (positive[order[p]]) rank_sum += mid_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

double aupr(std::span<const double> scores, BinaryLabels positive) {
  check_inputs(scores, positive, "aupr");
  const auto [pos, neg] = class_counts(positive);
  require(pos > 0, "aupr: no positive samples");
  double area = 0.0;
  double prev_recall = 0.0;
  sweep(scores, positive, [&](double, std::size_t tp, std::size_t fp) {
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  });
  return area;
}

double tnr_at_tpr(std::span<const double> scores, BinaryLabels positive, double target_tpr) {
  check_inputs(scores, positive, "tnr_at_tpr");
  require(target_tpr > 0.0 && target_tpr <= 1.0, "tnr_at_tpr: target must lie in (0, 1]");
  const auto [pos, neg] = class_counts(positive);
  require(pos > 0 && neg > 0, "tnr_at_tpr: both classes must be present");
  std::vector<double> id_scores;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) id_scores.push_back(scores[i]);
  }
  std::sort(id_scores.begin(), id_scores.end(), std::greater<>());
  const double n = static_cast<double>(pos);
  std::size_t accepted = 1;
  while (static_cast<double>(accepted) / n < target_tpr) ++accepted;
  const double threshold = id_scores[accepted - 1];
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i] && scores[i] < threshold) ++rejected;
  }
  return static_cast<double>(rejected) / static_cast<double>(neg);
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, BinaryLabels positive) {
  check_inputs(scores, positive, "roc_curve");
  const auto [pos, neg] = class_counts(positive);
  require(pos > 0 && neg > 0, "roc_curve: both classes must be present");
  std::vector<CurvePoint> out{{INFINITY, 0.0, 0.0}};
  sweep(scores, positive, [&](double t, std::size_t tp, std::size_t fp) {
    out.push_back({t, static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  });
  return out;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, BinaryLabels positive) {
  check_inputs(scores, positive, "pr_curve");
  const auto [pos, neg] = class_counts(positive);
  require(pos > 0, "pr_curve: no positive samples");
  std::vector<CurvePoint> out;
  sweep(scores, positive, [&](double t, std::size_t tp, std::size_t fp) {
    out.push_back({t, static_cast<double>(tp) / static_cast<double>(pos),
                   static_cast<double>(tp) / static_cast<double>(tp + fp)});
  });
  return out;
}

EvalReport evaluate(std::span<const ScoredSample> samples, const std::vector<std::string>& class_names,
                    std::optional<int> minority, const RunEcho& echo) {
  EvalReport report;
  report.echo = echo;
  std::vector<int> predicted, truth;
  std::vector<double> confidence;
  std::vector<bool> is_id;
  for (const auto& s : samples) {
    confidence.push_back(s.confidence);
    is_id.push_back(!s.is_ood);
    if (s.is_ood) {
      ++report.ood_samples;
    } else {
      ++report.id_samples;
      predicted.push_back(s.predicted_class);
      truth.push_back(s.true_class);
    }
  }
  require(report.id_samples > 0, "evaluate: test split has no ID rows");
  report.id_accuracy = id_accuracy(predicted, truth);

  if (report.ood_samples == 0) {
    report.warnings.emplace_back("no OOD rows in test split; OOD metrics omitted");
  } else {
    std::vector<std::uint8_t> id_flags(is_id.begin(), is_id.end());
    std::vector<std::uint8_t> ood_flags(is_id.size());
    std::vector<double> ood_scores(confidence.size());
    for (std::size_t i = 0; i < is_id.size(); ++i) {
      ood_flags[i] = !is_id[i];
      ood_scores[i] = ood_score(confidence[i]);
    }
    report.ood_tnr_at_85tpr = tnr_at_tpr(confidence, id_flags, 0.85);
    report.ood_auroc = auroc(ood_scores, ood_flags);
    report.ood_aupr = aupr(ood_scores, ood_flags);
  }

  if (minority) {
    std::vector<double> scores;
    std::vector<std::uint8_t> flags;
    for (const auto& s : samples) {
      if (s.is_ood) continue;
      require(static_cast<std::size_t>(*minority) < s.class_confidence.size(),
              "evaluate: class confidences missing for the minority class");
      scores.push_back(s.class_confidence[static_cast<std::size_t>(*minority)]);
      flags.push_back(s.true_class == *minority);
    }
    if (std::find(flags.begin(), flags.end(), std::uint8_t{1}) == flags.end()) {
      report.warnings.emplace_back("no minority rows in test split; minority AUPR omitted");
    } else {
      report.minority_aupr = aupr(scores, flags);
    }
  }

  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const int cls = static_cast<int>(c);
    std::size_t tp = 0, called = 0, support = 0;
    for (const auto& s : samples) {
      const bool truly = !s.is_ood && s.true_class == cls;
      support += truly ? 1 : 0;
      called += s.predicted_class == cls ? 1 : 0;
      tp += truly && s.predicted_class == cls ? 1 : 0;
    }
    ClassStats stats{class_names[c], 0.0, 0.0, support};
    if (called > 0) stats.precision = static_cast<double>(tp) / static_cast<double>(called);
    if (support > 0) stats.recall = static_cast<double>(tp) / static_cast<double>(support);
    report.per_class.push_back(stats);
  }
  return report;
}

EvalReport mean_report(std::span<const EvalReport> reports) {
  require(!reports.empty(), "mean_report: no reports");
  EvalReport out;
  out.echo = reports.front().echo;
  auto average = [&](auto field) -> std::optional<double> {
    std::vector<double> values;
    for (const auto& r : reports) {
      if (auto v = field(r)) values.push_back(*v);
    }
    if (values.empty()) return std::nullopt;
    return mean_of(values);
  };
  out.id_accuracy = *average([](const EvalReport& r) { return std::optional<double>(r.id_accuracy); });
  out.minority_aupr = average([](const EvalReport& r) { return r.minority_aupr; });
  out.ood_tnr_at_85tpr = average([](const EvalReport& r) { return r.ood_tnr_at_85tpr; });
  out.ood_auroc = average([](const EvalReport& r) { return r.ood_auroc; });
  out.ood_aupr = average([](const EvalReport& r) { return r.ood_aupr; });
  out.per_class = reports.front().per_class;
  for (std::size_t c = 0; c < out.per_class.size(); ++c) {
    std::vector<double> precision, recall;
    std::size_t support = 0;
    for (const auto& r : reports) {
      precision.push_back(r.per_class.at(c).precision);
      recall.push_back(r.per_class.at(c).recall);
      support += r.per_class.at(c).support;
    }
    out.per_class[c].precision = mean_of(precision);
    out.per_class[c].recall = mean_of(recall);
    out.per_class[c].support = support;
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out.id_samples += reports[i].id_samples;
    out.ood_samples += reports[i].ood_samples;
    for (const auto& w : reports[i].warnings) out.warnings.push_back("fold " + std::to_string(i) + ": " + w);
  }
  return out;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["id_accuracy"] = report.id_accuracy;
  j["minority_aupr"] = optional_json(report.minority_aupr);
  j["ood_tnr_at_85tpr"] = optional_json(report.ood_tnr_at_85tpr);
  j["ood_auroc"] = optional_json(report.ood_auroc);
  j["ood_aupr"] = optional_json(report.ood_aupr);
  j["id_samples"] = report.id_samples;
  j["ood_samples"] = report.ood_samples;
  j["per_class"] = nlohmann::json::array();
  for (const auto& c : report.per_class) {
    j["per_class"].push_back({{"class", c.name}, {"precision", c.precision}, {"recall", c.recall}, {"support", c.support}});
  }
  j["config"] = {{"method", report.echo.method},   {"beta_mode", report.echo.beta_mode},
                 {"mdsr", report.echo.mdsr},       {"seed", report.echo.seed},
                 {"epochs", report.echo.epochs},   {"folds", report.echo.folds},
                 {"loss_terms", report.echo.loss_terms}};
  j["warnings"] = report.warnings;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.id_accuracy = j.at("id_accuracy").get<double>();
  r.minority_aupr = optional_from(j, "minority_aupr");
  r.ood_tnr_at_85tpr = optional_from(j, "ood_tnr_at_85tpr");
  r.ood_auroc = optional_from(j, "ood_auroc");
  r.ood_aupr = optional_from(j, "ood_aupr");
  r.id_samples = j.value("id_samples", std::size_t{0});
  r.ood_samples = j.value("ood_samples", std::size_t{0});
  for (const auto& c : j.at("per_class")) {
    r.per_class.push_back({c.at("class").get<std::string>(), c.at("precision").get<double>(),
                           c.at("recall").get<double>(), c.at("support").get<std::size_t>()});
  }
  const auto& cfg = j.at("config");
  r.echo.method = cfg.at("method").get<std::string>();
  r.echo.beta_mode = cfg.at("beta_mode").get<std::string>();
  r.echo.mdsr = cfg.at("mdsr").get<double>();
  r.echo.seed = cfg.at("seed").get<std::uint64_t>();
  r.echo.epochs = cfg.at("epochs").get<std::size_t>();
  r.echo.folds = cfg.at("folds").get<std::size_t>();
  r.echo.loss_terms = cfg.at("loss_terms").get<std::string>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

std::string curve_csv(const std::vector<CurvePoint>& points, const char* x_name, const char* y_name) {
  std::ostringstream out;
  out << x_name << ',' << y_name << '\n';
  for (const auto& p : points) out << nlohmann::json(p.x).dump() << ',' << nlohmann::json(p.y).dump() << '\n';
  return out.str();
}

}  // namespace gditd
