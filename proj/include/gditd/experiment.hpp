#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gditd/baselines.hpp"
#include "gditd/dataset.hpp"
#include "gditd/descriptor_head.hpp"
#include "gditd/metrics.hpp"
#include "gditd/trainer.hpp"
#include "json.hpp"

namespace gditd {

enum class Method { gditd, softmax, mahalanobis };

std::string to_string(Method method);
Method method_from_string(const std::string& text);
std::string to_string(const LossTerms& terms);

struct GditdModel {
  Mlp net;
  GaussianDescriptors desc;
};

// A trained scorer of any method together with everything needed to score
// raw feature rows: normalization, class mapping, configuration.
struct TrainedModel {
  Method method = Method::gditd;
  std::variant<GditdModel, SoftmaxModel, MahalanobisModel> body;
  NormalizationStats normalization;
  ClassMap class_map;
  std::vector<std::string> class_names;  // dataset-wide names
  std::optional<int> minority_class;     // dataset class id
  TrainConfig config;

  // One prediction per raw row. Labels are head indices, -1 for GDITD's
  // OOD decision; class_confidence is zeta (GDITD), softmax probability, or
  // negative Mahalanobis^2.
  std::vector<ConfidencePrediction> score(const Matrix& raw_features) const;
  std::vector<std::string> head_class_names() const;
};

// Per-epoch loss table for losses.csv.
struct LossTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::string csv() const;
};

struct TrainOutcome {
  TrainedModel model;
  LossTable losses;
};

// Fits z-score stats on train_rows, then trains the chosen method on those
// rows (ID rows only; OOD rows in train_rows are rejected).
TrainOutcome train_model(Method method, const TabularDataset& raw, std::span<const std::size_t> train_rows,
                         const TrainConfig& config);

struct EvalOutcome {
  EvalReport report;
  std::vector<CurvePoint> roc;  // OOD-positive
  std::vector<CurvePoint> pr;   // OOD-positive
};

EvalOutcome evaluate_model(const TrainedModel& model, const TabularDataset& raw,
                           std::span<const std::size_t> test_rows, const RunEcho& echo);

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);
nlohmann::json checkpoint_json(const TrainedModel& model);
TrainedModel checkpoint_from_json(const nlohmann::json& j);

// Seeds derived from a master seed; independent of execution order.
std::uint64_t cell_seed(std::uint64_t master, Method method, double mdsr, std::size_t fold);
std::uint64_t split_seed(std::uint64_t master, double mdsr);
std::uint64_t mdsr_seed(std::uint64_t master, double mdsr);

struct Protocol {
  std::size_t folds = 5;
  double mdsr = 1.0;
};

struct RunResult {
  TrainOutcome trained;
  EvalOutcome eval;
};

// Single train/validate run: MDSR down-sampling, stratified folds, train on
// every fold but the first, evaluate on the first fold's ID rows plus all
// OOD rows.
RunResult holdout_run(Method method, const TabularDataset& raw, const TrainConfig& config, const Protocol& protocol);

struct KFoldResult {
  std::vector<EvalReport> folds;
  EvalReport mean;
};

// Cross-validated evaluation; folds run concurrently up to worker_limit()
// threads, each with its own derived seed.
KFoldResult kfold_fit_eval(Method method, const TabularDataset& raw, const TrainConfig& config,
                           const Protocol& protocol);

// GDITD_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_limit();

struct AblationRow {
  std::string variant;
  LossTerms terms;
  EvalReport report;
};

// The nine loss-term variants: each term alone, each term left out, and all four.
std::vector<std::pair<std::string, LossTerms>> ablation_variants();
std::vector<AblationRow> ablate(const TabularDataset& raw, const TrainConfig& config, const Protocol& protocol);

RunEcho make_echo(Method method, const TrainConfig& config, const Protocol& protocol);

}  // namespace gditd
