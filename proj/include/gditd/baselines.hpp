#pragma once

#include <optional>
#include <span>
#include <vector>

#include "gditd/matrix.hpp"
#include "gditd/mlp.hpp"
#include "gditd/trainer.hpp"

namespace gditd {

// Class decision plus an ID-ness confidence (higher = more in-distribution)
// and one confidence per class.
struct ConfidencePrediction {
  int label = 0;
  double confidence = 0.0;
  std::vector<double> class_confidence;
};

// MLP embedding followed by a linear k-way softmax layer.
struct SoftmaxModel {
  Mlp net;
  Matrix weight;  // k x d
  std::vector<double> bias;

  std::size_t classes() const { return weight.rows(); }
  Matrix logits(const Matrix& batch) const;
  Matrix logits_from_embeddings(const Matrix& embeddings) const;
};

struct SoftmaxTrainResult {
  SoftmaxModel model;
  std::vector<double> loss_history;  // mean cross-entropy per epoch
};

// Joint Adam training of network and head on mean cross-entropy.
SoftmaxTrainResult softmax_fit(const Matrix& features, std::span<const int> labels, std::size_t classes,
                               const TrainConfig& config);

// Max softmax probability; ties go to the lowest class index.
ConfidencePrediction softmax_confidence_from_logits(std::span<const double> logits);
ConfidencePrediction softmax_confidence(const SoftmaxModel& model, std::span<const double> features);

// Class means and one shared covariance of latent embeddings.
struct MahalanobisModel {
  Mlp net;  // may be empty when fitted on raw embeddings
  Matrix means;       // k x d
  Matrix covariance;  // d x d, ridge included
  Matrix precision;   // inverse of covariance
  double ridge = 0.0;

  std::size_t classes() const { return means.rows(); }
};

inline constexpr double kDefaultRidge = 1e-6;
inline constexpr double kMaxRidge = 1e-2;

// Ridge grows x10 from `ridge` up to 1e-2 until the covariance factors;
// beyond that a NumericError is thrown.
MahalanobisModel mahalanobis_fit(const Matrix& embeddings, std::span<const int> labels, std::size_t classes,
                                 double ridge = kDefaultRidge);
MahalanobisModel mahalanobis_fit(const Mlp& net, const Matrix& features, std::span<const int> labels,
                                 std::size_t classes, double ridge = kDefaultRidge);

double mahalanobis_squared(const MahalanobisModel& model, std::span<const double> embedding, std::size_t cls);

// confidence = -min_i M_i^2, class_confidence[i] = -M_i^2.
ConfidencePrediction mahalanobis_confidence_embedding(const MahalanobisModel& model,
                                                      std::span<const double> embedding);
ConfidencePrediction mahalanobis_confidence(const MahalanobisModel& model, std::span<const double> features);

// Inverse of a symmetric positive definite matrix via Cholesky; nullopt
// when a pivot is not positive.
std::optional<Matrix> spd_inverse(const Matrix& m);

}  // namespace gditd
