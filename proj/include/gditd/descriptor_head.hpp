#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "gditd/matrix.hpp"

namespace gditd {

// Per-class isotropic Gaussians in latent space. Cluster i has center
// mu.row(i) and radius sigma_i = exp(log_sigma[i]).
struct GaussianDescriptors {
  Matrix mu;                       // k x d
  std::vector<double> log_sigma;   // k

  GaussianDescriptors() = default;
  GaussianDescriptors(std::size_t classes, std::size_t dim)
      : mu(classes, dim), log_sigma(classes, 0.0) {}
  GaussianDescriptors(Matrix centers, std::vector<double> raw_sigma);

  std::size_t classes() const { return mu.rows(); }
  std::size_t dim() const { return mu.cols(); }
  double sigma(std::size_t i) const { return std::exp(log_sigma[i]); }

  friend bool operator==(const GaussianDescriptors&, const GaussianDescriptors&) = default;
};

inline constexpr int kOodLabel = -1;

// Distances below this are raised to it before the 1/D logits.
inline constexpr double kDistanceFloor = 1e-8;
inline constexpr double kProbabilityFloor = 1e-12;

// D_i = |z - mu_i|^2 / (2 sigma_i^2) + d log sigma_i
std::vector<double> class_distances(const GaussianDescriptors& desc, std::span<const double> embedding);

// zeta_i = sigma_i - D_i; positive inside the cluster sphere.
std::vector<double> class_scores(const GaussianDescriptors& desc, std::span<const double> embedding);

struct FocalParams {
  double beta = 0.995;
  double gamma = 1.0;
};

// Which terms enter the training objective. The ablation study switches them.
struct LossTerms {
  bool pull = true;
  bool score = true;
  bool efl1 = true;
  bool efl2 = true;

  friend bool operator==(const LossTerms&, const LossTerms&) = default;
};

struct LossBreakdown {
  double pull = 0.0;
  double score = 0.0;
  double efl1 = 0.0;
  double efl2 = 0.0;
  double net = 0.0;  // pull + score + efl1 + efl2

  double objective(const LossTerms& terms) const;
};

// Class-balanced focal loss of one sample given raw logits:
//   -(1 - beta) / (1 - beta^n_y) * (1 - p_y)^gamma * log p_y,  p = softmax(logits)
double effective_focal_loss(std::size_t label, std::span<const double> logits, double beta, double gamma,
                            std::size_t class_count_in_batch);

// Class-balance weight (1 - beta) / (1 - beta^n).
double effective_number_weight(double beta, std::size_t n);

// Batch losses. Rows of `embeddings` are samples, labels index clusters 0..k-1.
double pull_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels);
double score_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels);
double efl1_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels,
                 const FocalParams& focal);
double efl2_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels,
                 const FocalParams& focal);
LossBreakdown net_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels,
                       const FocalParams& focal);

struct HeadGradients {
  LossBreakdown loss;
  Matrix embedding;                // n x d
  Matrix mu;                       // k x d
  std::vector<double> log_sigma;   // k

  bool all_finite() const;
};

// Loss and exact gradients of the objective selected by `terms`, under the
// same clamping as the forward losses.
HeadGradients loss_gradients(const GaussianDescriptors& desc, const Matrix& embeddings,
                             std::span<const int> labels, const FocalParams& focal, const LossTerms& terms = {});

struct Prediction {
  int label = kOodLabel;  // cluster index or kOodLabel
  double confidence = 0.0;  // max_i zeta_i

  bool is_ood() const { return label == kOodLabel; }
};

// OOD when every score is negative, else the arg-max (lowest index on ties).
Prediction predict_from_scores(std::span<const double> scores);
Prediction predict(const GaussianDescriptors& desc, std::span<const double> embedding);

}  // namespace gditd
