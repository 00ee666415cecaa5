#include "gditd/descriptor_head.hpp"

#include <algorithm>
#include <string>

#include "gditd/error.hpp"
#include "gditd/kernels.hpp"

namespace gditd {
namespace {

void check_batch(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels) {
  require(embeddings.cols() == desc.dim(), "embedding dim " + std::to_string(embeddings.cols()) +
                                               " does not match descriptor dim " + std::to_string(desc.dim()));
  require(embeddings.rows() == labels.size(), "one label per embedding row required");
  require(embeddings.rows() >= 1, "empty batch");
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < desc.classes(),
            "label " + std::to_string(y) + " outside 0.." + std::to_string(desc.classes() - 1));
  }
}

std::vector<std::size_t> batch_class_counts(std::size_t classes, std::span<const int> labels) {
  std::vector<std::size_t> counts(classes, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

std::vector<double> reciprocal_logits(std::span<const double> distances) {
  std::vector<double> logits(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) logits[i] = 1.0 / std::max(distances[i], kDistanceFloor);
  return logits;
}

struct FocalTerm {
  double loss = 0.0;
  std::vector<double> dlogits;
};

// Loss of one sample and its gradient with respect to the logits.
FocalTerm focal_with_gradient(std::size_t label, std::span<const double> logits, double beta, double gamma,
                              std::size_t n_y, bool want_gradient) {
  const std::size_t k = logits.size();
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(k);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    p[j] = std::exp(logits[j] - top);
    total += p[j];
  }
  for (double& v : p) v /= total;
  const double log_py_raw = (logits[label] - top) - std::log(total);
  const double log_floor = std::log(kProbabilityFloor);
  const bool clamped = log_py_raw < log_floor;
  const double log_py = std::min(std::max(log_py_raw, log_floor), 0.0);
  const double one_minus = -std::expm1(log_py);
  const double w = effective_number_weight(beta, n_y);
  const double modulation = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);

  FocalTerm out;
  out.loss = -w * modulation * log_py;
  if (!want_gradient) return out;
  out.dlogits.assign(k, 0.0);
  if (clamped) return out;
  // dL/dlogit_j = G * (delta_jy - p_j) with G = p_y * dL/dp_y.
  const double py = std::exp(log_py);
  double focus = 0.0;
  if (gamma != 0.0 && one_minus > 0.0) focus = gamma * std::pow(one_minus, gamma - 1.0) * py * log_py;
  const double g = -w * (modulation - focus);
  for (std::size_t j = 0; j < k; ++j) out.dlogits[j] = g * ((j == label ? 1.0 : 0.0) - p[j]);
  return out;
}

}  // namespace

GaussianDescriptors::GaussianDescriptors(Matrix centers, std::vector<double> raw_sigma)
    : mu(std::move(centers)), log_sigma(std::move(raw_sigma)) {
  require(mu.rows() == log_sigma.size(), "GaussianDescriptors: one raw sigma per center required");
  require(mu.all_finite(), "GaussianDescriptors: centers must be finite");
}

std::vector<double> class_distances(const GaussianDescriptors& desc, std::span<const double> embedding) {
  require(embedding.size() == desc.dim(), "class_distances: embedding dim " + std::to_string(embedding.size()) +
                                              " does not match descriptor dim " + std::to_string(desc.dim()));
  const auto& k = kernels::active();
  const double d = static_cast<double>(desc.dim());
  std::vector<double> out(desc.classes());
  for (std::size_t i = 0; i < desc.classes(); ++i) {
    const double s = desc.log_sigma[i];
    const double sq = k.squared_distance(embedding.data(), desc.mu.row(i).data(), desc.dim());
    out[i] = sq * std::exp(-2.0 * s) / 2.0 + d * s;
  }
  return out;
}

std::vector<double> class_scores(const GaussianDescriptors& desc, std::span<const double> embedding) {
  auto out = class_distances(desc, embedding);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = desc.sigma(i) - out[i];
  return out;
}

double LossBreakdown::objective(const LossTerms& terms) const {
  return (terms.pull ? pull : 0.0) + (terms.score ? score : 0.0) + (terms.efl1 ? efl1 : 0.0) +
         (terms.efl2 ? efl2 : 0.0);
}

double effective_number_weight(double beta, std::size_t n) {
  require(beta > 0.0 && beta < 1.0, "effective focal loss: beta must lie in (0, 1)");
  require(n >= 1, "effective focal loss: class count must be at least 1");
  return (1.0 - beta) / -std::expm1(static_cast<double>(n) * std::log(beta));
}

double effective_focal_loss(std::size_t label, std::span<const double> logits, double beta, double gamma,
                            std::size_t class_count_in_batch) {
  require(label < logits.size(), "effective_focal_loss: label outside logits");
  require(gamma >= 0.0, "effective_focal_loss: gamma must be non-negative");
  return focal_with_gradient(label, logits, beta, gamma, class_count_in_batch, false).loss;
}

double pull_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels) {
  check_batch(desc, embeddings, labels);
  double total = 0.0;
  for (std::size_t s = 0; s < embeddings.rows(); ++s) {
    total += class_distances(desc, embeddings.row(s))[static_cast<std::size_t>(labels[s])];
  }
  return total;
}

double score_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels) {
  check_batch(desc, embeddings, labels);
  const double batch = static_cast<double>(embeddings.rows());
  double total = 0.0;
  for (std::size_t s = 0; s < embeddings.rows(); ++s) {
    const auto zeta = class_scores(desc, embeddings.row(s));
    const auto y = static_cast<std::size_t>(labels[s]);
    for (std::size_t i = 0; i < zeta.size(); ++i) {
      if (i == y) {
        total += std::max(-zeta[i], 0.0) + std::log1p(zeta[i] * zeta[i]);
      } else {
        total += std::exp(zeta[i]) / batch;
      }
    }
  }
  return total;
}

double efl1_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels,
                 const FocalParams& focal) {
  check_batch(desc, embeddings, labels);
  const auto counts = batch_class_counts(desc.classes(), labels);
  double total = 0.0;
  for (std::size_t s = 0; s < embeddings.rows(); ++s) {
    const auto y = static_cast<std::size_t>(labels[s]);
    const auto logits = reciprocal_logits(class_distances(desc, embeddings.row(s)));
    total += effective_focal_loss(y, logits, focal.beta, focal.gamma, counts[y]);
  }
  return total;
}

double efl2_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels,
                 const FocalParams& focal) {
  check_batch(desc, embeddings, labels);
  const auto counts = batch_class_counts(desc.classes(), labels);
  double total = 0.0;
  for (std::size_t s = 0; s < embeddings.rows(); ++s) {
    const auto y = static_cast<std::size_t>(labels[s]);
    total += effective_focal_loss(y, class_scores(desc, embeddings.row(s)), focal.beta, focal.gamma, counts[y]);
  }
  return total;
}

LossBreakdown net_loss(const GaussianDescriptors& desc, const Matrix& embeddings, std::span<const int> labels,
                       const FocalParams& focal) {
  LossBreakdown out;
  out.pull = pull_loss(desc, embeddings, labels);
  out.score = score_loss(desc, embeddings, labels);
  out.efl1 = efl1_loss(desc, embeddings, labels, focal);
  out.efl2 = efl2_loss(desc, embeddings, labels, focal);
  out.net = out.pull + out.score + out.efl1 + out.efl2;
  return out;
}

bool HeadGradients::all_finite() const {
  for (double v : log_sigma) {
    if (!std::isfinite(v)) return false;
  }
  return embedding.all_finite() && mu.all_finite();
}

HeadGradients loss_gradients(const GaussianDescriptors& desc, const Matrix& embeddings,
                             std::span<const int> labels, const FocalParams& focal, const LossTerms& terms) {
  check_batch(desc, embeddings, labels);
  require(focal.gamma >= 0.0, "loss_gradients: gamma must be non-negative");
  const auto& kern = kernels::active();
  const std::size_t k = desc.classes();
  const std::size_t dim = desc.dim();
  const double d = static_cast<double>(dim);
  const double batch = static_cast<double>(embeddings.rows());
  const auto counts = batch_class_counts(k, labels);

  std::vector<double> sigma(k), inv_var(k);
  for (std::size_t i = 0; i < k; ++i) {
    sigma[i] = desc.sigma(i);
    inv_var[i] = std::exp(-2.0 * desc.log_sigma[i]);
  }

  HeadGradients out;
  out.embedding = Matrix(embeddings.rows(), dim);
  out.mu = Matrix(k, dim);
  out.log_sigma.assign(k, 0.0);

  std::vector<double> sq(k), dist(k), zeta(k), g_dist(k), g_zeta(k);
  for (std::size_t s = 0; s < embeddings.rows(); ++s) {
    const double* z = embeddings.row(s).data();
    const auto y = static_cast<std::size_t>(labels[s]);
    for (std::size_t i = 0; i < k; ++i) {
      sq[i] = kern.squared_distance(z, desc.mu.row(i).data(), dim);
      dist[i] = sq[i] * inv_var[i] / 2.0 + d * desc.log_sigma[i];
      zeta[i] = sigma[i] - dist[i];
    }
    std::fill(g_dist.begin(), g_dist.end(), 0.0);
    std::fill(g_zeta.begin(), g_zeta.end(), 0.0);

    out.loss.pull += dist[y];
    if (terms.pull) g_dist[y] += 1.0;

    for (std::size_t i = 0; i < k; ++i) {
      if (i == y) {
        out.loss.score += std::max(-zeta[i], 0.0) + std::log1p(zeta[i] * zeta[i]);
        if (terms.score) g_zeta[i] += (zeta[i] < 0.0 ? -1.0 : 0.0) + 2.0 * zeta[i] / (1.0 + zeta[i] * zeta[i]);
      } else {
        const double e = std::exp(zeta[i]) / batch;
        out.loss.score += e;
        if (terms.score) g_zeta[i] += e;
      }
    }

    const auto logits = reciprocal_logits(dist);
    const auto efl1 = focal_with_gradient(y, logits, focal.beta, focal.gamma, counts[y], terms.efl1);
    out.loss.efl1 += efl1.loss;
    if (terms.efl1) {
      for (std::size_t i = 0; i < k; ++i) {
        if (dist[i] >= kDistanceFloor) g_dist[i] -= efl1.dlogits[i] / (dist[i] * dist[i]);
      }
    }

    const auto efl2 = focal_with_gradient(y, zeta, focal.beta, focal.gamma, counts[y], terms.efl2);
    out.loss.efl2 += efl2.loss;
    if (terms.efl2) {
      for (std::size_t i = 0; i < k; ++i) g_zeta[i] += efl2.dlogits[i];
    }

    // zeta = sigma - D, so a score gradient acts on D with opposite sign and
    // on log sigma through sigma itself.
    double* gz = out.embedding.row(s).data();
    for (std::size_t i = 0; i < k; ++i) {
      const double g = g_dist[i] - g_zeta[i];
      if (g != 0.0) {
        const double c = g * inv_var[i];
        const double* m = desc.mu.row(i).data();
        kern.axpy(c, z, gz, dim);
        kern.axpy(-c, m, gz, dim);
        double* gm = out.mu.row(i).data();
        kern.axpy(-c, z, gm, dim);
        kern.axpy(c, m, gm, dim);
        out.log_sigma[i] += g * (d - sq[i] * inv_var[i]);
      }
      out.log_sigma[i] += g_zeta[i] * sigma[i];
    }
  }
  out.loss.net = out.loss.pull + out.loss.score + out.loss.efl1 + out.loss.efl2;
  return out;
}

Prediction predict_from_scores(std::span<const double> scores) {
  require(!scores.empty(), "predict: no classes");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  Prediction p;
  p.confidence = scores[best];
  p.label = scores[best] < 0.0 ? kOodLabel : static_cast<int>(best);
  return p;
}

Prediction predict(const GaussianDescriptors& desc, std::span<const double> embedding) {
  return predict_from_scores(class_scores(desc, embedding));
}

}  // namespace gditd
