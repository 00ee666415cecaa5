#include "gditd/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "gditd/error.hpp"
#include "gditd/kernels.hpp"
#include "gditd/rng.hpp"

namespace gditd {
namespace {

constexpr std::uint64_t kHeadStream = 0x33;
constexpr std::uint64_t kShuffleStream = 0x44;
constexpr std::uint64_t kInitStream = 0x11;

Matrix as_row(std::span<const double> x) { return Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())); }

}  // namespace

Matrix SoftmaxModel::logits_from_embeddings(const Matrix& embeddings) const {
  require(embeddings.cols() == weight.cols(), "softmax head: embedding dim mismatch");
  const auto& k = kernels::active();
  Matrix out(embeddings.rows(), classes());
  for (std::size_t s = 0; s < embeddings.rows(); ++s) {
    for (std::size_t c = 0; c < classes(); ++c) {
      out(s, c) = bias[c] + k.dot(embeddings.row(s).data(), weight.row(c).data(), weight.cols());
    }
  }
  return out;
}

Matrix SoftmaxModel::logits(const Matrix& batch) const { return logits_from_embeddings(net.forward(batch)); }

SoftmaxTrainResult softmax_fit(const Matrix& features, std::span<const int> labels, std::size_t classes,
                               const TrainConfig& config) {
  config.validate();
  require(features.rows() >= 1, "softmax_fit: empty training set");
  require(features.rows() == labels.size(), "softmax_fit: one label per row required");
  require(classes >= 2, "softmax_fit: need at least two classes");
  for (int y : labels) require(y >= 0 && static_cast<std::size_t>(y) < classes, "softmax_fit: label out of range");

  SoftmaxTrainResult result;
  SoftmaxModel& model = result.model;
  // Same stream as the GDITD trainer, so both start from identical networks.
  model.net = Mlp::create({features.cols(), config.hidden(), config.hidden(), config.latent_dim},
                          mix_seed(config.seed, kInitStream));
  {
    Rng rng(mix_seed(config.seed, kHeadStream));
    const double limit = std::sqrt(6.0 / static_cast<double>(config.latent_dim + classes));
    model.weight = Matrix(classes, config.latent_dim);
    for (double& w : model.weight.values()) w = rng.uniform(-limit, limit);
    model.bias.assign(classes, 0.0);
  }
  std::vector<std::size_t> sizes;
  for (auto b : model.net.parameter_blocks()) sizes.push_back(b.size());
  sizes.push_back(model.weight.size());
  sizes.push_back(model.bias.size());
  Adam adam(AdamSettings{config.learning_rate}, sizes);

  const auto& kern = kernels::active();
  Rng rng(mix_seed(config.seed, kShuffleStream));
  const std::size_t n = features.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix batch = features.gather_rows(idx);
      const double inv_b = 1.0 / static_cast<double>(idx.size());
      const ForwardTrace trace = model.net.forward_trace(batch);
      const Matrix& emb = trace.activations.back();
      const Matrix logits = model.logits_from_embeddings(emb);

      Matrix g_logits(logits.rows(), classes);
      for (std::size_t s = 0; s < logits.rows(); ++s) {
        auto row = logits.row(s);
        const double top = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) total += std::exp(v - top);
        const auto y = static_cast<std::size_t>(labels[idx[s]]);
        epoch_loss += -(row[y] - top - std::log(total));
        for (std::size_t c = 0; c < classes; ++c) {
          const double p = std::exp(row[c] - top) / total;
          g_logits(s, c) = (p - (c == y ? 1.0 : 0.0)) * inv_b;
        }
      }
      Matrix g_weight(classes, config.latent_dim);
      std::vector<double> g_bias(classes, 0.0);
      Matrix g_emb(emb.rows(), emb.cols());
      for (std::size_t s = 0; s < emb.rows(); ++s) {
        for (std::size_t c = 0; c < classes; ++c) {
          const double g = g_logits(s, c);
          g_bias[c] += g;
          kern.axpy(g, emb.row(s).data(), g_weight.row(c).data(), emb.cols());
          kern.axpy(g, model.weight.row(c).data(), g_emb.row(s).data(), emb.cols());
        }
      }
      MlpGradients g_net = model.net.backward(trace, g_emb);
      if (!g_net.all_finite() || !g_weight.all_finite()) throw NumericError("non-finite softmax gradient");
      auto params = model.net.parameter_blocks();
      params.emplace_back(model.weight.values());
      params.emplace_back(model.bias);
      auto grads = g_net.blocks();
      grads.emplace_back(g_weight.values());
      grads.emplace_back(g_bias);
      adam.step(params, grads);
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) throw NumericError("non-finite cross-entropy loss");
    result.loss_history.push_back(epoch_loss);
  }
  return result;
}

ConfidencePrediction softmax_confidence_from_logits(std::span<const double> logits) {
  require(!logits.empty(), "softmax_confidence: no logits");
  const double top = *std::max_element(logits.begin(), logits.end());
  ConfidencePrediction out;
  out.class_confidence.resize(logits.size());
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out.class_confidence[c] = std::exp(logits[c] - top);
    total += out.class_confidence[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out.class_confidence[c] /= total;
    if (out.class_confidence[c] > out.class_confidence[best]) best = c;
  }
  out.label = static_cast<int>(best);
  out.confidence = out.class_confidence[best];
  return out;
}

ConfidencePrediction softmax_confidence(const SoftmaxModel& model, std::span<const double> features) {
  const Matrix logits = model.logits(as_row(features));
  return softmax_confidence_from_logits(logits.row(0));
}

std::optional<Matrix> spd_inverse(const Matrix& m) {
  require(m.rows() == m.cols(), "spd_inverse: matrix must be square");
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = m(j, j);
    for (std::size_t p = 0; p < j; ++p) diag -= l(j, p) * l(j, p);
    if (!(diag > 0.0)) return std::nullopt;
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = m(i, j);
      for (std::size_t p = 0; p < j; ++p) v -= l(i, p) * l(j, p);
      l(i, j) = v / l(j, j);
    }
  }
  // Invert L (lower triangular), then A^-1 = L^-T L^-1.
  Matrix linv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    linv(j, j) = 1.0 / l(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = 0.0;
      for (std::size_t p = j; p < i; ++p) v -= l(i, p) * linv(p, j);
      linv(i, j) = v / l(i, i);
    }
  }
  Matrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double v = 0.0;
      for (std::size_t p = i; p < n; ++p) v += linv(p, i) * linv(p, j);
      inv(i, j) = v;
      inv(j, i) = v;
    }
  }
  if (!inv.all_finite()) return std::nullopt;
  return inv;
}

MahalanobisModel mahalanobis_fit(const Matrix& embeddings, std::span<const int> labels, std::size_t classes,
                                 double ridge) {
  require(embeddings.rows() == labels.size(), "mahalanobis_fit: one label per embedding required");
  require(embeddings.rows() >= 1 && classes >= 1, "mahalanobis_fit: empty input");
  require(ridge > 0.0, "mahalanobis_fit: ridge must be positive");
  const std::size_t d = embeddings.cols();
  MahalanobisModel model;
  model.means = Matrix(classes, d);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t s = 0; s < embeddings.rows(); ++s) {
    const int y = labels[s];
    require(y >= 0 && static_cast<std::size_t>(y) < classes, "mahalanobis_fit: label out of range");
    auto mean = model.means.row(static_cast<std::size_t>(y));
    auto z = embeddings.row(s);
    for (std::size_t j = 0; j < d; ++j) mean[j] += z[j];
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    require(counts[c] > 0, "mahalanobis_fit: class " + std::to_string(c) + " has no samples");
    for (double& v : model.means.row(c)) v /= static_cast<double>(counts[c]);
  }
  Matrix scatter(d, d);
  std::vector<double> centered(d);
  for (std::size_t s = 0; s < embeddings.rows(); ++s) {
    auto z = embeddings.row(s);
    auto mean = model.means.row(static_cast<std::size_t>(labels[s]));
    for (std::size_t j = 0; j < d; ++j) centered[j] = z[j] - mean[j];
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) scatter(i, j) += centered[i] * centered[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(embeddings.rows());
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      scatter(i, j) *= inv_n;
      scatter(j, i) = scatter(i, j);
    }
  }
  for (double r = ridge; r <= kMaxRidge * (1.0 + 1e-12); r *= 10.0) {
    Matrix cov = scatter;
    for (std::size_t i = 0; i < d; ++i) cov(i, i) += r;
    if (auto inv = spd_inverse(cov)) {
      model.covariance = std::move(cov);
      model.precision = std::move(*inv);
      model.ridge = r;
      return model;
    }
  }
  throw NumericError("mahalanobis_fit: covariance singular even with ridge 1e-2");
}

MahalanobisModel mahalanobis_fit(const Mlp& net, const Matrix& features, std::span<const int> labels,
                                 std::size_t classes, double ridge) {
  MahalanobisModel model = mahalanobis_fit(net.forward(features), labels, classes, ridge);
  model.net = net;
  return model;
}

double mahalanobis_squared(const MahalanobisModel& model, std::span<const double> embedding, std::size_t cls) {
  const std::size_t d = model.means.cols();
  require(embedding.size() == d, "mahalanobis: embedding dim mismatch");
  require(cls < model.classes(), "mahalanobis: class out of range");
  const auto& k = kernels::active();
  std::vector<double> diff(d);
  auto mean = model.means.row(cls);
  for (std::size_t j = 0; j < d; ++j) diff[j] = embedding[j] - mean[j];
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) total += diff[i] * k.dot(model.precision.row(i).data(), diff.data(), d);
  return std::max(total, 0.0);
}

ConfidencePrediction mahalanobis_confidence_embedding(const MahalanobisModel& model,
                                                      std::span<const double> embedding) {
  ConfidencePrediction out;
  out.class_confidence.resize(model.classes());
  std::size_t best = 0;
  for (std::size_t c = 0; c < model.classes(); ++c) {
    out.class_confidence[c] = -mahalanobis_squared(model, embedding, c);
    if (out.class_confidence[c] > out.class_confidence[best]) best = c;
  }
  out.label = static_cast<int>(best);
  out.confidence = out.class_confidence[best];
  return out;
}

ConfidencePrediction mahalanobis_confidence(const MahalanobisModel& model, std::span<const double> features) {
  const Matrix emb = model.net.forward(as_row(features));
  return mahalanobis_confidence_embedding(model, emb.row(0));
}

}  // namespace gditd
