#include <cmath>

#include "doctest.h"
#include "gditd/baselines.hpp"
#include "gditd/dataset.hpp"
#include "oracles.hpp"

using gditd::Matrix;

namespace {

std::vector<double> plain_softmax(const std::vector<double>& logits) { return oracle::softmax(logits); }

// Two-pass pooled covariance: means first, then centred outer products / n.
Matrix covariance_oracle(const Matrix& z, const std::vector<int>& y, std::size_t k) {
  const std::size_t d = z.cols();
  Matrix means(k, d);
  std::vector<double> count(k, 0.0);
  for (std::size_t s = 0; s < z.rows(); ++s) {
    count[static_cast<std::size_t>(y[s])] += 1.0;
    for (std::size_t j = 0; j < d; ++j) means(static_cast<std::size_t>(y[s]), j) += z(s, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) means(c, j) /= count[c];
  }
  Matrix cov(d, d);
  for (std::size_t s = 0; s < z.rows(); ++s) {
    const auto c = static_cast<std::size_t>(y[s]);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov(a, b) += (z(s, a) - means(c, a)) * (z(s, b) - means(c, b));
    }
  }
  for (double& v : cov.values()) v /= static_cast<double>(z.rows());
  return cov;
}

}  // namespace

TEST_CASE("uniform logits give 1/k confidence") {
  const std::vector<double> logits(4, 0.3);
  const auto p = gditd::softmax_confidence_from_logits(logits);
  CHECK(p.confidence == doctest::Approx(0.25));
  CHECK(p.label == 0);
}

TEST_CASE("dominant logit gives confidence near one") {
  const std::vector<double> logits{0.0, 50.0, 0.0};
  const auto p = gditd::softmax_confidence_from_logits(logits);
  CHECK(p.label == 1);
  CHECK(p.confidence == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax confidence matches the scalar oracle") {
  gditd::Rng rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits(2 + rng.below(8));
    for (double& v : logits) v = rng.uniform(-10.0, 10.0);
    const auto want = plain_softmax(logits);
    const auto got = gditd::softmax_confidence_from_logits(logits);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      CHECK(got.class_confidence[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax trains on a separable toy and is seeded") {
  gditd::Rng rng(52);
  Matrix x(40, 2);
  std::vector<int> y;
  for (std::size_t s = 0; s < 40; ++s) {
    const int c = static_cast<int>(s % 2);
    x(s, 0) = (c == 0 ? -2.0 : 2.0) + rng.uniform(-0.5, 0.5);
    x(s, 1) = rng.uniform(-1.0, 1.0);
    y.push_back(c);
  }
  gditd::TrainConfig cfg;
  cfg.latent_dim = 8;
  cfg.max_epochs = 50;
  cfg.batch_size = 8;
  cfg.seed = 5;
  const auto a = gditd::softmax_fit(x, y, 2, cfg);
  int correct = 0;
  for (std::size_t s = 0; s < 40; ++s) correct += gditd::softmax_confidence(a.model, x.row(s)).label == y[s];
  CHECK(correct == 40);
  CHECK(a.loss_history.size() == 50);
  const auto b = gditd::softmax_fit(x, y, 2, cfg);
  CHECK(a.model.net == b.model.net);
  CHECK(a.model.weight == b.model.weight);
}

TEST_CASE("mahalanobis recovers means at large n") {
  gditd::Rng rng(53);
  const std::size_t n = 10000;
  Matrix z(n, 2);
  std::vector<int> y;
  for (std::size_t s = 0; s < n; ++s) {
    const int c = static_cast<int>(s % 2);
    z(s, 0) = (c == 0 ? 1.0 : -3.0) + rng.normal();
    z(s, 1) = (c == 0 ? 2.0 : 0.5) + rng.normal();
    y.push_back(c);
  }
  const auto m = gditd::mahalanobis_fit(z, y, 2);
  CHECK(std::abs(m.means(0, 0) - 1.0) < 0.05);
  CHECK(std::abs(m.means(0, 1) - 2.0) < 0.05);
  CHECK(std::abs(m.means(1, 0) + 3.0) < 0.05);
  CHECK(std::abs(m.means(1, 1) - 0.5) < 0.05);
  CHECK(std::abs(m.covariance(0, 0) - 1.0) < 0.05);
  CHECK(std::abs(m.covariance(0, 1)) < 0.05);
}

TEST_CASE("one embedding per class gives a ridge-only covariance") {
  const Matrix z(2, 3, {1.0, 2.0, 3.0, -1.0, 0.0, 4.0});
  const std::vector<int> y{0, 1};
  const auto m = gditd::mahalanobis_fit(z, y, 2);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) CHECK(m.covariance(a, b) == (a == b ? m.ridge : 0.0));
  }
  CHECK(m.ridge == gditd::kDefaultRidge);
}

TEST_CASE("covariance matches the two-pass oracle") {
  gditd::Rng rng(54);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.below(3), d = 1 + rng.below(5), n = k + 5 + rng.below(30);
    const Matrix z = oracle::random_matrix(rng, n, d, 3.0);
    std::vector<int> y;
    for (std::size_t s = 0; s < n; ++s) y.push_back(static_cast<int>(s % k));
    const auto m = gditd::mahalanobis_fit(z, y, k);
    const Matrix want = covariance_oracle(z, y, k);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        const double ridge = a == b ? m.ridge : 0.0;
        CHECK(std::abs(m.covariance(a, b) - want(a, b) - ridge) < 1e-10);
        CHECK(m.covariance(a, b) == m.covariance(b, a));
      }
    }
  }
}

TEST_CASE("mahalanobis distance matches the quadratic form") {
  gditd::Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2, d = 1 + rng.below(5), n = 20 + rng.below(20);
    const Matrix z = oracle::random_matrix(rng, n, d, 3.0);
    std::vector<int> y;
    for (std::size_t s = 0; s < n; ++s) y.push_back(static_cast<int>(s % k));
    const auto m = gditd::mahalanobis_fit(z, y, k);
    const auto inv = gditd::spd_inverse(m.covariance);
    REQUIRE(inv.has_value());
    std::vector<double> x(d);
    for (double& v : x) v = rng.uniform(-3.0, 3.0);
    for (std::size_t c = 0; c < k; ++c) {
      double q = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) q += (x[a] - m.means(c, a)) * (*inv)(a, b) * (x[b] - m.means(c, b));
      }
      CHECK(std::abs(gditd::mahalanobis_squared(m, x, c) - q) < 1e-10 * std::max(1.0, q));
      CHECK(gditd::mahalanobis_squared(m, x, c) >= 0.0);
    }
  }
}

TEST_CASE("spd inverse times matrix is the identity") {
  const Matrix a(2, 2, {4.0, 1.0, 1.0, 3.0});
  const auto inv = gditd::spd_inverse(a);
  REQUIRE(inv);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 2; ++t) s += a(i, t) * (*inv)(t, j);
      CHECK(s == doctest::Approx(i == j ? 1.0 : 0.0));
    }
  }
  CHECK_FALSE(gditd::spd_inverse(Matrix(2, 2, {1.0, 2.0, 2.0, 1.0})).has_value());
}

TEST_CASE("embedding at a class mean is predicted with confidence zero") {
  gditd::MahalanobisModel m;
  m.means = Matrix(2, 2, {0.0, 0.0, 5.0, 5.0});
  m.covariance = Matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
  m.precision = m.covariance;
  const auto p = gditd::mahalanobis_confidence_embedding(m, std::vector<double>{5.0, 5.0});
  CHECK(p.label == 1);
  CHECK(p.confidence == 0.0);
}

TEST_CASE("identity covariance reduces to nearest mean") {
  gditd::Rng rng(56);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(4), d = 1 + rng.below(5);
    gditd::MahalanobisModel m;
    m.means = oracle::random_matrix(rng, k, d, 3.0);
    m.covariance = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) m.covariance(i, i) = 1.0;
    m.precision = m.covariance;
    std::vector<double> x(d);
    for (double& v : x) v = rng.uniform(-4.0, 4.0);
    std::size_t best = 0;
    double best_sq = INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += (x[j] - m.means(c, j)) * (x[j] - m.means(c, j));
      CHECK(gditd::mahalanobis_squared(m, x, c) == doctest::Approx(sq).epsilon(1e-12));
      if (sq < best_sq) {
        best_sq = sq;
        best = c;
      }
    }
    CHECK(gditd::mahalanobis_confidence_embedding(m, x).label == static_cast<int>(best));
  }
}

TEST_CASE("baselines classify the blob benchmark") {
  gditd::BlobSpec spec;
  spec.seed = 57;
  auto data = gditd::make_blobs(spec);
  const auto rows = data.id_rows();
  data = gditd::zscore_fit_apply(data, rows);
  const Matrix x = data.features.gather_rows(rows);
  std::vector<int> y;
  for (std::size_t r : rows) y.push_back(data.labels[r]);
  gditd::TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.seed = 57;
  const auto soft = gditd::softmax_fit(x, y, 3, cfg).model;
  const auto maha = gditd::mahalanobis_fit(soft.net, x, y, 3);
  int soft_ok = 0, maha_ok = 0;
  for (std::size_t s = 0; s < x.rows(); ++s) {
    soft_ok += gditd::softmax_confidence(soft, x.row(s)).label == y[s];
    maha_ok += gditd::mahalanobis_confidence(maha, x.row(s)).label == y[s];
  }
  CHECK(soft_ok >= static_cast<int>(0.95 * static_cast<double>(x.rows())));
  CHECK(maha_ok >= static_cast<int>(0.95 * static_cast<double>(x.rows())));
}
