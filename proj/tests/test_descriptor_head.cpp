#include <cmath>
#include <limits>

#include "doctest.h"
#include "gditd/descriptor_head.hpp"
#include "gditd/gradcheck.hpp"
#include "gditd/mlp.hpp"
#include "oracles.hpp"

using gditd::GaussianDescriptors;
using gditd::Matrix;

namespace {

oracle::Instance to_instance(const GaussianDescriptors& desc, const Matrix& z, const std::vector<int>& y) {
  oracle::Instance in;
  for (std::size_t s = 0; s < z.rows(); ++s) in.z.emplace_back(z.row(s).begin(), z.row(s).end());
  in.y = y;
  for (std::size_t i = 0; i < desc.classes(); ++i) {
    in.mu.emplace_back(desc.mu.row(i).begin(), desc.mu.row(i).end());
    in.sigma.push_back(std::exp(static_cast<long double>(desc.log_sigma[i])));
  }
  return in;
}

// Extended-precision objective minus a fixed offset. Central differences of
// it see only the change of the loss, so cancellation against a large total
// does not swamp small gradient components.
struct ExactObjective {
  double beta;
  double gamma;
  oracle::Terms terms{};
  long double offset = 0;

  double operator()(const oracle::Instance& in) const {
    return static_cast<double>(oracle::objective<long double>(in, beta, gamma, terms) - offset);
  }
};

struct Problem {
  GaussianDescriptors desc;
  Matrix z;
  std::vector<int> y;
};

Problem random_problem(gditd::Rng& rng, std::size_t k, std::size_t d, std::size_t n) {
  Problem p;
  Matrix centers = oracle::random_matrix(rng, k, d, 1.5);
  std::vector<double> log_sigma;
  for (std::size_t i = 0; i < k; ++i) log_sigma.push_back(rng.uniform(-0.4, 0.6));
  p.desc = GaussianDescriptors(std::move(centers), std::move(log_sigma));
  p.z = oracle::random_matrix(rng, n, d, 2.0);
  for (std::size_t s = 0; s < n; ++s) p.y.push_back(static_cast<int>(rng.below(k)));
  return p;
}

// Central differences are meaningless across a kink, so instances with a
// distance near the 1/D floor or a target score near zero are redrawn.
bool away_from_kinks(const Problem& p) {
  for (std::size_t s = 0; s < p.z.rows(); ++s) {
    for (double dist : gditd::class_distances(p.desc, p.z.row(s))) {
      if (std::abs(dist) < 1e-3) return false;
    }
    const auto zeta = gditd::class_scores(p.desc, p.z.row(s));
    if (std::abs(zeta[static_cast<std::size_t>(p.y[s])]) < 1e-3) return false;
  }
  return true;
}

// Hidden pre-activations close to zero put ReLU kinks within the step.
bool near_relu_kink(const gditd::Mlp& net, const gditd::ForwardTrace& trace) {
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& layer = net.layers()[l];
    const Matrix& in = trace.activations[l];
    for (std::size_t s = 0; s < in.rows(); ++s) {
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        double pre = layer.bias[o];
        for (std::size_t i = 0; i < layer.in_dim(); ++i) pre += in(s, i) * layer.weight(o, i);
        if (std::abs(pre) < 1e-3) return true;
      }
    }
  }
  return false;
}

}  // namespace

TEST_CASE("distance of a 3-4-5 triangle") {
  GaussianDescriptors desc(Matrix(1, 2, {0.0, 0.0}), {0.0});
  const std::vector<double> z{3.0, 4.0};
  CHECK(gditd::class_distances(desc, z)[0] == doctest::Approx(12.5));
  CHECK(gditd::class_scores(desc, z)[0] == doctest::Approx(1.0 - 12.5));
}

TEST_CASE("distance includes the log-radius term") {
  GaussianDescriptors desc(Matrix(1, 3, {1.0, 1.0, 1.0}), {std::log(2.0)});
  const std::vector<double> z{1.0, 1.0, 1.0};
  CHECK(gditd::class_distances(desc, z)[0] == doctest::Approx(3.0 * std::log(2.0)));
  CHECK(gditd::class_scores(desc, z)[0] == doctest::Approx(2.0 - 3.0 * std::log(2.0)));
}

TEST_CASE("descriptor components match the loop oracle") {
  gditd::Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(4), d = 1 + rng.below(8), n = 1 + rng.below(16);
    auto p = random_problem(rng, k, d, n);
    const auto in = to_instance(p.desc, p.z, p.y);
    const gditd::FocalParams focal{rng.uniform(0.5, 0.999), rng.uniform(0.0, 3.0)};
    const auto parts = gditd::net_loss(p.desc, p.z, p.y, focal);
    CHECK(parts.pull == doctest::Approx(oracle::pull(in)).epsilon(1e-12));
    CHECK(parts.score == doctest::Approx(oracle::score(in)).epsilon(1e-12));
    CHECK(parts.efl1 == doctest::Approx(oracle::efl1(in, focal.beta, focal.gamma)).epsilon(1e-10));
    CHECK(parts.efl2 == doctest::Approx(oracle::efl2(in, focal.beta, focal.gamma)).epsilon(1e-10));
    CHECK(parts.net == doctest::Approx(parts.pull + parts.score + parts.efl1 + parts.efl2).epsilon(1e-14));
  }
}

TEST_CASE("score loss worked example") {
  // One sample at the centre of its own unit cluster: zeta_y = 1, D = 0.
  // Own term: relu(-1) + log 2. The other cluster sits 2 away: zeta = 1 - 2.
  GaussianDescriptors desc(Matrix(2, 1, {0.0, 2.0}), {0.0, 0.0});
  const Matrix z(1, 1, {0.0});
  const std::vector<int> y{0};
  CHECK(gditd::score_loss(desc, z, y) == doctest::Approx(std::log(2.0) + std::exp(-1.0)));
}

TEST_CASE("focal loss with gamma 0 and unit weight is cross-entropy") {
  const std::vector<double> logits{2.0, 1.0, 0.0};
  const double ce = -std::log(oracle::softmax(logits)[1]);
  // n = 1 makes the class weight (1 - beta) / (1 - beta) = 1.
  CHECK(gditd::effective_focal_loss(1, logits, 0.9, 0.0, 1) == doctest::Approx(ce).epsilon(1e-14));
}

TEST_CASE("focal loss hand computation") {
  // logits (2, 1, 0), y = 1, gamma 1, beta 0.995, four samples of the class
  const std::vector<double> logits{2.0, 1.0, 0.0};
  const double e = std::exp(1.0);
  const double p = e / (e * e + e + 1.0);
  const double w = 0.005 / (1.0 - std::pow(0.995, 4));
  CHECK(gditd::effective_focal_loss(1, logits, 0.995, 1.0, 4) ==
        doctest::Approx(-w * (1.0 - p) * std::log(p)).epsilon(1e-13));
  CHECK(gditd::effective_focal_loss(1, logits, 0.995, 1.0, 4) ==
        doctest::Approx(oracle::focal(1, logits, 0.995, 1.0, 4)).epsilon(1e-13));
}

TEST_CASE("effective number weight") {
  CHECK(gditd::effective_number_weight(0.5, 1) == doctest::Approx(1.0));
  CHECK(gditd::effective_number_weight(0.5, 2) == doctest::Approx(0.5 / 0.75));
  // beta close to one: weight tends to 1/n
  CHECK(gditd::effective_number_weight(1.0 - 1e-12, 5) == doctest::Approx(0.2).epsilon(1e-6));
}

double exact_total(const Problem& p, const ExactObjective& f) { return f(to_instance(p.desc, p.z, p.y)); }

gditd::GradCheckReport check_head(Problem& p, const gditd::FocalParams& focal, const gditd::LossTerms& terms) {
  const auto g = gditd::loss_gradients(p.desc, p.z, p.y, focal, terms);
  ExactObjective f{focal.beta, focal.gamma, {terms.pull, terms.score, terms.efl1, terms.efl2}};
  f.offset = oracle::objective<long double>(to_instance(p.desc, p.z, p.y), focal.beta, focal.gamma, f.terms);
  std::vector<gditd::ParameterGroup> groups{{"embedding", p.z.values(), g.embedding.values()},
                                            {"mu", p.desc.mu.values(), g.mu.values()},
                                            {"log_sigma", p.desc.log_sigma, g.log_sigma}};
  return gditd::finite_diff_check([&] { return exact_total(p, f); }, groups, 1e-4);
}

TEST_CASE("head gradients match central differences") {
  gditd::Rng rng(22);
  int checked = 0;
  while (checked < 60) {
    const std::size_t k = 1 + rng.below(4), d = 1 + rng.below(8), n = 1 + rng.below(16);
    auto p = random_problem(rng, k, d, n);
    if (!away_from_kinks(p)) continue;
    ++checked;
    const gditd::FocalParams focal{rng.uniform(0.5, 0.999), rng.uniform(0.0, 2.0)};
    const auto report = check_head(p, focal, {});
    CHECK_MESSAGE(report.passed(), "instance " << checked << " error " << report.max_relative_error());
  }
}

TEST_CASE("gradients of each single term match central differences") {
  gditd::Rng rng(23);
  const std::array<gditd::LossTerms, 4> singles{gditd::LossTerms{true, false, false, false},
                                                gditd::LossTerms{false, true, false, false},
                                                gditd::LossTerms{false, false, true, false},
                                                gditd::LossTerms{false, false, false, true}};
  int checked = 0;
  while (checked < 20) {
    const std::size_t k = 2 + rng.below(3), d = 1 + rng.below(6), n = 2 + rng.below(10);
    auto p = random_problem(rng, k, d, n);
    if (!away_from_kinks(p)) continue;
    ++checked;
    for (const auto& terms : singles) {
      const auto report = check_head(p, {0.99, 1.0}, terms);
      CHECK_MESSAGE(report.passed(), "instance " << checked << " error " << report.max_relative_error());
    }
  }
}

TEST_CASE("network gradients of the full objective match central differences") {
  gditd::Rng rng(24);
  int checked = 0;
  while (checked < 50) {
    const std::size_t k = 1 + rng.below(4), d = 1 + rng.below(8), n = 1 + rng.below(16);
    const std::size_t in_dim = 1 + rng.below(6), hidden = 2 + rng.below(6);
    gditd::Mlp net = gditd::Mlp::create({in_dim, hidden, hidden, d}, rng.next());
    for (auto& layer : net.layers()) {
      for (double& b : layer.bias) b = rng.uniform(-0.5, 0.5);
    }
    const Matrix x = oracle::random_matrix(rng, n, in_dim, 2.0);
    Problem p = random_problem(rng, k, d, n);
    const auto trace = net.forward_trace(x);
    p.z = trace.activations[3];
    if (!away_from_kinks(p) || near_relu_kink(net, trace)) continue;
    ++checked;
    const gditd::FocalParams focal{0.99, 1.0};
    oracle::Instance in = to_instance(p.desc, p.z, p.y);
    ExactObjective f{focal.beta, focal.gamma};
    f.offset = oracle::objective<long double>(in, focal.beta, focal.gamma);
    auto loss = [&](const gditd::Mlp& m) {
      in.z = oracle::mlp_forward(m, x);
      return f(in);
    };
    auto grad = [&](const gditd::Mlp& m) {
      const auto t = m.forward_trace(x);
      const auto head = gditd::loss_gradients(p.desc, t.activations[3], p.y, focal);
      return m.backward(t, head.embedding);
    };
    const auto report = gditd::finite_diff_check(loss, grad, net, 1e-4);
    CHECK_MESSAGE(report.passed(), "instance " << checked << " error " << report.max_relative_error());
  }
}

TEST_CASE("predict on worked examples") {
  const std::vector<double> inside{-1.0, 0.5, 0.2};
  CHECK(gditd::predict_from_scores(inside).label == 1);
  CHECK(gditd::predict_from_scores(inside).confidence == 0.5);
  const std::vector<double> outside{-1.0, -0.5, -0.2};
  CHECK(gditd::predict_from_scores(outside).is_ood());
  CHECK(gditd::predict_from_scores(outside).confidence == -0.2);
  const std::vector<double> boundary{-1.0, 0.0};
  CHECK(gditd::predict_from_scores(boundary).label == 1);
  const std::vector<double> tie{0.3, 0.3};
  CHECK(gditd::predict_from_scores(tie).label == 0);
}

TEST_CASE("predict uses the model scores") {
  GaussianDescriptors desc(Matrix(2, 2, {0.0, 0.0, 10.0, 0.0}), {0.0, 0.0});
  CHECK(gditd::predict(desc, std::vector<double>{9.5, 0.0}).label == 1);
  CHECK(gditd::predict(desc, std::vector<double>{5.0, 5.0}).is_ood());
}

TEST_CASE("mismatched label and sample counts are rejected") {
  GaussianDescriptors desc(Matrix(2, 2), {0.0, 0.0});
  const Matrix z(3, 2);
  const std::vector<int> y{0, 1};
  CHECK_THROWS_AS(gditd::pull_loss(desc, z, y), gditd::ContractError);
  const std::vector<int> bad{0, 1, 2};
  CHECK_THROWS_AS(gditd::pull_loss(desc, z, bad), gditd::ContractError);
}
