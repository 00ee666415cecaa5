#include <cmath>
#include <vector>

#include "doctest.h"
#include "gditd/kernels.hpp"
#include "gditd/rng.hpp"

using gditd::kernels::KernelTable;

namespace {

std::vector<double> noise(gditd::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-3.0, 3.0);
  return v;
}

void close_relative(double a, double b, double tol) {
  CHECK(std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)}));
}

}  // namespace

TEST_CASE("scalar kernels match plain loops") {
  const auto& k = gditd::kernels::scalar();
  gditd::Rng rng(1);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 33u}) {
    auto a = noise(rng, n), b = noise(rng, n);
    double dot = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += a[i] * b[i];
      sq += (a[i] - b[i]) * (a[i] - b[i]);
    }
    close_relative(k.dot(a.data(), b.data(), n), dot, 1e-14);
    close_relative(k.squared_distance(a.data(), b.data(), n), sq, 1e-14);
    auto y = b;
    k.axpy(0.5, a.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y[i] == doctest::Approx(b[i] + 0.5 * a[i]).epsilon(1e-15));
  }
}

TEST_CASE("scalar adam update follows the textbook rule") {
  const auto& k = gditd::kernels::scalar();
  std::vector<double> p{1.0, -2.0}, g{0.5, -0.25}, m{0.0, 0.1}, v{0.0, 0.2};
  const double b1 = 0.9, b2 = 0.999, lr = 1e-3, eps = 1e-8;
  const int t = 3;
  auto expect = p;
  for (int i = 0; i < 2; ++i) {
    const double mi = b1 * m[i] + (1 - b1) * g[i];
    const double vi = b2 * v[i] + (1 - b2) * g[i] * g[i];
    const double mhat = mi / (1 - std::pow(b1, t));
    const double vhat = vi / (1 - std::pow(b2, t));
    expect[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  k.adam_update(p.data(), g.data(), m.data(), v.data(), 2, b1, b2, lr / (1 - std::pow(b1, t)),
                1.0 / (1 - std::pow(b2, t)), eps);
  for (int i = 0; i < 2; ++i) CHECK(p[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const KernelTable* fast = gditd::kernels::avx2();
  if (fast == nullptr) {
    MESSAGE("AVX2 not available on this machine; skipping");
    return;
  }
  const auto& ref = gditd::kernels::scalar();
  gditd::Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.below(70);
    auto a = noise(rng, n), b = noise(rng, n);
    close_relative(fast->dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), 1e-12);
    close_relative(fast->squared_distance(a.data(), b.data(), n), ref.squared_distance(a.data(), b.data(), n),
                   1e-12);

    auto y1 = b, y2 = b;
    const double alpha = rng.uniform(-2.0, 2.0);
    fast->axpy(alpha, a.data(), y1.data(), n);
    ref.axpy(alpha, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) close_relative(y1[i], y2[i], 1e-14);

    auto p1 = a, p2 = a, m1 = noise(rng, n), v1 = noise(rng, n);
    for (double& x : v1) x = std::abs(x);
    auto m2 = m1, v2 = v1;
    fast->adam_update(p1.data(), b.data(), m1.data(), v1.data(), n, 0.9, 0.999, 1e-3, 1.5, 1e-8);
    ref.adam_update(p2.data(), b.data(), m2.data(), v2.data(), n, 0.9, 0.999, 1e-3, 1.5, 1e-8);
    for (std::size_t i = 0; i < n; ++i) {
      close_relative(p1[i], p2[i], 1e-13);
      close_relative(m1[i], m2[i], 1e-14);
      close_relative(v1[i], v2[i], 1e-14);
    }
  }
}

TEST_CASE("active table is one of the known ones") {
  const auto& k = gditd::kernels::active();
  CHECK((k.name == gditd::kernels::scalar().name ||
         (gditd::kernels::avx2() != nullptr && k.name == gditd::kernels::avx2()->name)));
}
