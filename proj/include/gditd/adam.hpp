#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gditd {

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over a fixed list of parameter blocks. Moment buffers are shaped
// from the sizes given at construction and must keep matching them.
class Adam {
 public:
  Adam() = default;
  Adam(AdamSettings settings, std::vector<std::size_t> block_sizes);

  // Applies one step to every block. params and grads are parallel lists.
  void step(std::span<const std::span<double>> params, std::span<const std::span<double>> grads);

  std::size_t steps_taken() const { return steps_; }
  const AdamSettings& settings() const { return settings_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamSettings settings_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

}  // namespace gditd
