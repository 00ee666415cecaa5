#include "gditd/adam.hpp"

#include <cmath>

#include "gditd/error.hpp"
#include "gditd/kernels.hpp"

namespace gditd {

Adam::Adam(AdamSettings settings, std::vector<std::size_t> block_sizes) : settings_(settings) {
  require(settings_.learning_rate >= 0.0, "Adam: learning rate must be non-negative");
  for (std::size_t n : block_sizes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void Adam::step(std::span<const std::span<double>> params, std::span<const std::span<double>> grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(), "Adam::step: block count mismatch");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bias1 = 1.0 - std::pow(settings_.beta1, t);
  const double bias2 = 1.0 - std::pow(settings_.beta2, t);
  const double step_size = settings_.learning_rate / bias1;
  const double v_scale = 1.0 / bias2;
  const auto& k = kernels::active();
  for (std::size_t b = 0; b < m_.size(); ++b) {
    require(params[b].size() == m_[b].size() && grads[b].size() == m_[b].size(),
            "Adam::step: block shape mismatch");
    k.adam_update(params[b].data(), grads[b].data(), m_[b].data(), v_[b].data(), m_[b].size(), settings_.beta1,
                  settings_.beta2, step_size, v_scale, settings_.epsilon);
  }
}

}  // namespace gditd
