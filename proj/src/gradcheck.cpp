#include "gditd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gditd/error.hpp"

namespace gditd {

double GradCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& g : groups) worst = std::max(worst, g.max_relative_error);
  return worst;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<ParameterGroup> groups,
                                  double tolerance, double step) {
  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto& group : groups) {
    require(group.values.size() == group.analytic.size(),
            "finite_diff_check: gradient size mismatch in group " + group.name);
    GroupError err{group.name, 0.0, 0};
    for (std::size_t i = 0; i < group.values.size(); ++i) {
      const double original = group.values[i];
      group.values[i] = original + step;
      const double plus = loss();
      group.values[i] = original - step;
      const double minus = loss();
      group.values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double rel = relative_error(group.analytic[i], numeric);
      if (rel > err.max_relative_error || !std::isfinite(rel)) {
        err.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        err.worst_index = i;
      }
    }
    report.groups.push_back(err);
  }
  return report;
}

GradCheckReport finite_diff_check(const std::function<double(const Mlp&)>& loss,
                                  const std::function<MlpGradients(const Mlp&)>& gradient, Mlp net,
                                  double tolerance, double step) {
  MlpGradients analytic = gradient(net);
  auto values = net.parameter_blocks();
  auto grads = analytic.blocks();
  const auto names = Mlp::block_names();
  std::vector<ParameterGroup> groups;
  for (std::size_t b = 0; b < values.size(); ++b) {
    groups.push_back({names[b], values[b], grads[b]});
  }
  return finite_diff_check([&] { return loss(net); }, groups, tolerance, step);
}

}  // namespace gditd
