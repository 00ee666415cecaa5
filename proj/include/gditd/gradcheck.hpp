#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gditd/mlp.hpp"

namespace gditd {

// A parameter array that the checker perturbs in place, with the analytic
// gradient it is compared against.
struct ParameterGroup {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GroupError {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GroupError> groups;
  double tolerance = 0.0;

  double max_relative_error() const;
  bool passed() const { return max_relative_error() < tolerance; }
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps gradients
// that are zero up to rounding from reporting huge relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-7);

// Central differences of `loss` (which must read the parameters through the
// spans in `groups`) against each group's analytic gradient. Every value is
// restored after it is perturbed.
GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<ParameterGroup> groups,
                                  double tolerance, double step = 1e-5);

// Network-only form: loss and analytic gradient are functions of the net.
GradCheckReport finite_diff_check(const std::function<double(const Mlp&)>& loss,
                                  const std::function<MlpGradients(const Mlp&)>& gradient, Mlp net,
                                  double tolerance, double step = 1e-5);

}  // namespace gditd
