#pragma once

#include "prevcc/data.hpp"
#include "prevcc/parametric.hpp"
#include "prevcc/tilt.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace prevcc {

struct MethodOptions {
  TwoStepOptions two_step;
  ParametricOptions parametric;
  bool standard_errors = true;
};

/// Flat view of any estimator's output. Two-step methods report
/// (alpha, nu, beta, gamma); parametric ones add (k1, k2). Missing standard
/// errors are NaN.
struct Estimate {
  Method method = Method::TwoStepEM;
  std::vector<std::string> names;
  Eigen::VectorXd value;
  Eigen::VectorXd se;
  bool se_approximate = false;
};

std::vector<std::string> parameter_names(Method m, std::size_t p);

Estimate fit_method(const Cohort& c, Method m, const MethodOptions& opts = {});

}  // namespace prevcc
