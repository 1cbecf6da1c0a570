#include "prevcc/methods.hpp"

#include <cmath>
#include <limits>

namespace prevcc {

std::vector<std::string> parameter_names(Method m, std::size_t p) {
  std::vector<std::string> names{"alpha", "nu"};
  for (std::size_t j = 1; j <= p; ++j) names.push_back("beta" + std::to_string(j));
  for (std::size_t j = 1; j <= p; ++j) names.push_back("gamma" + std::to_string(j));
  if (m == Method::Joint || m == Method::IPCC) {
    names.emplace_back("k1");
    names.emplace_back("k2");
  }
  return names;
}

Estimate fit_method(const Cohort& c, Method m, const MethodOptions& opts) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto p = static_cast<Eigen::Index>(c.p());
  Estimate est;
  est.method = m;
  est.names = parameter_names(m, c.p());
  est.value.resize(static_cast<Eigen::Index>(est.names.size()));
  est.se = Eigen::VectorXd::Constant(est.value.size(), nan);

  if (m == Method::TwoStepEM || m == Method::TwoStepCox) {
    TwoStepOptions o = opts.two_step;
    o.sandwich = opts.standard_errors;
    const TiltFit fit = fit_two_step(c, m, o);
    est.value << fit.theta(), fit.survival.gamma;
    if (opts.standard_errors) {
      est.se.head(p + 2) = fit.cov.diagonal().cwiseSqrt();
      est.se_approximate = fit.cov_approximate;
      if (m == Method::TwoStepCox && p > 0) {
        Eigen::VectorXd score;
        Eigen::MatrixXd h;
        partial_loglik(case_data(c), fit.survival.gamma, &score, &h);
        est.se.tail(p) = (-h).inverse().diagonal().cwiseSqrt();
      }
    }
    return est;
  }

  ParametricOptions o = opts.parametric;
  o.covariance = opts.standard_errors;
  const JointFit fit = m == Method::Joint ? fit_joint(c, o) : fit_ipcc(c, o);
  est.value = fit.estimate();
  if (opts.standard_errors) est.se = fit.cov.diagonal().cwiseSqrt();
  return est;
}

}  // namespace prevcc
