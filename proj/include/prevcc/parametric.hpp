#pragma once

#include "prevcc/data.hpp"
#include "prevcc/optim.hpp"
#include "prevcc/tilt.hpp"

#include <Eigen/Dense>

namespace prevcc {

// Fully parametric estimators with a Weibull proportional-hazards survival
// model. The working parameter vector is
//   (alpha, nu, beta[p], gamma[p], log k1, log k2).

struct JointFit {
  double alpha = 0.0;
  double nu = 0.0;
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  double k1 = 1.0;
  double k2 = 1.0;
  Eigen::MatrixXd cov;  // over (alpha, nu, beta, gamma, k1, k2); empty if not computed
  Method method = Method::Joint;
  double loglik = 0.0;
  int iterations = 0;

  /// (alpha, nu, beta, gamma, k1, k2).
  Eigen::VectorXd estimate() const;
};

/// Design plus the survival columns the parametric likelihoods need.
struct ParametricData {
  Design design;
  Eigen::VectorXd a;  // backward time, 0 unless prevalent
  Eigen::VectorXd y;  // observed time, 0 for controls
  Eigen::VectorXi delta;
};

ParametricData make_parametric_data(const Cohort& c);

/// Cross-sectional profile log-likelihood (backward times only).
double ipcc_loglik(const Eigen::VectorXd& par, const ParametricData& d, double xi,
                   Eigen::VectorXd* grad = nullptr);
/// Cross-sectional profile log-likelihood combined with the prospective
/// survival likelihood of all cases.
double joint_loglik(const Eigen::VectorXd& par, const ParametricData& d, double xi,
                    Eigen::VectorXd* grad = nullptr);

struct ParametricOptions {
  double xi = 30.0;  // design bound of the backward times
  optim::BfgsOptions bfgs;
  bool covariance = true;
};

JointFit fit_joint(const Cohort& c, const ParametricOptions& opts = {});
JointFit fit_ipcc(const Cohort& c, const ParametricOptions& opts = {});

}  // namespace prevcc
