#pragma once

#include "prevcc/cox_lt.hpp"
#include "prevcc/data.hpp"
#include "prevcc/em_cox.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string_view>
#include <vector>

namespace prevcc {

enum class Method { TwoStepEM, TwoStepCox, Joint, IPCC };

std::string_view to_string(Method m);  // two-step-em, two-step-cox, joint, ipcc
Method parse_method(std::string_view name);

/// int_0^{t_k ^ xi_hat} exp{-Lambda_0(t) e^{x'gamma}} dt for the step
/// estimate Lambda_0.
double mu_semiparametric(const Eigen::VectorXd& x, const CoxFit& fit);
/// mu for every row of x.
Eigen::VectorXd mu_semiparametric_rows(const Eigen::MatrixXd& x, const CoxFit& fit);

/// int_0^xi exp{-(t/k2)^k1 e^{x'gamma}} dt.
double mu_weibull(const Eigen::VectorXd& x, const Eigen::VectorXd& gamma, double k1, double k2,
                  double xi);

/// Covariates and group labels of a whole cohort, laid out for the
/// case-control likelihoods.
struct Design {
  Eigen::MatrixXd x;  // N x p
  std::vector<Group> group;
  std::size_t n0 = 0, n1 = 0, n2 = 0;

  std::size_t size() const { return group.size(); }
  std::size_t p() const { return x.cols(); }
};

Design make_design(const Cohort& c);

/// Three-group pseudo log-likelihood in theta = (alpha, nu, beta) with the
/// per-subject mu held fixed.
double pseudo_loglik(const Eigen::VectorXd& theta, const Design& d, const Eigen::VectorXd& mu,
                     Eigen::VectorXd* grad = nullptr, Eigen::MatrixXd* hess = nullptr);
double pseudo_loglik(const Eigen::VectorXd& theta, const Cohort& c, const Eigen::VectorXd& mu);

struct TiltFit {
  double alpha = 0.0;
  double nu = 0.0;
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov;          // (2+p) x (2+p) over (alpha, nu, beta); empty if not computed
  bool cov_approximate = false; // sandwich built from partial-likelihood influences on an EM fit
  Method source = Method::TwoStepCox;
  CoxFit survival;
  Eigen::VectorXd mu;  // per-subject mu used in step two
  int iterations = 0;
  double loglik = 0.0;

  Eigen::VectorXd theta() const;
};

struct TiltOptions {
  double tol = 1e-8;
  int max_iter = 100;
  double beta_bound = 50.0;  // |theta| beyond this is reported as separation
};

/// Step two alone: maximises pseudo_loglik for the given mu.
TiltFit fit_tilt(const Design& d, const Eigen::VectorXd& mu, const TiltOptions& opts = {});

struct TwoStepOptions {
  CoxOptions cox;
  EmOptions em;
  XiHatRule xi_rule = XiHatRule::LastEventTime;
  TiltOptions tilt;
  bool sandwich = true;
};

/// Step one on the cases (EM or partial likelihood), then step two.
TiltFit fit_two_step(const Cohort& c, Method survival, const TwoStepOptions& opts = {});

}  // namespace prevcc
