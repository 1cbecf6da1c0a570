#pragma once

#include "prevcc/cox_lt.hpp"
#include "prevcc/data.hpp"
#include "prevcc/tilt.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

namespace prevcc {

/// Per-case influence of the partial-likelihood estimator, scaled so that
/// estimate - truth ~ (1/n) sum_i influence_i over the n cases.
struct InfluenceSet {
  Eigen::MatrixXd d_gamma;   // n x p
  Eigen::MatrixXd d_lambda;  // n x k, hazard jumps
  Eigen::MatrixXd d_Lambda;  // n x k, cumulative hazard at the grid points
  Eigen::MatrixXd info;      // p x p average information E-hat(gamma-hat)
  std::vector<std::size_t> cohort_index;
};

InfluenceSet influence_contributions(const CaseData& cases, const CoxFit& fit);

/// Sandwich covariance of (alpha, nu, beta): V^-1 Sigma V^-1 / N, with
/// Sigma the covariance of the estimating-function summands (centred within
/// each sampling stratum) plus the step-one correction through mu. The mu
/// derivatives are taken at `tilt.survival`.
Eigen::MatrixXd sandwich_cov(const Design& d, const TiltFit& tilt, const InfluenceSet& infl);

using Estimator = std::function<Eigen::VectorXd(const Cohort&)>;

struct BootstrapOptions {
  int B = 500;
  std::uint64_t seed = 1;
  int workers = 1;
  double max_failure_rate = 0.2;
};

struct BootstrapResult {
  Eigen::VectorXd estimate;   // fit on the original cohort
  Eigen::MatrixXd replicates; // successful replicates, one per row in replicate order
  Eigen::MatrixXd cov;
  Eigen::VectorXd sd;
  Eigen::VectorXd normal_lo, normal_hi;
  Eigen::VectorXd percentile_lo, percentile_hi;
  int failures = 0;
  int B = 0;
};

/// Resamples controls, incident and prevalent cases with replacement within
/// their groups. Replicate b uses its own stream derived from (seed, b), so
/// the result does not depend on the worker count.
BootstrapResult bootstrap_cov(const Cohort& c, const Estimator& fit, const BootstrapOptions& opts = {});

/// Stratified resample used by bootstrap replicate `index`.
Cohort bootstrap_resample(const Cohort& c, std::uint64_t seed, std::uint64_t index);

}  // namespace prevcc
