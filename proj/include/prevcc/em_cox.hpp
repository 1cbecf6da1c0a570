#pragma once

#include "prevcc/cox_lt.hpp"
#include "prevcc/data.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace prevcc {

/// Expected truncated-observation counts for each case at each grid time.
/// Rows follow the case order; incident rows are identically zero.
struct EStepWeights {
  Eigen::MatrixXd tw;       // n x k
  Eigen::MatrixXd omega;    // n x k
  Eigen::VectorXd upsilon;  // n
};

// Normaliser of the truncated-copy weights. Upsilon divides by
// upsilon_i / xi_hat, which is exact when the masses omega_ij sum to one;
// Complement divides by 1 - sum_j omega_ij (1 - t_j / xi_hat)^+, the
// probability that a draw is not truncated under the discrete model.
enum class EStepNormalizer { Upsilon, Complement };

/// Conditional expectation of the truncated-copy counts under the current
/// (gamma, lambda) and uniform backward times on [0, xi_hat].
EStepWeights e_step(const CaseData& cases, const EventGrid& grid, const Eigen::VectorXd& gamma,
                    const Eigen::VectorXd& lambda, double xi_hat,
                    EStepNormalizer norm = EStepNormalizer::Complement);

struct MStepOptions {
  bool fix_gamma = false;  // only update lambda at gamma_init
  double tol = 1e-8;
  int max_iter = 100;
};

struct MStepResult {
  Eigen::VectorXd gamma;
  Eigen::VectorXd lambda;
  int iterations = 0;
};

/// Maximises the expected complete-data log-likelihood: gamma by the
/// weighted-Cox profile, then the closed-form hazard jumps.
MStepResult m_step(const EStepWeights& w, const CaseData& cases, const EventGrid& grid,
                   const Eigen::VectorXd& gamma_init, const MStepOptions& opts = {});

/// Expected complete-data log-likelihood Q(gamma, lambda) for fixed weights.
double em_q_function(const EStepWeights& w, const CaseData& cases, const EventGrid& grid,
                     const Eigen::VectorXd& gamma, const Eigen::VectorXd& lambda);

/// Observed-data log-likelihood maximised by the EM iteration.
double em_observed_loglik(const CaseData& cases, const EventGrid& grid,
                          const Eigen::VectorXd& gamma, const Eigen::VectorXd& lambda,
                          double xi_hat, EStepNormalizer norm = EStepNormalizer::Complement);

struct EmOptions {
  double tol = 1e-7;  // parameter max-norm change and log-likelihood change
  int max_iter = 500;  // extrapolation cycles (each at most three EM steps)
  double ascent_tol = 1e-10;
  bool check_ascent = true;
  bool accelerate = true;  // SQUAREM extrapolation between EM steps
  XiHatRule xi_rule = XiHatRule::LastEventTime;
  std::optional<double> xi_hat;  // known support bound; overrides xi_rule
  EStepNormalizer normalizer = EStepNormalizer::Complement;
  CoxOptions start;  // options for the warm-start partial-likelihood fit
};

struct EmTrace {
  std::vector<double> loglik;  // observed-data log-likelihood per iteration, start included
};

CoxFit fit_cox_em(const CaseData& cases, const EmOptions& opts = {}, EmTrace* trace = nullptr);

}  // namespace prevcc
