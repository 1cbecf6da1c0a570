#pragma once

#include "prevcc/data.hpp"
#include "prevcc/methods.hpp"
#include "prevcc/tilt.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace prevcc {

struct Baseline {
  enum class Kind { ConstantRate, StepFunction, Weibull };
  Kind kind = Kind::ConstantRate;
  double rate = 1.0;
  // Piece j has hazard values[j] on (breakpoints[j-1], breakpoints[j]];
  // the last piece extends to infinity.
  std::vector<double> breakpoints;
  std::vector<double> values;
  double k1 = 1.0, k2 = 1.0;

  static Baseline constant(double rate);
  static Baseline step(std::vector<double> breakpoints, std::vector<double> values);
  static Baseline weibull(double k1, double k2);

  double cumulative(double t) const;
  /// Smallest t with cumulative(t) >= h.
  double inverse_cumulative(double h) const;
};

struct SimConfig {
  std::size_t n0 = 500, n1 = 500, n2 = 500;
  Eigen::VectorXd beta = Eigen::Vector2d(1.0, -1.0);
  Eigen::VectorXd gamma = Eigen::Vector2d(1.0, -1.0);
  Eigen::VectorXd cov_mean = Eigen::Vector2d::Zero();
  Eigen::MatrixXd cov_cov = (Eigen::Matrix2d() << 1.0, 0.5, 0.5, 1.0).finished();
  Baseline baseline;
  double xi = 30.0;
  double tau_incident = 5.0;
  double tau_prevalent = 15.0;
  std::size_t oversample_factor = 20;

  std::size_t p() const { return static_cast<std::size_t>(beta.size()); }
};

void validate_config(const SimConfig& cfg);

/// The simulation design of reference table t1 at 10%, 50% or 90%
/// censoring (exponential baseline, beta = gamma = (1, -1)).
SimConfig table1_config(double censoring);

/// The two step-function baselines of the supplementary tables (1 or 2).
Baseline supplementary_step_baseline(int which);

/// `key = value` lines; `#` starts a comment. Keys not given keep the
/// defaults of SimConfig.
SimConfig parse_sim_config(const std::string& text);
SimConfig load_sim_config(const std::string& path);
std::string format_sim_config(const SimConfig& cfg);

/// Draws one cohort: controls from the covariate law, incident cases by
/// importance resampling, prevalent cases by truncation acceptance.
Cohort simulate_cohort(const SimConfig& cfg, std::uint64_t seed);

/// Survival time with hazard baseline(t) exp(eta).
double draw_survival(const Baseline& b, double eta, std::mt19937_64& rng);

/// Censoring bounds giving the target censored fraction in each case group,
/// found by bisection on a common-random-number sample of `n` cases.
SimConfig calibrate_censoring(SimConfig cfg, double target, std::uint64_t seed, std::size_t n = 20000);

struct CensoringRate {
  double incident = 0.0;
  double prevalent = 0.0;
};
CensoringRate censoring_rate(const Cohort& c);

struct SummaryRow {
  Method method = Method::TwoStepEM;
  std::string parameter;
  double est = 0.0;
  std::optional<double> sd;       // absent with fewer than two successful fits
  std::optional<double> mean_se;  // mean analytic standard error when available
  std::size_t n = 0;              // successful fits
};

struct SummaryTable {
  std::vector<SummaryRow> rows;
  std::size_t reps = 0;
  std::vector<std::pair<Method, std::size_t>> failures;  // per method, in request order

  const SummaryRow* find(Method m, const std::string& parameter) const;
  bool flagged(Method m) const;  // more than 10% failed fits
};

struct StudyResult {
  SummaryTable table;
  // estimates[method][rep]: absent when the fit failed
  std::vector<std::vector<std::optional<Estimate>>> estimates;
  std::vector<Method> methods;
};

struct StudyOptions {
  std::size_t reps = 200;
  std::uint64_t seed = 1;
  int workers = 1;
  MethodOptions fit;
};

StudyResult run_study(const SimConfig& cfg, const std::vector<Method>& methods, const StudyOptions& opts);

std::string summary_csv(const SummaryTable& t);
std::string summary_text(const SummaryTable& t);

}  // namespace prevcc
