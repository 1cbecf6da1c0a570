#pragma once

#include "prevcc/data.hpp"
#include "prevcc/optim.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace prevcc {

/// Distinct observed event times among all cases with their tie counts.
struct EventGrid {
  std::vector<double> t;  // strictly increasing, positive
  std::vector<int> d;

  std::size_t size() const { return t.size(); }
  bool empty() const { return t.empty(); }
  /// Number of grid points <= s.
  std::size_t count_le(double s) const;
};

/// Throws "no_events" when no case has delta = 1.
EventGrid event_grid(const CaseData& cases);

enum class CoxMethod { PartialLikelihood, EM };

// How the backward-time support bound is estimated.
enum class XiHatRule {
  LastEventTime,  // largest event time over all cases
  PrevalentMax,   // largest observed time among prevalent cases
};

double estimate_xi_hat(const CaseData& cases, const EventGrid& grid, XiHatRule rule);

struct CoxFit {
  Eigen::VectorXd gamma;
  EventGrid grid;
  Eigen::VectorXd lambda;  // baseline hazard jumps at grid.t
  double xi_hat = 0.0;
  CoxMethod method = CoxMethod::PartialLikelihood;
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = 0.0;
  double loglik = 0.0;  // partial (Cox) or observed-data (EM) log-likelihood

  /// Lambda_0 at each grid point.
  Eigen::VectorXd cumulative_hazard() const;
  /// Lambda_0(t) for arbitrary t (right-continuous step function).
  double cumulative_hazard(double t) const;
};

struct CoxOptions {
  double tol = 1e-8;
  int max_iter = 100;
  int max_halvings = 20;
  double gamma_bound = 30.0;  // |gamma| beyond this with a live gradient is divergence
  XiHatRule xi_rule = XiHatRule::LastEventTime;
};

/// Truncation-adjusted log partial likelihood with Breslow ties; subject i
/// is at risk at t iff entry_i < t <= exit_i.
double partial_loglik(const CaseData& cases, const Eigen::VectorXd& gamma);
/// Same, with the score and Hessian.
double partial_loglik(const CaseData& cases, const Eigen::VectorXd& gamma,
                      Eigen::VectorXd* score, Eigen::MatrixXd* hessian);

CoxFit fit_cox_lt(const CaseData& cases, const CoxOptions& opts = {});

/// Breslow jumps d_j / S0(t_j; gamma) with truncation-adjusted risk sets.
Eigen::VectorXd breslow_jumps(const CaseData& cases, const EventGrid& grid,
                              const Eigen::VectorXd& gamma);

/// Weighted counting-process Cox likelihood over a fixed event grid.
///
/// Holds two kinds of rows: ordinary rows (one per subject interval, with
/// an optional event at its exit time) and a dense block of pseudo-rows in
/// which row r has an event of weight W(r, j) at grid time t_j and is at
/// risk on (0, t_j]. The pseudo block is how the EM M-step represents the
/// expected truncated observations.
class WeightedCoxProblem {
 public:
  WeightedCoxProblem(const Eigen::MatrixXd& x, const EventGrid& grid);

  /// Add an ordinary row for subject `s`: at risk on (entry, exit], with an
  /// event of the given weight at `exit` when `event` is set.
  void add_row(std::size_t s, double entry, double exit, bool event, double weight = 1.0);

  /// Install pseudo-rows: row r belongs to subject subjects[r].
  void set_pseudo_rows(std::vector<std::size_t> subjects);
  /// Replace pseudo-row weights; dimensions (#pseudo rows) x grid size.
  void set_pseudo_weights(const Eigen::MatrixXd& w);

  double loglik(const Eigen::VectorXd& gamma, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const;

  /// Event mass D_j at each grid point.
  const Eigen::VectorXd& event_mass() const { return event_mass_; }
  /// Weighted risk-set sums S0(t_j; gamma).
  Eigen::VectorXd risk_sums(const Eigen::VectorXd& gamma) const;
  /// Breslow-type jumps D_j / S0(t_j; gamma).
  Eigen::VectorXd jumps(const Eigen::VectorXd& gamma) const;

  std::size_t grid_size() const { return grid_->size(); }

 private:
  struct Row {
    std::size_t subject;
    std::size_t entry_count;  // grid points <= entry
    std::size_t exit_count;   // grid points <= exit
    double weight;
  };

  void accumulate(const Eigen::VectorXd& gamma, int order, Eigen::VectorXd& s0,
                  Eigen::MatrixXd& s1, Eigen::MatrixXd& s2) const;
  void refresh_event_terms();

  const Eigen::MatrixXd* x_;
  const EventGrid* grid_;
  std::vector<Row> rows_;
  Eigen::VectorXd ordinary_mass_;    // event weight per grid point, ordinary rows
  Eigen::VectorXd ordinary_xsum_;    // sum of weight * x over ordinary events
  Eigen::VectorXd event_mass_;
  Eigen::VectorXd event_xsum_;
  std::vector<std::size_t> pseudo_subjects_;
  Eigen::MatrixXd pseudo_x_;   // covariates of pseudo rows
  Eigen::MatrixXd pseudo_xx_;  // row-wise vec(x x^T) of pseudo rows
  Eigen::MatrixXd pseudo_w_;
};

}  // namespace prevcc
