#include "prevcc/cox_lt.hpp"

#include "prevcc/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace prevcc {

std::size_t EventGrid::count_le(double s) const {
  return static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), s) - t.begin());
}

EventGrid event_grid(const CaseData& cases) {
  std::map<double, int> ties;
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (cases.delta[i] == 1) ++ties[cases.exit[static_cast<Eigen::Index>(i)]];
  if (ties.empty()) numerical_error("no_events", "no case has an observed event");
  EventGrid g;
  g.t.reserve(ties.size());
  g.d.reserve(ties.size());
  for (const auto& [t, d] : ties) {
    if (!(t > 0.0)) input_error("event_at_time_zero");
    g.t.push_back(t);
    g.d.push_back(d);
  }
  return g;
}

double estimate_xi_hat(const CaseData& cases, const EventGrid& grid, XiHatRule rule) {
  if (rule == XiHatRule::PrevalentMax) {
    double m = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < cases.size(); ++i)
      if (cases.prevalent[i]) {
        m = std::max(m, cases.exit[static_cast<Eigen::Index>(i)]);
        any = true;
      }
    if (any && m > 0.0) return m;
  }
  return grid.t.back();
}

Eigen::VectorXd CoxFit::cumulative_hazard() const {
  Eigen::VectorXd c(lambda.size());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < lambda.size(); ++j) c[j] = (acc += lambda[j]);
  return c;
}

double CoxFit::cumulative_hazard(double t) const {
  const std::size_t m = grid.count_le(t);
  double acc = 0.0;
  for (std::size_t j = 0; j < m; ++j) acc += lambda[static_cast<Eigen::Index>(j)];
  return acc;
}

// ---------------------------------------------------------------------------

WeightedCoxProblem::WeightedCoxProblem(const Eigen::MatrixXd& x, const EventGrid& grid)
    : x_(&x), grid_(&grid) {
  const auto k = static_cast<Eigen::Index>(grid.size());
  ordinary_mass_ = Eigen::VectorXd::Zero(k);
  ordinary_xsum_ = Eigen::VectorXd::Zero(x.cols());
  refresh_event_terms();
}

void WeightedCoxProblem::add_row(std::size_t s, double entry, double exit, bool event,
                                 double weight) {
  Row r{s, grid_->count_le(entry), grid_->count_le(exit), weight};
  if (event) {
    const auto it = std::lower_bound(grid_->t.begin(), grid_->t.end(), exit);
    if (it == grid_->t.end() || *it != exit)
      input_error("event_off_grid", fmt::format("event time {} is not a grid point", exit), s);
    ordinary_mass_[it - grid_->t.begin()] += weight;
    ordinary_xsum_ += weight * x_->row(static_cast<Eigen::Index>(s)).transpose();
  }
  rows_.push_back(r);
  refresh_event_terms();
}

void WeightedCoxProblem::set_pseudo_rows(std::vector<std::size_t> subjects) {
  pseudo_subjects_ = std::move(subjects);
  const auto np = static_cast<Eigen::Index>(pseudo_subjects_.size());
  const Eigen::Index p = x_->cols();
  pseudo_x_.resize(np, p);
  pseudo_xx_.resize(np, p * p);
  for (Eigen::Index r = 0; r < np; ++r) {
    const auto xr = x_->row(static_cast<Eigen::Index>(pseudo_subjects_[static_cast<std::size_t>(r)]));
    pseudo_x_.row(r) = xr;
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index b = 0; b < p; ++b) pseudo_xx_(r, a * p + b) = xr[a] * xr[b];
  }
  pseudo_w_ = Eigen::MatrixXd::Zero(np, static_cast<Eigen::Index>(grid_->size()));
  refresh_event_terms();
}

void WeightedCoxProblem::set_pseudo_weights(const Eigen::MatrixXd& w) {
  if (w.rows() != pseudo_w_.rows() || w.cols() != pseudo_w_.cols())
    input_error("pseudo_weight_shape");
  pseudo_w_ = w;
  refresh_event_terms();
}

void WeightedCoxProblem::refresh_event_terms() {
  event_mass_ = ordinary_mass_;
  event_xsum_ = ordinary_xsum_;
  if (pseudo_w_.size()) {
    event_mass_ += pseudo_w_.colwise().sum().transpose();
    event_xsum_ += pseudo_x_.transpose() * pseudo_w_.rowwise().sum();
  }
}

void WeightedCoxProblem::accumulate(const Eigen::VectorXd& gamma, int order, Eigen::VectorXd& s0,
                                    Eigen::MatrixXd& s1, Eigen::MatrixXd& s2) const {
  const auto k = static_cast<Eigen::Index>(grid_->size());
  const Eigen::Index p = x_->cols();
  const Eigen::VectorXd e = (*x_ * gamma).array().exp().matrix();
  s0 = Eigen::VectorXd::Zero(k);
  if (order >= 1) s1 = Eigen::MatrixXd::Zero(k, p);
  if (order >= 2) s2 = Eigen::MatrixXd::Zero(k, p * p);

  auto add = [&](std::size_t count, Eigen::Index subj, double w) {
    if (count == 0) return;
    const auto j = static_cast<Eigen::Index>(count - 1);
    const double we = w * e[subj];
    s0[j] += we;
    if (order >= 1) {
      const auto xs = x_->row(subj);
      s1.row(j) += we * xs;
      if (order >= 2)
        for (Eigen::Index a = 0; a < p; ++a)
          for (Eigen::Index b = 0; b < p; ++b) s2(j, a * p + b) += we * xs[a] * xs[b];
    }
  };
  for (const Row& r : rows_) {
    const auto subj = static_cast<Eigen::Index>(r.subject);
    add(r.exit_count, subj, r.weight);
    add(r.entry_count, subj, -r.weight);
  }
  if (pseudo_w_.size()) {
    Eigen::VectorXd ep(pseudo_w_.rows());
    for (Eigen::Index r = 0; r < ep.size(); ++r)
      ep[r] = e[static_cast<Eigen::Index>(pseudo_subjects_[static_cast<std::size_t>(r)])];
    s0.noalias() += pseudo_w_.transpose() * ep;
    if (order >= 1) s1.noalias() += pseudo_w_.transpose() * (ep.asDiagonal() * pseudo_x_);
    if (order >= 2) s2.noalias() += pseudo_w_.transpose() * (ep.asDiagonal() * pseudo_xx_);
  }
  // Backward cumulative sums turn per-exit additions into risk-set totals.
  for (Eigen::Index j = k - 2; j >= 0; --j) {
    s0[j] += s0[j + 1];
    if (order >= 1) s1.row(j) += s1.row(j + 1);
    if (order >= 2) s2.row(j) += s2.row(j + 1);
  }
}

double WeightedCoxProblem::loglik(const Eigen::VectorXd& gamma, Eigen::VectorXd* grad,
                                  Eigen::MatrixXd* hess) const {
  const int order = hess ? 2 : (grad ? 1 : 0);
  Eigen::VectorXd s0;
  Eigen::MatrixXd s1, s2;
  accumulate(gamma, order, s0, s1, s2);
  const Eigen::Index p = x_->cols();
  double ll = gamma.dot(event_xsum_);
  if (grad) *grad = event_xsum_;
  if (hess) *hess = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index j = 0; j < s0.size(); ++j) {
    const double dj = event_mass_[j];
    if (dj <= 0.0) continue;
    if (!(s0[j] > 0.0))
      numerical_error("empty_risk_set", fmt::format("t = {}", grid_->t[static_cast<std::size_t>(j)]),
                      static_cast<std::size_t>(j));
    ll -= dj * std::log(s0[j]);
    if (order >= 1) {
      const Eigen::VectorXd ebar = s1.row(j).transpose() / s0[j];
      *grad -= dj * ebar;
      if (order >= 2) {
        Eigen::MatrixXd sec(p, p);
        for (Eigen::Index a = 0; a < p; ++a)
          for (Eigen::Index b = 0; b < p; ++b) sec(a, b) = s2(j, a * p + b) / s0[j];
        *hess -= dj * (sec - ebar * ebar.transpose());
      }
    }
  }
  if (!std::isfinite(ll)) numerical_error("non_finite_loglik");
  return ll;
}

Eigen::VectorXd WeightedCoxProblem::risk_sums(const Eigen::VectorXd& gamma) const {
  Eigen::VectorXd s0;
  Eigen::MatrixXd s1, s2;
  accumulate(gamma, 0, s0, s1, s2);
  return s0;
}

Eigen::VectorXd WeightedCoxProblem::jumps(const Eigen::VectorXd& gamma) const {
  const Eigen::VectorXd s0 = risk_sums(gamma);
  Eigen::VectorXd lam(s0.size());
  for (Eigen::Index j = 0; j < s0.size(); ++j) {
    if (event_mass_[j] <= 0.0) {
      lam[j] = 0.0;
      continue;
    }
    if (!(s0[j] > 0.0))
      numerical_error("empty_risk_set", fmt::format("t = {}", grid_->t[static_cast<std::size_t>(j)]),
                      static_cast<std::size_t>(j));
    lam[j] = event_mass_[j] / s0[j];
  }
  return lam;
}

// ---------------------------------------------------------------------------

namespace {

WeightedCoxProblem truncated_problem(const CaseData& cases, const EventGrid& grid) {
  WeightedCoxProblem prob(cases.x, grid);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    prob.add_row(i, cases.entry[ii], cases.exit[ii], cases.delta[i] == 1);
  }
  return prob;
}

void check_gamma(const CaseData& cases, const Eigen::VectorXd& gamma) {
  if (static_cast<std::size_t>(gamma.size()) != cases.p())
    input_error("dimension_mismatch", fmt::format("gamma has {} entries, expected {}",
                                                  gamma.size(), cases.p()));
}

}  // namespace

double partial_loglik(const CaseData& cases, const Eigen::VectorXd& gamma) {
  return partial_loglik(cases, gamma, nullptr, nullptr);
}

double partial_loglik(const CaseData& cases, const Eigen::VectorXd& gamma, Eigen::VectorXd* score,
                      Eigen::MatrixXd* hessian) {
  check_gamma(cases, gamma);
  const EventGrid grid = event_grid(cases);
  const WeightedCoxProblem prob = truncated_problem(cases, grid);
  return prob.loglik(gamma, score, hessian);
}

Eigen::VectorXd breslow_jumps(const CaseData& cases, const EventGrid& grid,
                              const Eigen::VectorXd& gamma) {
  check_gamma(cases, gamma);
  return truncated_problem(cases, grid).jumps(gamma);
}

CoxFit fit_cox_lt(const CaseData& cases, const CoxOptions& opts) {
  CoxFit fit;
  fit.method = CoxMethod::PartialLikelihood;
  fit.grid = event_grid(cases);
  const WeightedCoxProblem prob = truncated_problem(cases, fit.grid);

  optim::NewtonOptions nopts;
  nopts.tol = opts.tol;
  nopts.max_iter = opts.max_iter;
  nopts.max_halvings = opts.max_halvings;
  nopts.divergence_bound = opts.gamma_bound;
  const auto res = optim::newton_maximize(
      [&](const Eigen::VectorXd& g, Eigen::VectorXd* gr, Eigen::MatrixXd* h) {
        return prob.loglik(g, gr, h);
      },
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cases.p())), nopts);

  switch (res.status) {
    case optim::Status::Converged: break;
    case optim::Status::Diverged:
      numerical_error("likelihood_monotone",
                      fmt::format("|gamma| exceeded {} with gradient norm {:.3g}", opts.gamma_bound,
                                  res.gradient_norm()));
    case optim::Status::MaxIterations:
      numerical_error("cox_not_converged", fmt::format("after {} iterations", res.iterations));
    default:
      numerical_error("cox_not_converged", optim::to_string(res.status));
  }
  if (res.x.size()) {
    Eigen::LLT<Eigen::MatrixXd> llt(-res.hessian);
    if (llt.info() != Eigen::Success) numerical_error("singular_hessian", "partial likelihood");
  }

  fit.gamma = res.x;
  double value = res.value;
  double gnorm = res.gradient_norm();
  // One more Newton step: near the optimum it is nearly free and drives the
  // score to rounding level, which keeps the influences exactly centred.
  if (res.x.size()) {
    const Eigen::VectorXd step = (-res.hessian).llt().solve(res.gradient);
    Eigen::VectorXd g;
    const double v = prob.loglik(fit.gamma + step, &g, nullptr);
    if (v >= value - 1e-12 * std::max(1.0, std::abs(value)) && g.cwiseAbs().maxCoeff() < gnorm) {
      fit.gamma += step;
      value = v;
      gnorm = g.cwiseAbs().maxCoeff();
    }
  }
  fit.lambda = prob.jumps(fit.gamma);
  fit.xi_hat = estimate_xi_hat(cases, fit.grid, opts.xi_rule);
  fit.converged = true;
  fit.iterations = res.iterations;
  fit.final_gradient_norm = gnorm;
  fit.loglik = value;
  return fit;
}

}  // namespace prevcc
