#include "prevcc/em_cox.hpp"

#include "prevcc/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace prevcc {

namespace {

std::vector<std::size_t> prevalent_rows(const CaseData& cases) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (cases.prevalent[i]) rows.push_back(i);
  return rows;
}

// E-step restricted to the prevalent rows; rows of `tw` follow `prev`.
void prevalent_weights(const CaseData& cases, const std::vector<std::size_t>& prev,
                       const EventGrid& grid, const Eigen::VectorXd& gamma,
                       const Eigen::VectorXd& lambda, double xi_hat, EStepNormalizer norm,
                       Eigen::MatrixXd& tw,
                       Eigen::MatrixXd* omega_out, Eigen::VectorXd* upsilon_out) {
  const auto k = static_cast<Eigen::Index>(grid.size());
  tw.resize(static_cast<Eigen::Index>(prev.size()), k);
  if (omega_out) omega_out->resize(tw.rows(), k);
  if (upsilon_out) upsilon_out->resize(tw.rows());
  Eigen::VectorXd cum(k), trunc(k);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    cum[j] = (acc += lambda[j]);
    trunc[j] = std::max(0.0, xi_hat - grid.t[static_cast<std::size_t>(j)]);
  }
  for (Eigen::Index r = 0; r < tw.rows(); ++r) {
    const auto i = static_cast<Eigen::Index>(prev[static_cast<std::size_t>(r)]);
    const double e = std::exp(cases.x.row(i).dot(gamma));
    double upsilon = 0.0, mass = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double w = lambda[j] * e * std::exp(-cum[j] * e);
      tw(r, j) = w;
      upsilon += grid.t[static_cast<std::size_t>(j)] * w;
      mass += w * trunc[j];
    }
    if (!(upsilon > 0.0) || !std::isfinite(upsilon))
      numerical_error("degenerate_estep", "all truncated-time masses vanish",
                      static_cast<std::size_t>(i));
    if (omega_out) omega_out->row(r) = tw.row(r);
    if (upsilon_out) (*upsilon_out)[r] = upsilon;
    const double denom =
        norm == EStepNormalizer::Upsilon ? upsilon : xi_hat - mass;
    if (!(denom > 0.0))
      numerical_error("degenerate_estep", "non-positive normaliser", static_cast<std::size_t>(i));
    tw.row(r) = (tw.row(r).array() * trunc.transpose().array() / denom).matrix();
  }
}

void check_inputs(const CaseData& cases, const EventGrid& grid, const Eigen::VectorXd& gamma,
                  const Eigen::VectorXd& lambda) {
  if (static_cast<std::size_t>(gamma.size()) != cases.p()) input_error("dimension_mismatch", "gamma");
  if (static_cast<std::size_t>(lambda.size()) != grid.size()) input_error("dimension_mismatch", "lambda");
  if ((lambda.array() < 0.0).any()) input_error("negative_hazard");
  if (!(lambda.sum() > 0.0)) input_error("zero_hazard");
}

// Ordinary rows of the complete-data likelihood: every case is at risk from
// time 0 to its observed time; truncation enters only through pseudo-rows.
WeightedCoxProblem complete_data_problem(const CaseData& cases, const EventGrid& grid) {
  WeightedCoxProblem prob(cases.x, grid);
  for (std::size_t i = 0; i < cases.size(); ++i)
    prob.add_row(i, 0.0, cases.exit[static_cast<Eigen::Index>(i)], cases.delta[i] == 1);
  return prob;
}

double observed_part(const CaseData& cases, const EventGrid& grid, const Eigen::VectorXd& gamma,
                     const Eigen::VectorXd& lambda, const Eigen::VectorXd& cum) {
  double ll = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double eta = cases.x.row(ii).dot(gamma);
    const std::size_t m = grid.count_le(cases.exit[ii]);
    const double cy = m ? cum[static_cast<Eigen::Index>(m - 1)] : 0.0;
    if (cases.delta[i] == 1) ll += std::log(lambda[static_cast<Eigen::Index>(m - 1)]) + eta;
    ll -= std::exp(eta) * cy;
  }
  return ll;
}

Eigen::VectorXd cumsum(const Eigen::VectorXd& v) {
  Eigen::VectorXd c(v.size());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < v.size(); ++j) c[j] = (acc += v[j]);
  return c;
}

}  // namespace

EStepWeights e_step(const CaseData& cases, const EventGrid& grid, const Eigen::VectorXd& gamma,
                    const Eigen::VectorXd& lambda, double xi_hat, EStepNormalizer norm) {
  check_inputs(cases, grid, gamma, lambda);
  if (!(xi_hat > 0.0)) input_error("invalid_xi_hat");
  const auto prev = prevalent_rows(cases);
  Eigen::MatrixXd tw, omega;
  Eigen::VectorXd upsilon;
  prevalent_weights(cases, prev, grid, gamma, lambda, xi_hat, norm, tw, &omega, &upsilon);
  EStepWeights w;
  const auto n = static_cast<Eigen::Index>(cases.size());
  const auto k = static_cast<Eigen::Index>(grid.size());
  w.tw = Eigen::MatrixXd::Zero(n, k);
  w.omega = Eigen::MatrixXd::Zero(n, k);
  w.upsilon = Eigen::VectorXd::Zero(n);
  for (std::size_t r = 0; r < prev.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(prev[r]);
    const auto rr = static_cast<Eigen::Index>(r);
    w.tw.row(i) = tw.row(rr);
    w.omega.row(i) = omega.row(rr);
    w.upsilon[i] = upsilon[rr];
  }
  return w;
}

MStepResult m_step(const EStepWeights& w, const CaseData& cases, const EventGrid& grid,
                   const Eigen::VectorXd& gamma_init, const MStepOptions& opts) {
  if (w.tw.rows() != static_cast<Eigen::Index>(cases.size()) ||
      w.tw.cols() != static_cast<Eigen::Index>(grid.size()))
    input_error("dimension_mismatch", "weights");
  WeightedCoxProblem prob = complete_data_problem(cases, grid);
  const auto prev = prevalent_rows(cases);
  Eigen::MatrixXd pw(static_cast<Eigen::Index>(prev.size()), w.tw.cols());
  for (std::size_t r = 0; r < prev.size(); ++r)
    pw.row(static_cast<Eigen::Index>(r)) = w.tw.row(static_cast<Eigen::Index>(prev[r]));
  prob.set_pseudo_rows(prev);
  prob.set_pseudo_weights(pw);

  MStepResult out;
  out.gamma = gamma_init;
  if (!opts.fix_gamma && gamma_init.size() > 0) {
    optim::NewtonOptions nopts;
    nopts.tol = opts.tol;
    nopts.max_iter = opts.max_iter;
    const auto res = optim::newton_maximize(
        [&](const Eigen::VectorXd& g, Eigen::VectorXd* gr, Eigen::MatrixXd* h) {
          return prob.loglik(g, gr, h);
        },
        gamma_init, nopts);
    if (!res.converged()) numerical_error("mstep_not_converged", optim::to_string(res.status));
    out.gamma = res.x;
    out.iterations = res.iterations;
  }
  out.lambda = prob.jumps(out.gamma);
  return out;
}

double em_q_function(const EStepWeights& w, const CaseData& cases, const EventGrid& grid,
                     const Eigen::VectorXd& gamma, const Eigen::VectorXd& lambda) {
  const Eigen::VectorXd cum = cumsum(lambda);
  double q = observed_part(cases, grid, gamma, lambda, cum);
  for (Eigen::Index i = 0; i < w.tw.rows(); ++i) {
    if (!cases.prevalent[static_cast<std::size_t>(i)]) continue;
    const double eta = cases.x.row(i).dot(gamma);
    const double e = std::exp(eta);
    for (Eigen::Index j = 0; j < w.tw.cols(); ++j) {
      const double t = w.tw(i, j);
      if (t > 0.0) q += t * (std::log(lambda[j]) + eta - e * cum[j]);
    }
  }
  return q;
}

double em_observed_loglik(const CaseData& cases, const EventGrid& grid,
                          const Eigen::VectorXd& gamma, const Eigen::VectorXd& lambda,
                          double xi_hat, EStepNormalizer norm) {
  const Eigen::VectorXd cum = cumsum(lambda);
  double ll = observed_part(cases, grid, gamma, lambda, cum);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (!cases.prevalent[i]) continue;
    const double e = std::exp(cases.x.row(static_cast<Eigen::Index>(i)).dot(gamma));
    double upsilon = 0.0, mass = 0.0;
    for (Eigen::Index j = 0; j < cum.size(); ++j) {
      const double w = lambda[j] * e * std::exp(-cum[j] * e);
      const double tj = grid.t[static_cast<std::size_t>(j)];
      upsilon += tj * w;
      mass += w * std::max(0.0, xi_hat - tj);
    }
    ll -= std::log((norm == EStepNormalizer::Upsilon ? upsilon : xi_hat - mass) / xi_hat);
  }
  return ll;
}

CoxFit fit_cox_em(const CaseData& cases, const EmOptions& opts, EmTrace* trace) {
  CoxFit fit;
  fit.method = CoxMethod::EM;
  fit.grid = event_grid(cases);
  fit.xi_hat = opts.xi_hat ? *opts.xi_hat : estimate_xi_hat(cases, fit.grid, opts.xi_rule);
  if (!(fit.xi_hat > 0.0)) input_error("invalid_xi_hat");

  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cases.p()));
  try {
    CoxOptions start = opts.start;
    start.xi_rule = opts.xi_rule;
    gamma = fit_cox_lt(cases, start).gamma;
  } catch (const Error&) {
    // fall back to gamma = 0
  }
  Eigen::VectorXd lambda = breslow_jumps(cases, fit.grid, gamma);

  const auto prev = prevalent_rows(cases);
  WeightedCoxProblem prob = complete_data_problem(cases, fit.grid);
  prob.set_pseudo_rows(prev);

  optim::NewtonOptions nopts;
  nopts.tol = opts.start.tol;
  nopts.max_iter = opts.start.max_iter;
  Eigen::MatrixXd tw;

  struct State {
    Eigen::VectorXd gamma, lambda;
    double ll = 0.0;
  };
  auto loglik = [&](const Eigen::VectorXd& g, const Eigen::VectorXd& l) {
    return em_observed_loglik(cases, fit.grid, g, l, fit.xi_hat, opts.normalizer);
  };
  int evaluations = 0;
  // One E-step and M-step from (gamma, lambda).
  auto em_map = [&](const Eigen::VectorXd& g0, const Eigen::VectorXd& l0) {
    ++evaluations;
    if (!prev.empty()) {
      prevalent_weights(cases, prev, fit.grid, g0, l0, fit.xi_hat, opts.normalizer, tw, nullptr, nullptr);
      prob.set_pseudo_weights(tw);
    }
    State out;
    out.gamma = g0;
    if (g0.size() > 0) {
      const auto res = optim::newton_maximize(
          [&](const Eigen::VectorXd& g, Eigen::VectorXd* gr, Eigen::MatrixXd* h) {
            return prob.loglik(g, gr, h);
          },
          g0, nopts);
      if (!res.converged()) numerical_error("mstep_not_converged", optim::to_string(res.status));
      out.gamma = res.x;
    }
    out.lambda = prob.jumps(out.gamma);
    out.ll = loglik(out.gamma, out.lambda);
    return out;
  };
  auto ascend = [&](const State& from, const State& to) {
    if (trace) trace->loglik.push_back(to.ll);
    if (opts.check_ascent && to.ll < from.ll - opts.ascent_tol * std::max(1.0, std::abs(from.ll)))
      numerical_error("em_ascent_violated",
                      fmt::format("EM step {}: log-likelihood {:.12g} -> {:.12g}", evaluations, from.ll, to.ll));
  };
  auto settled = [&](const State& a, const State& b) {
    const double dpar = std::max(a.gamma.size() ? (b.gamma - a.gamma).lpNorm<Eigen::Infinity>() : 0.0,
                                 (b.lambda - a.lambda).lpNorm<Eigen::Infinity>());
    return std::max(dpar, std::abs(b.ll - a.ll)) <= opts.tol;
  };
  // Extrapolation works on (gamma, log lambda), where the jumps stay positive.
  auto pack = [](const State& s) {
    Eigen::VectorXd v(s.gamma.size() + s.lambda.size());
    v << s.gamma, s.lambda.array().log().matrix();
    return v;
  };

  State cur{gamma, lambda, loglik(gamma, lambda)};
  if (trace) trace->loglik.assign(1, cur.ll);
  const auto p = gamma.size();
  bool converged = false;
  // SQUAREM: two EM steps, a squared extrapolation along their differences,
  // then one stabilising EM step; the extrapolated point is kept only if it
  // beats the plain two-step iterate.
  for (int cycle = 0; cycle < opts.max_iter && !converged; ++cycle) {
    State s1 = em_map(cur.gamma, cur.lambda);
    ascend(cur, s1);
    if (settled(cur, s1)) {
      cur = std::move(s1);
      converged = true;
      break;
    }
    State s2 = em_map(s1.gamma, s1.lambda);
    ascend(s1, s2);
    if (settled(s1, s2) || !opts.accelerate) {
      converged = settled(s1, s2);
      cur = std::move(s2);
      continue;
    }
    const Eigen::VectorXd t0 = pack(cur), t1 = pack(s1), t2 = pack(s2);
    const Eigen::VectorXd r = t1 - t0, v = t2 - 2.0 * t1 + t0;
    double step = v.norm() > 0.0 ? -r.norm() / v.norm() : -1.0;
    State next = std::move(s2);
    while (step < -1.0) {
      const Eigen::VectorXd t = t0 - 2.0 * step * r + step * step * v;
      try {
        State sp = em_map(t.head(p), t.tail(t.size() - p).array().exp().matrix());
        if (std::isfinite(sp.ll) && sp.ll >= next.ll) {
          if (trace) trace->loglik.push_back(sp.ll);
          next = std::move(sp);
          break;
        }
      } catch (const Error&) {
      }
      step = 0.5 * (step - 1.0);
      if (step > -1.01) break;
    }
    converged = settled(cur, next);
    cur = std::move(next);
  }
  if (!converged) numerical_error("em_not_converged", fmt::format("after {} EM steps", evaluations));
  gamma = cur.gamma;
  lambda = cur.lambda;
  const double ll = cur.ll;
  const int it = evaluations;

  fit.gamma = gamma;
  fit.lambda = lambda;
  fit.converged = true;
  fit.iterations = it;
  fit.loglik = ll;
  if (gamma.size() > 0) {
    Eigen::VectorXd g;
    prob.loglik(gamma, &g, nullptr);
    fit.final_gradient_norm = g.lpNorm<Eigen::Infinity>();
  }
  return fit;
}

}  // namespace prevcc
