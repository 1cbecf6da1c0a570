#include "prevcc/tilt.hpp"

#include "prevcc/error.hpp"
#include "prevcc/variance.hpp"
#include "prevcc/weibull.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <string>

namespace prevcc {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::TwoStepEM: return "two-step-em";
    case Method::TwoStepCox: return "two-step-cox";
    case Method::Joint: return "joint";
    case Method::IPCC: return "ipcc";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "two-step-em" || s == "em") return Method::TwoStepEM;
  if (s == "two-step-cox" || s == "cox") return Method::TwoStepCox;
  if (s == "joint") return Method::Joint;
  if (s == "ipcc" || s == "ip-cc") return Method::IPCC;
  input_error("unknown_method", std::string(name));
}

double mu_semiparametric(const Eigen::VectorXd& x, const CoxFit& fit) {
  const double e = std::exp(x.dot(fit.gamma));
  double mu = 0.0, prev_t = 0.0, cum = 0.0;
  for (std::size_t j = 0; j < fit.grid.size(); ++j) {
    if (prev_t > fit.xi_hat) break;
    mu += (std::min(fit.grid.t[j], fit.xi_hat) - prev_t) * std::exp(-cum * e);
    prev_t = fit.grid.t[j];
    cum += fit.lambda[static_cast<Eigen::Index>(j)];
  }
  return mu;
}

Eigen::VectorXd mu_semiparametric_rows(const Eigen::MatrixXd& x, const CoxFit& fit) {
  Eigen::VectorXd mu(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) mu[i] = mu_semiparametric(x.row(i).transpose(), fit);
  return mu;
}

double mu_weibull(const Eigen::VectorXd& x, const Eigen::VectorXd& gamma, double k1, double k2,
                  double xi) {
  if (!(k1 > 0.0) || !(k2 > 0.0) || !(xi > 0.0)) input_error("invalid_weibull_parameters");
  return std::exp(weibull::log_mu(x.dot(gamma), std::log(k1), std::log(k2), xi).value);
}

Design make_design(const Cohort& c) {
  Design d;
  d.x.resize(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(c.p()));
  d.group.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    d.x.row(static_cast<Eigen::Index>(i)) = c[i].x.transpose();
    d.group.push_back(c[i].group);
  }
  d.n0 = c.n0();
  d.n1 = c.n1();
  d.n2 = c.n2();
  return d;
}

double pseudo_loglik(const Eigen::VectorXd& theta, const Design& d, const Eigen::VectorXd& mu,
                     Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
  const auto p = static_cast<Eigen::Index>(d.p());
  if (theta.size() != p + 2) input_error("dimension_mismatch", "theta");
  if (mu.size() != static_cast<Eigen::Index>(d.size())) input_error("dimension_mismatch", "mu");
  const double alpha = theta[0], nu = theta[1];
  const auto beta = theta.tail(p);
  const Eigen::VectorXd xb = d.x * beta;
  if (grad) grad->setZero(p + 2);
  if (hess) hess->setZero(p + 2, p + 2);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < xb.size(); ++i) {
    const double a1 = alpha + xb[i];
    const double a2 = nu + xb[i] + std::log(mu[i]);
    const double m = std::max({0.0, a1, a2});
    const double e0 = std::exp(-m), e1 = std::exp(a1 - m), e2 = std::exp(a2 - m);
    const double tot = e0 + e1 + e2;
    ll -= m + std::log(tot);
    const Group g = d.group[static_cast<std::size_t>(i)];
    if (g == Group::Incident) ll += a1;
    if (g == Group::Prevalent) ll += nu + xb[i];
    if (!grad && !hess) continue;
    const double p1 = e1 / tot, p2 = e2 / tot, p0 = e0 / tot;
    const auto xi = d.x.row(i).transpose();
    if (grad) {
      const double i1 = g == Group::Incident, i2 = g == Group::Prevalent;
      (*grad)[0] += i1 - p1;
      (*grad)[1] += i2 - p2;
      grad->tail(p) += (i1 + i2 - p1 - p2) * xi;
    }
    if (hess) {
      auto& h = *hess;
      h(0, 0) -= p1 * (1.0 - p1);
      h(1, 1) -= p2 * (1.0 - p2);
      h(0, 1) += p1 * p2;
      h.block(0, 2, 1, p) -= (p1 * p0) * xi.transpose();
      h.block(1, 2, 1, p) -= (p2 * p0) * xi.transpose();
      h.bottomRightCorner(p, p) -= ((p1 + p2) * p0) * xi * xi.transpose();
    }
  }
  if (hess) {
    auto& h = *hess;
    h(1, 0) = h(0, 1);
    h.block(2, 0, p, 1) = h.block(0, 2, 1, p).transpose();
    h.block(2, 1, p, 1) = h.block(1, 2, 1, p).transpose();
  }
  if (!std::isfinite(ll)) numerical_error("non_finite_loglik", "pseudo log-likelihood");
  return ll;
}

double pseudo_loglik(const Eigen::VectorXd& theta, const Cohort& c, const Eigen::VectorXd& mu) {
  return pseudo_loglik(theta, make_design(c), mu);
}

Eigen::VectorXd TiltFit::theta() const {
  Eigen::VectorXd t(beta.size() + 2);
  t << alpha, nu, beta;
  return t;
}

TiltFit fit_tilt(const Design& d, const Eigen::VectorXd& mu, const TiltOptions& opts) {
  if (d.n0 == 0) input_error("no_controls");
  if (d.n1 + d.n2 == 0) input_error("no_cases");
  if ((mu.array() <= 0.0).any() || !mu.allFinite()) numerical_error("non_positive_mu");
  const auto p = static_cast<Eigen::Index>(d.p());
  const double inf = std::numeric_limits<double>::infinity();

  // An empty case group pins its intercept at -infinity; optimise the rest.
  std::vector<Eigen::Index> active;
  if (d.n1 > 0) active.push_back(0);
  if (d.n2 > 0) active.push_back(1);
  for (Eigen::Index j = 0; j < p; ++j) active.push_back(2 + j);

  Eigen::VectorXd full(p + 2);
  full.setZero();
  double mu_prev = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) mu_prev += mu[static_cast<Eigen::Index>(i)];
  mu_prev /= static_cast<double>(d.size());
  const double n0 = static_cast<double>(d.n0);
  full[0] = d.n1 ? std::log(d.n1 / n0) : -inf;
  full[1] = d.n2 ? std::log(d.n2 / n0) - std::log(mu_prev) : -inf;

  const auto na = static_cast<Eigen::Index>(active.size());
  auto expand = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd t = full;
    for (Eigen::Index k = 0; k < na; ++k) t[active[static_cast<std::size_t>(k)]] = z[k];
    return t;
  };
  Eigen::VectorXd z0(na);
  for (Eigen::Index k = 0; k < na; ++k) z0[k] = full[active[static_cast<std::size_t>(k)]];

  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  optim::NewtonOptions nopts;
  nopts.tol = opts.tol;
  nopts.max_iter = opts.max_iter;
  nopts.divergence_bound = opts.beta_bound;
  const auto res = optim::newton_maximize(
      [&](const Eigen::VectorXd& z, Eigen::VectorXd* gz, Eigen::MatrixXd* hz) {
        const double v = pseudo_loglik(expand(z), d, mu, gz ? &g : nullptr, hz ? &h : nullptr);
        for (Eigen::Index a = 0; a < na; ++a) {
          const auto ia = active[static_cast<std::size_t>(a)];
          if (gz) {
            gz->resize(na);
            (*gz)[a] = g[ia];
          }
          if (hz) {
            hz->resize(na, na);
            for (Eigen::Index b = 0; b < na; ++b) (*hz)(a, b) = h(ia, active[static_cast<std::size_t>(b)]);
          }
        }
        return v;
      },
      z0, nopts);
  if (res.status == optim::Status::Diverged) numerical_error("separation", "step-two estimates diverge");
  if (!res.converged())
    numerical_error("tilt_not_converged", optim::to_string(res.status));
  // Under separation the score vanishes at finite but huge slopes: either the
  // groups are fitted perfectly or the information collapses along the
  // separating direction.
  {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-res.hessian, Eigen::EigenvaluesOnly);
    const Eigen::VectorXd ev = es.eigenvalues();
    if (res.value > -1e-6 * static_cast<double>(d.size()) || (ev.size() && !(ev.minCoeff() > 1e-10 * ev.maxCoeff())))
      numerical_error("separation", "step-two groups are perfectly separated");
  }

  const Eigen::VectorXd t = expand(res.x);
  TiltFit fit;
  fit.alpha = t[0];
  fit.nu = t[1];
  fit.beta = t.tail(p);
  fit.mu = mu;
  fit.iterations = res.iterations;
  fit.loglik = res.value;
  return fit;
}

TiltFit fit_two_step(const Cohort& c, Method survival, const TwoStepOptions& opts) {
  if (survival != Method::TwoStepEM && survival != Method::TwoStepCox)
    input_error("invalid_method", "two-step fits need an EM or Cox survival step");
  validate_cohort(c, {.require_events = true});
  const CaseData cases = case_data(c);
  CoxFit cox;
  if (survival == Method::TwoStepEM) {
    EmOptions em = opts.em;
    em.xi_rule = opts.xi_rule;
    cox = fit_cox_em(cases, em);
  } else {
    CoxOptions co = opts.cox;
    co.xi_rule = opts.xi_rule;
    cox = fit_cox_lt(cases, co);
  }
  const Design d = make_design(c);
  TiltFit fit = fit_tilt(d, mu_semiparametric_rows(d.x, cox), opts.tilt);
  fit.source = survival;
  fit.survival = std::move(cox);
  if (opts.sandwich) {
    const CoxFit* pl = &fit.survival;
    CoxFit refit;
    if (survival == Method::TwoStepEM) {
      // Influences exist for the partial-likelihood estimator only; they stand
      // in for the EM estimator's while mu is differentiated at the EM fit.
      CoxOptions co = opts.cox;
      co.xi_rule = opts.xi_rule;
      refit = fit_cox_lt(cases, co);
      pl = &refit;
      fit.cov_approximate = true;
    }
    fit.cov = sandwich_cov(d, fit, influence_contributions(cases, *pl));
  }
  return fit;
}

}  // namespace prevcc
