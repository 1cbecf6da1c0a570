#include "prevcc/parametric.hpp"

#include "prevcc/error.hpp"
#include "prevcc/weibull.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <vector>

namespace prevcc {

Eigen::VectorXd JointFit::estimate() const {
  Eigen::VectorXd v(2 + beta.size() + gamma.size() + 2);
  v << alpha, nu, beta, gamma, k1, k2;
  return v;
}

ParametricData make_parametric_data(const Cohort& c) {
  ParametricData d;
  d.design = make_design(c);
  const auto n = static_cast<Eigen::Index>(c.size());
  d.a = Eigen::VectorXd::Zero(n);
  d.y = Eigen::VectorXd::Zero(n);
  d.delta = Eigen::VectorXi::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Subject& s = c[static_cast<std::size_t>(i)];
    if (s.a) d.a[i] = *s.a;
    if (s.y) d.y[i] = *s.y;
    if (s.delta) d.delta[i] = *s.delta;
  }
  return d;
}

namespace {

double loglik(const Eigen::VectorXd& par, const ParametricData& pd, double xi, Eigen::VectorXd* grad,
              bool joint) {
  const Design& d = pd.design;
  const auto p = static_cast<Eigen::Index>(d.p());
  if (par.size() != 2 * p + 4) input_error("dimension_mismatch", "parameters");
  const double alpha = par[0], nu = par[1];
  const auto beta = par.segment(2, p);
  const auto gamma = par.segment(2 + p, p);
  const double c1 = par[2 * p + 2], c2 = par[2 * p + 3];
  const double k1 = std::exp(c1);
  const Eigen::Index ig = 2 + p, ic1 = 2 * p + 2, ic2 = 2 * p + 3;
  const Eigen::VectorXd xb = d.x * beta;
  const Eigen::VectorXd xg = d.x * gamma;
  const bool prevalent_present = d.n2 > 0;

  if (grad) grad->setZero(par.size());
  double ll = 0.0;
  for (Eigen::Index i = 0; i < xb.size(); ++i) {
    const auto xi_row = d.x.row(i).transpose();
    const Group g = d.group[static_cast<std::size_t>(i)];
    const double eta = xg[i];
    const double a1 = alpha + xb[i];

    // Cross-sectional normaliser; mu is only needed when prevalent cases exist.
    weibull::LogMu lm;
    double a2 = -std::numeric_limits<double>::infinity();
    if (prevalent_present) {
      lm = weibull::log_mu(eta, c1, c2, xi);
      a2 = nu + xb[i] + lm.value;
    }
    const double m = std::max({0.0, a1, a2});
    const double e0 = std::exp(-m), e1 = std::exp(a1 - m), e2 = std::exp(a2 - m);
    const double tot = e0 + e1 + e2;
    ll -= m + std::log(tot);
    const double p1 = e1 / tot, p2 = e2 / tot;

    // Terms d ll / d(eta, c1, c2) collected for this subject.
    double d_eta = 0.0, d_c1 = 0.0, d_c2 = 0.0;
    if (grad) {
      (*grad)[0] -= p1;
      (*grad)[1] -= p2;
      grad->segment(2, p) -= (p1 + p2) * xi_row;
      d_eta -= p2 * lm.d_eta;
      d_c1 -= p2 * lm.d_c1;
      d_c2 -= p2 * lm.d_c2;
    }

    if (g == Group::Incident) {
      ll += a1;
      if (grad) {
        (*grad)[0] += 1.0;
        grad->segment(2, p) += xi_row;
      }
    } else if (g == Group::Prevalent) {
      ll += nu + xb[i];
      if (grad) {
        (*grad)[1] += 1.0;
        grad->segment(2, p) += xi_row;
      }
      const double a = pd.a[i];
      if (a > 0.0) {
        const double h = weibull::cumulative_hazard(a, eta, c1, c2);
        ll -= h;
        d_eta -= h;
        d_c1 -= h * k1 * (std::log(a) - c2);
        d_c2 += h * k1;
      }
      if (joint) {
        ll -= lm.value;
        d_eta -= lm.d_eta;
        d_c1 -= lm.d_c1;
        d_c2 -= lm.d_c2;
      }
    }

    if (joint && g != Group::Control) {
      const double y = pd.y[i];
      if (y > 0.0) {
        const double h = weibull::cumulative_hazard(y, eta, c1, c2);
        ll -= h;
        d_eta -= h;
        d_c1 -= h * k1 * (std::log(y) - c2);
        d_c2 += h * k1;
      }
      if (pd.delta[i] == 1) {
        ll += weibull::log_hazard(y, eta, c1, c2);
        d_eta += 1.0;
        d_c1 += 1.0 + k1 * (std::log(y) - c2);
        d_c2 -= k1;
      }
    }

    if (grad) {
      grad->segment(ig, p) += d_eta * xi_row;
      (*grad)[ic1] += d_c1;
      (*grad)[ic2] += d_c2;
    }
  }
  if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
  return ll;
}

JointFit fit_parametric(const Cohort& c, const ParametricOptions& opts, Method method) {
  const bool joint = method == Method::Joint;
  validate_cohort(c);
  if (!(opts.xi > 0.0)) input_error("invalid_xi");
  const ParametricData pd = make_parametric_data(c);
  const Design& d = pd.design;
  if (d.n0 == 0) input_error("no_controls");
  if (d.n1 + d.n2 == 0) input_error("no_cases");
  if (!joint) {
    for (Eigen::Index i = 0; i < pd.a.size(); ++i)
      if (d.group[static_cast<std::size_t>(i)] == Group::Prevalent && pd.a[i] > opts.xi)
        input_error("backward_time_exceeds_xi", fmt::format("a = {} > xi = {}", pd.a[i], opts.xi), static_cast<std::size_t>(i));
  }
  const auto p = static_cast<Eigen::Index>(d.p());
  const Eigen::Index dim = 2 * p + 4;
  const double inf = std::numeric_limits<double>::infinity();

  // Parameters that the data cannot inform are pinned: the intercept of an
  // empty case group at -infinity, and the survival parameters of the
  // cross-sectional likelihood when there are no prevalent cases.
  std::vector<bool> free(static_cast<std::size_t>(dim), true);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(dim);
  const double n0 = static_cast<double>(d.n0);
  if (d.n1 == 0) {
    free[0] = false;
    full[0] = -inf;
  } else {
    full[0] = std::log(d.n1 / n0);
  }
  const bool survival_free = joint || d.n2 > 0;
  if (!survival_free)
    for (Eigen::Index j = 2 + p; j < dim; ++j) free[static_cast<std::size_t>(j)] = false;

  // Scale start: exponential-rate estimate from the data the likelihood uses.
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < pd.y.size(); ++i) {
    const Group g = d.group[static_cast<std::size_t>(i)];
    if (joint && g != Group::Control) {
      num += pd.delta[i];
      den += pd.y[i] - pd.a[i];
    } else if (!joint && g == Group::Prevalent) {
      num += 1.0;
      den += pd.a[i];
    }
  }
  full[2 * p + 3] = (num > 0.0 && den > 0.0) ? std::log(den / num) : 0.0;
  if (d.n2 == 0) {
    free[1] = false;
    full[1] = -inf;
  } else {
    const double lm = weibull::log_mu(0.0, 0.0, full[2 * p + 3], opts.xi).value;
    full[1] = std::log(d.n2 / n0) - lm;
  }

  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < dim; ++j)
    if (free[static_cast<std::size_t>(j)]) active.push_back(j);
  const auto na = static_cast<Eigen::Index>(active.size());
  auto expand = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd t = full;
    for (Eigen::Index k = 0; k < na; ++k) t[active[static_cast<std::size_t>(k)]] = z[k];
    return t;
  };
  Eigen::VectorXd gfull(dim);
  const optim::FirstOrder f = [&](const Eigen::VectorXd& z, Eigen::VectorXd* gz) {
    const double v = loglik(expand(z), pd, opts.xi, gz ? &gfull : nullptr, joint);
    if (gz) {
      gz->resize(na);
      for (Eigen::Index k = 0; k < na; ++k) (*gz)[k] = gfull[active[static_cast<std::size_t>(k)]];
    }
    return v;
  };
  Eigen::VectorXd z0(na);
  for (Eigen::Index k = 0; k < na; ++k) z0[k] = full[active[static_cast<std::size_t>(k)]];
  const auto res = optim::bfgs_maximize(f, z0, opts.bfgs);
  if (!res.converged())
    numerical_error(joint ? "joint_not_converged" : "ipcc_not_converged", optim::to_string(res.status));
  const Eigen::VectorXd t = expand(res.x);
  for (Eigen::Index j : {2 * p + 2, 2 * p + 3})
    if (free[static_cast<std::size_t>(j)] && std::abs(t[j]) > 20.0)
      numerical_error("kappa_at_bound", fmt::format("log k = {}", t[j]));

  JointFit fit;
  fit.method = method;
  fit.alpha = t[0];
  fit.nu = t[1];
  fit.beta = t.segment(2, p);
  fit.gamma = t.segment(2 + p, p);
  fit.k1 = std::exp(t[2 * p + 2]);
  fit.k2 = std::exp(t[2 * p + 3]);
  fit.loglik = res.value;
  fit.iterations = res.iterations;
  if (!survival_free) {
    fit.gamma.setConstant(std::numeric_limits<double>::quiet_NaN());
    fit.k1 = fit.k2 = std::numeric_limits<double>::quiet_NaN();
  }

  if (opts.covariance) {
    const Eigen::MatrixXd h = optim::numerical_hessian(f, res.x);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-h);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all())
      numerical_error("singular_hessian", joint ? "joint likelihood" : "ip-cc likelihood");
    Eigen::MatrixXd cz = ldlt.solve(Eigen::MatrixXd::Identity(na, na));
    // Delta method from the log scale of k1, k2 to the natural scale.
    Eigen::VectorXd jac = Eigen::VectorXd::Ones(na);
    for (Eigen::Index k = 0; k < na; ++k) {
      const auto j = active[static_cast<std::size_t>(k)];
      if (j >= 2 * p + 2) jac[k] = std::exp(t[j]);
    }
    cz = jac.asDiagonal() * cz * jac.asDiagonal();
    fit.cov = Eigen::MatrixXd::Constant(dim, dim, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index r = 0; r < na; ++r)
      for (Eigen::Index s = 0; s < na; ++s)
        fit.cov(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(s)]) = cz(r, s);
  }
  return fit;
}

}  // namespace

double ipcc_loglik(const Eigen::VectorXd& par, const ParametricData& d, double xi, Eigen::VectorXd* grad) {
  return loglik(par, d, xi, grad, false);
}

double joint_loglik(const Eigen::VectorXd& par, const ParametricData& d, double xi, Eigen::VectorXd* grad) {
  return loglik(par, d, xi, grad, true);
}

JointFit fit_joint(const Cohort& c, const ParametricOptions& opts) {
  return fit_parametric(c, opts, Method::Joint);
}

JointFit fit_ipcc(const Cohort& c, const ParametricOptions& opts) {
  return fit_parametric(c, opts, Method::IPCC);
}

}  // namespace prevcc
