#include "prevcc/optim.hpp"

#include <cmath>

namespace prevcc::optim {

const char* to_string(Status s) {
  switch (s) {
    case Status::Converged: return "converged";
    case Status::MaxIterations: return "max_iterations";
    case Status::Diverged: return "diverged";
    case Status::LineSearchFailed: return "line_search_failed";
    case Status::NonFinite: return "non_finite";
  }
  return "unknown";
}

namespace {

// Ascent direction from the Hessian; falls back to a regularised system when
// the Hessian is not negative definite.
Eigen::VectorXd newton_direction(const Eigen::MatrixXd& h, const Eigen::VectorXd& g) {
  const Eigen::Index n = g.size();
  Eigen::LLT<Eigen::MatrixXd> llt(-h);
  if (llt.info() == Eigen::Success) {
    Eigen::VectorXd d = llt.solve(g);
    if (d.allFinite()) return d;
  }
  double shift = 1e-8 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
  for (int k = 0; k < 60; ++k, shift *= 10.0) {
    Eigen::LLT<Eigen::MatrixXd> reg(-h + shift * Eigen::MatrixXd::Identity(n, n));
    if (reg.info() == Eigen::Success) return reg.solve(g);
  }
  return g;
}

}  // namespace

Result newton_maximize(const SecondOrder& f, Eigen::VectorXd x0, const NewtonOptions& opts) {
  Result r;
  r.x = std::move(x0);
  const Eigen::Index n = r.x.size();
  r.gradient.resize(n);
  r.hessian.resize(n, n);
  r.value = f(r.x, &r.gradient, &r.hessian);
  if (!std::isfinite(r.value) || !r.gradient.allFinite()) {
    r.status = Status::NonFinite;
    return r;
  }
  for (r.iterations = 0; r.iterations < opts.max_iter; ++r.iterations) {
    if (r.gradient_norm() <= opts.tol) {
      r.status = Status::Converged;
      return r;
    }
    if (r.x.size() && r.x.lpNorm<Eigen::Infinity>() > opts.divergence_bound) {
      r.status = Status::Diverged;
      return r;
    }
    Eigen::VectorXd step = newton_direction(r.hessian, r.gradient);
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      Eigen::VectorXd trial = r.x + step;
      const double v = f(trial, nullptr, nullptr);
      // Ties are accepted so that flat directions near the optimum still move.
      if (std::isfinite(v) && v >= r.value - 1e-12 * (1.0 + std::abs(r.value))) {
        r.x = std::move(trial);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      r.status = Status::LineSearchFailed;
      return r;
    }
    r.value = f(r.x, &r.gradient, &r.hessian);
    if (!std::isfinite(r.value) || !r.gradient.allFinite()) {
      r.status = Status::NonFinite;
      return r;
    }
  }
  r.status = r.gradient_norm() <= opts.tol ? Status::Converged : Status::MaxIterations;
  return r;
}

Result bfgs_maximize(const FirstOrder& f, Eigen::VectorXd x0, const BfgsOptions& opts) {
  // Minimises -f with an inverse-Hessian update and Armijo backtracking.
  Result r;
  const Eigen::Index n = x0.size();
  r.x = std::move(x0);
  Eigen::VectorXd g(n);
  double v = -f(r.x, &g);
  g = -g;
  if (!std::isfinite(v) || !g.allFinite()) {
    r.status = Status::NonFinite;
    r.value = -v;
    r.gradient = -g;
    return r;
  }
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  for (r.iterations = 0; r.iterations < opts.max_iter; ++r.iterations) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.gtol) {
      r.status = Status::Converged;
      break;
    }
    Eigen::VectorXd d = -hinv * g;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      hinv.setIdentity();
      d = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    // Keep the first trial step moderate in parameter space.
    const double dmax = d.lpNorm<Eigen::Infinity>();
    if (dmax > 5.0) step = 5.0 / dmax;
    Eigen::VectorXd xn(n), gn(n);
    double vn = 0.0;
    bool ok = false;
    for (int b = 0; b < opts.max_backtracks; ++b) {
      xn = r.x + step * d;
      vn = -f(xn, &gn);
      if (std::isfinite(vn) && gn.allFinite() && vn <= v + 1e-4 * step * slope) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) {
      r.status = g.lpNorm<Eigen::Infinity>() <= 1e3 * opts.gtol ? Status::Converged
                                                               : Status::LineSearchFailed;
      break;
    }
    gn = -gn;
    const Eigen::VectorXd s = xn - r.x;
    const Eigen::VectorXd y = gn - g;
    const double sy = s.dot(y);
    const double vold = v;
    r.x = xn;
    v = vn;
    g = gn;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        hinv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
      hinv = (id - rho * s * y.transpose()) * hinv * (id - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    if (std::abs(vold - v) <= opts.ftol * (1.0 + std::abs(v)) &&
        g.lpNorm<Eigen::Infinity>() <= 1e3 * opts.gtol) {
      r.status = Status::Converged;
      break;
    }
  }
  if (r.iterations >= opts.max_iter)
    r.status = g.lpNorm<Eigen::Infinity>() <= opts.gtol ? Status::Converged : Status::MaxIterations;
  r.value = -v;
  r.gradient = -g;
  return r;
}

Eigen::MatrixXd numerical_hessian(const FirstOrder& f, const Eigen::VectorXd& x, double rel_step) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd gp(n), gm(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = rel_step * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    f(xp, &gp);
    f(xm, &gm);
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

Eigen::VectorXd numerical_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double rel_step) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double step = rel_step * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    g[j] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

}  // namespace prevcc::optim
