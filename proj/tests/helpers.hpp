#pragma once

#include "prevcc/data.hpp"
#include "prevcc/sim.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <initializer_list>
#include <optional>
#include <vector>

namespace testing {

inline prevcc::Subject control(std::initializer_list<double> x) {
  prevcc::Subject s;
  s.x = Eigen::Map<const Eigen::VectorXd>(x.begin(), static_cast<Eigen::Index>(x.size()));
  return s;
}

inline prevcc::Subject incident(std::initializer_list<double> x, double y, int delta) {
  prevcc::Subject s = control(x);
  s.group = prevcc::Group::Incident;
  s.y = y;
  s.delta = delta;
  return s;
}

inline prevcc::Subject prevalent(std::initializer_list<double> x, double a, double y, int delta) {
  prevcc::Subject s = incident(x, y, delta);
  s.group = prevcc::Group::Prevalent;
  s.a = a;
  return s;
}

// The three incident subjects used throughout the partial-likelihood checks.
inline prevcc::Cohort three_subjects() {
  return prevcc::Cohort({incident({1.0}, 1.0, 1), incident({0.0}, 2.0, 1), incident({1.0}, 3.0, 1)});
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Central differences of a scalar function.
template <class F>
Eigen::VectorXd fd_gradient(F&& f, const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xp = x, xm = x;
    const double step = h * std::max(1.0, std::abs(x[j]));
    xp[j] += step;
    xm[j] -= step;
    g[j] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

// A smaller version of the Table 1 design for fast property checks.
inline prevcc::SimConfig small_config(double censoring, std::size_t n = 150) {
  prevcc::SimConfig cfg = prevcc::table1_config(censoring);
  cfg.n0 = cfg.n1 = cfg.n2 = n;
  return cfg;
}

}  // namespace testing
