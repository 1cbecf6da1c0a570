#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>

namespace prevcc::optim {

enum class Status { Converged, MaxIterations, Diverged, LineSearchFailed, NonFinite };

const char* to_string(Status s);

struct Result {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;  // exact for Newton, empty for BFGS
  int iterations = 0;
  Status status = Status::MaxIterations;

  bool converged() const { return status == Status::Converged; }
  double gradient_norm() const { return gradient.size() ? gradient.lpNorm<Eigen::Infinity>() : 0.0; }
};

// Objective for maximization. Gradient/Hessian pointers may be null when
// only the value is needed.
using SecondOrder = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*, Eigen::MatrixXd*)>;
using FirstOrder = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct NewtonOptions {
  double tol = 1e-8;  // max-norm of the gradient
  int max_iter = 100;
  int max_halvings = 20;
  double divergence_bound = std::numeric_limits<double>::infinity();
};

/// Damped Newton ascent: full Newton step, halved until the objective
/// does not decrease.
Result newton_maximize(const SecondOrder& f, Eigen::VectorXd x0, const NewtonOptions& opts = {});

struct BfgsOptions {
  double gtol = 1e-6;  // max-norm of the gradient
  double ftol = 1e-13; // relative objective change that also counts as converged
  int max_iter = 1000;
  int max_backtracks = 60;
};

Result bfgs_maximize(const FirstOrder& f, Eigen::VectorXd x0, const BfgsOptions& opts = {});

/// Central finite-difference Jacobian of a gradient, symmetrised.
Eigen::MatrixXd numerical_hessian(const FirstOrder& f, const Eigen::VectorXd& x, double rel_step = 1e-5);

/// Central finite-difference gradient of a scalar function.
Eigen::VectorXd numerical_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double rel_step = 1e-6);

}  // namespace prevcc::optim
