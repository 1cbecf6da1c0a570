#pragma once

// Weibull proportional-hazards pieces shared by the parametric estimators.
// Shape k1, scale k2, linear predictor eta:
//   S(t | eta) = exp{-(t / k2)^k1 e^eta}.
// Derivatives are taken with respect to (eta, c1 = log k1, c2 = log k2).

namespace prevcc::weibull {

struct LogMu {
  double value = 0.0;  // log of int_0^xi S(t) dt
  double d_eta = 0.0;
  double d_c1 = 0.0;
  double d_c2 = 0.0;
};

/// log mu through the lower incomplete gamma function, stable for large
/// cumulative hazards.
LogMu log_mu(double eta, double c1, double c2, double xi);

/// Cumulative hazard H(t) = exp(k1 (log t - c2) + eta); requires t > 0.
double cumulative_hazard(double t, double eta, double c1, double c2);

/// log hazard: c1 - c2 + (k1 - 1)(log t - c2) + eta.
double log_hazard(double t, double eta, double c1, double c2);

}  // namespace prevcc::weibull
