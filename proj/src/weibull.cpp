#include "prevcc/weibull.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>

namespace prevcc::weibull {

namespace {

struct LowerGamma {
  double log_value;  // log gamma(s, u)
  double d_log_s;    // d log gamma / ds
  double log_g;      // log of u^s e^-u / gamma(s, u)
};

// gamma(s, u) = u^s e^-u sum_n u^n / prod_{m<=n} (s + m); each term's
// s-derivative is -T_n H_n with H_n = sum_{m<=n} 1/(s + m).
LowerGamma lower_gamma_series(double s, double u, double log_u) {
  double term = 1.0 / s, harmonic = 1.0 / s;
  double sum = term, dsum = term * harmonic;
  for (int n = 1; n < 100000; ++n) {
    term *= u / (s + n);
    harmonic += 1.0 / (s + n);
    sum += term;
    dsum += term * harmonic;
    if (n > u && term < 1e-17 * sum) break;
  }
  return {s * log_u - u + std::log(sum), log_u - dsum / sum, -std::log(sum)};
}

// Large u: gamma(s, u) = Gamma(s) - Gamma(s, u) with a small upper tail whose
// s-derivative is log(u) Gamma(s, u) to leading order.
LowerGamma lower_gamma_tail(double s, double u, double log_u) {
  const double q = boost::math::gamma_q(s, u);
  const double lg = std::lgamma(s);
  const double log_value = lg + std::log1p(-q);
  const double d_log_s = (boost::math::digamma(s) - log_u * q) / (1.0 - q);
  return {log_value, d_log_s, s * log_u - u - log_value};
}

}  // namespace

LogMu log_mu(double eta, double c1, double c2, double xi) {
  const double k1 = std::exp(c1);
  const double s = 1.0 / k1;
  const double log_xi = std::log(xi);
  const double log_u = k1 * (log_xi - c2) + eta;
  const double u = std::exp(log_u);

  LowerGamma lg;
  if (u <= 50.0 + 2.0 * s && u < 600.0) {
    lg = lower_gamma_series(s, u, log_u);
  } else {
    lg = lower_gamma_tail(s, u, log_u);
  }
  const double g = std::exp(lg.log_g);

  LogMu out;
  out.value = -c1 + c2 - eta * s + lg.log_value;
  out.d_eta = -s + g;
  out.d_c2 = 1.0 - k1 * g;
  out.d_c1 = -1.0 + eta * s - s * lg.d_log_s + g * k1 * (log_xi - c2);
  return out;
}

double cumulative_hazard(double t, double eta, double c1, double c2) {
  return std::exp(std::exp(c1) * (std::log(t) - c2) + eta);
}

double log_hazard(double t, double eta, double c1, double c2) {
  return c1 - c2 + (std::exp(c1) - 1.0) * (std::log(t) - c2) + eta;
}

}  // namespace prevcc::weibull
