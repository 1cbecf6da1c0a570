#include "helpers.hpp"

#include "prevcc/error.hpp"
#include "prevcc/parametric.hpp"
#include "prevcc/sim.hpp"
#include "prevcc/tilt.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace prevcc;

namespace {

CoxFit step_fit(std::vector<double> t, std::vector<double> lambda, double gamma, double xi_hat) {
  CoxFit f;
  f.grid.t = std::move(t);
  f.grid.d.assign(f.grid.t.size(), 1);
  f.lambda = Eigen::Map<const Eigen::VectorXd>(lambda.data(), static_cast<Eigen::Index>(lambda.size()));
  f.gamma = Eigen::VectorXd::Constant(1, gamma);
  f.xi_hat = xi_hat;
  return f;
}

double quad_mu(double eta, double k1, double k2, double xi) {
  auto f = [&](double t) { return std::exp(-std::pow(t / k2, k1) * std::exp(eta)); };
  // Tanh-sinh copes with the t^(k1 - 1) cusp at zero that defeats Gauss-Kronrod when k1 < 1.
  static boost::math::quadrature::tanh_sinh<double> ts;
  return ts.integrate(f, 0.0, xi, 1e-14);
}

// Two-group logistic regression by Newton's method, written independently of
// the library: controls y = 0, incident cases y = 1, design [1, x].
Eigen::VectorXd logistic_oracle(const Cohort& c) {
  const auto p = static_cast<Eigen::Index>(c.p());
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p + 1);
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p + 1);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p + 1, p + 1);
    for (const auto& s : c.subjects()) {
      Eigen::VectorXd z(p + 1);
      z << 1.0, s.x;
      const double pr = 1.0 / (1.0 + std::exp(-z.dot(b)));
      const double y = s.group == Group::Incident ? 1.0 : 0.0;
      g += (y - pr) * z;
      h -= pr * (1 - pr) * z * z.transpose();
    }
    const Eigen::VectorXd step = h.ldlt().solve(-g);
    b += step;
    if (step.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return b;
}

Eigen::VectorXd random_par(std::mt19937_64& rng, Eigen::Index p) {
  std::normal_distribution<double> z(0.0, 0.5);
  Eigen::VectorXd par(2 * p + 4);
  for (Eigen::Index j = 0; j < par.size(); ++j) par[j] = z(rng);
  return par;
}

}  // namespace

TEST_SUITE("tilt") {
  TEST_CASE("mu_semiparametric examples") {
    const CoxFit zero = step_fit({1.0, 2.5, 4.0}, {0.0, 0.0, 0.0}, 0.7, 10.0);
    CHECK(mu_semiparametric(Eigen::VectorXd::Constant(1, 1.3), zero) == doctest::Approx(4.0).epsilon(1e-14));
    const CoxFit zero2 = step_fit({1.0, 2.5, 4.0}, {0.0, 0.0, 0.0}, 0.7, 3.0);
    CHECK(mu_semiparametric(Eigen::VectorXd::Constant(1, -2.0), zero2) == doctest::Approx(3.0).epsilon(1e-14));

    const CoxFit two = step_fit({1.0, 2.0}, {0.41421, 0.3}, 0.0, 2.0);
    CHECK(mu_semiparametric(Eigen::VectorXd::Zero(1), two) == doctest::Approx(1.0 + std::exp(-0.41421)).epsilon(1e-12));
    // 1 + e^{-0.41421} = 1.66086 by direct substitution.
    CHECK(mu_semiparametric(Eigen::VectorXd::Zero(1), two) == doctest::Approx(1.66086).epsilon(1e-5));

    // Two-point grid: mu = t1 + (t2 ^ xi - t1) exp(-lambda1 e^{x gamma}) for every x.
    const CoxFit g = step_fit({1.0, 2.0}, {0.41421, 0.3}, 0.8, 1.7);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z;
    double prev = 1e300;
    for (int i = 0; i < 20; ++i) {
      const double x = z(rng);
      CHECK(mu_semiparametric(Eigen::VectorXd::Constant(1, x), g) ==
            doctest::Approx(1.0 + 0.7 * std::exp(-0.41421 * std::exp(0.8 * x))).epsilon(1e-12));
    }
    for (double x = -3; x <= 3; x += 0.5) {
      const double m = mu_semiparametric(Eigen::VectorXd::Constant(1, x), g);
      CHECK(m < prev);
      CHECK(m > 0.0);
      prev = m;
    }
  }

  TEST_CASE("mu_weibull closed forms") {
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 1.0);
    CHECK(mu_weibull(x, Eigen::VectorXd::Zero(1), 1.0, 1.0, 30.0) == doctest::Approx(1.0 - std::exp(-30.0)).epsilon(1e-13));
    for (double g : {-1.0, 0.3, 2.0})
      for (double k2 : {0.5, 3.0}) {
        const double rho = std::exp(g) / k2;
        CHECK(mu_weibull(x, Eigen::VectorXd::Constant(1, g), 1.0, k2, 7.0) ==
              doctest::Approx((1.0 - std::exp(-rho * 7.0)) / rho).epsilon(1e-12));
      }
    CHECK(mu_weibull(x, Eigen::VectorXd::Constant(1, 0.5), 2.0, 1.0, 30.0) ==
          doctest::Approx(quad_mu(0.5, 2.0, 1.0, 30.0)).epsilon(1e-12));
  }

  TEST_CASE("mu_weibull matches adaptive quadrature on random parameters") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> k1d(0.5, 3.0), lk2(-1.0, 2.5), eta(-3.0, 3.0), xid(1.0, 40.0);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const double k1 = k1d(rng), k2 = std::exp(lk2(rng)), e = eta(rng), xi = xid(rng);
      const double got = mu_weibull(Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, e), k1, k2, xi);
      const double want = quad_mu(e, k1, k2, xi);
      worst = std::max(worst, std::abs(got - want) / want);
    }
    CHECK(worst <= 1e-10);
  }

  TEST_CASE("pseudo_loglik trivial value and closed-form stationarity") {
    const Cohort c({testing::control({0.0}), testing::incident({0.0}, 1.0, 1), testing::prevalent({0.0}, 0.5, 1.0, 1)});
    const Design d = make_design(c);
    CHECK(pseudo_loglik(Eigen::Vector3d::Zero(), d, Eigen::Vector3d::Ones()) == doctest::Approx(-3 * std::log(3.0)).epsilon(1e-14));
    CHECK(pseudo_loglik(Eigen::Vector3d::Zero(), c, Eigen::Vector3d::Ones()) == doctest::Approx(-3.29584).epsilon(1e-5));

    const Cohort sim = simulate_cohort(testing::small_config(0.5, 50), 3);
    const Design ds = make_design(sim);
    const double cst = 2.7;
    const Eigen::VectorXd mu = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(ds.size()), cst);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(4);
    theta[0] = std::log(double(ds.n1) / double(ds.n0));
    theta[1] = std::log(double(ds.n2) / (double(ds.n0) * cst));
    Eigen::VectorXd grad;
    pseudo_loglik(theta, ds, mu, &grad);
    CHECK(std::abs(grad[0]) <= 1e-10);
    CHECK(std::abs(grad[1]) <= 1e-10);
  }

  TEST_CASE("pseudo_loglik derivatives and concavity") {
    const Cohort sim = simulate_cohort(testing::small_config(0.5, 60), 9);
    const Design d = make_design(sim);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    Eigen::VectorXd mu(static_cast<Eigen::Index>(d.size()));
    for (Eigen::Index i = 0; i < mu.size(); ++i) mu[i] = u(rng);
    std::normal_distribution<double> z(0.0, 0.8);
    for (int r = 0; r < 10; ++r) {
      Eigen::VectorXd th(4);
      for (Eigen::Index j = 0; j < 4; ++j) th[j] = z(rng);
      Eigen::VectorXd g;
      Eigen::MatrixXd h;
      pseudo_loglik(th, d, mu, &g, &h);
      const auto f = [&](const Eigen::VectorXd& v) { return pseudo_loglik(v, d, mu); };
      const Eigen::VectorXd fd = testing::fd_gradient(f, th);
      for (Eigen::Index j = 0; j < 4; ++j) CHECK(std::abs(g[j] - fd[j]) <= 1e-6 * std::max(1.0, std::abs(fd[j])));
      for (Eigen::Index j = 0; j < 4; ++j) {
        const Eigen::VectorXd col = testing::fd_gradient(
            [&](const Eigen::VectorXd& v) {
              Eigen::VectorXd gg;
              pseudo_loglik(v, d, mu, &gg);
              return gg[j];
            },
            th);
        for (Eigen::Index k = 0; k < 4; ++k) CHECK(std::abs(h(j, k) - col[k]) <= 1e-5 * std::max(1.0, std::abs(col[k])));
      }
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
      CHECK(es.eigenvalues().maxCoeff() <= 1e-10);
    }
  }

  TEST_CASE("two-step fits reproduce the sample fractions") {
    for (Method m : {Method::TwoStepCox, Method::TwoStepEM}) {
      const Cohort sim = simulate_cohort(testing::small_config(0.5, 120), 77);
      const TiltFit fit = fit_two_step(sim, m);
      const Design d = make_design(sim);
      Eigen::VectorXd g;
      pseudo_loglik(fit.theta(), d, fit.mu, &g);
      CHECK(g.cwiseAbs().maxCoeff() <= 1e-8);
      double s1 = 0.0, s2 = 0.0;
      for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
        const double w1 = std::exp(fit.alpha + d.x.row(i).dot(fit.beta));
        const double w2 = std::exp(fit.nu + d.x.row(i).dot(fit.beta)) * fit.mu[i];
        s1 += w1 / (1 + w1 + w2);
        s2 += w2 / (1 + w1 + w2);
      }
      CHECK(s1 == doctest::Approx(double(d.n1)).epsilon(1e-8));
      CHECK(s2 == doctest::Approx(double(d.n2)).epsilon(1e-8));
      CHECK(fit.source == m);
      REQUIRE(fit.cov.rows() == 4);
      CHECK((fit.cov - fit.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.cov);
      CHECK(es.eigenvalues().minCoeff() >= 0.0);
      CHECK(fit.cov_approximate == (m == Method::TwoStepEM));
    }
  }

  TEST_CASE("complete separation is reported") {
    std::vector<Subject> s;
    for (int i = 0; i < 10; ++i) s.push_back(testing::control({-1.0 - 0.1 * i}));
    for (int i = 0; i < 10; ++i) s.push_back(testing::incident({1.0 + 0.1 * i}, 1.0 + i, 1));
    const Design d = make_design(Cohort(s));
    try {
      fit_tilt(d, Eigen::VectorXd::Ones(20));
      FAIL("expected separation");
    } catch (const Error& e) {
      CHECK(e.code() == "separation");
    }
  }

  TEST_CASE("IP-CC without prevalent cases is logistic regression") {
    SimConfig cfg = testing::small_config(0.5, 200);
    cfg.n2 = 0;
    const Cohort c = simulate_cohort(cfg, 8);
    const JointFit fit = fit_ipcc(c);
    const Eigen::VectorXd oracle = logistic_oracle(c);
    CHECK(fit.alpha == doctest::Approx(oracle[0]).epsilon(1e-5));
    CHECK(std::abs(fit.beta[0] - oracle[1]) <= 1e-5);
    CHECK(std::abs(fit.beta[1] - oracle[2]) <= 1e-5);
  }

  TEST_CASE("joint and IP-CC gradients match finite differences") {
    const Cohort c = simulate_cohort(testing::small_config(0.5, 60), 13);
    const ParametricData d = make_parametric_data(c);
    std::mt19937_64 rng(99);
    for (int which = 0; which < 2; ++which) {
      for (int r = 0; r < 10; ++r) {
        const Eigen::VectorXd par = random_par(rng, 2);
        Eigen::VectorXd g;
        const auto f = [&](const Eigen::VectorXd& v) {
          return which == 0 ? joint_loglik(v, d, 30.0) : ipcc_loglik(v, d, 30.0);
        };
        if (which == 0) joint_loglik(par, d, 30.0, &g);
        else ipcc_loglik(par, d, 30.0, &g);
        const Eigen::VectorXd fd = testing::fd_gradient(f, par, 1e-6);
        for (Eigen::Index j = 0; j < par.size(); ++j)
          CHECK(std::abs(g[j] - fd[j]) <= 1e-6 * std::max(1.0, std::abs(fd[j])));
      }
    }
  }

  TEST_CASE("parametric likelihoods are finite at the truth") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      for (double cens : {0.1, 0.9}) {
        const ParametricData d = make_parametric_data(simulate_cohort(testing::small_config(cens, 100), seed));
        Eigen::VectorXd par(8);
        par << 0.0, 0.0, 1.0, -1.0, 1.0, -1.0, 0.0, 0.0;
        CHECK(std::isfinite(joint_loglik(par, d, 30.0)));
        CHECK(std::isfinite(ipcc_loglik(par, d, 30.0)));
      }
    }
  }

  TEST_CASE("parametric fits recover the Weibull parameters roughly") {
    const Cohort c = simulate_cohort(testing::small_config(0.1, 300), 5);
    const JointFit j = fit_joint(c);
    CHECK(j.method == Method::Joint);
    CHECK(j.k1 == doctest::Approx(1.0).epsilon(0.15));
    CHECK(j.k2 == doctest::Approx(1.0).epsilon(0.2));
    CHECK(j.beta[0] == doctest::Approx(1.0).epsilon(0.3));
    REQUIRE(j.cov.rows() == 8);
    CHECK((j.cov.diagonal().array() > 0.0).all());
    Eigen::VectorXd g;
    Eigen::VectorXd par(8);
    par << j.alpha, j.nu, j.beta, j.gamma, std::log(j.k1), std::log(j.k2);
    joint_loglik(par, make_parametric_data(c), 30.0, &g);
    CHECK(g.cwiseAbs().maxCoeff() <= 1e-4);
  }

  TEST_CASE("method names round trip") {
    for (Method m : {Method::TwoStepEM, Method::TwoStepCox, Method::Joint, Method::IPCC})
      CHECK(parse_method(to_string(m)) == m);
    CHECK_THROWS_AS(parse_method("lasso"), Error);
  }
}
