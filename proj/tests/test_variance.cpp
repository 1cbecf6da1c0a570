#include "helpers.hpp"

#include "prevcc/cox_lt.hpp"
#include "prevcc/error.hpp"
#include "prevcc/parallel.hpp"
#include "prevcc/sim.hpp"
#include "prevcc/tilt.hpp"
#include "prevcc/variance.hpp"

#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>

using namespace prevcc;

namespace {

std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "ok";
}

// Three-group multinomial logit with shared slopes and a log mu offset for
// the prevalent group, fitted by Newton's method. Returns the inverse of the
// observed information at the optimum.
Eigen::MatrixXd multinomial_oracle_cov(const Cohort& c, double log_mu) {
  const auto p = static_cast<Eigen::Index>(c.p());
  const auto q = p + 2;
  Eigen::VectorXd th = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd info(q, q);
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(q);
    info.setZero();
    for (const auto& s : c.subjects()) {
      const double xb = s.x.dot(th.tail(p));
      const double l1 = th[0] + xb, l2 = th[1] + log_mu + xb;
      const double den = 1.0 + std::exp(l1) + std::exp(l2);
      const double p1 = std::exp(l1) / den, p2 = std::exp(l2) / den;
      // Design rows for the two non-reference categories.
      Eigen::VectorXd z1 = Eigen::VectorXd::Zero(q), z2 = Eigen::VectorXd::Zero(q);
      z1[0] = 1.0;
      z1.tail(p) = s.x;
      z2[1] = 1.0;
      z2.tail(p) = s.x;
      const double y1 = s.group == Group::Incident, y2 = s.group == Group::Prevalent;
      g += (y1 - p1) * z1 + (y2 - p2) * z2;
      const Eigen::VectorXd m = p1 * z1 + p2 * z2;
      info += p1 * z1 * z1.transpose() + p2 * z2 * z2.transpose() - m * m.transpose();
    }
    const Eigen::VectorXd step = info.ldlt().solve(g);
    th += step;
    if (step.cwiseAbs().maxCoeff() < 1e-12) break;
  }
  return info.inverse();
}

TwoStepOptions cox_only() {
  TwoStepOptions o;
  o.sandwich = false;
  return o;
}

}  // namespace

TEST_SUITE("variance") {
  TEST_CASE("one subject carries all the mass") {
    const CaseData cd = case_data(Cohort({testing::incident({}, 1.0, 1)}));
    CoxFit fit;
    fit.grid = event_grid(cd);
    fit.gamma = Eigen::VectorXd(0);
    fit.lambda = Eigen::VectorXd::Ones(1);
    const InfluenceSet inf = influence_contributions(cd, fit);
    REQUIRE(inf.d_Lambda.rows() == 1);
    CHECK(inf.d_Lambda(0, 0) == doctest::Approx(0.0).scale(1.0));
    CHECK(inf.d_lambda(0, 0) == doctest::Approx(0.0).scale(1.0));
  }

  TEST_CASE("gamma influences sum to zero") {
    for (double cens : {0.1, 0.5, 0.9}) {
      const CaseData cd = case_data(simulate_cohort(testing::small_config(cens, 150), 7));
      const CoxFit fit = fit_cox_lt(cd);
      const InfluenceSet inf = influence_contributions(cd, fit);
      CHECK(inf.d_gamma.colwise().sum().cwiseAbs().maxCoeff() <= 1e-8);
      CHECK(inf.d_gamma.rows() == static_cast<Eigen::Index>(cd.size()));
      CHECK(inf.cohort_index == cd.cohort_index);
    }
  }

  TEST_CASE("gamma influences agree with the jackknife") {
    // The gap is a second-order term that shrinks like 1/n: about 6% at 400
    // cases and 2% at 2000.
    SimConfig cfg = testing::small_config(0.5, 1000);
    cfg.n0 = 10;
    const Cohort c = simulate_cohort(cfg, 15);
    const CaseData cd = case_data(c);
    REQUIRE(cd.size() == 2000);
    const CoxFit fit = fit_cox_lt(cd);
    const InfluenceSet inf = influence_contributions(cd, fit);

    const auto n = static_cast<Eigen::Index>(cd.size());
    Eigen::MatrixXd jack(n, fit.gamma.size());
    std::vector<Subject> cases;
    for (std::size_t idx : cd.cohort_index) cases.push_back(c[idx]);
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<Subject> loo = cases;
      loo.erase(loo.begin() + i);
      const CoxFit f = fit_cox_lt(case_data(Cohort(loo)));
      jack.row(i) = (double(n - 1) * (fit.gamma - f.gamma)).transpose();
    }
    const double rel = (inf.d_gamma - jack).norm() / jack.norm();
    CHECK(rel <= 0.05);
  }

  TEST_CASE("singular information is reported") {
    const CaseData cd = case_data(Cohort({testing::incident({0.0}, 1.0, 1), testing::incident({0.0}, 2.0, 1)}));
    CoxFit fit;
    fit.grid = event_grid(cd);
    fit.gamma = Eigen::VectorXd::Zero(1);
    fit.lambda = breslow_jumps(cd, fit.grid, fit.gamma);
    CHECK(code_of([&] { influence_contributions(cd, fit); }) == "singular_information");
  }

  TEST_CASE("sandwich is symmetric positive semidefinite") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      const double cens = seed % 3 == 0 ? 0.9 : (seed % 3 == 1 ? 0.1 : 0.5);
      const Cohort c = simulate_cohort(testing::small_config(cens, 150), seed);
      for (Method m : {Method::TwoStepCox, Method::TwoStepEM}) {
        const TiltFit t = fit_two_step(c, m);
        REQUIRE(t.cov.rows() == 4);
        CHECK((t.cov - t.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * t.cov.cwiseAbs().maxCoeff());
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t.cov);
        CHECK(es.eigenvalues().minCoeff() >= -1e-12 * es.eigenvalues().maxCoeff());
        CHECK(t.cov_approximate == (m == Method::TwoStepEM));
      }
    }
  }

  TEST_CASE("sandwich does not depend on subject order") {
    const Cohort c = simulate_cohort(testing::small_config(0.5, 150), 9);
    std::vector<Subject> s = c.subjects();
    std::mt19937_64 rng(4);
    std::shuffle(s.begin(), s.end(), rng);
    const TiltFit a = fit_two_step(c, Method::TwoStepCox);
    const TiltFit b = fit_two_step(Cohort(s), Method::TwoStepCox);
    CHECK((a.cov - b.cov).cwiseAbs().maxCoeff() <= 1e-9 * a.cov.cwiseAbs().maxCoeff());
    CHECK((a.theta() - b.theta()).cwiseAbs().maxCoeff() <= 1e-9);
  }

  TEST_CASE("with constant mu the sandwich matches the multinomial logit covariance") {
    SimConfig cfg = testing::small_config(0.5, 2000);
    const Cohort c = simulate_cohort(cfg, 33);
    const Design d = make_design(c);
    const CaseData cd = case_data(c);
    CoxFit surv = fit_cox_lt(cd);
    surv.gamma.setZero();
    const Eigen::VectorXd mu = mu_semiparametric_rows(d.x, surv);
    REQUIRE((mu.array() == mu[0]).all());

    TiltFit t = fit_tilt(d, mu);
    t.survival = surv;
    // Lambda held fixed: no step-one uncertainty.
    InfluenceSet none;
    none.d_gamma = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cd.size()), 2);
    none.d_lambda = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cd.size()), static_cast<Eigen::Index>(surv.grid.size()));
    none.d_Lambda = none.d_lambda;
    none.cohort_index = cd.cohort_index;
    const Eigen::MatrixXd sw = sandwich_cov(d, t, none);
    const Eigen::MatrixXd oracle = multinomial_oracle_cov(c, std::log(mu[0]));
    for (Eigen::Index j = 2; j < 4; ++j) CHECK(sw(j, j) == doctest::Approx(oracle(j, j)).epsilon(0.10));
    CHECK(sw(2, 3) == doctest::Approx(oracle(2, 3)).epsilon(0.15));
  }

  TEST_CASE("bootstrap is deterministic and independent of the worker count") {
    const Cohort c = simulate_cohort(testing::small_config(0.1, 80), 2);
    const Estimator est = [](const Cohort& b) { return fit_two_step(b, Method::TwoStepCox, cox_only()).theta(); };
    BootstrapOptions o;
    o.B = 30;
    o.seed = 99;
    const BootstrapResult a = bootstrap_cov(c, est, o);
    const BootstrapResult b = bootstrap_cov(c, est, o);
    o.workers = 4;
    const BootstrapResult w = bootstrap_cov(c, est, o);
    CHECK(a.replicates == b.replicates);
    CHECK(a.replicates == w.replicates);
    CHECK(a.cov == w.cov);
    CHECK(a.failures == 0);
    CHECK((a.percentile_lo.array() <= a.percentile_hi.array()).all());
    CHECK((a.sd.array() > 0.0).all());
    o.seed = 100;
    CHECK(bootstrap_cov(c, est, o).replicates != a.replicates);
  }

  TEST_CASE("bootstrap resamples keep the group sizes") {
    const Cohort c = simulate_cohort(testing::small_config(0.5, 40), 5);
    const Cohort r = bootstrap_resample(c, 3, 7);
    CHECK(r.n0() == c.n0());
    CHECK(r.n1() == c.n1());
    CHECK(r.n2() == c.n2());
    const Cohort r2 = bootstrap_resample(c, 3, 7);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i].x == r2[i].x);
  }

  TEST_CASE("bootstrap failures") {
    const Cohort c = simulate_cohort(testing::small_config(0.1, 30), 2);
    BootstrapOptions o;
    o.B = 1;
    const Estimator mean_x = [](const Cohort& b) {
      Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(b.p()));
      for (const auto& s : b.subjects()) m += s.x;
      return Eigen::VectorXd(m / double(b.size()));
    };
    CHECK(code_of([&] { bootstrap_cov(c, mean_x, o); }) == "invalid_bootstrap_size");

    o.B = 50;
    std::atomic<int> calls{0};
    const Estimator tenth = [&](const Cohort& b) {
      if (++calls % 10 == 0) numerical_error("not_converged");
      return mean_x(b);
    };
    const BootstrapResult r = bootstrap_cov(c, tenth, o);
    CHECK(r.failures == 5);
    CHECK(r.replicates.rows() == 45);

    std::atomic<int> calls2{0};
    const Estimator mostly = [&](const Cohort& b) {
      if (++calls2 > 1) numerical_error("not_converged");
      return mean_x(b);
    };
    CHECK(code_of([&] { bootstrap_cov(c, mostly, o); }) == "bootstrap_unstable");
  }
}

TEST_SUITE("coverage") {
  TEST_CASE("bootstrap intervals cover the truth on the table 1 design") {
    const SimConfig cfg = table1_config(0.1);
    const int reps = 200;
    // Hits per beta component, for normal and percentile intervals.
    int normal[2] = {0, 0}, percentile[2] = {0, 0};
    const Estimator est = [](const Cohort& b) { return fit_two_step(b, Method::TwoStepCox, cox_only()).theta(); };
    for (int r = 0; r < reps; ++r) {
      const Cohort c = simulate_cohort(cfg, 5000 + r);
      BootstrapOptions o;
      o.B = 100;
      o.seed = 9000 + r;
      o.workers = default_workers();
      const BootstrapResult b = bootstrap_cov(c, est, o);
      for (int k = 0; k < 2; ++k) {
        const Eigen::Index j = 2 + k;  // beta_k sits after (alpha, nu)
        const double truth = cfg.beta[k];
        normal[k] += b.normal_lo[j] <= truth && truth <= b.normal_hi[j];
        percentile[k] += b.percentile_lo[j] <= truth && truth <= b.percentile_hi[j];
      }
    }
    for (int k = 0; k < 2; ++k) {
      CAPTURE(k);
      CHECK(normal[k] >= 0.90 * reps);
      CHECK(percentile[k] >= 0.90 * reps);
      MESSAGE("beta", k + 1, " coverage: normal ", normal[k], "/", reps, ", percentile ", percentile[k], "/", reps);
    }
  }
}
