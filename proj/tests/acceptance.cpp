// Acceptance run: one PASS/FAIL line per criterion, details underneath.

#include "prevcc/cox_lt.hpp"
#include "prevcc/em_cox.hpp"
#include "prevcc/error.hpp"
#include "prevcc/methods.hpp"
#include "prevcc/parallel.hpp"
#include "prevcc/parametric.hpp"
#include "prevcc/reference.hpp"
#include "prevcc/sim.hpp"
#include "prevcc/tilt.hpp"
#include "prevcc/variance.hpp"

#include <CLI11.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

using namespace prevcc;

namespace {

struct Report {
  std::vector<std::string> lines;
  bool ok = true;

  void check(bool pass, const std::string& what) {
    lines.push_back(fmt::format("    [{}] {}", pass ? "ok" : "miss", what));
    ok = ok && pass;
  }
};

const std::vector<Method> kAll{Method::TwoStepEM, Method::TwoStepCox, Method::Joint, Method::IPCC};

struct Run {
  std::size_t reps = 200;
  std::uint64_t seed = 20240611;
  int workers = 1;
};

SummaryTable study(const SimConfig& cfg, const Run& run, std::uint64_t salt, bool se = false) {
  StudyOptions o;
  o.reps = run.reps;
  o.seed = run.seed + salt;
  o.workers = run.workers;
  o.fit.standard_errors = se;
  const auto t0 = std::chrono::steady_clock::now();
  StudyResult r = run_study(cfg, kAll, o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  fmt::print("  study ({} reps, {:.0f} s)\n{}", run.reps, secs, summary_text(r.table));
  return r.table;
}

double est(const SummaryTable& t, Method m, const std::string& p) {
  const SummaryRow* r = t.find(m, p);
  return r ? r->est : std::nan("");
}

double sd(const SummaryTable& t, Method m, const std::string& p) {
  const SummaryRow* r = t.find(m, p);
  return r && r->sd ? *r->sd : std::nan("");
}

std::string name(Method m) { return std::string(to_string(m)); }

void failures(Report& rep, const SummaryTable& t) {
  for (const auto& [m, f] : t.failures) rep.check(!t.flagged(m), fmt::format("{}: {} failed fits", name(m), f));
}

// Checks `value` within `tol` of `target`.
void near(Report& rep, const std::string& label, double value, double target, double tol) {
  rep.check(std::abs(value - target) <= tol, fmt::format("{} = {:.4f}, target {:.4f} ± {:.2f}", label, value, target, tol));
}

void in_range(Report& rep, const std::string& label, double value, double lo, double hi) {
  rep.check(value >= lo && value <= hi, fmt::format("{} = {:.4f}, range [{:.2f}, {:.2f}]", label, value, lo, hi));
}

void sd_within(Report& rep, const std::string& label, double value, double target, double rel) {
  rep.check(std::abs(value - target) <= rel * target,
            fmt::format("{} = {:.4f}, target {:.4f} ± {:.0f}%", label, value, target, 100 * rel));
}

Report criterion1(const Run& run) {
  Report rep;
  const SummaryTable t = study(table1_config(0.1), run, 1);
  failures(rep, t);
  for (Method m : kAll)
    for (const ReferenceCell& c : reference_values("t1", 0.1, m)) {
      near(rep, fmt::format("Est {} {}", name(m), c.parameter), est(t, m, c.parameter), c.est, 0.02);
      sd_within(rep, fmt::format("SD {} {}", name(m), c.parameter), sd(t, m, c.parameter), c.sd, 0.30);
    }
  return rep;
}

Report criterion2(const Run& run) {
  Report rep;
  const SummaryTable t = study(table1_config(0.9), run, 2);
  failures(rep, t);
  in_range(rep, "EM beta1", est(t, Method::TwoStepEM, "beta1"), 0.80, 0.88);
  in_range(rep, "EM beta2", est(t, Method::TwoStepEM, "beta2"), -0.88, -0.81);
  near(rep, "EM gamma1", est(t, Method::TwoStepEM, "gamma1"), 0.78, 0.04);
  near(rep, "EM gamma2", est(t, Method::TwoStepEM, "gamma2"), -0.78, 0.04);
  near(rep, "Cox beta1", est(t, Method::TwoStepCox, "beta1"), 0.92, 0.04);
  near(rep, "Cox beta2", est(t, Method::TwoStepCox, "beta2"), -0.92, 0.04);
  near(rep, "Cox gamma1", est(t, Method::TwoStepCox, "gamma1"), 1.02, 0.04);
  near(rep, "Cox gamma2", est(t, Method::TwoStepCox, "gamma2"), -1.01, 0.04);
  for (Method m : {Method::Joint, Method::IPCC}) {
    near(rep, name(m) + " beta1", est(t, m, "beta1"), 1.0, 0.02);
    near(rep, name(m) + " beta2", est(t, m, "beta2"), -1.0, 0.02);
  }
  return rep;
}

struct Criterion3 {
  Report rep;
  SummaryTable table;
};

Criterion3 criterion3(const Run& run) {
  Criterion3 out;
  // Standard errors are kept: criterion 7 reads the mean sandwich SE from this study.
  out.table = study(table1_config(0.5), run, 3, true);
  const SummaryTable& t = out.table;
  failures(out.rep, t);
  for (const char* p : {"beta1", "beta2"}) {
    const double vj = std::pow(sd(t, Method::Joint, p), 2);
    auto ratio = [&](Method m) { return std::pow(sd(t, m, p), 2) / vj; };
    const double cox = ratio(Method::TwoStepCox), em = ratio(Method::TwoStepEM), ip = ratio(Method::IPCC);
    out.rep.check(cox >= 1.25, fmt::format("Var({0}, Cox)/Var({0}, joint) = {1:.3f} >= 1.25", p, cox));
    out.rep.check(em <= 1.15, fmt::format("Var({0}, EM)/Var({0}, joint) = {1:.3f} <= 1.15", p, em));
    out.rep.check(ip <= 1.15, fmt::format("Var({0}, IP-CC)/Var({0}, joint) = {1:.3f} <= 1.15", p, ip));
  }
  return out;
}

Report criterion4(const Run& run) {
  Report rep;
  SimConfig cfg = table1_config(0.5);
  cfg.beta.setZero();
  const SummaryTable t = study(cfg, run, 4);
  failures(rep, t);
  for (Method m : kAll)
    for (const char* p : {"beta1", "beta2"}) near(rep, fmt::format("{} {}", name(m), p), est(t, m, p), 0.0, 0.02);
  for (const char* p : {"beta1", "beta2"}) sd_within(rep, fmt::format("EM SD {}", p), sd(t, Method::TwoStepEM, p), 0.07, 0.30);
  return rep;
}

Eigen::VectorXd central_diff(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    // Near the cube root of machine epsilon: rounding of a sum of ~1000
    // log terms swamps the difference quotient at much smaller steps.
    const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

double grad_mismatch(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < fd.size(); ++j)
    worst = std::max(worst, std::abs(analytic[j] - fd[j]) / std::max(1.0, std::abs(fd[j])));
  return worst;
}

Report criterion5() {
  Report rep;
  {
    Subject s1, s2, s3;
    s1.group = s2.group = s3.group = Group::Incident;
    s1.x = Eigen::VectorXd::Constant(1, 1.0);
    s2.x = Eigen::VectorXd::Constant(1, 0.0);
    s3.x = Eigen::VectorXd::Constant(1, 1.0);
    s1.y = 1.0;
    s2.y = 2.0;
    s3.y = 3.0;
    s1.delta = s2.delta = s3.delta = 1;
    const CaseData cd = case_data(Cohort({s1, s2, s3}));
    double best = 0.0, best_ll = -1e300;
    for (int i = 0; i <= 100000; ++i) {
      const double g = -5.0 + 1e-4 * i;
      const double ll = partial_loglik(cd, Eigen::VectorXd::Constant(1, g));
      if (ll > best_ll) {
        best_ll = ll;
        best = g;
      }
    }
    const double g = fit_cox_lt(cd).gamma[0];
    rep.check(std::abs(g - best) <= 1e-4 && std::abs(g + 0.5 * std::log(2.0)) <= 1e-4,
              fmt::format("(a) gamma-hat {:.6f}, grid search {:.6f}, -ln2/2 = {:.6f}", g, best, -0.5 * std::log(2.0)));
  }
  {
    SimConfig cfg = table1_config(0.5);
    cfg.n2 = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const CaseData cd = case_data(simulate_cohort(cfg, seed));
      const CoxFit a = fit_cox_lt(cd), b = fit_cox_em(cd);
      worst = std::max({worst, (a.gamma - b.gamma).cwiseAbs().maxCoeff(), (a.lambda - b.lambda).cwiseAbs().maxCoeff()});
    }
    rep.check(worst <= 1e-6, fmt::format("(b) EM without prevalent cases vs partial likelihood: max diff {:.2e}", worst));
  }
  {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> k1d(0.5, 3.0), lk2(-1.0, 2.5), eta(-3.0, 3.0), xid(1.0, 40.0);
    boost::math::quadrature::tanh_sinh<double> quad;
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const double k1 = k1d(rng), k2 = std::exp(lk2(rng)), e = eta(rng), xi = xid(rng);
      auto f = [&](double t) { return std::exp(-std::pow(t / k2, k1) * std::exp(e)); };
      const double want = quad.integrate(f, 0.0, xi, 1e-14);
      const double got = mu_weibull(Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, e), k1, k2, xi);
      worst = std::max(worst, std::abs(got - want) / want);
    }
    rep.check(worst <= 1e-10, fmt::format("(c) mu_weibull vs quadrature, 50 draws: max rel err {:.2e}", worst));
  }
  {
    SimConfig cfg = table1_config(0.5);
    cfg.n0 = cfg.n1 = cfg.n2 = 100;
    const Cohort c = simulate_cohort(cfg, 5);
    const Design d = make_design(c);
    const ParametricData pd = make_parametric_data(c);
    const CoxFit cox = fit_cox_lt(case_data(c));
    const Eigen::VectorXd mu = mu_semiparametric_rows(d.x, cox);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z(0.0, 0.5);
    double w_pseudo = 0.0, w_joint = 0.0, w_ipcc = 0.0;
    for (int r = 0; r < 10; ++r) {
      Eigen::VectorXd th(4), par(8);
      for (Eigen::Index j = 0; j < 4; ++j) th[j] = z(rng);
      for (Eigen::Index j = 0; j < 8; ++j) par[j] = z(rng);
      Eigen::VectorXd g;
      pseudo_loglik(th, d, mu, &g);
      w_pseudo = std::max(w_pseudo, grad_mismatch(g, central_diff([&](const Eigen::VectorXd& v) { return pseudo_loglik(v, d, mu); }, th)));
      joint_loglik(par, pd, 30.0, &g);
      w_joint = std::max(w_joint, grad_mismatch(g, central_diff([&](const Eigen::VectorXd& v) { return joint_loglik(v, pd, 30.0); }, par)));
      ipcc_loglik(par, pd, 30.0, &g);
      w_ipcc = std::max(w_ipcc, grad_mismatch(g, central_diff([&](const Eigen::VectorXd& v) { return ipcc_loglik(v, pd, 30.0); }, par)));
    }
    rep.check(w_pseudo <= 1e-6, fmt::format("(d) pseudo_loglik gradient vs central differences: {:.2e}", w_pseudo));
    rep.check(w_joint <= 1e-6, fmt::format("(d) joint gradient vs central differences: {:.2e}", w_joint));
    rep.check(w_ipcc <= 1e-6, fmt::format("(d) IP-CC gradient vs central differences: {:.2e}", w_ipcc));
  }
  return rep;
}

Report criterion6(const Run& run) {
  Report rep;
  const double levels[] = {0.1, 0.5, 0.9};
  std::vector<int> violations(50, 0), steps(50, 0), failed(50, 0);
  parallel_for(50, run.workers, [&](std::size_t i) {
    try {
      const CaseData cd = case_data(simulate_cohort(table1_config(levels[i % 3]), run.seed + 600 + i));
      EmTrace trace;
      fit_cox_em(cd, {}, &trace);
      for (std::size_t s = 1; s < trace.loglik.size(); ++s)
        if (trace.loglik[s] < trace.loglik[s - 1] - 1e-10 * std::abs(trace.loglik[s - 1])) ++violations[i];
      steps[i] = static_cast<int>(trace.loglik.size());
    } catch (const Error&) {
      failed[i] = 1;
    }
  });
  int v = 0, s = 0, f = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    v += violations[i];
    s += steps[i];
    f += failed[i];
  }
  rep.check(f == 0, fmt::format("{} of 50 EM fits failed", f));
  rep.check(v == 0, fmt::format("{} ascent violations over {} recorded iterations", v, s));
  return rep;
}

Report criterion7(const Run& run, const SummaryTable& fifty) {
  Report rep;
  const SummaryRow* cox = fifty.find(Method::TwoStepCox, "beta1");
  const double se = cox && cox->mean_se ? *cox->mean_se : std::nan("");
  sd_within(rep, "mean sandwich SE, Cox beta1 (vs MC SD)", se, sd(fifty, Method::TwoStepCox, "beta1"), 0.15);

  const Cohort c = simulate_cohort(table1_config(0.5), run.seed + 700);
  TwoStepOptions o;
  o.sandwich = false;
  BootstrapOptions bo;
  bo.B = 200;
  bo.seed = run.seed + 701;
  bo.workers = run.workers;
  const BootstrapResult b = bootstrap_cov(c, [&](const Cohort& r) { return fit_two_step(r, Method::TwoStepEM, o).theta(); }, bo);
  rep.check(b.failures == 0 || b.failures <= 0.2 * bo.B, fmt::format("{} of 200 bootstrap fits failed", b.failures));
  sd_within(rep, "bootstrap SD, EM beta1 (vs MC SD)", b.sd[2], sd(fifty, Method::TwoStepEM, "beta1"), 0.20);
  return rep;
}

// Bitwise equality, with NaN matching NaN (absent standard errors are NaN).
bool identical(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

Report criterion8() {
  Report rep;
  SimConfig cfg = table1_config(0.5);
  cfg.n0 = cfg.n1 = cfg.n2 = 120;
  StudyOptions o;
  o.reps = 12;
  o.seed = 8;
  const StudyResult one = run_study(cfg, kAll, o);
  o.workers = 4;
  const StudyResult four = run_study(cfg, kAll, o);
  bool same = summary_csv(one.table) == summary_csv(four.table);
  for (std::size_t m = 0; m < kAll.size(); ++m)
    for (std::size_t r = 0; r < o.reps; ++r) {
      const auto& a = one.estimates[m][r];
      const auto& b = four.estimates[m][r];
      same = same && a.has_value() == b.has_value() && (!a || (identical(a->value, b->value) && identical(a->se, b->se)));
    }
  rep.check(same, "run_study, 1 vs 4 workers: identical estimates and summary CSV");

  const Cohort c = simulate_cohort(cfg, 81);
  BootstrapOptions bo;
  bo.B = 40;
  bo.seed = 82;
  auto fit = [](const Cohort& r) { return fit_method(r, Method::TwoStepEM, {{}, {}, false}).value; };
  const BootstrapResult a = bootstrap_cov(c, fit, bo);
  bo.workers = 4;
  const BootstrapResult b = bootstrap_cov(c, fit, bo);
  rep.check(a.replicates == b.replicates && a.cov == b.cov && a.percentile_lo == b.percentile_lo,
            "bootstrap_cov, 1 vs 4 workers: identical replicates, covariance and intervals");
  return rep;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8"};
  Run run;
  run.workers = default_workers();
  app.add_option("--reps", run.reps, "Monte Carlo replications per study");
  app.add_option("--seed", run.seed);
  app.add_option("--workers", run.workers, "threads (default PREVCC_THREADS or 1)");
  CLI11_PARSE(app, argc, argv);

  std::vector<std::pair<int, Report>> results;
  auto record = [&](int id, const std::string& title, Report rep) {
    fmt::print("criterion {} {}: {}\n", id, title, rep.ok ? "PASS" : "FAIL");
    for (const auto& l : rep.lines) fmt::print("{}\n", l);
    std::fflush(stdout);
    results.emplace_back(id, std::move(rep));
  };
  auto guarded = [&](int id, const std::string& title, const std::function<Report()>& f) {
    try {
      record(id, title, f());
    } catch (const std::exception& e) {
      Report rep;
      rep.check(false, fmt::format("aborted: {}", e.what()));
      record(id, title, rep);
    }
  };

  guarded(5, "oracle equivalences", [] { return criterion5(); });
  guarded(6, "EM ascent", [&] { return criterion6(run); });
  guarded(8, "determinism", [] { return criterion8(); });
  guarded(1, "Table 1, 10% censoring", [&] { return criterion1(run); });
  guarded(2, "Table 1, 90% censoring", [&] { return criterion2(run); });
  SummaryTable fifty;
  guarded(3, "relative efficiency at 50% censoring", [&] {
    Criterion3 c = criterion3(run);
    fifty = c.table;
    return c.rep;
  });
  guarded(4, "null case, 50% censoring", [&] { return criterion4(run); });
  guarded(7, "variance consistency", [&] { return criterion7(run, fifty); });

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  fmt::print("\nsummary\n");
  bool all = true;
  for (const auto& [id, rep] : results) {
    fmt::print("criterion {}: {}\n", id, rep.ok ? "PASS" : "FAIL");
    all = all && rep.ok;
  }
  return all ? 0 : 1;
}
