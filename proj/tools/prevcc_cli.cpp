#include "prevcc/data.hpp"
#include "prevcc/error.hpp"
#include "prevcc/methods.hpp"
#include "prevcc/parallel.hpp"
#include "prevcc/reference.hpp"
#include "prevcc/sim.hpp"
#include "prevcc/variance.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace prevcc;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kNumericalError = 3;

struct Args {
  std::string input, output, config, table = "t1", xi_rule = "tk";
  std::vector<std::string> methods;
  std::vector<double> censoring;
  int B = 500;
  std::size_t reps = 200;
  std::uint64_t seed = 1;
  int workers = 0;
  double xi = 30.0;
};

int workers_of(const Args& a) { return a.workers > 0 ? a.workers : default_workers(); }

// JSON has no NaN; absent values are written as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string full(double v) { return std::isfinite(v) ? fmt::format("{:.17g}", v) : ""; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) input_error("io_error", "cannot write " + path);
  f << text;
  if (!f) input_error("io_error", "write failed for " + path);
}

bool is_csv(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
}

std::vector<Method> methods_of(const Args& a) {
  if (a.methods.empty())
    return {Method::TwoStepEM, Method::TwoStepCox, Method::Joint, Method::IPCC};
  std::vector<Method> out;
  for (const auto& m : a.methods) out.push_back(parse_method(m));
  return out;
}

MethodOptions fit_options(const Args& a) {
  MethodOptions o;
  const XiHatRule rule = a.xi_rule == "prevalent-max" ? XiHatRule::PrevalentMax : XiHatRule::LastEventTime;
  o.two_step.xi_rule = rule;
  o.two_step.em.xi_rule = rule;
  o.two_step.cox.xi_rule = rule;
  o.parametric.xi = a.xi;
  return o;
}

SimConfig table_config(const std::string& table, double censoring) {
  SimConfig cfg = table1_config(censoring);
  if (table == "s3") cfg.beta.setZero();
  else if (table != "t1") input_error("unknown_table", table);
  return cfg;
}

json estimate_json(const Estimate& e) {
  json params = json::array();
  for (std::size_t j = 0; j < e.names.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    params.push_back({{"name", e.names[j]}, {"estimate", number(e.value[jj])}, {"se", number(e.se[jj])}});
  }
  return {{"method", std::string(to_string(e.method))},
          {"parameters", params},
          {"se_approximate", e.se_approximate}};
}

std::string estimate_text(const Estimate& e) {
  std::string out = fmt::format("{}{}\n", to_string(e.method), e.se_approximate ? " (approximate SE)" : "");
  out += fmt::format("  {:<10}{:>12}{:>12}\n", "parameter", "estimate", "se");
  for (std::size_t j = 0; j < e.names.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double se = e.se[jj];
    out += fmt::format("  {:<10}{:>12.4f}{:>12}\n", e.names[j], e.value[jj],
                       std::isfinite(se) ? fmt::format("{:.4f}", se) : "");
  }
  return out;
}

int cmd_simulate(const Args& a) {
  SimConfig cfg = a.config.empty() ? table_config(a.table, a.censoring.empty() ? 0.1 : a.censoring.front())
                                   : load_sim_config(a.config);
  const Cohort c = simulate_cohort(cfg, a.seed);
  const std::string text = format_cohort(c);
  if (a.output.empty()) std::cout << text;
  else write_text(a.output, text);
  const CensoringRate cr = censoring_rate(c);
  std::cerr << fmt::format("simulated n0={} n1={} n2={}; censored incident {:.4f}, prevalent {:.4f}\n",
                           c.n0(), c.n1(), c.n2(), cr.incident, cr.prevalent);
  return kOk;
}

int cmd_fit(const Args& a) {
  const Cohort c = load_cohort(a.input);
  validate_cohort(c);
  const MethodOptions opts = fit_options(a);
  std::string human, machine, csv = "method,parameter,estimate,se\n";
  for (Method m : methods_of(a)) {
    const Estimate e = fit_method(c, m, opts);
    human += estimate_text(e);
    machine += estimate_json(e).dump() + '\n';
    for (std::size_t j = 0; j < e.names.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      csv += fmt::format("{},{},{},{}\n", to_string(m), e.names[j], full(e.value[jj]), full(e.se[jj]));
    }
  }
  std::cout << human;
  if (a.output.empty()) std::cout << machine;
  else write_text(a.output, is_csv(a.output) ? csv : machine);
  return kOk;
}

int cmd_bootstrap(const Args& a) {
  const Cohort c = load_cohort(a.input);
  validate_cohort(c);
  MethodOptions opts = fit_options(a);
  opts.standard_errors = false;
  BootstrapOptions bo;
  bo.B = a.B;
  bo.seed = a.seed;
  bo.workers = workers_of(a);
  std::string human, machine, csv = "method,parameter,estimate,sd,normal_lo,normal_hi,percentile_lo,percentile_hi\n";
  for (Method m : methods_of(a)) {
    const auto names = parameter_names(m, c.p());
    const BootstrapResult r =
        bootstrap_cov(c, [&](const Cohort& s) { return fit_method(s, m, opts).value; }, bo);
    json params = json::array();
    human += fmt::format("{} bootstrap, B={}, failures={}\n", to_string(m), r.B, r.failures);
    human += fmt::format("  {:<10}{:>10}{:>10}{:>22}{:>22}\n", "parameter", "estimate", "sd", "normal 95%",
                         "percentile 95%");
    for (std::size_t j = 0; j < names.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      human += fmt::format("  {:<10}{:>10.4f}{:>10.4f}{:>22}{:>22}\n", names[j], r.estimate[jj], r.sd[jj],
                           fmt::format("({:.4f}, {:.4f})", r.normal_lo[jj], r.normal_hi[jj]),
                           fmt::format("({:.4f}, {:.4f})", r.percentile_lo[jj], r.percentile_hi[jj]));
      params.push_back({{"name", names[j]},
                        {"estimate", number(r.estimate[jj])},
                        {"sd", number(r.sd[jj])},
                        {"normal_ci", {number(r.normal_lo[jj]), number(r.normal_hi[jj])}},
                        {"percentile_ci", {number(r.percentile_lo[jj]), number(r.percentile_hi[jj])}}});
      csv += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(m), names[j], full(r.estimate[jj]), full(r.sd[jj]),
                         full(r.normal_lo[jj]), full(r.normal_hi[jj]), full(r.percentile_lo[jj]),
                         full(r.percentile_hi[jj]));
    }
    machine += json{{"method", std::string(to_string(m))},
                    {"B", r.B},
                    {"failures", r.failures},
                    {"seed", a.seed},
                    {"parameters", params}}
                   .dump() +
               '\n';
  }
  std::cout << human;
  if (a.output.empty()) std::cout << machine;
  else write_text(a.output, is_csv(a.output) ? csv : machine);
  return kOk;
}

int cmd_replicate(const Args& a) {
  const std::vector<double> levels = a.censoring.empty() ? std::vector<double>{0.1, 0.5, 0.9} : a.censoring;
  const auto methods = methods_of(a);
  StudyOptions so;
  so.reps = a.reps;
  so.seed = a.seed;
  so.workers = workers_of(a);
  so.fit = fit_options(a);
  so.fit.standard_errors = false;
  std::string human, csv = "censoring,method,parameter,ref_est,est,ref_sd,sd,n\n";
  for (double cens : levels) {
    const SimConfig cfg = table_config(a.table, cens);
    const StudyResult res = run_study(cfg, methods, so);
    human += fmt::format("{} censoring, {} replications, seed {}\n", fmt::format("{:.0f}%", cens * 100), a.reps,
                         a.seed);
    human += fmt::format("  {:<14}{:<8}{:>9}{:>9}{:>9}{:>9}\n", "method", "param", "ref Est", "Est", "ref SD", "SD");
    for (Method m : methods) {
      for (const auto& ref : reference_values(a.table, cens, m)) {
        const SummaryRow* r = res.table.find(m, ref.parameter);
        const double est = r ? r->est : NAN;
        const double sd = r && r->sd ? *r->sd : NAN;
        human += fmt::format("  {:<14}{:<8}{:>9.2f}{:>9.4f}{:>9.2f}{:>9.4f}\n", to_string(m), ref.parameter,
                             ref.est, est, ref.sd, sd);
        csv += fmt::format("{},{},{},{},{},{},{},{}\n", cens, to_string(m), ref.parameter, ref.est, full(est), ref.sd,
                           full(sd), r ? r->n : 0);
      }
      for (const auto& [fm, fails] : res.table.failures)
        if (fm == m && fails)
          human += fmt::format("  {} of {} fits failed for {}{}\n", fails, a.reps, to_string(m),
                               res.table.flagged(m) ? " (flagged)" : "");
    }
  }
  std::cout << human;
  if (!a.output.empty()) write_text(a.output, csv);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Case-control log-odds ratios with incident and prevalent cases"};
  app.require_subcommand(1);
  Args a;

  const auto method_check = CLI::IsMember({"two-step-em", "two-step-cox", "joint", "ipcc"});
  const auto rule_check = CLI::IsMember({"tk", "prevalent-max"});
  const auto table_check = CLI::IsMember({"t1", "s3"});

  auto* sim = app.add_subcommand("simulate", "Write a simulated cohort as CSV");
  sim->add_option("--config", a.config, "key = value scenario file")->check(CLI::ExistingFile);
  sim->add_option("--table", a.table, "preset design when no config is given")->check(table_check);
  sim->add_option("--censoring", a.censoring, "censoring level of the preset (0.1, 0.5, 0.9)")->expected(1);
  sim->add_option("--seed", a.seed);
  sim->add_option("--output", a.output, "cohort CSV (default stdout)");

  auto* fit = app.add_subcommand("fit", "Fit one or more estimators to a cohort CSV");
  auto* bs = app.add_subcommand("bootstrap", "Stratified bootstrap of one or more estimators");
  for (auto* sc : {fit, bs}) {
    sc->add_option("--input", a.input, "cohort CSV")->required()->check(CLI::ExistingFile);
    sc->add_option("--method", a.methods, "estimator (repeatable; default all)")->check(method_check);
    sc->add_option("--output", a.output, "results file; .csv for CSV, otherwise JSON lines");
    sc->add_option("--xi", a.xi, "study window for the parametric methods")->check(CLI::PositiveNumber);
    sc->add_option("--xi-hat-rule", a.xi_rule, "support bound rule for the semiparametric fits")->check(rule_check);
  }
  bs->add_option("--B", a.B, "bootstrap replicates")->check(CLI::Range(2, 1000000));
  bs->add_option("--seed", a.seed);
  bs->add_option("--workers", a.workers, "threads (default PREVCC_THREADS or 1)");

  auto* rep = app.add_subcommand("replicate-table", "Monte Carlo replication of a published table");
  rep->add_option("--table", a.table)->check(table_check);
  rep->add_option("--censoring", a.censoring, "censoring levels (default 0.1 0.5 0.9)");
  rep->add_option("--reps", a.reps)->check(CLI::PositiveNumber);
  rep->add_option("--seed", a.seed);
  rep->add_option("--workers", a.workers, "threads (default PREVCC_THREADS or 1)");
  rep->add_option("--method", a.methods, "estimator (repeatable; default all)")->check(method_check);
  rep->add_option("--output", a.output, "CSV comparison table");
  rep->add_option("--xi", a.xi)->check(CLI::PositiveNumber);
  rep->add_option("--xi-hat-rule", a.xi_rule)->check(rule_check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (sim->parsed()) return cmd_simulate(a);
    if (fit->parsed()) return cmd_fit(a);
    if (bs->parsed()) return cmd_bootstrap(a);
    return cmd_replicate(a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::Input ? kInputError : kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalError;
  }
}
