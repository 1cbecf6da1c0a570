#include "prevcc/sim.hpp"

#include "prevcc/error.hpp"
#include "prevcc/parallel.hpp"
#include "prevcc/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace prevcc {

Baseline Baseline::constant(double rate) {
  Baseline b;
  b.kind = Kind::ConstantRate;
  b.rate = rate;
  return b;
}

Baseline Baseline::step(std::vector<double> breakpoints, std::vector<double> values) {
  Baseline b;
  b.kind = Kind::StepFunction;
  b.breakpoints = std::move(breakpoints);
  b.values = std::move(values);
  return b;
}

Baseline Baseline::weibull(double k1, double k2) {
  Baseline b;
  b.kind = Kind::Weibull;
  b.k1 = k1;
  b.k2 = k2;
  return b;
}

double Baseline::cumulative(double t) const {
  switch (kind) {
    case Kind::ConstantRate: return rate * t;
    case Kind::Weibull: return std::pow(t / k2, k1);
    case Kind::StepFunction: {
      double h = 0.0, left = 0.0;
      for (std::size_t j = 0; j < values.size(); ++j) {
        const bool last = j + 1 == values.size();
        const double right = last ? t : std::min(t, breakpoints[j]);
        if (right > left) h += values[j] * (right - left);
        if (last || t <= breakpoints[j]) break;
        left = breakpoints[j];
      }
      return h;
    }
  }
  return 0.0;
}

double Baseline::inverse_cumulative(double h) const {
  switch (kind) {
    case Kind::ConstantRate: return h / rate;
    case Kind::Weibull: return k2 * std::pow(h, 1.0 / k1);
    case Kind::StepFunction: {
      double left = 0.0;
      for (std::size_t j = 0; j < values.size(); ++j) {
        const bool last = j + 1 == values.size();
        const double width = last ? std::numeric_limits<double>::infinity() : breakpoints[j] - left;
        const double mass = values[j] * width;
        if (last || h <= mass) return values[j] > 0.0 ? left + h / values[j] : std::numeric_limits<double>::infinity();
        h -= mass;
        left = breakpoints[j];
      }
      return std::numeric_limits<double>::infinity();
    }
  }
  return 0.0;
}

void validate_config(const SimConfig& cfg) {
  const auto p = cfg.beta.size();
  if (p == 0) input_error("invalid_config", "beta is empty");
  if (cfg.gamma.size() != p || cfg.cov_mean.size() != p || cfg.cov_cov.rows() != p || cfg.cov_cov.cols() != p)
    input_error("invalid_config", "beta, gamma, cov_mean and cov_cov dimensions differ");
  if (!cfg.cov_cov.isApprox(cfg.cov_cov.transpose()))
    input_error("invalid_config", "cov_cov is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(cfg.cov_cov);
  if (llt.info() != Eigen::Success) input_error("invalid_config", "cov_cov is not positive definite");
  if (!(cfg.xi > 0.0)) input_error("invalid_config", "xi must be positive");
  if (!(cfg.tau_incident > 0.0) || !(cfg.tau_prevalent > 0.0))
    input_error("invalid_config", "censoring bounds must be positive");
  if (cfg.oversample_factor < 1) input_error("invalid_config", "oversample_factor must be at least 1");
  const Baseline& b = cfg.baseline;
  switch (b.kind) {
    case Baseline::Kind::ConstantRate:
      if (!(b.rate > 0.0)) input_error("invalid_config", "rate must be positive");
      break;
    case Baseline::Kind::Weibull:
      if (!(b.k1 > 0.0) || !(b.k2 > 0.0)) input_error("invalid_config", "Weibull parameters must be positive");
      break;
    case Baseline::Kind::StepFunction:
      if (b.values.empty() || b.values.size() != b.breakpoints.size())
        input_error("invalid_config", "step baseline needs one value per breakpoint");
      for (std::size_t j = 0; j < b.values.size(); ++j) {
        if (!(b.values[j] >= 0.0)) input_error("invalid_config", "step values must be nonnegative");
        if (!(b.breakpoints[j] > (j ? b.breakpoints[j - 1] : 0.0)))
          input_error("invalid_config", "breakpoints must increase from 0");
      }
      if (!(b.values.back() > 0.0)) input_error("invalid_config", "last step value must be positive");
      break;
  }
}

SimConfig table1_config(double censoring) {
  SimConfig cfg;
  if (std::abs(censoring - 0.1) < 1e-9) {
    cfg.tau_incident = 5.0;
    cfg.tau_prevalent = 15.0;
  } else if (std::abs(censoring - 0.5) < 1e-9) {
    cfg.tau_incident = 0.6;
    cfg.tau_prevalent = 1.5;
  } else if (std::abs(censoring - 0.9) < 1e-9) {
    cfg.tau_incident = 0.05;
    cfg.tau_prevalent = 0.15;
  } else {
    input_error("invalid_censoring", fmt::format("{} is not one of 0.1, 0.5, 0.9", censoring));
  }
  return cfg;
}

Baseline supplementary_step_baseline(int which) {
  const std::vector<double> breaks{7.0, 14.0, 21.0, 30.0};
  if (which == 1) return Baseline::step(breaks, {1e-4, 1e-5, 2e-4, 0.5e-4});
  if (which == 2) return Baseline::step(breaks, {1e-5, 2e-4, 1e-5, 2e-4});
  input_error("invalid_baseline", fmt::format("no step baseline {}", which));
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_list(const std::string& key, const std::string& value) {
  std::string v = value;
  std::replace(v.begin(), v.end(), ',', ' ');
  std::istringstream in(v);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      input_error("invalid_config", fmt::format("{}: '{}' is not a number", key, tok));
    }
  }
  if (out.empty()) input_error("invalid_config", fmt::format("{} has no value", key));
  return out;
}

double parse_scalar(const std::string& key, const std::string& value) {
  const auto v = parse_list(key, value);
  if (v.size() != 1) input_error("invalid_config", fmt::format("{} expects one number", key));
  return v[0];
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  const double v = parse_scalar(key, value);
  if (v < 0 || v != std::floor(v)) input_error("invalid_config", fmt::format("{} must be a nonnegative integer", key));
  return static_cast<std::size_t>(v);
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += fmt::format("{}{:.17g}", i ? ", " : "", v[i]);
  return s;
}

std::string join(const std::vector<double>& v) { return join(to_vector(v)); }

}  // namespace

SimConfig parse_sim_config(const std::string& text) {
  SimConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::vector<double>> cov;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) input_error("invalid_config", fmt::format("line {}: expected key = value", lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "n0") cfg.n0 = parse_count(key, value);
    else if (key == "n1") cfg.n1 = parse_count(key, value);
    else if (key == "n2") cfg.n2 = parse_count(key, value);
    else if (key == "beta") cfg.beta = to_vector(parse_list(key, value));
    else if (key == "gamma") cfg.gamma = to_vector(parse_list(key, value));
    else if (key == "cov_mean") cfg.cov_mean = to_vector(parse_list(key, value));
    else if (key == "cov_cov") cov = parse_list(key, value);
    else if (key == "baseline") {
      if (value == "constant") cfg.baseline.kind = Baseline::Kind::ConstantRate;
      else if (value == "step") cfg.baseline.kind = Baseline::Kind::StepFunction;
      else if (value == "weibull") cfg.baseline.kind = Baseline::Kind::Weibull;
      else input_error("invalid_config", fmt::format("unknown baseline '{}'", value));
    } else if (key == "rate") cfg.baseline.rate = parse_scalar(key, value);
    else if (key == "breakpoints") cfg.baseline.breakpoints = parse_list(key, value);
    else if (key == "values") cfg.baseline.values = parse_list(key, value);
    else if (key == "k1") cfg.baseline.k1 = parse_scalar(key, value);
    else if (key == "k2") cfg.baseline.k2 = parse_scalar(key, value);
    else if (key == "xi") cfg.xi = parse_scalar(key, value);
    else if (key == "tau_incident") cfg.tau_incident = parse_scalar(key, value);
    else if (key == "tau_prevalent") cfg.tau_prevalent = parse_scalar(key, value);
    else if (key == "oversample_factor") cfg.oversample_factor = parse_count(key, value);
    else input_error("invalid_config", fmt::format("line {}: unknown key '{}'", lineno, key));
  }
  if (cov) {
    const auto p = cfg.beta.size();
    if (static_cast<Eigen::Index>(cov->size()) != p * p)
      input_error("invalid_config", "cov_cov needs p*p entries in row-major order");
    cfg.cov_cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(cov->data(), p, p);
  } else if (cfg.cov_cov.rows() != cfg.beta.size()) {
    cfg.cov_cov = Eigen::MatrixXd::Identity(cfg.beta.size(), cfg.beta.size());
  }
  if (cfg.cov_mean.size() != cfg.beta.size() && cfg.cov_mean.isZero())
    cfg.cov_mean = Eigen::VectorXd::Zero(cfg.beta.size());
  validate_config(cfg);
  return cfg;
}

SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) input_error("io_error", fmt::format("cannot read {}", path));
  std::ostringstream s;
  s << in.rdbuf();
  return parse_sim_config(s.str());
}

std::string format_sim_config(const SimConfig& cfg) {
  std::string out;
  out += fmt::format("n0 = {}\nn1 = {}\nn2 = {}\n", cfg.n0, cfg.n1, cfg.n2);
  out += fmt::format("beta = {}\ngamma = {}\ncov_mean = {}\n", join(cfg.beta), join(cfg.gamma), join(cfg.cov_mean));
  const Eigen::MatrixXd rm = cfg.cov_cov.transpose();
  out += fmt::format("cov_cov = {}\n", join(Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size()))));
  const Baseline& b = cfg.baseline;
  switch (b.kind) {
    case Baseline::Kind::ConstantRate: out += fmt::format("baseline = constant\nrate = {:.17g}\n", b.rate); break;
    case Baseline::Kind::StepFunction:
      out += fmt::format("baseline = step\nbreakpoints = {}\nvalues = {}\n", join(b.breakpoints), join(b.values));
      break;
    case Baseline::Kind::Weibull: out += fmt::format("baseline = weibull\nk1 = {:.17g}\nk2 = {:.17g}\n", b.k1, b.k2); break;
  }
  out += fmt::format("xi = {:.17g}\ntau_incident = {:.17g}\ntau_prevalent = {:.17g}\noversample_factor = {}\n",
                     cfg.xi, cfg.tau_incident, cfg.tau_prevalent, cfg.oversample_factor);
  return out;
}

double draw_survival(const Baseline& b, double eta, std::mt19937_64& rng) {
  std::exponential_distribution<double> expo(1.0);
  return b.inverse_cumulative(expo(rng) * std::exp(-eta));
}

namespace {

class CovariateSampler {
 public:
  CovariateSampler(const SimConfig& cfg) : cfg_(cfg), chol_(cfg.cov_cov.llt().matrixL()) {}

  Eigen::VectorXd control(std::mt19937_64& rng) const {
    Eigen::VectorXd z(cfg_.cov_mean.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = normal_(rng);
    return cfg_.cov_mean + chol_ * z;
  }

  // n draws from the tilted law f0(x) exp(x'beta), resampled with
  // replacement from a pool of oversample_factor * n control-law draws.
  std::vector<Eigen::VectorXd> tilted(std::size_t n, std::mt19937_64& rng) const {
    const std::size_t pool_size = std::max<std::size_t>(1, cfg_.oversample_factor * n);
    std::vector<Eigen::VectorXd> pool;
    pool.reserve(pool_size);
    std::vector<double> logw(pool_size);
    for (std::size_t k = 0; k < pool_size; ++k) {
      pool.push_back(control(rng));
      logw[k] = pool.back().dot(cfg_.beta);
    }
    const double m = *std::max_element(logw.begin(), logw.end());
    for (double& w : logw) w = std::exp(w - m);
    std::discrete_distribution<std::size_t> pick(logw.begin(), logw.end());
    std::vector<Eigen::VectorXd> out;
    out.reserve(n);
    for (std::size_t r = 0; r < n; ++r) out.push_back(pool[pick(rng)]);
    return out;
  }

 private:
  const SimConfig& cfg_;
  Eigen::MatrixXd chol_;
  mutable std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace

Cohort simulate_cohort(const SimConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  std::mt19937_64 rng(seed);
  CovariateSampler sampler(cfg);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Subject> subjects;
  subjects.reserve(cfg.n0 + cfg.n1 + cfg.n2);

  for (std::size_t i = 0; i < cfg.n0; ++i) {
    Subject s;
    s.group = Group::Control;
    s.x = sampler.control(rng);
    subjects.push_back(std::move(s));
  }

  for (auto& x : sampler.tilted(cfg.n1, rng)) {
    Subject s;
    s.group = Group::Incident;
    const double t = draw_survival(cfg.baseline, x.dot(cfg.gamma), rng);
    const double c = cfg.tau_incident * unif(rng);
    s.x = std::move(x);
    s.y = std::min(t, c);
    s.delta = t <= c ? 1 : 0;
    subjects.push_back(std::move(s));
  }

  std::size_t accepted = 0, attempts = 0;
  while (accepted < cfg.n2) {
    for (auto& x : sampler.tilted(cfg.n2, rng)) {
      ++attempts;
      const double t = draw_survival(cfg.baseline, x.dot(cfg.gamma), rng);
      const double a = cfg.xi * unif(rng);
      if (!(t > a)) continue;
      const double c = cfg.tau_prevalent * unif(rng);
      Subject s;
      s.group = Group::Prevalent;
      s.x = std::move(x);
      s.a = a;
      s.y = a + std::min(t - a, c);
      s.delta = t - a <= c ? 1 : 0;
      subjects.push_back(std::move(s));
      if (++accepted == cfg.n2) break;
    }
    if (accepted < cfg.n2 && attempts >= 100000 && accepted < 1e-4 * static_cast<double>(attempts))
      numerical_error("degenerate_truncation",
                      fmt::format("{} of {} prevalent draws survived their backward time", accepted, attempts));
  }
  return Cohort(std::move(subjects));
}

SimConfig calibrate_censoring(SimConfig cfg, double target, std::uint64_t seed, std::size_t n) {
  validate_config(cfg);
  if (!(target > 0.0 && target < 1.0)) input_error("invalid_censoring", "target must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  CovariateSampler sampler(cfg);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Event times to be censored at tau * U: incident totals and prevalent forward times.
  std::vector<double> inc, inc_u, prev, prev_u;
  for (auto& x : sampler.tilted(n, rng)) {
    inc.push_back(draw_survival(cfg.baseline, x.dot(cfg.gamma), rng));
    inc_u.push_back(unif(rng));
  }
  std::size_t attempts = 0;
  while (prev.size() < n) {
    for (auto& x : sampler.tilted(n, rng)) {
      ++attempts;
      const double t = draw_survival(cfg.baseline, x.dot(cfg.gamma), rng);
      const double a = cfg.xi * unif(rng);
      if (t > a) {
        prev.push_back(t - a);
        prev_u.push_back(unif(rng));
        if (prev.size() == n) break;
      }
    }
    if (prev.size() < n && attempts >= 100000 && static_cast<double>(prev.size()) < 1e-4 * static_cast<double>(attempts))
      numerical_error("degenerate_truncation", "prevalent acceptance below 1e-4");
  }

  auto solve = [&](const std::vector<double>& t, const std::vector<double>& u) {
    auto fraction = [&](double tau) {
      std::size_t cens = 0;
      for (std::size_t i = 0; i < t.size(); ++i) cens += tau * u[i] < t[i];
      return static_cast<double>(cens) / static_cast<double>(t.size());
    };
    // Censored fraction decreases in tau; bisect on log tau.
    double lo = -30.0, hi = 30.0;
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (fraction(std::exp(mid)) > target) lo = mid;
      else hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
  };
  cfg.tau_incident = solve(inc, inc_u);
  cfg.tau_prevalent = solve(prev, prev_u);
  return cfg;
}

CensoringRate censoring_rate(const Cohort& c) {
  double ci = 0, cp = 0;
  for (const auto& s : c.subjects()) {
    if (s.group == Group::Incident && s.delta && *s.delta == 0) ++ci;
    if (s.group == Group::Prevalent && s.delta && *s.delta == 0) ++cp;
  }
  return {c.n1() ? ci / static_cast<double>(c.n1()) : 0.0, c.n2() ? cp / static_cast<double>(c.n2()) : 0.0};
}

const SummaryRow* SummaryTable::find(Method m, const std::string& parameter) const {
  for (const auto& r : rows)
    if (r.method == m && r.parameter == parameter) return &r;
  return nullptr;
}

bool SummaryTable::flagged(Method m) const {
  for (const auto& [method, fails] : failures)
    if (method == m) return static_cast<double>(fails) > 0.1 * static_cast<double>(reps);
  return false;
}

StudyResult run_study(const SimConfig& cfg, const std::vector<Method>& methods, const StudyOptions& opts) {
  validate_config(cfg);
  if (opts.reps < 1) input_error("invalid_reps", "reps must be at least 1");
  StudyResult res;
  res.methods = methods;
  res.estimates.assign(methods.size(), std::vector<std::optional<Estimate>>(opts.reps));

  parallel_for(opts.reps, opts.workers, [&](std::size_t r) {
    Cohort c;
    try {
      c = simulate_cohort(cfg, derive_seed(opts.seed, r));
    } catch (const Error&) {
      return;
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      try {
        res.estimates[m][r] = fit_method(c, methods[m], opts.fit);
      } catch (const Error&) {
      }
    }
  });

  SummaryTable& t = res.table;
  t.reps = opts.reps;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const auto& reps = res.estimates[m];
    std::vector<const Estimate*> ok;
    for (const auto& e : reps)
      if (e) ok.push_back(&*e);
    t.failures.emplace_back(methods[m], opts.reps - ok.size());
    const auto names = parameter_names(methods[m], cfg.p());
    for (std::size_t j = 0; j < names.size(); ++j) {
      SummaryRow row;
      row.method = methods[m];
      row.parameter = names[j];
      row.n = ok.size();
      if (ok.empty()) {
        row.est = std::numeric_limits<double>::quiet_NaN();
        t.rows.push_back(row);
        continue;
      }
      const auto jj = static_cast<Eigen::Index>(j);
      double mean = 0.0;
      for (const Estimate* e : ok) mean += e->value[jj];
      mean /= static_cast<double>(ok.size());
      row.est = mean;
      if (ok.size() >= 2) {
        double ss = 0.0;
        for (const Estimate* e : ok) ss += (e->value[jj] - mean) * (e->value[jj] - mean);
        row.sd = std::sqrt(ss / static_cast<double>(ok.size() - 1));
      }
      double se = 0.0;
      std::size_t nse = 0;
      for (const Estimate* e : ok)
        if (std::isfinite(e->se[jj])) {
          se += e->se[jj];
          ++nse;
        }
      if (nse == ok.size()) row.mean_se = se / static_cast<double>(nse);
      t.rows.push_back(row);
    }
  }
  return res;
}

std::string summary_csv(const SummaryTable& t) {
  std::string out = "method,parameter,est,sd,mean_se,n,reps\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.17g}", *v) : std::string(); };
  for (const auto& r : t.rows)
    out += fmt::format("{},{},{:.17g},{},{},{},{}\n", to_string(r.method), r.parameter, r.est, opt(r.sd), opt(r.mean_se), r.n, t.reps);
  return out;
}

std::string summary_text(const SummaryTable& t) {
  std::vector<std::string> params;
  for (const auto& r : t.rows)
    if (std::find(params.begin(), params.end(), r.parameter) == params.end()) params.push_back(r.parameter);
  std::string out = fmt::format("{:<20}", "");
  for (const auto& p : params) out += fmt::format("{:>9}", p);
  out += '\n';
  for (const auto& [method, fails] : t.failures) {
    for (int stat = 0; stat < 3; ++stat) {
      const char* label = stat == 0 ? "Est" : stat == 1 ? "SD" : "SE";
      std::string line = fmt::format("{:<20}", fmt::format("{} ({})", label, to_string(method)));
      bool any = false;
      for (const auto& p : params) {
        const SummaryRow* r = t.find(method, p);
        std::optional<double> v;
        if (r) v = stat == 0 ? std::optional<double>(r->est) : stat == 1 ? r->sd : r->mean_se;
        if (v && std::isfinite(*v)) {
          line += fmt::format("{:>9.4f}", *v);
          any = true;
        } else {
          line += fmt::format("{:>9}", "");
        }
      }
      if (any) out += line + '\n';
    }
    if (fails) out += fmt::format("  {} of {} replications failed for {}{}\n", fails, t.reps, to_string(method),
                                  t.flagged(method) ? " (flagged)" : "");
  }
  return out;
}

}  // namespace prevcc
