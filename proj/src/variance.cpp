#include "prevcc/variance.hpp"

#include "prevcc/error.hpp"
#include "prevcc/parallel.hpp"
#include "prevcc/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

namespace prevcc {

InfluenceSet influence_contributions(const CaseData& cases, const CoxFit& fit) {
  const auto n = static_cast<Eigen::Index>(cases.size());
  const auto p = static_cast<Eigen::Index>(cases.p());
  const EventGrid& grid = fit.grid;
  const auto k = static_cast<Eigen::Index>(grid.size());
  if (fit.gamma.size() != p) input_error("dimension_mismatch", "gamma");

  // Risk-set sums at the fitted gamma via difference arrays over grid indices.
  Eigen::VectorXd e = (cases.x * fit.gamma).array().exp();
  std::vector<std::size_t> lo(static_cast<std::size_t>(n)), hi(static_cast<std::size_t>(n));
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(k + 1);
  Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(p, k + 1);
  for (Eigen::Index l = 0; l < n; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    lo[ul] = grid.count_le(cases.entry[l]);
    hi[ul] = grid.count_le(cases.exit[l]);
    if (hi[ul] <= lo[ul]) continue;
    s0[static_cast<Eigen::Index>(lo[ul])] += e[l];
    s0[static_cast<Eigen::Index>(hi[ul])] -= e[l];
    s1.col(static_cast<Eigen::Index>(lo[ul])) += e[l] * cases.x.row(l).transpose();
    s1.col(static_cast<Eigen::Index>(hi[ul])) -= e[l] * cases.x.row(l).transpose();
  }
  for (Eigen::Index j = 1; j <= k; ++j) {
    s0[j] += s0[j - 1];
    s1.col(j) += s1.col(j - 1);
  }
  Eigen::VectorXd lambda(k);
  Eigen::MatrixXd ebar(p, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (!(s0[j] > 0.0)) numerical_error("empty_risk_set", fmt::format("t = {}", grid.t[static_cast<std::size_t>(j)]));
    lambda[j] = grid.d[static_cast<std::size_t>(j)] / s0[j];
    ebar.col(j) = s1.col(j) / s0[j];
  }
  // cum0[j] = sum_{m<j} lambda_m, cum1[:, j] = sum_{m<j} lambda_m ebar_m
  Eigen::VectorXd cum0 = Eigen::VectorXd::Zero(k + 1);
  Eigen::MatrixXd cum1 = Eigen::MatrixXd::Zero(p, k + 1);
  for (Eigen::Index j = 0; j < k; ++j) {
    cum0[j + 1] = cum0[j] + lambda[j];
    cum1.col(j + 1) = cum1.col(j) + lambda[j] * ebar.col(j);
  }

  InfluenceSet out;
  out.cohort_index = cases.cohort_index;
  Eigen::MatrixXd score(n, p);
  for (Eigen::Index l = 0; l < n; ++l) {
    const auto a = static_cast<Eigen::Index>(lo[static_cast<std::size_t>(l)]);
    const auto b = static_cast<Eigen::Index>(std::max(lo[static_cast<std::size_t>(l)], hi[static_cast<std::size_t>(l)]));
    Eigen::VectorXd u = -e[l] * ((cum0[b] - cum0[a]) * cases.x.row(l).transpose() - (cum1.col(b) - cum1.col(a)));
    if (cases.delta[static_cast<std::size_t>(l)] == 1)
      u += cases.x.row(l).transpose() - ebar.col(static_cast<Eigen::Index>(hi[static_cast<std::size_t>(l)]) - 1);
    score.row(l) = u.transpose();
  }
  const double dn = static_cast<double>(n);
  if (p > 0) {
    Eigen::VectorXd sc;
    Eigen::MatrixXd h;
    partial_loglik(cases, fit.gamma, &sc, &h);
    out.info = -h / dn;
    Eigen::LLT<Eigen::MatrixXd> llt(out.info);
    if (llt.info() != Eigen::Success) numerical_error("singular_information");
    out.d_gamma = llt.solve(score.transpose()).transpose();
  } else {
    out.info.resize(0, 0);
    out.d_gamma.resize(n, 0);
  }

  // Sum-scale jump influences, rescaled by n at the end.
  out.d_lambda.resize(n, k);
  const Eigen::MatrixXd shift = (s1.leftCols(k).transpose() * out.d_gamma.transpose()) / dn;  // k x n
  for (Eigen::Index l = 0; l < n; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    for (Eigen::Index j = 0; j < k; ++j) {
      double num = -lambda[j] * shift(j, l);
      if (static_cast<std::size_t>(j) >= lo[ul] && static_cast<std::size_t>(j) < hi[ul]) num -= lambda[j] * e[l];
      out.d_lambda(l, j) = num / s0[j];
    }
    if (cases.delta[ul] == 1) {
      const auto j = static_cast<Eigen::Index>(hi[ul]) - 1;
      out.d_lambda(l, j) += 1.0 / s0[j];
    }
  }
  out.d_lambda *= dn;
  out.d_Lambda = out.d_lambda;
  for (Eigen::Index j = 1; j < k; ++j) out.d_Lambda.col(j) += out.d_Lambda.col(j - 1);
  return out;
}

Eigen::MatrixXd sandwich_cov(const Design& d, const TiltFit& tilt, const InfluenceSet& infl) {
  const auto N = static_cast<Eigen::Index>(d.size());
  const auto p = static_cast<Eigen::Index>(d.p());
  const auto q = p + 2;
  const CoxFit& surv = tilt.survival;
  const auto k = static_cast<Eigen::Index>(surv.grid.size());
  if (infl.d_lambda.cols() != k) input_error("dimension_mismatch", "influence grid");
  if (tilt.mu.size() != N) input_error("dimension_mismatch", "mu");

  const Eigen::VectorXd theta = tilt.theta();
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  pseudo_loglik(theta, d, tilt.mu, &g, &h);

  // Telescoping pieces of mu: width c_j and left-end cumulative hazard L_j.
  Eigen::VectorXd width = Eigen::VectorXd::Zero(k), left = Eigen::VectorXd::Zero(k);
  {
    double prev_t = 0.0, cum = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      left[j] = cum;
      if (prev_t <= surv.xi_hat) width[j] = std::min(surv.grid.t[static_cast<std::size_t>(j)], surv.xi_hat) - prev_t;
      prev_t = surv.grid.t[static_cast<std::size_t>(j)];
      cum += surv.lambda[j];
    }
  }

  Eigen::MatrixXd psi(N, q);      // estimating-function summands
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q, k);  // sum_i d u_i/d mu_i  x  d mu_i/d lambda
  Eigen::MatrixXd gm = Eigen::MatrixXd::Zero(q, p); // sum_i d u_i/d mu_i  x  d mu_i/d gamma
  Eigen::VectorXd dmu_dlambda(k);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto xi = d.x.row(i).transpose();
    const double xb = xi.dot(tilt.beta);
    const double a1 = tilt.alpha + xb, a2 = tilt.nu + xb + std::log(tilt.mu[i]);
    const double m = std::max({0.0, a1, a2});
    const double e0 = std::exp(-m), e1 = std::exp(a1 - m), e2 = std::exp(a2 - m);
    const double tot = e0 + e1 + e2;
    const double p0 = e0 / tot, p1 = e1 / tot, p2 = e2 / tot;
    const Group grp = d.group[static_cast<std::size_t>(i)];
    const double i1 = grp == Group::Incident, i2 = grp == Group::Prevalent;
    psi(i, 0) = i1 - p1;
    psi(i, 1) = i2 - p2;
    psi.row(i).tail(p) = (i1 + i2 - p1 - p2) * xi.transpose();

    Eigen::VectorXd du(q);
    du[0] = p1 * p2;
    du[1] = -p2 * (1.0 - p2);
    du.tail(p) = -p2 * p0 * xi;
    du /= tilt.mu[i];
    if (p2 == 0.0) continue;

    const double ex = std::exp(xi.dot(surv.gamma));
    double tail = 0.0, dgam = 0.0;
    for (Eigen::Index j = k - 1; j >= 0; --j) {
      dmu_dlambda[j] = -ex * tail;
      const double piece = width[j] * std::exp(-left[j] * ex);
      tail += piece;
      dgam += piece * left[j];
    }
    a.noalias() += du * dmu_dlambda.transpose();
    gm.noalias() += (-ex * dgam) * du * xi.transpose();
  }

  // Step-one correction for each case, on the sum scale.
  const double n_cases = static_cast<double>(infl.d_lambda.rows());
  Eigen::MatrixXd corr = (infl.d_lambda * a.transpose() + infl.d_gamma * gm.transpose()) / n_cases;
  for (Eigen::Index l = 0; l < corr.rows(); ++l)
    psi.row(static_cast<Eigen::Index>(infl.cohort_index[static_cast<std::size_t>(l)])) += corr.row(l);

  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(q, q);
  for (Group grp : {Group::Control, Group::Incident, Group::Prevalent}) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < N; ++i)
      if (d.group[static_cast<std::size_t>(i)] == grp) rows.push_back(i);
    if (rows.empty()) continue;
    Eigen::MatrixXd block(static_cast<Eigen::Index>(rows.size()), q);
    for (std::size_t r = 0; r < rows.size(); ++r) block.row(static_cast<Eigen::Index>(r)) = psi.row(rows[r]);
    block.rowwise() -= block.colwise().mean();
    sigma.noalias() += block.transpose() * block;
  }

  // Intercepts of empty case groups sit at -infinity and are left undefined.
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < q; ++j)
    if (std::isfinite(theta[j])) active.push_back(j);
  const auto na = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd v(na, na), s(na, na);
  for (Eigen::Index r = 0; r < na; ++r)
    for (Eigen::Index c = 0; c < na; ++c) {
      v(r, c) = -h(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]);
      s(r, c) = sigma(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]);
    }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all())
    numerical_error("singular_hessian", "step-two information");
  const Eigen::MatrixXd vinv = ldlt.solve(Eigen::MatrixXd::Identity(na, na));
  Eigen::MatrixXd cov_a = vinv * s * vinv;
  cov_a = 0.5 * (cov_a + cov_a.transpose());

  Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(q, q, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index r = 0; r < na; ++r)
    for (Eigen::Index c = 0; c < na; ++c)
      cov(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]) = cov_a(r, c);
  return cov;
}

Cohort bootstrap_resample(const Cohort& c, std::uint64_t seed, std::uint64_t index) {
  std::mt19937_64 rng(derive_seed(seed, index));
  std::vector<std::size_t> idx[3];
  for (std::size_t i = 0; i < c.size(); ++i) idx[static_cast<int>(c[i].group)].push_back(i);
  std::vector<Subject> out;
  out.reserve(c.size());
  for (const auto& g : idx) {
    if (g.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
    for (std::size_t r = 0; r < g.size(); ++r) out.push_back(c[g[pick(rng)]]);
  }
  return Cohort(std::move(out));
}

namespace {

// Sample quantile with linear interpolation between order statistics.
double quantile(std::vector<double> v, double prob) {
  std::sort(v.begin(), v.end());
  const double h = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

BootstrapResult bootstrap_cov(const Cohort& c, const Estimator& fit, const BootstrapOptions& opts) {
  if (opts.B < 2) input_error("invalid_bootstrap_size", fmt::format("B = {}", opts.B));
  BootstrapResult res;
  res.B = opts.B;
  res.estimate = fit(c);
  const auto dim = res.estimate.size();

  std::vector<std::optional<Eigen::VectorXd>> reps(static_cast<std::size_t>(opts.B));
  parallel_for(reps.size(), opts.workers, [&](std::size_t b) {
    try {
      Eigen::VectorXd est = fit(bootstrap_resample(c, opts.seed, b));
      if (est.size() == dim && est.allFinite()) reps[b] = std::move(est);
    } catch (const Error&) {
    }
  });

  std::vector<Eigen::VectorXd> ok;
  for (auto& r : reps)
    if (r) ok.push_back(std::move(*r));
  res.failures = opts.B - static_cast<int>(ok.size());
  if (res.failures > opts.max_failure_rate * opts.B || ok.size() < 2)
    numerical_error("bootstrap_unstable",
                    fmt::format("{} of {} resample fits failed", res.failures, opts.B));

  res.replicates.resize(static_cast<Eigen::Index>(ok.size()), dim);
  for (std::size_t r = 0; r < ok.size(); ++r) res.replicates.row(static_cast<Eigen::Index>(r)) = ok[r].transpose();
  const Eigen::MatrixXd centred = res.replicates.rowwise() - res.replicates.colwise().mean();
  res.cov = centred.transpose() * centred / static_cast<double>(ok.size() - 1);
  res.sd = res.cov.diagonal().cwiseSqrt();
  res.normal_lo = res.estimate - 1.959963984540054 * res.sd;
  res.normal_hi = res.estimate + 1.959963984540054 * res.sd;
  res.percentile_lo.resize(dim);
  res.percentile_hi.resize(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    std::vector<double> col(res.replicates.col(j).data(), res.replicates.col(j).data() + ok.size());
    res.percentile_lo[j] = quantile(col, 0.025);
    res.percentile_hi[j] = quantile(col, 0.975);
  }
  return res;
}

}  // namespace prevcc
