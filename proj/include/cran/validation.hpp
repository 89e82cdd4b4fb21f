// SPDX-License-Identifier: Apache-2.0
//
// Self-check suites run by `cran-sim validate`: closed-form expectations
// against Monte Carlo, the closed-form allocator against the numeric one,
// geometric-horizon totals against discounted values, and E1 against
// Boost's implementation.

#pragma once

#include "cran/allocator.hpp"
#include "cran/expectations.hpp"
#include "cran/toy_mdp.hpp"

#include <boost/math/special_functions/expint.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace cran {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double value = 0.0;  // worst observed error measure
  double limit = 0.0;
  std::string detail;
};

struct SuiteOptions {
  bool full = false;
  std::uint64_t seed = 20240601;
};

namespace detail {

inline ChannelRealization scalar_channel(double z, double L) {
  ChannelRealization ch;
  ch.h_tilde = ComplexMatrix::Constant(1, 1, std::sqrt(z));
  ch.H = ComplexMatrix::Constant(1, 1, std::sqrt(z * L));
  ch.S = ComplexMatrix::Constant(1, 1, 1.0 / std::sqrt(z * L));
  return ch;
}

inline ClusterConfig scalar_cluster(const LinkModel& m) {
  ClusterConfig c;
  c.W = m.W;
  c.sigma2 = m.sigma2;
  c.L = RealMatrix::Constant(1, 1, m.L);
  c.p0 = {m.p0};
  c.p_max = {1e300};
  c.lambda = {m.lambda};
  c.beta = {m.beta};
  return c;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace detail

/// Closed-form capacity, rate and power-cost expectations against averages
/// of the per-realization optimal allocations over z ~ Exp(1).
inline std::vector<CheckResult> expectation_suite(const SuiteOptions& opt) {
  const std::size_t samples = opt.full ? 1000000 : 100000;
  const double tol = opt.full ? 0.02 : 0.03;
  std::vector<CheckResult> out;
  LinkModel unit;
  unit.sigma2 = 1.0;
  unit.L = 1.0;
  unit.p0 = 1.0;
  unit.gamma = 1.0;
  unit.power_price = 1.0;
  LinkModel cluster;
  cluster.sigma2 = 1e-13;
  cluster.L = 1e-10;
  cluster.p0 = 0.1;
  cluster.gamma = 1e-5;
  cluster.power_price = 1e-4;
  LinkModel fixed = cluster;
  fixed.power_price = std::numeric_limits<double>::infinity();
  const std::vector<std::pair<std::string, LinkModel>> links = {
      {"unit link", unit}, {"cluster link", cluster}, {"fixed power", fixed}};

  Rng rng(opt.seed);
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> z(samples);
  for (double& v : z) v = expo(rng);

  for (const auto& [label, m] : links) {
    const auto c = detail::scalar_cluster(m);
    const Prices prices{m.gamma, {m.power_price}};
    for (double alpha : {50.0, 100.0, 200.0}) {
      const std::vector<double> g{2.0 * m.gamma * alpha / m.W};
      double sc = 0.0, sr = 0.0, sp = 0.0;
      for (double zk : z) {
        const auto ch = detail::scalar_channel(zk, m.L);
        const Allocation a = m.power_control() ? allocate_joint(ch, g, c, prices) : allocate_fixed_power(ch, g, c, m.gamma);
        sc += a.C[0];
        sp += a.p_d[0];
        sr += rate_single_user(zk * m.L, a.C[0], m.p0 + a.p_d[0], m.sigma2, m.W);
      }
      const double N = static_cast<double>(samples);
      struct Item {
        const char* what;
        double closed, mc;
      };
      std::vector<Item> items;
      if (m.power_control()) {
        items = {{"capacity", expected_capacity(alpha, m), sc / N},
                 {"rate", expected_rate(alpha, m), sr / N},
                 {"power cost", expected_power_cost(alpha, m), m.power_price * sp / N}};
      } else {
        items = {{"capacity", expected_capacity_fixed(alpha, m), sc / N},
                 {"rate", expected_rate_fixed(alpha, m), sr / N}};
      }
      for (const auto& it : items) {
        CheckResult r;
        r.suite = "expectations";
        r.name = label + " " + it.what + " alpha=" + std::to_string(static_cast<int>(alpha));
        r.value = detail::rel_err(it.closed, it.mc);
        r.limit = tol;
        r.passed = std::isfinite(it.closed) && r.value <= tol;
        char buf[96];
        std::snprintf(buf, sizeof buf, "closed %.6g, mc %.6g", it.closed, it.mc);
        r.detail = buf;
        out.push_back(r);
      }
    }
  }
  return out;
}

/// Closed-form joint rule against the numeric minimizer on random channels
/// and priorities without cross-links: objective gap, first-order residual
/// and second-order condition at interior optima.
inline std::vector<CheckResult> allocator_suite(const SuiteOptions& opt) {
  const int cases = opt.full ? 1000 : 100;
  ClusterConfig c;
  c.n = 2;
  c.L = RealMatrix::Zero(2, 2);
  c.L(0, 0) = c.L(1, 1) = 1e-10;
  c.p0 = {0.1, 0.1};
  c.lambda = {1e6, 1e6};
  c.beta = {1.0, 1.0};
  Rng rng(opt.seed + 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  NumericOptions nopt;
  nopt.multistart = 2;
  double worst_gap = 0.0, worst_foc = 0.0, worst_hess = std::numeric_limits<double>::infinity();
  int below = 0, interior = 0;
  for (int k = 0; k < cases; ++k) {
    const auto ch = sample_channel(c, rng);
    // wide power caps and prices so that interior optima are common
    c.p_max = {0.1 + std::pow(10.0, 2.0 * u(rng)), 0.1 + std::pow(10.0, 2.0 * u(rng))};
    const Prices prices{1e-5, {std::pow(10.0, -6.0 + 3.0 * u(rng)), std::pow(10.0, -6.0 + 3.0 * u(rng))}};
    std::vector<double> g;
    for (int i = 0; i < 2; ++i) g.push_back(2.0 * prices.gamma * (10.0 + 490.0 * u(rng)) / c.W);
    IntermediateVars vars;
    const auto a = allocate_joint(ch, g, c, prices, &vars);
    const double closed = allocation_objective(ch, g, c, prices, a);
    const auto num = allocate_numeric(ch, g, c, prices, nopt);
    const double scale = std::abs(num.objective);
    worst_gap = std::max(worst_gap, (closed - num.objective) / scale);
    if (closed < num.objective - 1e-9 * scale) ++below;
    for (std::size_t i = 0; i < 2; ++i) {
      const double x = vars.x[i], x0 = vars.x0[i], y = vars.y[i];
      if (!(x > 0.0 && a.p_d[i] < c.p_max[i] - c.p0[i])) continue;
      ++interior;
      const double k_tilde = 1.0 / (vars.alpha[i] * vars.k[i]);
      worst_foc = std::max(worst_foc, detail::rel_err((y - 1.0) / ((x + x0 + 1.0) * (x + x0 + y)), k_tilde));
      worst_hess = std::min(worst_hess, (x + x0) * (y - 2.0) - 1.0);
    }
  }
  std::vector<CheckResult> out;
  const std::string n = std::to_string(cases) + " cases";
  out.push_back({"allocator", "objective gap to numeric minimum", worst_gap <= 0.01, worst_gap, 0.01, n});
  out.push_back({"allocator", "never below numeric minimum", below == 0, static_cast<double>(below), 0.0, n});
  out.push_back({"allocator", "first-order residual", worst_foc <= 1e-6, worst_foc, 1e-6,
                 std::to_string(interior) + " interior optima"});
  out.push_back({"allocator", "second-order condition", worst_hess >= 0.0, worst_hess, 0.0,
                 "smallest (x+x0)(y-2)-1, must be >= 0"});
  return out;
}

/// Geometric-horizon Monte Carlo totals against exact discounted values on
/// random toy MDPs.
inline std::vector<CheckResult> lemma2_suite(const SuiteOptions& opt) {
  const std::size_t trials = 100000;
  std::vector<CheckResult> out;
  for (std::uint64_t toy = 0; toy < 3; ++toy) {
    const auto m = ToyMDP::random(3 + toy, 2, opt.seed + 10 + toy);
    std::vector<std::size_t> policy(m.states);
    for (std::size_t s = 0; s < m.states; ++s) policy[s] = s % m.actions;
    for (double mu : {0.3, 0.5, 0.9}) {
      const auto rep = lemma2_check(m, policy, mu, trials, opt.seed + 100 * toy + static_cast<std::uint64_t>(mu * 10));
      CheckResult r;
      r.suite = "lemma2";
      char buf[96];
      std::snprintf(buf, sizeof buf, "toy %d mu=%.1f", static_cast<int>(toy), mu);
      r.name = buf;
      r.value = std::abs(rep.z);
      r.limit = 3.0;
      r.passed = rep.agrees(3.0);
      std::snprintf(buf, sizeof buf, "exact %.6g, mc %.6g +- %.2g", rep.exact, rep.mc_mean, rep.mc_stderr);
      r.detail = buf;
      out.push_back(r);
    }
  }
  return out;
}

/// E1 against boost::math::expint(1, z) over several decades.
inline std::vector<CheckResult> e1_suite(const SuiteOptions& opt) {
  const int points = opt.full ? 20000 : 2000;
  double worst = 0.0, worst_z = 0.0;
  for (int k = 0; k <= points; ++k) {
    const double z = std::pow(10.0, -10.0 + 12.7 * k / points);  // up to ~500
    const double e = detail::rel_err(exp_integral_e1(z), boost::math::expint(1, z));
    if (e > worst) worst = e, worst_z = z;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "worst at z=%.4g", worst_z);
  return {{"e1", "relative error vs boost expint", worst <= 1e-12, worst, 1e-12, buf}};
}

struct ValidationReport {
  std::vector<CheckResult> checks;
  double seconds = 0.0;
  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }
};

inline ValidationReport run_validation(const SuiteOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  ValidationReport rep;
  for (auto suite : {expectation_suite, allocator_suite, lemma2_suite, e1_suite}) {
    auto part = suite(opt);
    rep.checks.insert(rep.checks.end(), part.begin(), part.end());
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline void print_report(std::ostream& os, const ValidationReport& rep) {
  char buf[256];
  for (const auto& c : rep.checks) {
    std::snprintf(buf, sizeof buf, "%-4s %-13s %-40s %10.3g  limit %-8.3g %s\n", c.passed ? "ok" : "FAIL", c.suite.c_str(),
                  c.name.c_str(), c.value, c.limit, c.detail.c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%s in %.1f s\n", rep.passed() ? "all checks passed" : "validation FAILED",
                rep.seconds);
  os << buf;
}

}  // namespace cran
