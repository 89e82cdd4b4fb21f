// SPDX-License-Identifier: Apache-2.0
//
// Priority-function solvers. For each user the derivative J_i'(Q) of the
// sub-priority function is tabulated on a backlog grid by solving the
// per-user Bellman-type balance equation at every grid point; a first-order
// cross-link correction is layered on top.

#pragma once

#include "cran/config.hpp"
#include "cran/expectations.hpp"
#include "cran/numerics.hpp"
#include "cran/queueing.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace cran {

enum class Regime { average, discounted };
enum class PowerMode { joint, fixed };

inline const char* to_string(Regime r) { return r == Regime::average ? "average" : "discounted"; }

struct SolverParams {
  double gamma = 1e-5;
  // Dynamic-power price per user; empty or +inf entries mean fixed power.
  std::vector<double> power_price;
  std::size_t grid_points = 256;
  double q_max_factor = 100.0;  // Q_max = factor * lambda * tau
  double q_min_ratio = 1e-3;    // first positive node = ratio * Q_max
  double alpha_guard = 10.0;
  // Per-user average-cost constants; empty selects the zero-allocation
  // boundary value 2 gamma lambda / W.
  std::vector<double> c_inf_override;
  double root_tol = 1e-13;

  double price(std::size_t i) const {
    return i < power_price.size() ? power_price[i] : std::numeric_limits<double>::infinity();
  }
};

/// Tabulated J_i'(Q) for one user.
struct SubPriority {
  std::vector<double> q;   // bits, q[0] = 0, strictly increasing
  std::vector<double> jp;  // J_i'(q)
  double c_inf = 0.0;
  std::size_t guard_warnings = 0;

  /// Linear interpolation inside the grid, linear extrapolation beyond it.
  double at(double Q) const {
    if (q.size() == 1) return jp[0];
    if (Q <= q.front()) return jp.front();
    if (Q >= q.back()) {
      const std::size_t k = q.size() - 1;
      const double slope = (jp[k] - jp[k - 1]) / (q[k] - q[k - 1]);
      return jp[k] + slope * (Q - q[k]);
    }
    const auto it = std::upper_bound(q.begin(), q.end(), Q);
    const std::size_t k = static_cast<std::size_t>(it - q.begin());
    const double w = (Q - q[k - 1]) / (q[k] - q[k - 1]);
    return jp[k - 1] + w * (jp[k] - jp[k - 1]);
  }
};

/// First-order cross-link data for the ordered pair (i, j) of the joint
/// average-reward policy, evaluated at a reference backlog.
struct CrossLinkCoeffs {
  std::size_t i = 0, j = 1;
  double v1 = 0, v2 = 0, v3 = 0, v4 = 0, v5 = 0;
  double a_i = 0, b_i = 0;
  double alpha_i = 0, alpha_j = 0;
  double h_i0 = 0, h_i3 = 0, h_i4 = 0;
  double rate_i = 0, rate_j = 0;  // E[R*_0] at the reference point, bits/sec
  double q_ref_i = 0, q_ref_j = 0;
};

struct PriorityTable {
  Regime regime = Regime::average;
  PowerMode power = PowerMode::joint;
  double mu = 1.0;  // continue-probability; 1 for the average regime
  double gamma = 1.0;
  std::vector<double> power_price;
  std::vector<SubPriority> users;
  // cross-link corrections: gradient_i = jp_i(Q_i) * scale_i + offset_i
  std::vector<double> offset;
  std::vector<double> scale;
  std::vector<CrossLinkCoeffs> pairs;
  std::vector<double> q_ref;

  std::size_t size() const { return users.size(); }

  /// dJ/dQ_i for every user at backlog Q.
  std::vector<double> gradient(const QueueState& Q) const {
    std::vector<double> g(users.size());
    for (std::size_t i = 0; i < users.size(); ++i) {
      g[i] = users[i].at(Q[i]);
      if (!scale.empty()) g[i] *= scale[i];
      if (!offset.empty()) g[i] += offset[i];
    }
    return g;
  }

  /// Normalized priority alpha = mu W J' / (2 gamma) of a raw table value.
  double alpha_of(double jp, double W) const { return mu * W * jp / (2.0 * gamma); }
};

// --- balance equation ---------------------------------------------------------

/// Addends of the per-user balance equation at normalized priority alpha.
/// For both regimes the equation reads
///   beta Q / lambda + gamma E[C*] + E[mu p*_d] + (2 gamma alpha / W)(lambda - E[R*]) - c = 0
/// with c = c_inf (average) or 0 (discounted); in the discounted regime
/// alpha absorbs the continue-probability.
struct BalanceTerms {
  double delay = 0, capacity_cost = 0, power_cost = 0, arrival = 0, service = 0, constant = 0;

  double value() const { return delay + capacity_cost + power_cost + arrival - service - constant; }
  double scale() const {
    return std::abs(delay) + std::abs(capacity_cost) + std::abs(power_cost) + std::abs(arrival) +
           std::abs(service) + std::abs(constant);
  }
};

inline BalanceTerms balance_terms(const LinkModel& m, PowerMode mode, double Q, double alpha, double constant) {
  BalanceTerms t;
  t.delay = m.beta * Q / m.lambda;
  const double jscaled = 2.0 * m.gamma * alpha / m.W;
  t.arrival = jscaled * m.lambda;
  t.constant = constant;
  if (alpha > 1.0) {
    if (mode == PowerMode::joint) {
      t.capacity_cost = m.gamma * expected_capacity(alpha, m);
      t.power_cost = expected_power_cost(alpha, m);
      t.service = jscaled * expected_rate(alpha, m);
    } else {
      t.capacity_cost = m.gamma * expected_capacity_fixed(alpha, m);
      t.service = jscaled * expected_rate_fixed(alpha, m);
    }
  }
  return t;
}

inline double link_rate(const LinkModel& m, PowerMode mode, double alpha) {
  return mode == PowerMode::joint ? expected_rate(alpha, m) : expected_rate_fixed(alpha, m);
}

/// Normalized priority at which the expected optimal rate equals lambda.
inline double stability_alpha(const LinkModel& m, PowerMode mode) {
  if (mode == PowerMode::fixed || !m.power_control()) {
    if (m.lambda >= max_rate_fixed(m) * (1.0 - 1e-12)) {
      throw InfeasibleError("arrival rate exceeds the unquantized ergodic rate at fixed power");
    }
  }
  auto f = [&](double alpha) { return link_rate(m, mode, alpha) - m.lambda; };
  double lo = 1.0 + 1e-12;
  double hi = 2.0;
  for (int k = 0; f(hi) < 0.0; ++k) {
    lo = hi;
    hi *= 2.0;
    if (k > 2000) throw InfeasibleError("no priority level reaches the arrival rate");
  }
  return root_find_monotone(f, lo, hi, 1e-14);
}

/// Backlog grid: 0 followed by geometrically spaced nodes up to Q_max.
inline std::vector<double> backlog_grid(double lambda_tau, const SolverParams& p) {
  const double q_max = std::max(p.q_max_factor * lambda_tau, 1.0);
  const double q_min = p.q_min_ratio * q_max;
  std::vector<double> q{0.0};
  const std::size_t m = std::max<std::size_t>(p.grid_points, 2);
  for (std::size_t k = 0; k < m; ++k)
    q.push_back(q_min * std::pow(q_max / q_min, static_cast<double>(k) / static_cast<double>(m - 1)));
  return q;
}

namespace detail {

inline std::string grid_point_message(std::size_t user, double Q, const std::string& what) {
  std::ostringstream os;
  os.precision(10);
  os << "user " << user << ", backlog " << Q << " bits: " << what;
  return os.str();
}

// Solves the balance equation on every node of `q` on the stable branch
// (alpha above the stability level). Returns normalized alphas.
inline std::vector<double> solve_alpha_grid(const LinkModel& m, PowerMode mode, Regime regime,
                                            const std::vector<double>& q, double constant,
                                            bool boundary_constant, std::size_t user, double tol,
                                            double guard, std::size_t& guard_warnings) {
  double alpha_lambda;
  try {
    alpha_lambda = stability_alpha(m, mode);
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(grid_point_message(user, q.size() > 1 ? q[1] : 0.0, e.what()));
  }
  std::vector<double> alphas(q.size(), 0.0);
  double prev = alpha_lambda;
  for (std::size_t k = 0; k < q.size(); ++k) {
    const double Q = q[k];
    if (Q == 0.0 && (regime == Regime::discounted || boundary_constant)) {
      alphas[k] = regime == Regime::discounted ? 0.0 : 1.0;
      continue;
    }
    auto f = [&](double alpha) {
      const auto t = balance_terms(m, mode, Q, alpha, constant);
      return t.value() / std::max(t.scale(), 1e-300);
    };
    const double lo = alpha_lambda;
    if (!(f(lo) > 0.0)) {
      throw InfeasibleError(grid_point_message(user, Q, "balance equation has no root on the stable branch"));
    }
    double hi = std::max(prev, lo) * 1.5;
    int expansions = 0;
    while (f(hi) >= 0.0) {
      hi *= 2.0;
      if (++expansions > 400) {
        throw InfeasibleError(grid_point_message(user, Q, "balance equation root not bracketed"));
      }
    }
    const double lo_b = std::max(lo, std::min(prev, hi) / 1.0000001);
    const double start = f(lo_b) > 0.0 ? lo_b : lo;
    alphas[k] = root_find_monotone(f, start, hi, tol);
    prev = alphas[k];
    if (alphas[k] < guard) ++guard_warnings;
  }
  return alphas;
}

inline void require_nondecreasing(const SubPriority& s, std::size_t user) {
  for (std::size_t k = 1; k < s.jp.size(); ++k) {
    if (s.jp[k] < s.jp[k - 1] * (1.0 - 1e-12)) {
      throw InfeasibleError(grid_point_message(user, s.q[k], "solved priority derivative decreases"));
    }
  }
}

}  // namespace detail

/// Average-reward sub-priority derivative J_i'(Q) on the backlog grid.
/// `mode` selects joint power/fronthaul or fronthaul-only decisions.
inline SubPriority solve_subpriority_avg(const ClusterConfig& config, const SolverParams& params,
                                         std::size_t user, PowerMode mode = PowerMode::joint) {
  const double price = mode == PowerMode::joint ? params.price(user) : std::numeric_limits<double>::infinity();
  const auto m = LinkModel::from_cluster(config, user, params.gamma, price);
  if (!(m.lambda > 0.0)) throw DomainError("priority tables need a positive arrival rate");
  SubPriority s;
  s.q = backlog_grid(m.lambda * config.tau, params);
  const bool boundary = params.c_inf_override.empty();
  s.c_inf = boundary ? 2.0 * params.gamma * m.lambda / config.W : params.c_inf_override.at(user);
  const auto alphas = detail::solve_alpha_grid(m, mode, Regime::average, s.q, s.c_inf, boundary, user,
                                               params.root_tol, params.alpha_guard, s.guard_warnings);
  s.jp.resize(alphas.size());
  for (std::size_t k = 0; k < alphas.size(); ++k) s.jp[k] = 2.0 * params.gamma * alphas[k] / config.W;
  detail::require_nondecreasing(s, user);
  return s;
}

/// Discounted (geometric service horizon) sub-priority derivative with
/// fixed transmit power and continue-probability mu.
inline SubPriority solve_subpriority_discounted(const ClusterConfig& config, const SolverParams& params,
                                                std::size_t user, double mu) {
  if (!(mu > 0.0 && mu < 1.0)) throw DomainError("continue-probability must lie in (0, 1)");
  const auto m = LinkModel::from_cluster(config, user, params.gamma, std::numeric_limits<double>::infinity());
  if (!(m.lambda > 0.0)) throw DomainError("priority tables need a positive arrival rate");
  SubPriority s;
  s.q = backlog_grid(m.lambda * config.tau, params);
  s.c_inf = 0.0;
  const auto alphas = detail::solve_alpha_grid(m, PowerMode::fixed, Regime::discounted, s.q, 0.0, true, user,
                                               params.root_tol, params.alpha_guard, s.guard_warnings);
  s.jp.resize(alphas.size());
  for (std::size_t k = 0; k < alphas.size(); ++k) s.jp[k] = 2.0 * params.gamma * alphas[k] / (mu * config.W);
  detail::require_nondecreasing(s, user);
  return s;
}

/// Balance-equation residual at grid node k, normalized by the sum of the
/// absolute addends.
inline double balance_residual(const ClusterConfig& config, const SolverParams& params, const PriorityTable& table,
                               std::size_t user, std::size_t k) {
  const auto& s = table.users[user];
  const double price = table.power == PowerMode::joint ? params.price(user) : std::numeric_limits<double>::infinity();
  const auto m = LinkModel::from_cluster(config, user, params.gamma, price);
  const double alpha = table.alpha_of(s.jp[k], config.W);
  const auto t = balance_terms(m, table.power, s.q[k], alpha,
                               table.regime == Regime::average ? s.c_inf : 0.0);
  return std::abs(t.value()) / std::max(t.scale(), 1e-300);
}

/// Largest ratio of J'(Q)/Q over the last quarter of the grid relative to
/// its value where that quarter starts. Bounded ratios witness J = O(Q^2).
inline double tail_growth_ratio(const SubPriority& s) {
  const std::size_t m = s.q.size();
  const std::size_t start = m - std::max<std::size_t>(m / 4, 2);
  const double base = s.jp[start] / s.q[start];
  double worst = 0.0;
  for (std::size_t k = start; k < m; ++k) worst = std::max(worst, (s.jp[k] / s.q[k]) / base);
  return worst;
}

// --- cross-links, average regime ---------------------------------------------

/// E[1/(x0 + x* + 1)] over the fronthaul-active region, large-alpha form.
inline double crosslink_inverse_power_moment(double alpha, const LinkModel& m) {
  if (!(alpha > 1.0)) return 0.0;
  const auto t = thresholds(alpha, m);
  const double a = m.a();
  double value = 0.0;
  if (t.h3 < t.h0) value += a * (exp_times_e1(a, t.h3 + a) - exp_times_e1(a, t.h0 + a));
  if (m.b() > 0.0 && !std::isinf(t.h0)) value += exp_integral_e1(t.h0) / (m.b() * (alpha - 1.0));
  return value;
}

/// E[(x0 + x*)/z] over the fronthaul-active region.
inline double crosslink_power_per_gain(double alpha, const LinkModel& m) {
  if (!(alpha > 1.0)) return 0.0;
  const auto t = thresholds(alpha, m);
  double value = (detail::exp_neg(t.h3) - detail::exp_neg(t.h0)) / m.a();
  if (m.b() > 0.0 && !std::isinf(t.h0)) {
    value += m.b() * (alpha - 1.0) * std::exp(-t.h0) - exp_integral_e1(t.h0);
  }
  return value;
}

/// E[(x0 + x*)/(z (y* - 1))] with y* - 1 ~ y*, equal to E1(h3)/(alpha - 1).
inline double crosslink_noise_per_gain(double alpha, const LinkModel& m) {
  if (!(alpha > 1.0)) return 0.0;
  return detail::e1_or_zero(thresholds(alpha, m).h3) / (alpha - 1.0);
}

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
};

/// Least-squares fit of f(alpha) = intercept + slope * basis(alpha) over a
/// log-spaced alpha grid on [lo, hi].
template <class F, class B>
LinearFit fit_in_alpha(F&& f, B&& basis, double lo, double hi, int points = 48) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int k = 0; k < points; ++k) {
    const double alpha = lo * std::pow(hi / lo, static_cast<double>(k) / (points - 1));
    const double x = basis(alpha);
    const double y = f(alpha);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double np = points;
  const double den = np * sxx - sx * sx;
  LinearFit fit;
  fit.slope = den != 0.0 ? (np * sxy - sx * sy) / den : 0.0;
  fit.intercept = (sy - fit.slope * sx) / np;
  return fit;
}

/// Window of alpha values over which the v coefficients are fitted around
/// an evaluation point.
inline std::pair<double, double> fit_window(double alpha, double factor = 1.25) {
  const double lo = std::max(1.0 + 0.5 * (alpha - 1.0), alpha / factor);
  return {lo, std::max(alpha * factor, lo * 1.01)};
}

inline LinearFit fit_v12(const LinkModel& m, double lo, double hi) {
  return fit_in_alpha([&](double a) { return crosslink_inverse_power_moment(a, m); },
                      [](double a) { return 1.0 / (a - 1.0); }, lo, hi);
}

inline LinearFit fit_v34(const LinkModel& m, double lo, double hi) {
  return fit_in_alpha([&](double a) { return crosslink_power_per_gain(a, m); },
                      [](double a) { return a - 1.0; }, lo, hi);
}

/// v coefficients for the ordered pair (i, j) at normalized priorities
/// alpha_i and alpha_j.
inline CrossLinkCoeffs crosslink_coeffs(double alpha_i, double alpha_j, const LinkModel& link_i,
                                        const LinkModel& link_j, std::size_t i = 0, std::size_t j = 1) {
  CrossLinkCoeffs c;
  c.i = i;
  c.j = j;
  c.alpha_i = alpha_i;
  c.alpha_j = alpha_j;
  c.a_i = link_i.a();
  c.b_i = link_i.b();
  const auto t = thresholds(alpha_i, link_i);
  c.h_i0 = t.h0;
  c.h_i3 = t.h3;
  c.h_i4 = t.h4;
  const auto [lo_i, hi_i] = fit_window(alpha_i);
  const auto v12 = fit_v12(link_i, lo_i, hi_i);
  c.v1 = v12.intercept;
  c.v2 = v12.slope;
  const auto [lo_j, hi_j] = fit_window(alpha_j);
  const auto v34 = fit_v34(link_j, lo_j, hi_j);
  c.v3 = v34.intercept;
  c.v4 = v34.slope;
  c.v5 = (alpha_j - 1.0) * crosslink_noise_per_gain(alpha_j, link_j);
  c.rate_i = expected_rate(alpha_i, link_i);
  c.rate_j = expected_rate(alpha_j, link_j);
  return c;
}

struct PairGradient {
  double wrt_i = 0.0;  // d J~_ij / d Q_i
  double wrt_j = 0.0;  // d J~_ij / d Q_j
};

/// Joint priority gradients of the pair (i, j):
///   dJ~/dQ_i = gamma/L_jj * v5 (1 - v1) alpha_i / (E[R_i] - lambda_i)
///   dJ~/dQ_j = gamma/L_jj * v1 v4 alpha_j / (E[R_j] - lambda_j)
/// L_jj is the direct gain of the interfering user; the Taylor term
/// L_ij dJ~ then scales with L_ij / L_jj.
inline PairGradient crosslink_gradient_avg(const CrossLinkCoeffs& c, double L_jj, double gamma, double lambda_i,
                                           double lambda_j) {
  const double di = c.rate_i - lambda_i;
  const double dj = c.rate_j - lambda_j;
  if (!(di > 0.0) || !(dj > 0.0)) {
    throw InfeasibleError("cross-link correction needs E[R] > lambda at the reference backlog");
  }
  PairGradient g;
  g.wrt_i = gamma / L_jj * c.v5 * (1.0 - c.v1) * c.alpha_i / di;
  g.wrt_j = gamma / L_jj * c.v1 * c.v4 * c.alpha_j / dj;
  return g;
}

/// Relative residual of the first-order cross-link PDE at the reference point.
inline double crosslink_pde_residual(const CrossLinkCoeffs& c, const PairGradient& g, double L_jj, double gamma,
                                     double lambda_i, double lambda_j) {
  const double lhs = g.wrt_i * (c.rate_i - lambda_i) + g.wrt_j * (c.rate_j - lambda_j);
  const double rhs = gamma / L_jj * (c.v5 * (1.0 - c.v1) * c.alpha_i + c.v1 * c.v4 * c.alpha_j);
  return std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-300);
}

/// dJ/dQ_i = J_i'(Q_i) + sum over pairs containing i of L_pair * dJ~_pair/dQ_i.
inline std::vector<double> priority_gradient_avg(const QueueState& Q, const PriorityTable& table,
                                                 const std::vector<CrossLinkCoeffs>& pairs,
                                                 const ClusterConfig& config) {
  std::vector<double> g(table.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = table.users[i].at(Q[i]);
  for (const auto& c : pairs) {
    const double L_ij = config.L(static_cast<Eigen::Index>(c.i), static_cast<Eigen::Index>(c.j));
    if (!(L_ij > 0.0)) continue;
    const double L_jj = config.L(static_cast<Eigen::Index>(c.j), static_cast<Eigen::Index>(c.j));
    const auto pg = crosslink_gradient_avg(c, L_jj, table.gamma, config.lambda[c.i], config.lambda[c.j]);
    g[c.i] += L_ij * pg.wrt_i;
    g[c.j] += L_ij * pg.wrt_j;
  }
  return g;
}

// --- cross-links, fixed-power and discounted regimes -------------------------

/// K = E[(N_j* + sigma2)/(L_jj z)] L_jj / (2 sigma2) over the fronthaul-active
/// region with 2^C - 1 ~ 2^C, by Monte Carlo with a fixed stream.
inline double quantization_moment_mc(double alpha, const LinkModel& m, std::size_t samples = 100000,
                                     std::uint64_t seed = 0x4b4b) {
  if (!(alpha > 1.0)) return 0.0;
  const double z0 = m.a() / (alpha - 1.0);
  const double ratio = alpha / (alpha - 1.0);
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  double sum = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const double z = expo(rng);
    if (z > z0) sum += ratio / z;
  }
  return 0.5 * sum / static_cast<double>(samples);
}

/// Multiplier L_jj dJ~_ij/dQ_i / J_i'(Q_i) of the fixed-power correction:
/// 2 K_j (1 - a_i e^{a_i} E1(a_i)) / (e^{a_i} E1(a_i)/ln2 - 2 lambda_i / W).
inline double crosslink_factor_fixed(const LinkModel& link_i, double K_j) {
  const double a = link_i.a();
  const double e = exp_integral_e1_scaled(a);
  const double den = e / kLn2 - 2.0 * link_i.lambda / link_i.W;
  if (std::abs(den) < 1e-9) throw InfeasibleError("fixed-power cross-link correction is singular");
  return 2.0 * K_j * (1.0 - a * e) / den;
}

/// dJ~_ij/dQ_i for the fixed-power (discounted or average) policy at backlog Q_i.
inline double crosslink_gradient_discounted(std::size_t i, std::size_t j, const PriorityTable& table,
                                            const ClusterConfig& config, double Q_i, double K_j) {
  const double L_jj = config.L(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
  const auto link = LinkModel::from_cluster(config, i, table.gamma, std::numeric_limits<double>::infinity());
  return table.users[i].at(Q_i) * crosslink_factor_fixed(link, K_j) / L_jj;
}

/// Attaches cross-link corrections evaluated at the reference backlog q_ref.
inline void attach_crosslinks(PriorityTable& table, const ClusterConfig& config, const QueueState& q_ref) {
  const std::size_t n = table.size();
  table.q_ref = q_ref;
  table.offset.assign(n, 0.0);
  table.scale.assign(n, 1.0);
  table.pairs.clear();
  if (config.diagonal() || n < 2) return;
  std::vector<double> alpha(n);
  for (std::size_t i = 0; i < n; ++i) alpha[i] = table.alpha_of(table.users[i].at(q_ref[i]), config.W);

  if (table.power == PowerMode::joint && table.regime == Regime::average) {
    std::vector<LinkModel> links;
    for (std::size_t i = 0; i < n; ++i)
      links.push_back(LinkModel::from_cluster(config, i, table.gamma, table.power_price.at(i)));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || !(config.L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0)) continue;
        auto c = crosslink_coeffs(alpha[i], alpha[j], links[i], links[j], i, j);
        c.q_ref_i = q_ref[i];
        c.q_ref_j = q_ref[j];
        table.pairs.push_back(c);
      }
    QueueState zero(n, 0.0);
    const auto corrected = priority_gradient_avg(zero, table, table.pairs, config);
    for (std::size_t i = 0; i < n; ++i) table.offset[i] = corrected[i] - table.users[i].at(0.0);
    return;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto link_i = LinkModel::from_cluster(config, i, table.gamma, std::numeric_limits<double>::infinity());
    double extra = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !(config.L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0)) continue;
      const auto link_j = LinkModel::from_cluster(config, j, table.gamma, std::numeric_limits<double>::infinity());
      const double ratio = config.L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) /
                           config.L(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
      extra += ratio * crosslink_factor_fixed(link_i, quantization_moment_mc(alpha[j], link_j));
    }
    table.scale[i] = 1.0 + extra;
  }
}

/// Solves every user's sub-priority table for the requested regime. Cross-link
/// corrections are not attached.
inline PriorityTable solve_priority_table(const ClusterConfig& config, const SolverParams& params, Regime regime,
                                          PowerMode power, double mu = 1.0) {
  PriorityTable t;
  t.regime = regime;
  t.power = regime == Regime::discounted ? PowerMode::fixed : power;
  t.mu = regime == Regime::discounted ? mu : 1.0;
  t.gamma = params.gamma;
  t.power_price.resize(config.n);
  for (std::size_t i = 0; i < config.n; ++i)
    t.power_price[i] = t.power == PowerMode::joint ? params.price(i) : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < config.n; ++i) {
    t.users.push_back(regime == Regime::average ? solve_subpriority_avg(config, params, i, t.power)
                                                : solve_subpriority_discounted(config, params, i, mu));
  }
  return t;
}

// --- CSV --------------------------------------------------------------------

/// Columns: user, Q_bits, Jprime, regime, c_inf_or_mu.
inline void write_priority_csv(std::ostream& os, const PriorityTable& table) {
  os << "user,Q_bits,Jprime,regime,c_inf_or_mu\n";
  std::string line;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& s = table.users[i];
    const double extra = table.regime == Regime::average ? s.c_inf : table.mu;
    for (std::size_t k = 0; k < s.q.size(); ++k) {
      line = std::to_string(i);
      for (double v : {s.q[k], s.jp[k]}) {
        line += ',';
        detail::append_number(line, v);
      }
      line += ',';
      line += to_string(table.regime);
      line += ',';
      detail::append_number(line, extra);
      line += '\n';
      os << line;
    }
  }
}

/// Reads the tabulated derivatives written by write_priority_csv. Prices,
/// power mode and cross-link data are not part of the file.
inline PriorityTable read_priority_csv(std::istream& is) {
  PriorityTable t;
  std::string line;
  if (!std::getline(is, line) || line.rfind("user,Q_bits,Jprime", 0) != 0)
    throw ConfigError("priority CSV: missing header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[5];
    for (auto& s : f)
      if (!std::getline(ss, s, ',')) throw ConfigError("priority CSV: short row: " + line);
    const auto user = static_cast<std::size_t>(std::stoul(f[0]));
    if (user >= t.users.size()) t.users.resize(user + 1);
    auto& s = t.users[user];
    s.q.push_back(std::stod(f[1]));
    s.jp.push_back(std::stod(f[2]));
    t.regime = f[3] == "average" ? Regime::average : Regime::discounted;
    if (t.regime == Regime::average) s.c_inf = std::stod(f[4]);
    else t.mu = std::stod(f[4]);
  }
  return t;
}

}  // namespace cran
