// SPDX-License-Identifier: Apache-2.0
//
// Per-slot decision rules mapping (channel, priority gradient) to fronthaul
// capacities and dynamic powers, plus a derivative-free reference minimizer.

#pragma once

#include "cran/channel.hpp"
#include "cran/config.hpp"
#include "cran/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace cran {

/// Lagrange prices: gamma per bit/sec/Hz of fronthaul, one dynamic-power
/// price per user (watts). An infinite power price disables power control.
struct Prices {
  double gamma = 1.0;
  std::vector<double> power_price;

  bool power_control(std::size_t i) const { return !std::isinf(power_price[i]); }
};

/// Normalized per-user quantities of the joint rule.
struct IntermediateVars {
  std::vector<double> x;      // p_d |H_ii|^2 / sigma2
  std::vector<double> x0;     // p0 |H_ii|^2 / sigma2
  std::vector<double> y;      // 2^C
  std::vector<double> alpha;  // W dJ/dQ_i / (2 gamma)
  std::vector<double> k;      // gamma |H_ii|^2 / (mu sigma2 ln2)
  std::vector<double> b;      // gamma L_ii / (mu sigma2 ln2)

  explicit IntermediateVars(std::size_t n = 0)
      : x(n, 0.0), x0(n, 0.0), y(n, 1.0), alpha(n, 0.0), k(n, 0.0), b(n, 0.0) {}
};

namespace detail {
inline double gain2(const ChannelRealization& ch, std::size_t i) {
  const auto ii = static_cast<Eigen::Index>(i);
  return std::norm(ch.H(ii, ii));
}

// Larger root of x^2 + (1 - k(alpha - 1)) x + k = 0, or -inf when complex.
inline double joint_power_root(double k, double alpha) {
  const double km = k * (alpha - 1.0);
  const double disc = km * km + 1.0 - 2.0 * k * (alpha + 1.0);
  if (disc < 0.0) return -std::numeric_limits<double>::infinity();
  return 0.5 * (km - 1.0 + std::sqrt(disc));
}
}  // namespace detail

/// Closed-form joint rule for the average-reward policy. `gradient` holds
/// dJ/dQ_i per user (already cross-link corrected).
inline Allocation allocate_joint(const ChannelRealization& ch, const std::vector<double>& gradient,
                                 const ClusterConfig& config, const Prices& prices,
                                 IntermediateVars* vars = nullptr) {
  const std::size_t n = config.n;
  Allocation out(n);
  IntermediateVars local(n);
  IntermediateVars& v = vars ? *vars : local;
  if (vars) v = IntermediateVars(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double g2 = detail::gain2(ch, i);
    const double alpha = config.W * gradient[i] / (2.0 * prices.gamma);
    const double mu = prices.power_price[i];
    const double Lii = config.L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    v.alpha[i] = alpha;
    v.x0[i] = config.p0[i] * g2 / config.sigma2;
    v.b[i] = std::isinf(mu) ? 0.0 : prices.gamma * Lii / (mu * config.sigma2 * kLn2);
    v.k[i] = std::isinf(mu) ? 0.0 : prices.gamma * g2 / (mu * config.sigma2 * kLn2);
    if (!(alpha > 1.0) || !(g2 > 0.0)) continue;

    const double headroom = config.p_max[i] - config.p0[i];
    double p_d = 0.0;
    if (mu == 0.0) {
      p_d = headroom;
    } else if (!std::isinf(mu)) {
      const double s = std::sqrt(alpha) - 1.0;
      if (v.k[i] >= 1.0 / (s * s)) {
        const double x_total = detail::joint_power_root(v.k[i], alpha);
        p_d = std::max(x_total - v.x0[i], 0.0) * config.sigma2 / g2;
      }
    }
    p_d = std::min(p_d, headroom);
    v.x[i] = p_d * g2 / config.sigma2;
    v.y[i] = (v.x0[i] + v.x[i]) * (alpha - 1.0);
    if (v.y[i] > 1.0) {
      out.C[i] = std::log2(v.y[i]);
      out.p_d[i] = p_d;
    } else {
      v.y[i] = 1.0;
      v.x[i] = 0.0;
    }
  }
  return out;
}

/// Fronthaul-only rule at constant power p0:
/// C_i = (log2(p0 |H_ii|^2 / sigma2 * (mu W dJ/dQ_i / (2 gamma) - 1)^+))^+.
/// `mu` is the continue-probability (1 for the average-reward rule).
inline Allocation allocate_fixed_power(const ChannelRealization& ch, const std::vector<double>& gradient,
                                       const ClusterConfig& config, double gamma, double mu = 1.0) {
  const std::size_t n = config.n;
  Allocation out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double alpha = mu * config.W * gradient[i] / (2.0 * gamma);
    if (!(alpha > 1.0)) continue;
    const double y = config.p0[i] * detail::gain2(ch, i) / config.sigma2 * (alpha - 1.0);
    if (y > 1.0) out.C[i] = std::log2(y);
  }
  return out;
}

/// Per-slot cost: sum_i beta_i Q_i / lambda_i + gamma C_i + mu_i p_d_i.
inline double slot_cost(const std::vector<double>& Q, const Allocation& a, const Prices& prices,
                        const std::vector<double>& beta, const std::vector<double>& lambda) {
  double cost = 0.0;
  for (std::size_t i = 0; i < Q.size(); ++i) {
    cost += beta[i] * Q[i] / lambda[i] + prices.gamma * a.C[i];
    if (a.p_d[i] > 0.0) cost += prices.power_price[i] * a.p_d[i];
  }
  return cost;
}

/// Allocation-dependent part of the per-slot minimization:
/// sum_i gamma C_i + mu_i p_d_i - dJ/dQ_i R_i(H, C, p).
inline double allocation_objective(const ChannelRealization& ch, const std::vector<double>& gradient,
                                   const ClusterConfig& config, const Prices& prices, const Allocation& a) {
  const auto R = rates(ch, a, config);
  double value = 0.0;
  for (std::size_t i = 0; i < config.n; ++i) {
    value += prices.gamma * a.C[i] - gradient[i] * R[i];
    if (a.p_d[i] > 0.0) value += prices.power_price[i] * a.p_d[i];
  }
  return value;
}

/// Full bracketed expression of the per-slot minimization (costs, minus the
/// average-cost constant, plus the drift of the priority function).
inline double slot_objective(const ChannelRealization& ch, const std::vector<double>& Q,
                             const std::vector<double>& gradient, const ClusterConfig& config,
                             const Prices& prices, const Allocation& a, double c_inf = 0.0) {
  double constant = -c_inf;
  for (std::size_t i = 0; i < config.n; ++i)
    constant += config.beta[i] * Q[i] / config.lambda[i] + gradient[i] * config.lambda[i];
  return constant + allocation_objective(ch, gradient, config, prices, a);
}

struct NumericOptions {
  int multistart = 4;
  int max_sweeps = 50;
  double tolerance = 1e-6;   // relative objective improvement per sweep
  int power_scan_points = 48;
  int golden_iterations = 90;
  std::uint64_t seed = 7;
};

struct NumericResult {
  Allocation allocation;
  double objective = 0.0;  // allocation_objective at the returned point
  bool converged = true;
};

namespace detail {

template <class F>
std::pair<double, double> golden_min(F&& f, double lo, double hi, int iterations) {
  constexpr double r = 0.6180339887498948482;
  double a = lo, b = hi;
  double x1 = b - r * (b - a), x2 = a + r * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < iterations && (b - a) > 1e-15 * std::max(1.0, std::abs(b)); ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - r * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + r * (b - a);
      f2 = f(x2);
    }
  }
  double best_x = f1 <= f2 ? x1 : x2;
  double best_f = std::min(f1, f2);
  for (double edge : {lo, hi}) {
    const double fe = f(edge);
    if (fe < best_f) {
      best_f = fe;
      best_x = edge;
    }
  }
  return {best_x, best_f};
}

}  // namespace detail

/// Numerically minimizes allocation_objective over C >= 0 and
/// 0 <= p_d <= p_max - p0 by block-coordinate descent over users. Each user
/// block scans its dynamic power on a log grid, refines by golden section,
/// and for every trial power minimizes the (convex) capacity coordinate by
/// golden section.
inline NumericResult allocate_numeric(const ChannelRealization& ch, const std::vector<double>& gradient,
                                      const ClusterConfig& config, const Prices& prices,
                                      const NumericOptions& opt = {}) {
  const std::size_t n = config.n;
  std::vector<double> c_hi(n), p_hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double alpha = std::max(2.0, config.W * std::max(gradient[i], 0.0) / (2.0 * prices.gamma));
    const double snr_max = config.p_max[i] * detail::gain2(ch, i) / config.sigma2;
    c_hi[i] = std::log2(1.0 + snr_max * alpha * 4.0) + 4.0;
    p_hi[i] = prices.power_control(i) ? config.p_max[i] - config.p0[i] : 0.0;
  }
  auto objective = [&](const Allocation& a) { return allocation_objective(ch, gradient, config, prices, a); };

  auto optimize_capacity = [&](Allocation& a, std::size_t i) {
    auto f = [&](double c) {
      const double keep = a.C[i];
      a.C[i] = c;
      const double v = objective(a);
      a.C[i] = keep;
      return v;
    };
    auto [c, v] = detail::golden_min(f, 0.0, c_hi[i], opt.golden_iterations);
    a.C[i] = c;
    return v;
  };

  auto optimize_block = [&](Allocation& a, std::size_t i) {
    if (p_hi[i] <= 0.0) return optimize_capacity(a, i);
    auto profile = [&](double p) {
      const double keep = a.p_d[i];
      const double keep_c = a.C[i];
      a.p_d[i] = p;
      const double v = optimize_capacity(a, i);
      a.p_d[i] = keep;
      a.C[i] = keep_c;
      return v;
    };
    // log-spaced scan over (0, p_hi] plus the zero boundary
    std::vector<double> grid{0.0};
    const double p_lo = p_hi[i] * 1e-7;
    for (int k = 0; k < opt.power_scan_points; ++k)
      grid.push_back(p_lo * std::pow(p_hi[i] / p_lo, static_cast<double>(k) / (opt.power_scan_points - 1)));
    std::size_t best = 0;
    double best_v = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double v = profile(grid[k]);
      if (v < best_v) {
        best_v = v;
        best = k;
      }
    }
    const double lo = grid[best == 0 ? 0 : best - 1];
    const double hi = grid[std::min(best + 1, grid.size() - 1)];
    auto [p, v] = detail::golden_min(profile, lo, hi, opt.golden_iterations);
    if (best_v < v) {
      p = grid[best];
    }
    a.p_d[i] = p;
    return optimize_capacity(a, i);
  };

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  NumericResult best;
  best.objective = std::numeric_limits<double>::infinity();
  const int starts = std::max(1, opt.multistart);
  for (int s = 0; s < starts; ++s) {
    Allocation a(n);
    for (std::size_t i = 0; i < n; ++i) {
      switch (s) {
        case 0: break;
        case 1: a.C[i] = 0.5 * c_hi[i]; a.p_d[i] = p_hi[i]; break;
        case 2: a.C[i] = 0.25 * c_hi[i]; a.p_d[i] = 0.1 * p_hi[i]; break;
        default: a.C[i] = unit(rng) * c_hi[i]; a.p_d[i] = unit(rng) * p_hi[i]; break;
      }
    }
    double value = objective(a);
    bool converged = false;
    for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
      const double before = value;
      for (std::size_t i = 0; i < n; ++i) value = optimize_block(a, i);
      if (n == 1 || before - value <= opt.tolerance * std::max(std::abs(value), 1e-300)) {
        converged = true;
        break;
      }
    }
    if (value < best.objective) {
      best.allocation = a;
      best.objective = value;
      best.converged = converged;
    }
  }
  return best;
}

}  // namespace cran
