// SPDX-License-Identifier: Apache-2.0
//
// Closed-form channel expectations of the per-slot optimal allocation for a
// single link without cross-links, with z = |h~_ii|^2 ~ Exp(1).
//
// Notation (all dimensionless unless noted):
//   alpha = W J'(Q) / (2 gamma)     normalized queue priority
//   a     = sigma2 / (p0 L_ii)      inverse base SNR
//   b     = gamma L_ii / (mu sigma2 ln2), mu the dynamic-power price
//   h0    = 1 / (b (sqrt(alpha) - 1)^2)   dynamic power is used for z > h0
//   h4    = a / (alpha - 1)               base power alone earns fronthaul for z > h4
//   h3    = min(h0, h4)

#pragma once

#include "cran/config.hpp"
#include "cran/numerics.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <random>

namespace cran {

/// The single-link view of the cluster used by the priority solvers.
struct LinkModel {
  double W = 2e6;
  double sigma2 = 1e-13;
  double L = 1e-10;      // direct path-loss gain L_ii
  double p0 = 0.1;       // base (or fixed) transmit power
  double gamma = 1.0;    // fronthaul price
  double power_price = std::numeric_limits<double>::infinity();  // inf: no power control
  double lambda = 1e6;
  double beta = 1.0;

  double a() const { return sigma2 / (p0 * L); }
  double b() const {
    if (std::isinf(power_price)) return 0.0;
    return gamma * L / (power_price * sigma2 * kLn2);
  }
  bool power_control() const { return !std::isinf(power_price); }

  static LinkModel from_cluster(const ClusterConfig& c, std::size_t i, double gamma,
                                double power_price) {
    LinkModel m;
    m.W = c.W;
    m.sigma2 = c.sigma2;
    m.L = c.L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    m.p0 = c.p0[i];
    m.gamma = gamma;
    m.power_price = power_price;
    m.lambda = c.lambda[i];
    m.beta = c.beta[i];
    return m;
  }
};

struct Thresholds {
  double h0 = std::numeric_limits<double>::infinity();
  double h4 = std::numeric_limits<double>::infinity();
  double h3 = std::numeric_limits<double>::infinity();
};

inline Thresholds thresholds(double alpha, const LinkModel& m) {
  Thresholds t;
  if (!(alpha > 1.0)) return t;
  const double b = m.b();
  if (b > 0.0) {
    const double s = std::sqrt(alpha) - 1.0;
    t.h0 = 1.0 / (b * s * s);
  }
  t.h4 = m.a() / (alpha - 1.0);
  t.h3 = std::min(t.h0, t.h4);
  return t;
}

/// Counts evaluations that needed the Monte-Carlo fallback.
inline std::atomic<std::size_t>& expectation_fallback_counter() {
  static std::atomic<std::size_t> counter{0};
  return counter;
}

namespace detail {

inline double e1_or_zero(double z) { return std::isinf(z) ? 0.0 : exp_integral_e1(z); }
inline double exp_neg(double z) { return std::isinf(z) ? 0.0 : std::exp(-z); }

// Per-realization joint optimum using the large-alpha power law; used only
// when a closed-form argument leaves the domain of E1.
inline double capacity_mc_fallback(double alpha, const LinkModel& m) {
  ++expectation_fallback_counter();
  const auto t = thresholds(alpha, m);
  const double c = m.b() * (alpha - 1.0);
  std::mt19937_64 rng(0x5eed);
  std::exponential_distribution<double> expo(1.0);
  constexpr int samples = 200000;
  double sum = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double z = expo(rng);
    if (z <= t.h3) continue;
    const double x = z < t.h0 ? z / m.a() : c * z - 1.0;
    sum += std::log2(x * (alpha - 1.0));
  }
  return sum / samples;
}

}  // namespace detail

// --- fixed transmit power ---------------------------------------------------

/// E[C*] when only fronthaul is allocated, bits/sec/Hz.
inline double expected_capacity_fixed(double alpha, const LinkModel& m) {
  if (!(alpha > 1.0)) return 0.0;
  return exp_integral_e1(m.a() / (alpha - 1.0)) / kLn2;
}

/// E[R*] when only fronthaul is allocated, bits/sec.
inline double expected_rate_fixed(double alpha, const LinkModel& m) {
  if (!(alpha > 1.0)) return 0.0;
  const double a = m.a();
  return 0.5 * m.W * exp_times_e1(a, a * alpha / (alpha - 1.0)) / kLn2;
}

/// Limit of expected_rate_fixed as alpha grows: the unquantized ergodic rate.
inline double max_rate_fixed(const LinkModel& m) {
  return 0.5 * m.W * exp_integral_e1_scaled(m.a()) / kLn2;
}

// --- joint power and fronthaul ---------------------------------------------

/// E[mu p*_d] in cost units, clamped at zero.
inline double expected_power_cost(double alpha, const LinkModel& m) {
  if (!(alpha > 1.0) || !m.power_control()) return 0.0;
  const auto t = thresholds(alpha, m);
  const double value = (m.gamma / kLn2 * (alpha - 1.0) - m.power_price * m.p0) * detail::exp_neg(t.h0) -
                       m.power_price * m.sigma2 / m.L * detail::e1_or_zero(t.h0);
  return std::max(value, 0.0);
}

/// E[C*] for the joint allocation, bits/sec/Hz.
inline double expected_capacity(double alpha, const LinkModel& m) {
  if (!(alpha > 1.0)) return 0.0;
  if (!m.power_control()) return expected_capacity_fixed(alpha, m);
  const auto t = thresholds(alpha, m);
  const double c = m.b() * (alpha - 1.0);
  const double e0 = detail::exp_neg(t.h0);
  double value = 0.0;
  if (t.h3 < t.h0) {
    value += -e0 * std::log2(t.h0 / t.h3);
    value += (exp_integral_e1(t.h3) - detail::e1_or_zero(t.h0)) / kLn2;
  }
  if (std::isinf(t.h0)) return value;
  const double shifted = t.h0 - 1.0 / c;
  if (!(shifted > 0.0)) return detail::capacity_mc_fallback(alpha, m);
  value += e0 * std::log2((alpha - 1.0) * (c * t.h0 - 1.0));
  value += exp_times_e1(-1.0 / c, shifted) / kLn2;
  return value;
}

/// E[R*_{i,0}] for the joint allocation, bits/sec.
inline double expected_rate(double alpha, const LinkModel& m) {
  if (!(alpha > 1.0)) return 0.0;
  if (!m.power_control()) return expected_rate_fixed(alpha, m);
  const auto t = thresholds(alpha, m);
  const double e0 = detail::exp_neg(t.h0);
  double value = 0.0;
  if (t.h3 < t.h0) {
    const double shift = t.h3 * (alpha - 1.0);
    value += -e0 * std::log2(t.h0 / (alpha * t.h3) + (alpha - 1.0) / alpha);
    value += (exp_times_e1(shift, t.h3 * alpha) - exp_times_e1(shift, t.h0 + shift)) / kLn2;
  }
  if (!std::isinf(t.h0)) {
    value += e0 * std::log2((alpha - 1.0) * (alpha - 1.0) * m.b() * t.h0 / alpha);
    value += exp_integral_e1(t.h0) / kLn2;
  }
  return 0.5 * m.W * value;
}

}  // namespace cran
