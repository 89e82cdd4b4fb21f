// SPDX-License-Identifier: Apache-2.0
//
// Special functions and scalar root finding used by the priority solvers.

#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cran {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when a root search is handed an interval without a sign change.
class RootBracketError : public std::runtime_error {
 public:
  RootBracketError(double lo, double hi, double f_lo, double f_hi)
      : std::runtime_error(describe(lo, hi, f_lo, f_hi)),
        lo_(lo), hi_(hi), f_lo_(f_lo), f_hi_(f_hi) {}

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double f_lo() const noexcept { return f_lo_; }
  double f_hi() const noexcept { return f_hi_; }

 private:
  static std::string describe(double lo, double hi, double f_lo, double f_hi) {
    std::ostringstream os;
    os.precision(10);
    os << "no sign change on [" << lo << ", " << hi << "]: f(lo) = " << f_lo
       << ", f(hi) = " << f_hi;
    return os.str();
  }

  double lo_, hi_, f_lo_, f_hi_;
};

struct Bracket {
  double lo = 0.0;
  double hi = 0.0;
  double f_lo = 0.0;
  double f_hi = 0.0;

  bool has_sign_change() const noexcept {
    return lo < hi && f_lo * f_hi <= 0.0;
  }
};

inline constexpr double kEulerGamma = 0.57721566490153286060651209008240243;
inline constexpr double kLn2 = 0.69314718055994530941723212145817657;

namespace detail {

// e^z E1(z) by the modified Lentz continued fraction, valid for z > 1.
inline double e1_scaled_cf(double z) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double b = z + 1.0;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -static_cast<double>(i) * i;
    b += 2.0;
    d = 1.0 / (an * d + b);
    c = b + an / c;
    const double del = c * d;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

// Power series, valid for 0 < z <= 1.
inline double e1_series(double z) {
  double sum = 0.0;
  double term = 1.0;
  for (int k = 1; k < 200; ++k) {
    term *= -z / k;
    const double add = term / k;
    sum += add;
    if (std::abs(add) < 1e-18 * std::abs(sum)) break;
  }
  return -kEulerGamma - std::log(z) - sum;
}

}  // namespace detail

namespace detail {
// Relative error injected into every E1 evaluation. Zero except when the
// validation suite checks that it can detect a broken E1.
inline std::atomic<double>& e1_bias() {
  static std::atomic<double> bias{0.0};
  return bias;
}

inline double e1_raw(double z) {
  if (z <= 1.0) return e1_series(z);
  if (z > 745.0) return 0.0;
  return std::exp(-z) * e1_scaled_cf(z);
}
}  // namespace detail

/// Exponential integral E1(z) = int_z^inf e^{-t}/t dt for real z > 0.
inline double exp_integral_e1(double z) {
  if (!(z > 0.0)) {
    throw DomainError("exp_integral_e1: argument must be positive");
  }
  if (std::isinf(z)) return 0.0;
  return detail::e1_raw(z) * (1.0 + detail::e1_bias().load(std::memory_order_relaxed));
}

/// e^z E1(z); stays finite where E1 underflows.
inline double exp_integral_e1_scaled(double z) {
  if (!(z > 0.0)) {
    throw DomainError("exp_integral_e1_scaled: argument must be positive");
  }
  if (std::isinf(z)) return 0.0;
  const double v = z <= 1.0 ? std::exp(z) * detail::e1_series(z) : detail::e1_scaled_cf(z);
  return v * (1.0 + detail::e1_bias().load(std::memory_order_relaxed));
}

/// e^{shift} E1(z) evaluated without overflow for large shift and z.
inline double exp_times_e1(double shift, double z) {
  if (std::isinf(z)) return 0.0;
  return std::exp(shift - z) * exp_integral_e1_scaled(z);
}

/// Root of a continuous monotone function on a sign-change bracket.
///
/// Brent's method; every step that fails to shrink the interval by half is
/// replaced by bisection, so the iteration count is bounded by the bisection
/// count. Returns x with |f(x)| <= tol or bracket width <= tol * max(1, |x|).
inline double root_find_monotone(const std::function<double(double)>& f,
                                 double lo, double hi, double tol = 1e-8,
                                 int max_iter = 400) {
  double a = lo;
  double b = hi;
  double fa = f(a);
  double fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if (!(lo < hi) || fa * fb > 0.0 || std::isnan(fa) || std::isnan(fb)) {
    throw RootBracketError(lo, hi, fa, fb);
  }
  if (std::abs(fa) < std::abs(fb)) {
    std::swap(a, b);
    std::swap(fa, fb);
  }
  double c = a;
  double fc = fa;
  double d = b - a;
  bool bisected = true;
  for (int it = 0; it < max_iter; ++it) {
    const double width = std::abs(b - a);
    if (std::abs(fb) <= tol || width <= tol * std::max(1.0, std::abs(b))) {
      return b;
    }
    double s;
    if (fa != fc && fb != fc) {
      s = a * fb * fc / ((fa - fb) * (fa - fc)) +
          b * fa * fc / ((fb - fa) * (fb - fc)) +
          c * fa * fb / ((fc - fa) * (fc - fb));
    } else {
      s = b - fb * (b - a) / (fb - fa);
    }
    const double lo_s = (3.0 * a + b) / 4.0;
    const bool outside = !((s > std::min(lo_s, b)) && (s < std::max(lo_s, b)));
    const bool slow = bisected ? std::abs(s - b) >= std::abs(b - c) / 2.0
                               : std::abs(s - b) >= std::abs(c - d) / 2.0;
    if (outside || slow) {
      s = 0.5 * (a + b);
      bisected = true;
    } else {
      bisected = false;
    }
    const double fs = f(s);
    d = c;
    c = b;
    fc = fb;
    if (fa * fs < 0.0) {
      b = s;
      fb = fs;
    } else {
      a = s;
      fa = fs;
    }
    if (std::abs(fa) < std::abs(fb)) {
      std::swap(a, b);
      std::swap(fa, fb);
    }
  }
  return b;
}

inline double root_find_monotone(const std::function<double(double)>& f,
                                 const Bracket& bracket, double tol = 1e-8) {
  return root_find_monotone(f, bracket.lo, bracket.hi, tol);
}

}  // namespace cran
