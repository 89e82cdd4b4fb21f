// SPDX-License-Identifier: Apache-2.0
//
// Cluster parameters shared by the channel model, the solvers and the
// simulator.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cran {

using RealMatrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::MatrixXcd;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when prices cannot be tuned or a priority table has no solution.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Physical and economic parameters of one cooperating cluster.
///
/// Units: W in Hz, tau in seconds, sigma2 in watts, c_tot in bits/sec/Hz,
/// powers in watts, lambda in bits/sec. Users and RRHs share the index
/// space [0, n).
struct ClusterConfig {
  std::size_t n = 1;
  double W = 2e6;
  double tau = 1e-3;
  double sigma2 = 1e-13;
  double c_tot = 10.0;
  RealMatrix L = RealMatrix::Identity(1, 1);
  std::vector<double> p0{0.1};
  std::vector<double> p_max{1.0};
  std::vector<double> lambda{1e6};
  std::vector<double> beta{1.0};
  std::uint64_t seed = 1;
  // Variance of the small-scale complex Gaussian entries.
  double fading_variance = 1.0;

  /// Largest off-diagonal path-loss gain.
  double delta() const {
    double d = 0.0;
    for (Eigen::Index i = 0; i < L.rows(); ++i)
      for (Eigen::Index j = 0; j < L.cols(); ++j)
        if (i != j) d = std::max(d, L(i, j));
    return d;
  }

  bool diagonal() const { return delta() == 0.0; }

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (n < 1) fail("cluster size n must be at least 1");
    if (!(W > 0.0)) fail("bandwidth W must be positive");
    if (!(tau > 0.0)) fail("slot length tau must be positive");
    if (!(sigma2 > 0.0)) fail("noise power sigma2 must be positive");
    if (!(c_tot >= 0.0) || !std::isfinite(c_tot)) fail("fronthaul budget c_tot must be nonnegative");
    if (!(fading_variance > 0.0)) fail("fading_variance must be positive");
    const auto un = static_cast<Eigen::Index>(n);
    if (L.rows() != un || L.cols() != un) fail("path-loss matrix L must be n x n");
    for (Eigen::Index i = 0; i < un; ++i) {
      if (!(L(i, i) > 0.0)) fail("diagonal path-loss gains must be positive");
      for (Eigen::Index j = 0; j < un; ++j) {
        if (!(L(i, j) >= 0.0) || !std::isfinite(L(i, j)))
          fail("path-loss gains must be finite and nonnegative");
        if (i != j && L(i, j) > L(i, i))
          fail("cross-link gain L(i,j) exceeds direct gain L(i,i)");
      }
    }
    auto check_size = [&](const std::vector<double>& v, const char* name) {
      if (v.size() != n) fail(std::string(name) + " must have n entries");
    };
    check_size(p0, "p0");
    check_size(p_max, "p_max");
    check_size(lambda, "lambda");
    check_size(beta, "beta");
    double beta_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(p0[i] > 0.0)) fail("p0 must be positive");
      if (!(p_max[i] >= p0[i])) fail("p_max must be at least p0");
      if (!(lambda[i] >= 0.0) || !std::isfinite(lambda[i])) fail("lambda must be nonnegative");
      if (!(beta[i] >= 0.0)) fail("beta must be nonnegative");
      beta_sum += beta[i];
    }
    if (!(beta_sum > 0.0)) fail("beta must have a positive sum");
  }
};

/// Per-slot decision: fronthaul capacities and dynamic powers.
struct Allocation {
  std::vector<double> C;    // bits/sec/Hz per RRH
  std::vector<double> p_d;  // watts per user

  Allocation() = default;
  explicit Allocation(std::size_t n) : C(n, 0.0), p_d(n, 0.0) {}

  std::size_t size() const { return C.size(); }

  bool valid() const {
    if (C.size() != p_d.size()) return false;
    for (std::size_t i = 0; i < C.size(); ++i) {
      if (!(C[i] >= 0.0) || !std::isfinite(C[i])) return false;
      if (!(p_d[i] >= 0.0) || !std::isfinite(p_d[i])) return false;
    }
    return true;
  }
};

}  // namespace cran
