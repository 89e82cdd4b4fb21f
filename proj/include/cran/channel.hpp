// SPDX-License-Identifier: Apache-2.0
//
// Wireless channel generation, quantization noise, zero-forcing and
// end-to-end rates for one cooperating cluster.

#pragma once

#include "cran/config.hpp"
#include "cran/numerics.hpp"

#include <Eigen/SVD>

#include <complex>
#include <limits>
#include <random>

namespace cran {

using Rng = std::mt19937_64;

struct ChannelRealization {
  ComplexMatrix h_tilde;  // small-scale gains
  ComplexMatrix H;        // H(i,j) = h_tilde(i,j) * sqrt(L(i,j)), RRH i, user j
  ComplexMatrix S;        // zero-forcing matrix, S = H^-1
  double cond = 1.0;      // 2-norm condition number of H
  std::size_t resamples = 0;

  std::size_t size() const { return static_cast<std::size_t>(H.rows()); }

  /// |h_tilde(i,i)|^2, the normalized direct-link power gain.
  double direct_gain(std::size_t i) const {
    return std::norm(h_tilde(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
  }
};

inline constexpr double kMaxConditionNumber = 1e6;
inline constexpr std::size_t kMaxChannelResamples = 100;

inline double condition_number(const ComplexMatrix& H) {
  if (H.rows() == 1) return std::abs(H(0, 0)) > 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<ComplexMatrix> svd(H);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

/// Builds H and S from given small-scale gains. Throws DomainError when H is
/// too ill-conditioned to zero-force.
inline ChannelRealization make_channel(const ClusterConfig& config, const ComplexMatrix& h_tilde) {
  ChannelRealization ch;
  ch.h_tilde = h_tilde;
  ch.H = h_tilde.cwiseProduct(config.L.cwiseSqrt().cast<std::complex<double>>());
  ch.cond = condition_number(ch.H);
  if (!(ch.cond <= kMaxConditionNumber)) throw DomainError("channel matrix is singular or ill-conditioned");
  ch.S = ch.H.inverse();
  return ch;
}

/// Draws i.i.d. zero-mean complex Gaussian small-scale gains and zero-forces
/// them. Realizations with condition number above kMaxConditionNumber are
/// redrawn; the count is kept in `resamples`.
inline ChannelRealization sample_channel(const ClusterConfig& config, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(config.n);
  std::normal_distribution<double> normal(0.0, std::sqrt(config.fading_variance / 2.0));
  ComplexMatrix ht(n, n);
  for (std::size_t attempt = 0; attempt <= kMaxChannelResamples; ++attempt) {
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i) {
        const double re = normal(rng);
        const double im = normal(rng);
        ht(i, j) = {re, im};
      }
    ComplexMatrix H = ht.cwiseProduct(config.L.cwiseSqrt().cast<std::complex<double>>());
    const double cond = condition_number(H);
    if (cond <= kMaxConditionNumber) {
      ChannelRealization ch;
      ch.h_tilde = ht;
      ch.H = std::move(H);
      ch.cond = cond;
      ch.S = ch.H.inverse();
      ch.resamples = attempt;
      return ch;
    }
  }
  throw DomainError("channel stays ill-conditioned after resampling; path-loss matrix is degenerate");
}

/// Quantization-noise variance per RRH: (sum_j |H_ij|^2 p_j + sigma2) / (2^C_i - 1).
/// C_i = 0 yields +inf.
inline std::vector<double> quantization_noise(const ComplexMatrix& H, const std::vector<double>& p,
                                              const std::vector<double>& C, double sigma2) {
  const auto n = static_cast<std::size_t>(H.rows());
  std::vector<double> N(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (C[i] < 0.0 || std::isnan(C[i])) throw DomainError("fronthaul capacity must be nonnegative");
    double received = sigma2;
    for (std::size_t j = 0; j < n; ++j)
      received += std::norm(H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) * p[j];
    const double levels = std::expm1(C[i] * kLn2);
    N[i] = levels > 0.0 ? received / levels : std::numeric_limits<double>::infinity();
  }
  return N;
}

/// Total transmit power per user, p0 + p_d.
inline std::vector<double> total_power(const ClusterConfig& config, const Allocation& a) {
  std::vector<double> p(config.n);
  for (std::size_t i = 0; i < config.n; ++i) p[i] = config.p0[i] + a.p_d[i];
  return p;
}

/// End-to-end zero-forcing rates in bits/sec. The effective noise of user i
/// sums |S_ij|^2 (N_j + sigma2) over every RRH j.
inline std::vector<double> rates(const ChannelRealization& ch, const Allocation& a,
                                 const ClusterConfig& config) {
  const std::size_t n = config.n;
  const auto p = total_power(config, a);
  const auto N = quantization_noise(ch.H, p, a.C, config.sigma2);
  std::vector<double> R(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p[i] > 0.0)) continue;
    double noise = 0.0;
    bool blocked = false;
    for (std::size_t j = 0; j < n; ++j) {
      const double s2 = std::norm(ch.S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      if (s2 == 0.0) continue;
      if (std::isinf(N[j])) {
        blocked = true;
        break;
      }
      noise += s2 * (N[j] + config.sigma2);
    }
    if (blocked) continue;
    R[i] = 0.5 * config.W * std::log2(1.0 + p[i] / noise);
  }
  return R;
}

/// Single-link rate with no cross-links: S_ii = 1 / h_ii.
inline double rate_single_user(double gain2, double C, double p, double sigma2, double W) {
  if (C < 0.0) throw DomainError("fronthaul capacity must be nonnegative");
  if (C == 0.0 || !(p > 0.0)) return 0.0;
  const double N = (p * gain2 + sigma2) / std::expm1(C * kLn2);
  return 0.5 * W * std::log2(1.0 + p * gain2 / (N + sigma2));
}

inline double rate_single_user(std::complex<double> h, double C, double p, double sigma2, double W) {
  return rate_single_user(std::norm(h), C, p, sigma2, W);
}

}  // namespace cran
