// SPDX-License-Identifier: Apache-2.0
//
// Queue dynamics, Poisson arrivals and Little's-law delay accounting.

#pragma once

#include "cran/channel.hpp"
#include "cran/config.hpp"

#include <algorithm>
#include <charconv>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cran {

/// Per-user backlog in bits.
using QueueState = std::vector<double>;

/// One slot of a simulation, all vectors indexed by user.
struct SlotRecord {
  std::vector<double> Q;    // backlog at the start of the slot, bits
  std::vector<double> R;    // rate, bits/sec
  std::vector<double> C;    // fronthaul, bits/sec/Hz
  std::vector<double> p_d;  // dynamic power, watts
  std::vector<double> A;    // arrivals at the end of the slot, bits
};

struct Trace {
  double tau = 1e-3;
  std::size_t n = 0;
  std::vector<SlotRecord> slots;

  std::size_t length() const { return slots.size(); }
};

/// Q' = max(Q - R tau, 0) + A, componentwise.
inline QueueState queue_step(const QueueState& Q, const std::vector<double>& R,
                             const std::vector<double>& A, double tau) {
  QueueState next(Q.size());
  for (std::size_t i = 0; i < Q.size(); ++i) next[i] = std::max(Q[i] - R[i] * tau, 0.0) + A[i];
  return next;
}

/// Poisson bit arrivals with mean lambda_i * tau per slot.
inline std::vector<double> sample_arrivals(const std::vector<double>& lambda, double tau, Rng& rng) {
  std::vector<double> A(lambda.size(), 0.0);
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    const double mean = lambda[i] * tau;
    if (mean <= 0.0) continue;
    std::poisson_distribution<long long> poisson(mean);
    A[i] = static_cast<double>(poisson(rng));
  }
  return A;
}

namespace detail {
inline void require_rates(const std::vector<double>& lambda, std::size_t n) {
  if (lambda.size() != n) throw std::invalid_argument("lambda size does not match trace");
  for (double l : lambda)
    if (!(l > 0.0)) throw DomainError("delay is undefined for a user with zero arrival rate");
}
}  // namespace detail

/// Time-averaged Little's-law delay per user, seconds.
inline std::vector<double> average_delay(const Trace& trace, const std::vector<double>& lambda) {
  detail::require_rates(lambda, trace.n);
  if (trace.slots.empty()) throw std::invalid_argument("average_delay needs at least one slot");
  std::vector<double> D(trace.n, 0.0);
  for (const auto& s : trace.slots)
    for (std::size_t i = 0; i < trace.n; ++i) D[i] += s.Q[i];
  const double T = static_cast<double>(trace.slots.size());
  for (std::size_t i = 0; i < trace.n; ++i) D[i] /= T * lambda[i];
  return D;
}

/// Discounted total delay per user: sum_t Q_i(t)/lambda_i * mu^(t-1).
inline std::vector<double> discounted_delay(const Trace& trace, const std::vector<double>& lambda,
                                            double mu) {
  if (!(mu > 0.0 && mu < 1.0)) throw DomainError("discount must lie in (0, 1)");
  detail::require_rates(lambda, trace.n);
  std::vector<double> D(trace.n, 0.0);
  double w = 1.0;
  for (const auto& s : trace.slots) {
    for (std::size_t i = 0; i < trace.n; ++i) D[i] += w * s.Q[i] / lambda[i];
    w *= mu;
  }
  return D;
}

/// Undiscounted total delay over the whole trace, used with random horizons.
inline std::vector<double> total_delay(const Trace& trace, const std::vector<double>& lambda) {
  detail::require_rates(lambda, trace.n);
  std::vector<double> D(trace.n, 0.0);
  for (const auto& s : trace.slots)
    for (std::size_t i = 0; i < trace.n; ++i) D[i] += s.Q[i] / lambda[i];
  return D;
}

struct ConstraintUsage {
  std::vector<double> C;    // per-RRH capacity usage
  std::vector<double> p_d;  // per-user dynamic power usage
};

/// Time averages of capacity and dynamic power, or their discounted sums
/// when a discount is supplied. `burn_in` slots at the start are skipped.
inline ConstraintUsage constraint_usage(const Trace& trace, std::optional<double> mu = std::nullopt,
                                        std::size_t burn_in = 0) {
  ConstraintUsage u{std::vector<double>(trace.n, 0.0), std::vector<double>(trace.n, 0.0)};
  if (mu && !(*mu > 0.0 && *mu < 1.0)) throw DomainError("discount must lie in (0, 1)");
  double w = 1.0;
  std::size_t count = 0;
  for (std::size_t t = burn_in; t < trace.slots.size(); ++t) {
    const auto& s = trace.slots[t];
    for (std::size_t i = 0; i < trace.n; ++i) {
      u.C[i] += w * s.C[i];
      u.p_d[i] += w * s.p_d[i];
    }
    if (mu) w *= *mu;
    ++count;
  }
  if (!mu && count > 0) {
    for (std::size_t i = 0; i < trace.n; ++i) {
      u.C[i] /= static_cast<double>(count);
      u.p_d[i] /= static_cast<double>(count);
    }
  }
  return u;
}

namespace detail {
inline void append_number(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}
}  // namespace detail

/// Writes one row per (slot, user): t, user, Q_bits, R_bps, C_bpshz, p_d_watts, A_bits.
inline void write_trace_csv(std::ostream& os, const Trace& trace) {
  os << "t,user,Q_bits,R_bps,C_bpshz,p_d_watts,A_bits\n";
  std::string line;
  for (std::size_t t = 0; t < trace.slots.size(); ++t) {
    const auto& s = trace.slots[t];
    for (std::size_t i = 0; i < trace.n; ++i) {
      line.clear();
      line += std::to_string(t + 1);
      line += ',';
      line += std::to_string(i);
      for (double v : {s.Q[i], s.R[i], s.C[i], s.p_d[i], s.A[i]}) {
        line += ',';
        detail::append_number(line, v);
      }
      line += '\n';
      os << line;
    }
  }
}

}  // namespace cran
