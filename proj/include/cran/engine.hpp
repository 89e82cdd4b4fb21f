// SPDX-License-Identifier: Apache-2.0
//
// Slot-level simulation of one cluster under a fixed policy: seeded trial
// streams, horizon models, online summaries, drift detection and the
// statistics used to aggregate trials.

#pragma once

#include "cran/allocator.hpp"
#include "cran/channel.hpp"
#include "cran/config.hpp"
#include "cran/priority.hpp"
#include "cran/queueing.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace cran {

enum class PolicyKind { joint, fixed_power, discounted, numeric };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::joint: return "joint";
    case PolicyKind::fixed_power: return "fixed_power";
    case PolicyKind::discounted: return "discounted";
    case PolicyKind::numeric: return "numeric";
  }
  return "?";
}

inline PolicyKind parse_policy(const std::string& s) {
  if (s == "joint") return PolicyKind::joint;
  if (s == "fixed_power" || s == "fixed") return PolicyKind::fixed_power;
  if (s == "discounted") return PolicyKind::discounted;
  if (s == "numeric") return PolicyKind::numeric;
  throw ConfigError("unknown policy '" + s + "'");
}

/// Number of slots a trial lasts: fixed, or 1 + Geometric(1 - mu) so that
/// slot t is reached with probability mu^t.
struct Horizon {
  enum class Kind { fixed, geometric };
  Kind kind = Kind::fixed;
  std::size_t T = 100000;
  double mu = 0.9;
  std::size_t cap = 100000000;  // guards against mu extremely close to 1
  // Leading slots of a fixed horizon left out of every statistic.
  std::size_t burn_in = 0;

  void validate() const {
    if (kind == Kind::fixed && T < 1) throw ConfigError("horizon T must be at least 1");
    if (kind == Kind::fixed && burn_in >= T) throw ConfigError("burn-in must be shorter than the horizon");
    if (kind == Kind::geometric && !(mu > 0.0 && mu < 1.0))
      throw ConfigError("geometric horizon needs 0 < mu < 1");
  }
};

/// Aggregate continue-probability of independent per-user departures.
inline double combined_mu(const std::vector<double>& mu_i) {
  double mu = 1.0;
  for (double m : mu_i) {
    if (!(m > 0.0 && m < 1.0)) throw ConfigError("per-user continue probabilities must lie in (0, 1)");
    mu *= m;
  }
  return mu;
}

/// Independent random streams of one trial. The channel and arrival streams
/// depend only on (seed, trial), so every policy evaluated on the same trial
/// index sees the same fading and the same arrivals.
struct TrialStreams {
  Rng channel;
  Rng arrivals;
  Rng horizon;
};

inline Rng derive_stream(std::uint64_t seed, std::uint64_t trial, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32), stream};
  return Rng(seq);
}

inline TrialStreams trial_streams(std::uint64_t seed, std::uint64_t trial) {
  return {derive_stream(seed, trial, 1), derive_stream(seed, trial, 2), derive_stream(seed, trial, 3)};
}

inline std::size_t draw_horizon(const Horizon& h, Rng& rng) {
  if (h.kind == Horizon::Kind::fixed) return h.T;
  std::geometric_distribution<std::uint64_t> geo(1.0 - h.mu);
  return static_cast<std::size_t>(std::min<std::uint64_t>(geo(rng) + 1, h.cap));
}

/// A policy ready to run: the cluster it acts on (fixed-power schemes carry
/// their constant power in p0 = p_max), its priority table and prices.
struct Policy {
  PolicyKind kind = PolicyKind::joint;
  ClusterConfig cluster;
  PriorityTable table;
  Prices prices;
  NumericOptions numeric;
  // Optional per-slot cap on the summed fronthaul; off when infinite.
  double slot_cap = std::numeric_limits<double>::infinity();
  // Drop dynamic power and fronthaul that would only buy rate beyond the
  // current backlog.
  bool trim_to_backlog = false;

  void trim(const ChannelRealization& ch, const QueueState& Q, Allocation& a) const {
    const std::size_t n = cluster.n;
    for (std::size_t i = 0; i < n; ++i) {
      const double need = Q[i] / cluster.tau;
      auto rate_i = [&](const Allocation& x) { return rates(ch, x, cluster)[i]; };
      if (!(rate_i(a) > need)) continue;
      auto shrink = [&](double& v) {
        const double hi0 = v;
        double lo = 0.0, hi = hi0;
        v = 0.0;
        if (rate_i(a) >= need) return;
        for (int k = 0; k < 50; ++k) {
          const double mid = 0.5 * (lo + hi);
          v = mid;
          if (rate_i(a) >= need) hi = mid;
          else lo = mid;
        }
        v = hi;
      };
      if (a.p_d[i] > 0.0) shrink(a.p_d[i]);
      if (rate_i(a) > need && a.C[i] > 0.0) shrink(a.C[i]);
    }
  }

  Allocation decide(const ChannelRealization& ch, const QueueState& Q) const {
    const auto g = table.gradient(Q);
    Allocation a;
    switch (kind) {
      case PolicyKind::joint: a = allocate_joint(ch, g, cluster, prices); break;
      case PolicyKind::fixed_power: a = allocate_fixed_power(ch, g, cluster, prices.gamma, 1.0); break;
      case PolicyKind::discounted: a = allocate_fixed_power(ch, g, cluster, prices.gamma, table.mu); break;
      case PolicyKind::numeric: a = allocate_numeric(ch, g, cluster, prices, numeric).allocation; break;
    }
    if (trim_to_backlog) trim(ch, Q, a);
    if (std::isfinite(slot_cap)) {
      double total = 0.0;
      for (double c : a.C) total += c;
      if (total > slot_cap) {
        for (double& c : a.C) c *= slot_cap / total;
      }
    }
    return a;
  }
};

/// Slot loop with caller-supplied channel and arrival sources:
/// `channel(t)` returns the realization of slot t, `arrivals(t)` the bits
/// arriving during it. Every slot is handed to `sink(t, Q, R, allocation, A)`.
template <class ChannelFn, class ArrivalFn, class Sink>
void simulate_with(const Policy& policy, std::size_t T, QueueState Q, ChannelFn&& channel, ArrivalFn&& arrivals,
                   Sink&& sink) {
  const auto& c = policy.cluster;
  for (std::size_t t = 0; t < T; ++t) {
    const ChannelRealization ch = channel(t);
    const auto a = policy.decide(ch, Q);
    const auto R = rates(ch, a, c);
    const std::vector<double> A = arrivals(t);
    sink(t, Q, R, a, A);
    Q = queue_step(Q, R, A, c.tau);
  }
}

/// Runs the slot loop for `T` slots from backlog Q with the trial's random
/// streams.
template <class Sink>
void simulate(const Policy& policy, std::size_t T, QueueState Q, TrialStreams& streams, Sink&& sink) {
  const auto& c = policy.cluster;
  simulate_with(
      policy, T, std::move(Q), [&](std::size_t) { return sample_channel(c, streams.channel); },
      [&](std::size_t) { return sample_arrivals(c.lambda, c.tau, streams.arrivals); }, std::forward<Sink>(sink));
}

/// Least-squares slope of y over consecutive integer x.
struct SlopeAccumulator {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;

  void add(double x, double y) {
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double slope() const {
    const double den = n * sxx - sx * sx;
    return den > 0.0 ? (n * sxy - sx * sy) / den : 0.0;
  }
};

/// Online per-trial statistics; equal to the corresponding trace reductions.
struct TrialSummary {
  std::size_t slots = 0;
  std::vector<double> sum_Q;   // bits * slots
  std::vector<double> sum_C;   // bits/sec/Hz * slots
  std::vector<double> sum_pd;  // watts * slots
  std::vector<double> sum_R;   // bits/sec * slots
  std::vector<double> sum_A;   // bits
  std::vector<double> final_Q;
  double drift_slope = 0.0;    // bits per slot, total backlog over the last half
  bool unstable = false;

  std::vector<double> mean_Q() const { return scaled(sum_Q, 1.0 / static_cast<double>(slots)); }
  std::vector<double> mean_C() const { return scaled(sum_C, 1.0 / static_cast<double>(slots)); }
  std::vector<double> mean_pd() const { return scaled(sum_pd, 1.0 / static_cast<double>(slots)); }

  double total_C() const {
    double s = 0.0;
    for (double c : sum_C) s += c;
    return s;
  }

 private:
  static std::vector<double> scaled(const std::vector<double>& v, double f) {
    std::vector<double> out(v);
    for (double& x : out) x *= f;
    return out;
  }
};

struct InstabilityOptions {
  double eps = 0.05;            // slope threshold relative to mean per-slot arrivals
  std::size_t min_slots = 1000; // shorter trials are never flagged
};

/// Drift test: slope of the total backlog over the last half of the trace
/// compared against eps times the mean per-slot arrivals.
struct DriftResult {
  bool unstable = false;
  double slope = 0.0;
};

inline DriftResult drift_decision(double slope, double arrivals_per_slot, std::size_t slots,
                                  const InstabilityOptions& opt) {
  DriftResult d;
  d.slope = slope;
  d.unstable = slots >= opt.min_slots && slope > opt.eps * arrivals_per_slot;
  return d;
}

inline DriftResult detect_instability(const Trace& trace, const std::vector<double>& lambda,
                                      const InstabilityOptions& opt = {}) {
  SlopeAccumulator acc;
  const std::size_t T = trace.slots.size();
  for (std::size_t t = T / 2; t < T; ++t) {
    double total = 0.0;
    for (double q : trace.slots[t].Q) total += q;
    acc.add(static_cast<double>(t - T / 2), total);
  }
  double per_slot = 0.0;
  for (double l : lambda) per_slot += l * trace.tau;
  return drift_decision(acc.slope(), per_slot, T, opt);
}

/// One trial of `policy`: draws the horizon, runs it and summarizes. When
/// `trace` is given every slot is recorded as well.
inline TrialSummary run_trial(const Policy& policy, const Horizon& horizon, std::uint64_t seed,
                              std::uint64_t trial, const QueueState& Q0 = {}, Trace* trace = nullptr,
                              const InstabilityOptions& inst = {}) {
  const std::size_t n = policy.cluster.n;
  auto streams = trial_streams(seed, trial);
  const std::size_t T = draw_horizon(horizon, streams.horizon);
  TrialSummary s;
  s.sum_Q.assign(n, 0.0);
  s.sum_C.assign(n, 0.0);
  s.sum_pd.assign(n, 0.0);
  s.sum_R.assign(n, 0.0);
  s.sum_A.assign(n, 0.0);
  if (trace) {
    trace->n = n;
    trace->tau = policy.cluster.tau;
    trace->slots.clear();
    trace->slots.reserve(T);
  }
  SlopeAccumulator drift;
  const std::size_t skip = horizon.kind == Horizon::Kind::fixed ? std::min(horizon.burn_in, T - 1) : 0;
  const std::size_t half = skip + (T - skip) / 2;
  QueueState Q = Q0.empty() ? QueueState(n, 0.0) : Q0;
  QueueState last = Q;
  simulate(policy, T, Q, streams,
           [&](std::size_t t, const QueueState& q, const std::vector<double>& R, const Allocation& a,
               const std::vector<double>& A) {
             if (trace) trace->slots.push_back({q, R, a.C, a.p_d, A});
             last = queue_step(q, R, A, policy.cluster.tau);
             if (t < skip) return;
             double total = 0.0;
             for (std::size_t i = 0; i < n; ++i) {
               s.sum_Q[i] += q[i];
               s.sum_C[i] += a.C[i];
               s.sum_pd[i] += a.p_d[i];
               s.sum_R[i] += R[i];
               s.sum_A[i] += A[i];
               total += q[i];
             }
             if (t >= half) drift.add(static_cast<double>(t - half), total);
           });
  s.slots = T - skip;
  s.final_Q = last;
  double per_slot = 0.0;
  for (double l : policy.cluster.lambda) per_slot += l * policy.cluster.tau;
  const auto d = drift_decision(drift.slope(), per_slot, s.slots, inst);
  s.drift_slope = d.slope;
  s.unstable = d.unstable;
  return s;
}

/// Weighted sum of Little's-law average delays, seconds. Users without
/// traffic contribute nothing.
inline double weighted_average_delay(const TrialSummary& s, const ClusterConfig& c) {
  double d = 0.0;
  for (std::size_t i = 0; i < c.n; ++i)
    if (c.lambda[i] > 0.0) d += c.beta[i] * s.sum_Q[i] / (static_cast<double>(s.slots) * c.lambda[i]);
  return d;
}

/// Weighted sum of accumulated delays over the whole horizon.
inline double weighted_total_delay(const TrialSummary& s, const ClusterConfig& c) {
  double d = 0.0;
  for (std::size_t i = 0; i < c.n; ++i)
    if (c.lambda[i] > 0.0) d += c.beta[i] * s.sum_Q[i] / c.lambda[i];
  return d;
}

// --- statistics --------------------------------------------------------------

struct MeanCI {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
  double stderr_ = 0.0;
  std::size_t count = 0;
};

/// Student-t confidence interval for the mean. A single sample gives a
/// zero-width interval.
inline MeanCI mean_ci(const std::vector<double>& x, double level = 0.95) {
  MeanCI r;
  r.count = x.size();
  if (x.empty()) {
    r.mean = r.low = r.high = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double sum = 0.0;
  for (double v : x) sum += v;
  r.mean = sum / static_cast<double>(x.size());
  if (x.size() < 2 || !std::isfinite(r.mean)) {
    r.low = r.high = r.mean;
    return r;
  }
  double ss = 0.0;
  for (double v : x) ss += (v - r.mean) * (v - r.mean);
  const double sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
  r.stderr_ = sd / std::sqrt(static_cast<double>(x.size()));
  boost::math::students_t dist(static_cast<double>(x.size() - 1));
  const double q = boost::math::quantile(boost::math::complement(dist, 0.5 * (1.0 - level)));
  r.low = r.mean - q * r.stderr_;
  r.high = r.mean + q * r.stderr_;
  return r;
}

// --- parallel trials ---------------------------------------------------------

inline std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Evaluates fn(k) for k in [0, count) on `threads` workers. Results are
/// stored by index, so the output does not depend on scheduling. The first
/// exception thrown by any task is rethrown.
template <class F>
auto parallel_map(std::size_t count, std::size_t threads, F&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> out(count);
  threads = std::min(resolve_threads(threads), std::max<std::size_t>(count, 1));
  if (threads <= 1) {
    for (std::size_t k = 0; k < count; ++k) out[k] = fn(k);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) {
        try {
          out[k] = fn(k);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

/// Runs `trials` trials of the same policy; trial k uses stream index
/// `first_trial + k`.
inline std::vector<TrialSummary> run_trials(const Policy& policy, const Horizon& horizon, std::uint64_t seed,
                                            std::size_t trials, std::size_t threads, const QueueState& Q0 = {},
                                            const InstabilityOptions& inst = {}, std::uint64_t first_trial = 0) {
  return parallel_map(trials, threads, [&](std::size_t k) {
    return run_trial(policy, horizon, seed, first_trial + k, Q0, nullptr, inst);
  });
}

}  // namespace cran
