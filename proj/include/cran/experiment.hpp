// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: policy construction, multiplier tuning against
// the fronthaul and power budgets, sweeps over arrival rate, fronthaul budget
// or departure probability, and the weighted-sum Pareto sweep.

#pragma once

#include "cran/engine.hpp"
#include "cran/priority.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cran {

/// Lagrange multipliers of one policy plus the constant transmit power of
/// fixed-power schemes.
struct Multipliers {
  double gamma = 1e-3;
  std::vector<double> power_price;  // per user; +inf disables power control
  std::vector<double> fixed_power;  // per user, watts; empty keeps cluster p0
};

struct TuningOptions {
  bool enabled = true;
  std::size_t pilot_slots = 20000;    // fixed-horizon pilot length
  std::size_t pilot_trials = 400;     // geometric-horizon pilot size
  double tolerance = 0.02;            // relative
  int max_iterations = 40;
  int max_expansions = 12;
  double gamma_init = 1e-3;
  double power_price_init = 1e-3;
  // Receives one line per pilot evaluation when set.
  std::function<void(const std::string&)> log;
};

struct ExperimentConfig {
  std::string experiment = "average";  // average | finite | pareto
  ClusterConfig cluster;
  SolverParams solver;
  Horizon horizon;
  std::vector<PolicyKind> policies{PolicyKind::joint, PolicyKind::fixed_power};
  std::size_t trials = 20;
  std::size_t threads = 0;
  std::uint64_t seed = 1;
  std::string sweep_param = "none";  // none | lambda1 | lambda | c_tot | mu
  std::vector<double> sweep_values;
  std::vector<double> p_d_target;    // average dynamic power of the joint scheme, watts
  bool power_match = true;
  std::vector<double> fixed_power;   // fixed-power level when not matched; empty = p0
  TuningOptions tuning;
  std::size_t qref_pilot_slots = 10000;
  std::vector<double> q_ref;         // explicit reference backlog; empty = pilot
  bool crosslinks = true;
  InstabilityOptions instability;
  std::vector<double> initial_backlog;
  std::vector<std::vector<double>> beta_grid;
  double slot_cap = std::numeric_limits<double>::infinity();
  bool trim_to_backlog = true;

  void validate() const {
    cluster.validate();
    horizon.validate();
    if (trials < 1) throw ConfigError("trials must be at least 1");
    if (experiment != "average" && experiment != "finite" && experiment != "pareto")
      throw ConfigError("experiment must be average, finite or pareto");
    if (sweep_param != "none" && sweep_param != "lambda1" && sweep_param != "lambda" && sweep_param != "c_tot" &&
        sweep_param != "mu")
      throw ConfigError("unknown sweep parameter '" + sweep_param + "'");
    if (sweep_param != "none" && sweep_values.empty()) throw ConfigError("sweep needs at least one value");
    if (experiment == "finite" && horizon.kind != Horizon::Kind::geometric)
      throw ConfigError("finite-service experiments need a geometric horizon");
    if (!p_d_target.empty() && p_d_target.size() != cluster.n) throw ConfigError("p_d_target must have n entries");
    if (!fixed_power.empty() && fixed_power.size() != cluster.n) throw ConfigError("fixed_power must have n entries");
    if (!q_ref.empty() && q_ref.size() != cluster.n) throw ConfigError("q_ref must have n entries");
    if (!initial_backlog.empty() && initial_backlog.size() != cluster.n)
      throw ConfigError("initial_backlog must have n entries");
    for (const auto& b : beta_grid)
      if (b.size() != cluster.n) throw ConfigError("every beta grid point must have n entries");
    if (experiment == "pareto" && beta_grid.empty()) throw ConfigError("pareto experiment needs a beta grid");
    if (!(tuning.tolerance > 0.0)) throw ConfigError("tuning tolerance must be positive");
  }

  std::vector<double> sweep() const {
    if (sweep_param == "none" || sweep_values.empty()) return {std::numeric_limits<double>::quiet_NaN()};
    return sweep_values;
  }
};

/// Configuration at one sweep value.
inline ExperimentConfig at_sweep_point(const ExperimentConfig& cfg, double value) {
  ExperimentConfig c = cfg;
  if (cfg.sweep_param == "lambda1") {
    c.cluster.lambda[0] = value;
  } else if (cfg.sweep_param == "lambda") {
    for (double& l : c.cluster.lambda) l = value;
  } else if (cfg.sweep_param == "c_tot") {
    c.cluster.c_tot = value;
  } else if (cfg.sweep_param == "mu") {
    c.horizon.kind = Horizon::Kind::geometric;
    c.horizon.mu = value;
  }
  return c;
}

// Pilot streams never collide with the experiment's trial streams.
inline std::uint64_t pilot_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ull; }

inline bool fixed_scheme(PolicyKind k) { return k == PolicyKind::fixed_power || k == PolicyKind::discounted; }

/// Reference backlog from a short run of the same policy without cross-link
/// corrections, floored at one slot of arrivals.
inline QueueState pilot_reference_backlog(const ExperimentConfig& cfg, const Policy& uncorrected) {
  Horizon h;
  h.T = std::max<std::size_t>(cfg.qref_pilot_slots, 1);
  const auto s = run_trial(uncorrected, h, pilot_seed(cfg.seed) + 1, 0, cfg.initial_backlog, nullptr,
                           cfg.instability);
  auto q = s.mean_Q();
  for (std::size_t i = 0; i < q.size(); ++i)
    q[i] = std::max(q[i], cfg.cluster.lambda[i] * cfg.cluster.tau);
  return q;
}

/// Policy of kind `kind` under multipliers `m`: solves the priority table
/// and attaches cross-link corrections at the reference backlog. When the
/// correction is undefined there (expected rate not above the arrival rate)
/// the reference backlog is doubled until it is.
inline Policy build_policy(const ExperimentConfig& cfg, PolicyKind kind, const Multipliers& m) {
  Policy p;
  p.kind = kind;
  p.cluster = cfg.cluster;
  p.slot_cap = cfg.slot_cap;
  p.trim_to_backlog = cfg.trim_to_backlog;
  if (fixed_scheme(kind)) {
    const auto& power = !m.fixed_power.empty() ? m.fixed_power : cfg.cluster.p0;
    p.cluster.p0 = power;
    p.cluster.p_max = power;
  }
  SolverParams sp = cfg.solver;
  sp.gamma = m.gamma;
  sp.power_price = fixed_scheme(kind) ? std::vector<double>{} : m.power_price;
  const Regime regime = kind == PolicyKind::discounted ? Regime::discounted : Regime::average;
  const PowerMode power = fixed_scheme(kind) ? PowerMode::fixed : PowerMode::joint;
  p.table = solve_priority_table(p.cluster, sp, regime, power, cfg.horizon.mu);
  p.prices = Prices{m.gamma, p.table.power_price};
  if (!cfg.crosslinks || p.cluster.diagonal() || p.cluster.n < 2) return p;

  QueueState q = cfg.q_ref.empty() ? pilot_reference_backlog(cfg, p) : cfg.q_ref;
  for (int attempt = 0;; ++attempt) {
    try {
      attach_crosslinks(p.table, p.cluster, q);
      return p;
    } catch (const InfeasibleError&) {
      if (attempt >= 40) throw;
      for (double& x : q) x *= 2.0;
    }
  }
}

/// Constraint usage measured on a pilot: summed fronthaul per slot and
/// dynamic power per user.
struct PilotUsage {
  double total_C = 0.0;
  std::vector<double> p_d;
  bool unstable = false;  // some pilot run drifted
};

inline PilotUsage pilot_usage(const ExperimentConfig& cfg, const Policy& p) {
  PilotUsage u;
  const std::size_t n = cfg.cluster.n;
  u.p_d.assign(n, 0.0);
  std::vector<TrialSummary> runs;
  if (p.kind == PolicyKind::discounted) {
    runs = run_trials(p, cfg.horizon, pilot_seed(cfg.seed), cfg.tuning.pilot_trials, cfg.threads,
                      cfg.initial_backlog, cfg.instability);
  } else {
    Horizon h;
    h.T = cfg.tuning.pilot_slots;
    runs.push_back(run_trial(p, h, pilot_seed(cfg.seed), 0, cfg.initial_backlog, nullptr, cfg.instability));
  }
  double slots = 0.0;
  for (const auto& s : runs) {
    slots += static_cast<double>(s.slots);
    u.total_C += s.total_C();
    u.unstable = u.unstable || s.unstable;
    for (std::size_t i = 0; i < n; ++i) u.p_d[i] += s.sum_pd[i];
  }
  u.total_C /= slots;
  for (double& x : u.p_d) x /= slots;
  return u;
}

namespace detail {

// Smallest root of a quantity that decreases in x until instability sets
// in. `eval(x)` returns value - target. Starts max_expansions factors of 4
// below x0, steps up by 4x until the value is at or below target, then
// bisects geometrically. Roots at larger x are ignored. eval returns -inf
// where x is so high the system turns unstable.
template <class F>
double log_bisect_decreasing(F&& eval, double x0, double tol_abs, const TuningOptions& opt, const std::string& what) {
  double x = x0 * std::pow(0.25, opt.max_expansions);
  double f = eval(x);
  if (std::abs(f) <= tol_abs || f < 0.0) return x;  // the budget does not bind
  double lo = x, hi = x;  // f(lo) > 0 >= f(hi) - tol
  for (int k = 0;; ++k) {
    if (k == 2 * opt.max_expansions) throw InfeasibleError("cannot bracket " + what + " from above");
    lo = hi;
    hi *= 4.0;
    f = eval(hi);
    if (std::abs(f) <= tol_abs) return hi;
    if (f < 0.0) break;
  }
  double f_hi = f;
  // Without a hit inside the tolerance the upper end is returned, so the
  // budget is never exceeded.
  for (int it = 0; it < opt.max_iterations; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double fm = eval(mid);
    if (std::abs(fm) <= tol_abs) return mid;
    if (fm > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      f_hi = fm;
    }
    if (hi / lo < 1.0 + 1e-6) break;
  }
  if (std::isinf(f_hi)) throw InfeasibleError("no stable setting of " + what + " meets the target");
  return hi;
}

}  // namespace detail

/// Dynamic-power prices that meet `cfg.p_d_target` at fronthaul price gamma.
/// Users are bisected together since each user's power depends mainly on its
/// own price. A zero target switches power control off.
inline std::vector<double> tune_power_prices(const ExperimentConfig& cfg, double gamma, std::vector<double> start) {
  const std::size_t n = cfg.cluster.n;
  const auto& opt = cfg.tuning;
  std::vector<double> mu(n, opt.power_price_init);
  // Prices far outside this range only arise when the target is out of reach
  // and make the priority tables numerically meaningless.
  const double mu_min = opt.power_price_init * 1e-8, mu_max = opt.power_price_init * 1e8;
  for (std::size_t i = 0; i < n && i < start.size(); ++i)
    if (std::isfinite(start[i]) && start[i] > 0.0) mu[i] = std::clamp(start[i], mu_min, mu_max);
  std::vector<bool> active(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(cfg.p_d_target[i] > 0.0)) {
      mu[i] = std::numeric_limits<double>::infinity();
      active[i] = false;
    }
  }
  std::vector<double> lo(n, 0.0), hi(n, 0.0);  // p_d(lo) >= target >= p_d(hi)
  std::vector<int> expansions(n, 0);
  std::vector<double> best = mu, best_err(n, std::numeric_limits<double>::infinity());
  for (int it = 0; it < opt.max_expansions + opt.max_iterations; ++it) {
    Multipliers m{gamma, mu, {}};
    const auto u = pilot_usage(cfg, build_policy(cfg, PolicyKind::joint, m));
    if (opt.log) {
      std::string line = "power gamma=" + std::to_string(gamma);
      for (std::size_t i = 0; i < n; ++i)
        line += " mu" + std::to_string(i) + "=" + std::to_string(mu[i]) + " pd=" + std::to_string(u.p_d[i]);
      opt.log(line);
    }
    bool done = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      const double target = cfg.p_d_target[i];
      const double err = u.p_d[i] - target;
      if (std::abs(err) < best_err[i]) {
        best_err[i] = std::abs(err);
        best[i] = mu[i];
      }
      if (std::abs(err) <= opt.tolerance * target) {
        active[i] = false;
        continue;
      }
      if (err > 0.0) lo[i] = mu[i];
      else hi[i] = mu[i];
      if (lo[i] > 0.0 && hi[i] > 0.0) {
        mu[i] = std::sqrt(lo[i] * hi[i]);
        if (hi[i] / lo[i] < 1.0 + 1e-3) active[i] = false;
      } else if (++expansions[i] > opt.max_expansions) {
        // The target is out of reach (for instance an overloaded queue keeps
        // asking for power at any price); keep the closest price seen.
        active[i] = false;
      } else {
        const double next = std::clamp(lo[i] > 0.0 ? mu[i] * 4.0 : mu[i] / 4.0, mu_min, mu_max);
        if (next == mu[i]) active[i] = false;
        mu[i] = next;
      }
      if (active[i]) done = false;
    }
    if (done) break;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (cfg.p_d_target[i] > 0.0) mu[i] = best[i];
  return mu;
}

/// Tunes the fronthaul price so the measured summed fronthaul is within the
/// tuning tolerance of c_tot; for the joint policy the power prices are
/// re-tuned inside every fronthaul evaluation. `base` supplies starting
/// values and the fixed power level.
inline Multipliers tune_multipliers(const ExperimentConfig& cfg, PolicyKind kind, Multipliers base = {}) {
  const auto& c = cfg.cluster;
  double load = 0.0;
  for (double l : c.lambda) load += l;
  if (c.c_tot == 0.0 && load > 0.0)
    throw InfeasibleError("a zero fronthaul budget cannot carry positive traffic");
  if (base.gamma <= 0.0 || !std::isfinite(base.gamma)) base.gamma = cfg.tuning.gamma_init;
  const bool power_control = kind == PolicyKind::joint || kind == PolicyKind::numeric;
  if (power_control && base.power_price.size() != c.n) {
    base.power_price = cfg.solver.power_price.size() == c.n ? cfg.solver.power_price
                                                            : std::vector<double>(c.n, cfg.tuning.power_price_init);
  }
  const bool tune_power = power_control && !cfg.p_d_target.empty();
  Multipliers current = base;
  auto eval = [&](double gamma) {
    Multipliers m = current;
    m.gamma = gamma;
    if (tune_power) m.power_price = tune_power_prices(cfg, gamma, current.power_price);
    const auto u = pilot_usage(cfg, build_policy(cfg, kind, m));
    if (cfg.tuning.log)
      cfg.tuning.log(std::string("fronthaul ") + to_string(kind) + " gamma=" + std::to_string(gamma) +
                     " C=" + std::to_string(u.total_C) + (u.unstable ? " unstable" : ""));
    current.power_price = m.power_price;
    // A drifting pilot measures a transient, not the budget. Starved queues
    // mean the price is too high.
    if (u.unstable) return -std::numeric_limits<double>::infinity();
    return u.total_C - c.c_tot;
  };
  const double gamma = detail::log_bisect_decreasing(eval, base.gamma, cfg.tuning.tolerance * c.c_tot,
                                                     cfg.tuning, "the fronthaul price");
  Multipliers out = current;
  out.gamma = gamma;
  if (tune_power) out.power_price = tune_power_prices(cfg, gamma, current.power_price);
  return out;
}

// --- experiments -------------------------------------------------------------

struct TrialRecord {
  double sweep_value = 0.0;
  std::string policy;
  std::size_t trial = 0;
  double metric = 0.0;
  std::vector<double> delay;    // per user: seconds (average) or accumulated
  double total_C = 0.0;         // per-slot summed fronthaul
  std::vector<double> p_total;  // per user mean transmit power, watts
  double drift_slope = 0.0;
  bool unstable = false;
  std::size_t slots = 0;
};

struct MetricRow {
  double sweep_value = 0.0;
  std::string policy;
  MeanCI metric;
  double unstable_fraction = 0.0;
  std::vector<MeanCI> delay;  // per user
  MeanCI total_C;
  std::vector<double> p_total;
  Multipliers multipliers;
  bool infeasible = false;
  std::string note;
  std::vector<double> beta;

  /// Reported as infinite when the majority of trials drift or the policy
  /// could not be built.
  bool reported_infinite() const { return infeasible || unstable_fraction >= 0.5; }
};

struct ExperimentResult {
  std::vector<MetricRow> rows;
  std::vector<TrialRecord> trials;
  std::size_t infeasible_points = 0;
};

/// Tuned multipliers supplied ahead of time, keyed by sweep value and policy.
struct MultiplierEntry {
  double sweep_value = 0.0;
  PolicyKind policy = PolicyKind::joint;
  Multipliers multipliers;
};

using MultiplierBook = std::vector<MultiplierEntry>;

inline const Multipliers* lookup(const MultiplierBook& book, double value, PolicyKind k) {
  for (const auto& e : book) {
    const bool same = (std::isnan(value) && std::isnan(e.sweep_value)) || e.sweep_value == value;
    if (same && e.policy == k) return &e.multipliers;
  }
  return nullptr;
}

/// Runs the trials of one policy at one configuration and aggregates.
inline MetricRow evaluate_policy(const ExperimentConfig& cfg, PolicyKind kind, const Multipliers& m, double value,
                                 std::vector<TrialRecord>* records) {
  MetricRow row;
  row.sweep_value = value;
  row.policy = to_string(kind);
  row.multipliers = m;
  row.beta = cfg.cluster.beta;
  const auto policy = build_policy(cfg, kind, m);
  const auto runs = run_trials(policy, cfg.horizon, cfg.seed, cfg.trials, cfg.threads, cfg.initial_backlog,
                               cfg.instability);
  const std::size_t n = cfg.cluster.n;
  const bool finite = cfg.horizon.kind == Horizon::Kind::geometric;
  std::vector<double> metric, totalC;
  std::vector<std::vector<double>> delay(n);
  row.p_total.assign(n, 0.0);
  double slots = 0.0;
  std::size_t unstable = 0;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& s = runs[k];
    TrialRecord r;
    r.sweep_value = value;
    r.policy = row.policy;
    r.trial = k;
    r.metric = finite ? weighted_total_delay(s, policy.cluster) : weighted_average_delay(s, policy.cluster);
    r.total_C = s.total_C() / static_cast<double>(s.slots);
    r.drift_slope = s.drift_slope;
    r.unstable = s.unstable;
    r.slots = s.slots;
    for (std::size_t i = 0; i < n; ++i) {
      const double lam = policy.cluster.lambda[i];
      const double d = lam > 0.0 ? s.sum_Q[i] / lam / (finite ? 1.0 : static_cast<double>(s.slots)) : 0.0;
      r.delay.push_back(d);
      delay[i].push_back(d);
      r.p_total.push_back(policy.cluster.p0[i] + s.sum_pd[i] / static_cast<double>(s.slots));
      row.p_total[i] += policy.cluster.p0[i] * static_cast<double>(s.slots) + s.sum_pd[i];
    }
    slots += static_cast<double>(s.slots);
    metric.push_back(r.metric);
    totalC.push_back(r.total_C);
    if (s.unstable) ++unstable;
    if (records) records->push_back(r);
  }
  for (double& p : row.p_total) p /= slots;
  row.metric = mean_ci(metric);
  row.total_C = mean_ci(totalC);
  for (auto& d : delay) row.delay.push_back(mean_ci(d));
  row.unstable_fraction = static_cast<double>(unstable) / static_cast<double>(runs.size());
  return row;
}

inline MetricRow infeasible_row(double value, PolicyKind kind, const std::string& why,
                                const std::vector<double>& beta) {
  MetricRow row;
  row.sweep_value = value;
  row.policy = to_string(kind);
  row.metric.mean = row.metric.low = row.metric.high = std::numeric_limits<double>::infinity();
  row.unstable_fraction = 1.0;
  row.infeasible = true;
  row.note = why;
  row.beta = beta;
  return row;
}

/// Obtains multipliers for one policy at one point: from the book when
/// present, by tuning when enabled, else from the configured solver values.
inline Multipliers multipliers_for(const ExperimentConfig& cfg, PolicyKind kind, double value,
                                   const MultiplierBook& book, Multipliers base) {
  double load = 0.0;
  for (double l : cfg.cluster.lambda) load += l;
  if (cfg.cluster.c_tot == 0.0 && load > 0.0)
    throw InfeasibleError("a zero fronthaul budget cannot carry positive traffic");
  if (const auto* m = lookup(book, value, kind)) {
    Multipliers out = *m;
    if (out.fixed_power.empty()) out.fixed_power = base.fixed_power;
    return out;
  }
  if (base.power_price.empty()) base.power_price = cfg.solver.power_price;
  if (!cfg.tuning.enabled) {
    base.gamma = cfg.solver.gamma;
    return base;
  }
  return tune_multipliers(cfg, kind, base);
}

/// Sweep for average-reward policies. When the joint policy runs first and
/// power matching is on, its measured mean transmit power per user becomes
/// the constant power of the fixed-power scheme at the same sweep point.
inline ExperimentResult run_average_reward_experiment(const ExperimentConfig& cfg, const MultiplierBook& book = {},
                                                      MultiplierBook* tuned = nullptr) {
  cfg.validate();
  ExperimentResult res;
  for (double value : cfg.sweep()) {
    const auto point = at_sweep_point(cfg, value);
    std::vector<double> matched;
    for (PolicyKind kind : cfg.policies) {
      Multipliers base;
      base.gamma = cfg.tuning.gamma_init;
      if (fixed_scheme(kind)) {
        if (!cfg.fixed_power.empty()) base.fixed_power = cfg.fixed_power;
        if (cfg.power_match && !matched.empty()) base.fixed_power = matched;
        if (base.fixed_power.empty()) {
          base.fixed_power = point.cluster.p0;
          for (std::size_t i = 0; i < point.p_d_target.size(); ++i) base.fixed_power[i] += point.p_d_target[i];
        }
      }
      try {
        const auto m = multipliers_for(point, kind, value, book, base);
        if (tuned) tuned->push_back({value, kind, m});
        auto row = evaluate_policy(point, kind, m, value, &res.trials);
        if (kind == PolicyKind::joint) matched = row.p_total;
        res.rows.push_back(std::move(row));
      } catch (const InfeasibleError& e) {
        ++res.infeasible_points;
        res.rows.push_back(infeasible_row(value, kind, e.what(), point.cluster.beta));
      }
    }
  }
  if (!res.rows.empty() && res.infeasible_points == res.rows.size())
    throw InfeasibleError("no policy could be tuned or solved at any sweep point: " + res.rows.front().note);
  return res;
}

/// Sweep over the continue-probability mu with geometric horizons. All
/// policies share trial streams, so they see the same fading, arrivals and
/// horizon lengths.
inline ExperimentResult run_finite_service_experiment(const ExperimentConfig& cfg, const MultiplierBook& book = {},
                                                      MultiplierBook* tuned = nullptr) {
  ExperimentConfig c = cfg;
  c.horizon.kind = Horizon::Kind::geometric;
  if (c.sweep_param == "none") {
    c.sweep_param = "mu";
    c.sweep_values = {cfg.horizon.mu};
  }
  c.validate();
  ExperimentResult res;
  for (double value : c.sweep()) {
    const auto point = at_sweep_point(c, value);
    for (PolicyKind kind : c.policies) {
      Multipliers base;
      base.gamma = c.tuning.gamma_init;
      base.fixed_power = c.fixed_power.empty() ? point.cluster.p0 : c.fixed_power;
      try {
        // The average-reward policy is tuned against the long-run budget on a
        // fixed horizon; the discounted one against the same budget per slot
        // over geometric horizons.
        ExperimentConfig tune_cfg = point;
        if (kind != PolicyKind::discounted) tune_cfg.horizon.kind = Horizon::Kind::fixed;
        const auto m = multipliers_for(tune_cfg, kind, value, book, base);
        if (tuned) tuned->push_back({value, kind, m});
        res.rows.push_back(evaluate_policy(point, kind, m, value, &res.trials));
      } catch (const InfeasibleError& e) {
        ++res.infeasible_points;
        res.rows.push_back(infeasible_row(value, kind, e.what(), point.cluster.beta));
      }
    }
  }
  if (!res.rows.empty() && res.infeasible_points == res.rows.size())
    throw InfeasibleError("no policy could be tuned or solved at any sweep point: " + res.rows.front().note);
  return res;
}

/// Weighted-sum sweep of the joint policy over `cfg.beta_grid`, sorted by
/// beta_1 / beta_2. The sweep value of each row is that ratio.
inline ExperimentResult pareto_sweep(const ExperimentConfig& cfg, const MultiplierBook& book = {},
                                     MultiplierBook* tuned = nullptr) {
  cfg.validate();
  if (cfg.cluster.n != 2) throw ConfigError("the Pareto sweep needs a 2-user cluster");
  auto grid = cfg.beta_grid;
  auto ratio = [](const std::vector<double>& b) {
    return b[1] > 0.0 ? b[0] / b[1] : std::numeric_limits<double>::infinity();
  };
  std::stable_sort(grid.begin(), grid.end(), [&](const auto& a, const auto& b) { return ratio(a) < ratio(b); });
  ExperimentResult res;
  const PolicyKind kind = cfg.policies.empty() ? PolicyKind::joint : cfg.policies.front();
  for (const auto& beta : grid) {
    ExperimentConfig point = cfg;
    point.sweep_param = "none";
    point.cluster.beta = beta;
    const double value = ratio(beta);
    Multipliers base;
    base.gamma = cfg.tuning.gamma_init;
    if (fixed_scheme(kind)) base.fixed_power = cfg.fixed_power.empty() ? cfg.cluster.p0 : cfg.fixed_power;
    try {
      const auto m = multipliers_for(point, kind, value, book, base);
      if (tuned) tuned->push_back({value, kind, m});
      res.rows.push_back(evaluate_policy(point, kind, m, value, &res.trials));
    } catch (const InfeasibleError& e) {
      ++res.infeasible_points;
      res.rows.push_back(infeasible_row(value, kind, e.what(), beta));
    }
  }
  if (!res.rows.empty() && res.infeasible_points == res.rows.size())
    throw InfeasibleError("no Pareto point could be tuned or solved: " + res.rows.front().note);
  return res;
}

/// Indices (i, j) such that row j is dominated by row i beyond the
/// confidence intervals: both per-user delays of i lie strictly below the
/// corresponding intervals of j.
inline std::vector<std::pair<std::size_t, std::size_t>> dominated_pairs(const std::vector<MetricRow>& rows) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (i == j || rows[i].delay.size() != rows[j].delay.size() || rows[i].delay.empty()) continue;
      bool all = true;
      for (std::size_t u = 0; u < rows[i].delay.size(); ++u)
        if (!(rows[i].delay[u].high < rows[j].delay[u].low)) all = false;
      if (all) out.emplace_back(i, j);
    }
  return out;
}

/// Fixed-power empirical capacity: the largest lambda_1 at which the
/// fixed-power scheme (power p0 + p_d_target, price tuned to c_tot) shows
/// no drift on a pilot. Bisection between `lo` and `hi` bits/sec.
inline double probe_fixed_power_capacity(const ExperimentConfig& cfg, double lo, double hi, int steps = 10) {
  auto stable = [&](double lambda1) {
    ExperimentConfig c = cfg;
    c.sweep_param = "none";
    c.cluster.lambda[0] = lambda1;
    Multipliers base;
    base.gamma = cfg.tuning.gamma_init;
    base.fixed_power = cfg.fixed_power.empty() ? c.cluster.p0 : cfg.fixed_power;
    if (cfg.fixed_power.empty())
      for (std::size_t i = 0; i < c.p_d_target.size(); ++i) base.fixed_power[i] += c.p_d_target[i];
    try {
      const auto m = c.tuning.enabled ? tune_multipliers(c, PolicyKind::fixed_power, base) : base;
      const auto p = build_policy(c, PolicyKind::fixed_power, m);
      Horizon h;
      h.T = std::max<std::size_t>(c.tuning.pilot_slots * 2, 10000);
      return !run_trial(p, h, pilot_seed(c.seed) + 2, 0, {}, nullptr, c.instability).unstable;
    } catch (const InfeasibleError&) {
      return false;
    }
  };
  if (!stable(lo)) return lo;
  if (stable(hi)) return hi;
  for (int k = 0; k < steps; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (stable(mid)) lo = mid;
    else hi = mid;
  }
  return lo;
}

}  // namespace cran
