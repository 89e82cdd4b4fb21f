// SPDX-License-Identifier: Apache-2.0

#include "cran/experiment.hpp"
#include "cran/toy_mdp.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <set>

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using namespace cran;

namespace {

ExperimentConfig pair_config(double lambda1 = 3e5, double lambda2 = 1e5) {
  ExperimentConfig e;
  auto& c = e.cluster;
  c.n = 2;
  c.L = RealMatrix(2, 2);
  c.L << 1e-13, 1e-14, 1e-14, 1e-13;
  c.p0 = {0.1, 0.1};
  c.p_max = {3.0, 3.0};
  c.lambda = {lambda1, lambda2};
  c.beta = {1.0, 1.0};
  e.solver.grid_points = 96;
  e.tuning.enabled = false;
  e.solver.gamma = 1e-3;
  e.solver.power_price = {1e-3, 1e-3};
  e.qref_pilot_slots = 2000;
  e.horizon.T = 3000;
  e.trials = 3;
  return e;
}

ExperimentConfig single_config(double lambda = 2e5) {
  ExperimentConfig e;
  auto& c = e.cluster;
  c.L = RealMatrix::Constant(1, 1, 1e-13);
  c.p0 = {0.1};
  c.p_max = {3.0};
  c.lambda = {lambda};
  e.solver.grid_points = 96;
  e.tuning.enabled = false;
  e.solver.gamma = 1e-3;
  e.solver.power_price = {1e-3};
  e.horizon.T = 2000;
  e.trials = 2;
  return e;
}

Multipliers fixed_at(double gamma, std::vector<double> power) { return {gamma, {}, std::move(power)}; }

bool same_trace(const Trace& a, const Trace& b) {
  if (a.slots.size() != b.slots.size()) return false;
  for (std::size_t t = 0; t < a.slots.size(); ++t) {
    const auto& x = a.slots[t];
    const auto& y = b.slots[t];
    if (x.Q != y.Q || x.R != y.R || x.C != y.C || x.p_d != y.p_d || x.A != y.A) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("no traffic keeps queues empty and allocations zero") {
  auto e = pair_config();
  e.trim_to_backlog = false;
  e.crosslinks = false;
  auto p = build_policy(e, PolicyKind::joint, {1e-3, {1e-3, 1e-3}, {}});
  p.cluster.lambda = {0.0, 0.0};
  Trace trace;
  Horizon h;
  h.T = 200;
  run_trial(p, h, 5, 0, {}, &trace);
  for (const auto& s : trace.slots) {
    CHECK(s.Q == std::vector<double>{0.0, 0.0});
    CHECK(s.C == std::vector<double>{0.0, 0.0});
    CHECK(s.p_d == std::vector<double>{0.0, 0.0});
  }
}

TEST_CASE("a fixed seed reproduces the trace") {
  const auto e = pair_config();
  const auto p = build_policy(e, PolicyKind::joint, {1e-3, {1e-3, 1e-3}, {}});
  Trace a, b, c;
  Horizon h;
  h.T = 500;
  run_trial(p, h, 11, 3, {}, &a);
  run_trial(p, h, 11, 3, {}, &b);
  run_trial(p, h, 11, 4, {}, &c);
  CHECK(same_trace(a, b));
  CHECK_FALSE(same_trace(a, c));
}

TEST_CASE("three scripted slots follow the hand computation") {
  auto e = single_config(2e5);
  e.trim_to_backlog = false;
  const double gamma = 1e-3, power = 0.5;
  const auto p = build_policy(e, PolicyKind::fixed_power, fixed_at(gamma, {power}));
  const auto& c = p.cluster;
  const std::vector<double> z{0.7, 1.9, 0.05};
  const std::vector<double> arrivals{180.0, 230.0, 199.0};
  std::vector<ChannelRealization> chans;
  for (double zk : z) chans.push_back(make_channel(c, ComplexMatrix::Constant(1, 1, std::sqrt(zk))));

  std::vector<double> Q_seen, C_seen, R_seen;
  simulate_with(
      p, 3, {150.0}, [&](std::size_t t) { return chans[t]; },
      [&](std::size_t t) { return std::vector<double>{arrivals[t]}; },
      [&](std::size_t, const QueueState& Q, const std::vector<double>& R, const Allocation& a,
          const std::vector<double>&) {
        Q_seen.push_back(Q[0]);
        C_seen.push_back(a.C[0]);
        R_seen.push_back(R[0]);
        CHECK(a.p_d[0] == 0.0);
      });

  double Q = 150.0;
  const double L = c.L(0, 0);
  for (int t = 0; t < 3; ++t) {
    const double jp = p.table.users[0].at(Q);
    const double alpha = c.W * jp / (2.0 * gamma);
    const double snr = power * z[t] * L / c.sigma2;
    const double y = snr * (alpha - 1.0);
    const double C = alpha > 1.0 && y > 1.0 ? std::log2(y) : 0.0;
    double R = 0.0;
    if (C > 0.0) {
      const double N = (power * z[t] * L + c.sigma2) / (std::pow(2.0, C) - 1.0);
      R = c.W / 2.0 * std::log2(1.0 + power * z[t] * L / (N + c.sigma2));
    }
    INFO("slot " << t);
    CHECK_THAT(Q_seen[t], WithinRel(Q, 1e-12));
    CHECK_THAT(C_seen[t], WithinAbs(C, 1e-12));
    CHECK_THAT(R_seen[t], WithinRel(R, 1e-10) || WithinAbs(R, 1e-9));
    Q = std::max(Q - R * c.tau, 0.0) + arrivals[t];
  }
  CHECK(C_seen[1] > C_seen[2]);
}

TEST_CASE("trial summary equals reductions of the recorded trace") {
  const auto e = pair_config(4e5, 2e5);
  const auto p = build_policy(e, PolicyKind::joint, {1e-3, {1e-3, 1e-3}, {}});
  for (std::size_t burn : {std::size_t{0}, std::size_t{700}}) {
    Horizon h;
    h.T = 3000;
    h.burn_in = burn;
    Trace trace;
    const auto s = run_trial(p, h, 2, 1, {}, &trace);
    REQUIRE(trace.slots.size() == 3000);
    CHECK(s.slots == 3000 - burn);
    std::vector<double> sQ(2, 0.0), sC(2, 0.0), sP(2, 0.0), sR(2, 0.0), sA(2, 0.0);
    for (std::size_t t = burn; t < trace.slots.size(); ++t) {
      const auto& r = trace.slots[t];
      for (std::size_t i = 0; i < 2; ++i) {
        sQ[i] += r.Q[i];
        sC[i] += r.C[i];
        sP[i] += r.p_d[i];
        sR[i] += r.R[i];
        sA[i] += r.A[i];
      }
    }
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK_THAT(s.sum_Q[i], WithinRel(sQ[i], 1e-9));
      CHECK_THAT(s.sum_C[i], WithinRel(sC[i], 1e-9));
      CHECK_THAT(s.sum_pd[i], WithinRel(sP[i], 1e-9) || WithinAbs(sP[i], 1e-12));
      CHECK_THAT(s.sum_R[i], WithinRel(sR[i], 1e-9));
      CHECK_THAT(s.sum_A[i], WithinRel(sA[i], 1e-9));
    }
    const auto& last = trace.slots.back();
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(s.final_Q[i] == std::max(last.Q[i] - last.R[i] * trace.tau, 0.0) + last.A[i]);
    if (burn == 0) {
      const auto d = detect_instability(trace, p.cluster.lambda);
      CHECK_THAT(s.drift_slope, WithinRel(d.slope, 1e-9) || WithinAbs(d.slope, 1e-9));
      CHECK(s.unstable == d.unstable);
      const auto delay = average_delay(trace, p.cluster.lambda);
      CHECK_THAT(weighted_average_delay(s, p.cluster), WithinRel(delay[0] + delay[1], 1e-9));
    }
  }
}

TEST_CASE("drift detection on synthetic traces") {
  Trace ramp, flat;
  ramp.n = flat.n = 1;
  ramp.tau = flat.tau = 1e-3;
  Rng rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double c = 40.0;
  for (int t = 0; t < 20000; ++t) {
    ramp.slots.push_back({{c * t}, {0.0}, {0.0}, {0.0}, {0.0}});
    flat.slots.push_back({{500.0 + 100.0 * u(rng)}, {0.0}, {0.0}, {0.0}, {0.0}});
  }
  const std::vector<double> lambda{1e5};  // 100 bits per slot
  const auto r = detect_instability(ramp, lambda);
  CHECK(r.unstable);
  CHECK_THAT(r.slope, WithinRel(c, 1e-9));
  const auto f = detect_instability(flat, lambda);
  CHECK_FALSE(f.unstable);
  CHECK(std::abs(f.slope) < 0.05);
  // short traces are never flagged
  ramp.slots.resize(500);
  CHECK_FALSE(detect_instability(ramp, lambda).unstable);
}

TEST_CASE("overloaded queues are flagged, light load is not") {
  auto e = single_config(2e5);
  const auto p = build_policy(e, PolicyKind::fixed_power, fixed_at(1e-3, {1.0}));
  Horizon h;
  h.T = 10000;
  CHECK_FALSE(run_trial(p, h, 1, 0).unstable);
  auto heavy = p;
  heavy.cluster.lambda = {5e7};
  CHECK(run_trial(heavy, h, 1, 0).unstable);
}

TEST_CASE("a higher fronthaul price never raises measured fronthaul") {
  auto e = pair_config(3e5, 1e5);
  e.tuning.pilot_slots = 6000;
  double prev = std::numeric_limits<double>::infinity();
  for (double gamma = 1e-5; gamma <= 1e-3; gamma *= 2.0) {
    const auto u = pilot_usage(e, build_policy(e, PolicyKind::fixed_power, fixed_at(gamma, {1.0, 1.0})));
    INFO("gamma " << gamma);
    CHECK(u.total_C <= prev * (1.0 + 1e-9));
    prev = u.total_C;
  }
}

TEST_CASE("tuned fronthaul price meets the budget on a longer fresh run") {
  auto e = pair_config(3e5, 1e5);
  e.cluster.c_tot = 4.0;
  e.tuning.enabled = true;
  e.tuning.pilot_slots = 8000;
  const auto m = tune_multipliers(e, PolicyKind::fixed_power, fixed_at(1e-3, {1.0, 1.0}));
  auto p = build_policy(e, PolicyKind::fixed_power, m);
  Horizon h;
  h.T = 5 * e.tuning.pilot_slots;
  const auto s = run_trial(p, h, 999, 0);
  const double C = s.total_C() / static_cast<double>(s.slots);
  CHECK_FALSE(s.unstable);
  // pilot tolerance plus the sampling noise of a fresh run
  CHECK_THAT(C, WithinRel(e.cluster.c_tot, 2.0 * e.tuning.tolerance));
}

TEST_CASE("a zero power target switches dynamic power off") {
  auto e = pair_config(1e5, 5e4);  // below the rate at p0
  e.p_d_target = {0.0, 0.0};
  e.tuning.pilot_slots = 1000;
  const auto mu = tune_power_prices(e, 1e-3, {});
  CHECK(std::isinf(mu[0]));
  CHECK(std::isinf(mu[1]));
  const auto p = build_policy(e, PolicyKind::joint, {1e-3, mu, {}});
  Horizon h;
  h.T = 3000;
  const auto s = run_trial(p, h, 3, 0);
  CHECK(s.sum_pd == std::vector<double>{0.0, 0.0});
}

TEST_CASE("policies share channel and arrival streams") {
  const auto e = pair_config();
  const auto a = build_policy(e, PolicyKind::joint, {1e-3, {1e-3, 1e-3}, {}});
  const auto b = build_policy(e, PolicyKind::fixed_power, fixed_at(1e-3, {1.0, 1.0}));
  Trace ta, tb;
  Horizon h;
  h.T = 400;
  run_trial(a, h, 8, 2, {}, &ta);
  run_trial(b, h, 8, 2, {}, &tb);
  for (std::size_t t = 0; t < 400; ++t) CHECK(ta.slots[t].A == tb.slots[t].A);
}

TEST_CASE("identical policies give identical metrics") {
  auto e = pair_config(2e5, 1e5);
  e.experiment = "finite";
  e.horizon.kind = Horizon::Kind::geometric;
  e.horizon.mu = 0.99;
  e.sweep_param = "mu";
  e.sweep_values = {0.99};
  e.trials = 8;
  e.policies = {PolicyKind::discounted, PolicyKind::discounted};
  e.fixed_power = {1.0, 1.0};
  const auto res = run_finite_service_experiment(e);
  REQUIRE(res.rows.size() == 2);
  CHECK(res.rows[0].metric.mean == res.rows[1].metric.mean);
  CHECK(res.rows[0].metric.low == res.rows[1].metric.low);
  CHECK(res.rows[0].total_C.mean == res.rows[1].total_C.mean);
}

TEST_CASE("one-point sweep with one trial is a single run") {
  auto e = pair_config(3e5, 1e5);
  e.trials = 1;
  e.policies = {PolicyKind::joint};
  e.cluster.beta = {2.0, 0.5};
  const auto res = run_average_reward_experiment(e);
  REQUIRE(res.rows.size() == 1);
  const auto p = build_policy(e, PolicyKind::joint, {e.solver.gamma, e.solver.power_price, {}});
  Trace trace;
  run_trial(p, e.horizon, e.seed, 0, {}, &trace);
  const auto d = average_delay(trace, e.cluster.lambda);
  CHECK_THAT(res.rows[0].metric.mean, WithinRel(2.0 * d[0] + 0.5 * d[1], 1e-12));
  CHECK(res.rows[0].metric.low == res.rows[0].metric.high);
}

TEST_CASE("zero fronthaul budget with traffic is infeasible") {
  auto e = pair_config();
  e.cluster.c_tot = 0.0;
  CHECK_THROWS_AS(run_average_reward_experiment(e), InfeasibleError);
}

TEST_CASE("geometric horizon lengths") {
  Horizon h;
  h.kind = Horizon::Kind::geometric;
  h.mu = 0.8;
  Rng rng(1);
  double sum = 0.0;
  const int N = 200000;
  for (int k = 0; k < N; ++k) sum += static_cast<double>(draw_horizon(h, rng));
  CHECK_THAT(sum / N, WithinRel(1.0 / (1.0 - h.mu), 0.01));
  CHECK_THAT(combined_mu({0.9, 0.8}), WithinRel(0.72, 1e-15));
  CHECK_THROWS_AS(combined_mu({0.9, 1.0}), ConfigError);
}

TEST_CASE("geometric total reward equals the discounted value") {
  SECTION("one-slot horizon as mu vanishes") {
    auto m = ToyMDP::random(3, 2, 17);
    const std::vector<std::size_t> pol{1, 0, 1};
    const double one_step = m.reward[0][1];  // starts in state 0
    CHECK_THAT(discounted_value(m, pol, 1e-9), WithinRel(one_step, 1e-7));
    const auto rep = lemma2_check(m, pol, 1e-9, 2000, 3);
    CHECK_THAT(rep.mc_mean, WithinRel(one_step, 1e-6));
  }
  SECTION("constant reward") {
    const auto m = ToyMDP::constant(2.5);
    for (double mu : {0.3, 0.9}) {
      CHECK_THAT(discounted_value(m, {0}, mu), WithinRel(2.5 / (1.0 - mu), 1e-14));
      const auto rep = lemma2_check(m, {0}, mu, 100000, 5);
      CHECK(std::abs(rep.z) <= 4.0);
    }
  }
  SECTION("random toy") {
    const auto m = ToyMDP::random(3, 2, 99);
    const auto rep = lemma2_check(m, {0, 1, 0}, 0.5, 100000, 12);
    CHECK(rep.agrees(3.0));
  }
}

TEST_CASE("dominance scan matches a brute-force oracle") {
  Rng rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<MetricRow> rows(12);
  for (auto& r : rows) {
    for (int i = 0; i < 2; ++i) {
      MeanCI m;
      m.mean = u(rng);
      m.low = m.mean - 0.05;
      m.high = m.mean + 0.05;
      r.delay.push_back(m);
    }
  }
  std::set<std::pair<std::size_t, std::size_t>> expect;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j)
      if (i != j && rows[i].delay[0].mean + 0.1 < rows[j].delay[0].mean &&
          rows[i].delay[1].mean + 0.1 < rows[j].delay[1].mean)
        expect.insert({i, j});
  const auto got = dominated_pairs(rows);
  CHECK(std::set<std::pair<std::size_t, std::size_t>>(got.begin(), got.end()) == expect);
}

TEST_CASE("confidence interval from the t quantile") {
  const auto ci = mean_ci({1.0, 3.0});
  CHECK(ci.mean == 2.0);
  // sd = sqrt(2), stderr = 1, t(0.975, 1) = 12.7062047361747
  CHECK_THAT(ci.high - ci.mean, WithinRel(12.7062047361747, 1e-10));
  const auto one = mean_ci({4.0});
  CHECK(one.low == 4.0);
  CHECK(one.high == 4.0);
}

TEST_CASE("parallel map keeps index order") {
  const auto seq = parallel_map(50, 1, [](std::size_t k) { return static_cast<int>(k * k); });
  const auto par = parallel_map(50, 4, [](std::size_t k) { return static_cast<int>(k * k); });
  CHECK(seq == par);
  CHECK(par[7] == 49);
  CHECK_THROWS_AS(parallel_map(10, 3,
                               [](std::size_t k) {
                                 if (k == 6) throw std::runtime_error("boom");
                                 return 0;
                               }),
                  std::runtime_error);
}

TEST_CASE("trials do not depend on the number of threads") {
  const auto e = pair_config();
  const auto p = build_policy(e, PolicyKind::joint, {1e-3, {1e-3, 1e-3}, {}});
  Horizon h;
  h.T = 800;
  const auto a = run_trials(p, h, 4, 4, 1);
  const auto b = run_trials(p, h, 4, 4, 3);
  for (std::size_t k = 0; k < 4; ++k) CHECK(a[k].sum_Q == b[k].sum_Q);
}
