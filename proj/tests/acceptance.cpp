// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails. Experiment criteria drive the
// cran-sim binary so that their outputs carry manifests, which the last
// criterion reruns.

#include "cran/io.hpp"
#include "cran/validation.hpp"

#include <CLI11.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace cran;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Ctx {
  fs::path work;
  std::string cli;
  std::size_t threads = 0;
};

int run_cli(const Ctx& ctx, const std::string& args, const fs::path& log) {
  const std::string cmd = ctx.cli + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Point {
  double x = 0.0, mean = 0.0, low = 0.0, high = 0.0;
  bool inf = false;
};

/// results.csv as policy -> points in file order.
std::map<std::string, std::vector<Point>> read_results(const fs::path& p) {
  std::map<std::string, std::vector<Point>> out;
  for (const auto& row : read_csv(p.string())) {
    Point pt;
    pt.x = std::strtod(row.at("sweep_value").c_str(), nullptr);
    pt.mean = std::strtod(row.at("mean_metric").c_str(), nullptr);
    pt.low = std::strtod(row.at("ci_low").c_str(), nullptr);
    pt.high = std::strtod(row.at("ci_high").c_str(), nullptr);
    pt.inf = std::isinf(pt.mean);
    out[row.at("policy")].push_back(pt);
  }
  return out;
}

/// Runs a preset through the tool; fills `secs` with the wall time.
bool run_preset(const Ctx& ctx, const std::string& preset, std::string extra, double& secs, std::string& why) {
  const fs::path dir = ctx.work / preset;
  fs::remove_all(dir);
  fs::create_directories(ctx.work);
  const auto t0 = Clock::now();
  const int code = run_cli(ctx,
                           "simulate --preset " + preset + " --threads " + std::to_string(ctx.threads) +
                               " --out-dir " + dir.string() + " " + extra,
                           ctx.work / (preset + ".log"));
  secs = seconds_since(t0);
  if (code != 0) why = preset + " run exited with " + std::to_string(code);
  return code == 0;
}

// --- criteria ------------------------------------------------------------------

Verdict c1_expectations() {
  const auto t0 = Clock::now();
  SuiteOptions opt;
  opt.full = true;
  const auto checks = expectation_suite(opt);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  bool ok = true;
  for (const auto& c : checks) {
    worst = std::max(worst, c.value);
    ok = ok && c.passed;
  }
  return {ok && secs <= 120.0,
          fmt("%.0f checks at 1e6 samples, worst relative error %.2e, %.1f s", static_cast<double>(checks.size()),
              worst, secs)};
}

Verdict c2_allocator() {
  SuiteOptions opt;
  opt.full = true;
  const auto checks = allocator_suite(opt);
  bool ok = true;
  std::string d;
  for (const auto& c : checks) {
    ok = ok && c.passed;
    d += (d.empty() ? "" : "; ") + c.name + " " + fmt("%.3g", c.value);
  }
  return {ok, "1000 cases: " + d};
}

Verdict c3_fig2(const Ctx& ctx) {
  double secs = 0.0;
  std::string why;
  if (!run_preset(ctx, "fig2", "", secs, why)) return {false, why};
  auto res = read_results(ctx.work / "fig2" / "results.csv");
  const auto& joint = res["joint"];
  const auto& fixed = res["fixed_power"];
  if (joint.size() != fixed.size() || joint.empty()) return {false, "missing policy curves"};
  const auto man = read_ini_file((ctx.work / "fig2" / "manifest.ini").string());
  const auto trials = man.get<std::size_t>("experiment.trials");
  bool below = true, extension = false;
  int both_finite_last = -1;
  for (std::size_t k = 0; k < joint.size(); ++k) {
    if (joint[k].inf && !fixed[k].inf) below = false;
    if (!joint[k].inf && !fixed[k].inf) {
      if (joint[k].mean > fixed[k].mean) below = false;
      both_finite_last = static_cast<int>(k);
    }
    if (fixed[k].inf && !joint[k].inf) extension = true;
  }
  // high load: the largest arrival rate where both policies are stable
  bool separated = false;
  if (both_finite_last >= 0) {
    const auto k = static_cast<std::size_t>(both_finite_last);
    separated = joint[k].high < fixed[k].low;
  }
  const bool ok = below && extension && separated && trials >= 20 && secs <= 900.0;
  const double x_high = both_finite_last >= 0 ? joint[static_cast<std::size_t>(both_finite_last)].x : 0.0;
  return {ok, std::string("joint <= fixed at every point: ") + (below ? "yes" : "no") +
                  fmt("; CIs disjoint at lambda1=%g: ", x_high) + (separated ? "yes" : "no") +
                  "; fixed unstable where joint is stable: " + (extension ? "yes" : "no") +
                  fmt("; %.0f trials; %.0f s", static_cast<double>(trials), secs)};
}

Verdict c4_fig3(const Ctx& ctx) {
  double secs = 0.0;
  std::string why;
  if (!run_preset(ctx, "fig3", "", secs, why)) return {false, why};
  auto res = read_results(ctx.work / "fig3" / "results.csv");
  const auto& joint = res["joint"];
  const auto& fixed = res["fixed_power"];
  if (joint.size() != fixed.size() || joint.size() < 6) return {false, "need a 6-point sweep for both policies"};
  // nonincreasing up to noise: a later mean may exceed an earlier one only
  // by less than the two half-widths combined
  auto nonincreasing = [](const std::vector<Point>& v) {
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (v[k].inf && !v[k - 1].inf) return false;
      if (v[k].inf || v[k - 1].inf) continue;
      const double slack = (v[k].high - v[k].mean) + (v[k - 1].high - v[k - 1].mean);
      if (v[k].mean > v[k - 1].mean + slack) return false;
    }
    return true;
  };
  auto reduction = [](const Point& j, const Point& f) {
    if (f.inf) return j.inf ? 0.0 : 1.0;
    return (f.mean - j.mean) / f.mean;
  };
  const double r_small = reduction(joint.front(), fixed.front());
  const double r_large = reduction(joint.back(), fixed.back());
  const bool mono = nonincreasing(joint) && nonincreasing(fixed);
  return {mono && r_small > r_large,
          std::string("nonincreasing in C_tot: ") + (mono ? "yes" : "no") +
              fmt("; reduction %.1f%% at C_tot=%g vs %.1f%% at C_tot=%g", 100 * r_small, joint.front().x,
                  100 * r_large, joint.back().x)};
}

Verdict c5_fig4(const Ctx& ctx) {
  double secs = 0.0;
  std::string why;
  if (!run_preset(ctx, "fig4", "", secs, why)) return {false, why};
  auto res = read_results(ctx.work / "fig4" / "results.csv");
  const auto& disc = res["discounted"];
  const auto& avg = res["fixed_power"];
  const auto man = read_ini_file((ctx.work / "fig4" / "manifest.ini").string());
  const auto trials = man.get<std::size_t>("experiment.trials");
  if (disc.size() != avg.size() || disc.size() < 2) return {false, "missing policy curves"};
  bool below = true;
  for (std::size_t k = 0; k < disc.size(); ++k)
    if (disc[k].x <= 0.9 && !(disc[k].mean <= avg[k].mean)) below = false;
  auto gap = [&](std::size_t k) { return (avg[k].mean - disc[k].mean) / avg[k].mean; };
  const double g_first = gap(0), g_last = gap(disc.size() - 1);
  return {below && g_last < g_first && trials == 50,
          std::string("discounted <= average-reward for mu <= 0.9: ") + (below ? "yes" : "no") +
              fmt("; relative gap %.2f%% at mu=%g, %.2f%% at mu=%g", 100 * g_first, disc.front().x, 100 * g_last,
                  disc.back().x) +
              fmt("; %.0f trials", static_cast<double>(trials))};
}

Verdict c6_lemma2() {
  const auto checks = lemma2_suite(SuiteOptions{});
  bool ok = checks.size() == 9;
  double worst = 0.0;
  for (const auto& c : checks) {
    ok = ok && c.passed;
    worst = std::max(worst, c.value);
  }
  return {ok, fmt("3 toys x mu in {0.3, 0.5, 0.9}, 1e5 trials, worst |z| = %.2f", worst)};
}

Verdict c7_tables() {
  Rng rng(777);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto logu = [&](double lo, double hi) { return lo * std::pow(hi / lo, u(rng)); };
  double worst_residual = 0.0, worst_tail = 0.0, worst_pde = 0.0;
  bool monotone = true;
  int sets = 0, tables = 0, pde_checks = 0, redraws = 0;
  while (sets < 20) {
    ClusterConfig c;
    c.n = 2;
    c.L = RealMatrix(2, 2);
    const double d0 = logu(1e-12, 1e-10), d1 = logu(1e-12, 1e-10);
    c.L << d0, 0.1 * std::min(d0, d1), 0.1 * std::min(d0, d1), d1;
    c.p0 = {logu(0.05, 1.0), logu(0.05, 1.0)};
    c.p_max = {3.0 * c.p0[0], 3.0 * c.p0[1]};
    c.lambda = {logu(1e5, 2e6), logu(1e5, 2e6)};
    c.beta = {logu(0.25, 4.0), logu(0.25, 4.0)};
    SolverParams p;
    p.gamma = logu(1e-5, 1e-3);
    p.power_price = {logu(1e-4, 1e-2), logu(1e-4, 1e-2)};
    p.grid_points = 96;
    const double mu = 0.3 + 0.65 * u(rng);
    std::vector<PriorityTable> solved;
    try {
      solved.push_back(solve_priority_table(c, p, Regime::average, PowerMode::joint));
      solved.push_back(solve_priority_table(c, p, Regime::average, PowerMode::fixed));
      solved.push_back(solve_priority_table(c, p, Regime::discounted, PowerMode::fixed, mu));
    } catch (const InfeasibleError&) {
      ++redraws;  // arrival rate above the fixed-power capacity of the draw
      if (redraws > 200) return {false, "could not draw feasible parameter sets"};
      continue;
    }
    ++sets;
    for (const auto& t : solved) {
      ++tables;
      for (std::size_t i = 0; i < 2; ++i) {
        const auto& s = t.users[i];
        for (std::size_t k = 1; k < s.q.size(); ++k) {
          if (s.jp[k] < s.jp[k - 1]) monotone = false;
          worst_residual = std::max(worst_residual, balance_residual(c, p, t, i, k));
        }
        worst_tail = std::max(worst_tail, tail_growth_ratio(s));
      }
    }
    const auto li = LinkModel::from_cluster(c, 0, p.gamma, p.price(0));
    const auto lj = LinkModel::from_cluster(c, 1, p.gamma, p.price(1));
    for (int rep = 0; rep < 3; ++rep) {
      const auto k = crosslink_coeffs(logu(20.0, 400.0), logu(20.0, 400.0), li, lj, 0, 1);
      try {
        const auto g = crosslink_gradient_avg(k, c.L(1, 1), p.gamma, c.lambda[0], c.lambda[1]);
        worst_pde = std::max(worst_pde, crosslink_pde_residual(k, g, c.L(1, 1), p.gamma, c.lambda[0], c.lambda[1]));
        ++pde_checks;
      } catch (const InfeasibleError&) {
        // no stabilizing reference at these priorities
      }
    }
  }
  const bool ok = monotone && worst_residual <= 1e-8 && worst_tail <= 1.0 + 1e-12 && worst_pde <= 1e-8 &&
                  pde_checks >= 20;
  return {ok, std::to_string(tables) + " tables from 20 sets, nondecreasing: " + (monotone ? "yes" : "no") +
                  fmt("; worst residual %.2e; worst tail ratio %.6f; worst PDE residual %.2e over %.0f pairs",
                      worst_residual, worst_tail, worst_pde, pde_checks)};
}

Verdict c8_pareto(const Ctx& ctx) {
  double secs = 0.0;
  std::string why;
  if (!run_preset(ctx, "pareto", "", secs, why)) return {false, why};
  // per-user delays with CIs from users.csv
  std::vector<MetricRow> rows;
  for (const auto& r : read_csv((ctx.work / "pareto" / "users.csv").string())) {
    const double x = std::strtod(r.at("sweep_value").c_str(), nullptr);
    if (rows.empty() || rows.back().sweep_value != x) {
      rows.emplace_back();
      rows.back().sweep_value = x;
    }
    MeanCI m;
    m.mean = std::strtod(r.at("delay_mean").c_str(), nullptr);
    m.low = std::strtod(r.at("delay_low").c_str(), nullptr);
    m.high = std::strtod(r.at("delay_high").c_str(), nullptr);
    rows.back().delay.push_back(m);
    if (r.at("infeasible") == "1") rows.back().infeasible = true;
  }
  for (const auto& r : rows)
    if (r.infeasible) return {false, fmt("point beta1/beta2=%g could not be tuned", r.sweep_value)};
  const auto dominated = dominated_pairs(rows);
  // symmetric point: per-trial differences of the two users' delays
  std::vector<double> diff;
  for (const auto& r : read_csv((ctx.work / "pareto" / "trials.csv").string()))
    if (std::strtod(r.at("sweep_value").c_str(), nullptr) == 1.0)
      diff.push_back(std::strtod(r.at("delay_0").c_str(), nullptr) - std::strtod(r.at("delay_1").c_str(), nullptr));
  const auto ci = mean_ci(diff);
  const bool sym = !diff.empty() && ci.low <= 0.0 && 0.0 <= ci.high;
  return {dominated.empty() && sym && rows.size() >= 3,
          fmt("%.0f points, %.0f dominated pairs; ", static_cast<double>(rows.size()),
              static_cast<double>(dominated.size())) +
              fmt("beta=(1,1): D1-D2 = %.3g s, 95%% CI [%.3g, %.3g]", ci.mean, ci.low, ci.high)};
}

Verdict c9_determinism(const Ctx& ctx) {
  std::string detail;
  bool ok = true;
  int compared = 0;
  for (const std::string preset : {"fig4", "pareto"}) {
    const fs::path first = ctx.work / preset;
    if (!fs::exists(first / "manifest.ini")) {
      double secs = 0.0;
      std::string why;
      if (!run_preset(ctx, preset, "", secs, why)) return {false, why};
    }
    const fs::path again = ctx.work / (preset + "-rerun");
    fs::remove_all(again);
    const int code = run_cli(ctx,
                             "simulate --config " + (first / "manifest.ini").string() + " --out-dir " +
                                 again.string(),
                             ctx.work / (preset + "-rerun.log"));
    if (code != 0) return {false, preset + " rerun exited with " + std::to_string(code)};
    for (const auto& e : fs::directory_iterator(first)) {
      if (e.path().extension() != ".csv") continue;
      auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
      };
      ++compared;
      if (slurp(e.path()) != slurp(again / e.path().filename())) {
        ok = false;
        detail += preset + "/" + e.path().filename().string() + " differs; ";
      }
    }
  }
  return {ok && compared > 0, detail + std::to_string(compared) + " CSV files compared byte for byte (fig4, pareto)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Ctx ctx;
  std::string work = "acceptance-out";
  std::string only;
  app.add_option("--work-dir", work, "scratch directory for experiment outputs");
  app.add_option("--cli", ctx.cli, "path of the cran-sim binary")->required();
  app.add_option("--threads", ctx.threads, "threads for experiment runs");
  app.add_option("--only", only, "comma-separated criterion numbers");
  CLI11_PARSE(app, argc, argv);
  ctx.work = fs::absolute(work);
  fs::create_directories(ctx.work);

  std::set<int> pick;
  for (const auto& w : split_words(only)) pick.insert(std::stoi(w));
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"expectation closed forms vs Monte Carlo", c1_expectations},
      {"allocator optimality", c2_allocator},
      {"joint vs fixed power over arrival rate", [&] { return c3_fig2(ctx); }},
      {"delay vs fronthaul budget", [&] { return c4_fig3(ctx); }},
      {"finite service: discounted vs average-reward", [&] { return c5_fig4(ctx); }},
      {"geometric total reward vs discounted value", c6_lemma2},
      {"priority table properties", c7_tables},
      {"Pareto sweep", [&] { return c8_pareto(ctx); }},
      {"rerun from manifest", [&] { return c9_determinism(ctx); }},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    Verdict v;
    const auto t0 = Clock::now();
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::printf("criterion %d %s: %s  (%s) [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", criteria[k].first,
                v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
