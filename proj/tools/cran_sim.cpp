// SPDX-License-Identifier: Apache-2.0
//
// cran-sim: run experiments, tune multipliers, self-validate.
//
// Exit codes: 0 success, 1 validation failure, 2 configuration error,
// 3 infeasible (tuning or table solve failed everywhere).

#include "cran/io.hpp"
#include "cran/validation.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace cran;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string out_dir = "cran-out";
  std::string multipliers;
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::size_t threads = 0;
  bool verbose = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "INI configuration file");
  app->add_option("--preset", c.preset, "built-in configuration")
      ->check(CLI::IsMember({"fig2", "fig3", "fig4", "pareto"}));
  app->add_option("--out-dir", c.out_dir, "directory for results");
  app->add_option("--seed", c.seed, "experiment seed");
  app->add_option("--trials", c.trials, "trials per point");
  app->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  app->add_flag("-v,--verbose", c.verbose, "log every pilot evaluation");
}

RunConfig load(const Common& c, CLI::App* app) {
  if (c.config.empty() && c.preset.empty()) throw ConfigError("give --config, --preset or both");
  Overrides o;
  if (app->count("--seed")) o.seed = c.seed;
  if (app->count("--trials")) o.trials = c.trials;
  if (app->count("--threads")) o.threads = c.threads;
  auto cfg = config_from_tree(assemble_config(c.preset, c.config, o));
  if (c.verbose) cfg.exp.tuning.log = [](const std::string& line) { std::cerr << "  " << line << '\n'; };
  return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << text;
}

std::string axis_label(const ExperimentConfig& e) {
  if (e.experiment == "pareto") return "beta_1 / beta_2";
  if (e.sweep_param == "lambda1") return "lambda_1 (bits/s)";
  if (e.sweep_param == "lambda") return "lambda (bits/s)";
  if (e.sweep_param == "c_tot") return "C_tot (bits/s/Hz)";
  if (e.sweep_param == "mu") return "mu";
  return "point";
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int k = 0; k < argc; ++k) s += (k ? " " : "") + std::string(argv[k]);
  return s;
}

/// Runs the experiment and writes every artifact. With `tune` set the
/// multiplier book and its out-of-sample check are written as well.
int run(const Common& c, CLI::App* app, const std::string& sub, const std::string& cmd, bool tune) {
  RunInfo info;
  info.started = utc_now();
  info.subcommand = sub;
  info.command = cmd;
  auto cfg = load(c, app);
  if (sub == "pareto") cfg.exp.experiment = "pareto";
  MultiplierBook book;
  if (!c.multipliers.empty()) {
    book = read_multipliers(c.multipliers);
    info.multipliers = fs::absolute(c.multipliers).string();
  }
  MultiplierBook tuned;
  const auto res = run_configured(cfg.exp, book, &tuned);

  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    info.outputs.push_back(name);
  };
  std::ostringstream results, users, trials;
  write_results_csv(results, res);
  write_users_csv(users, res);
  write_trials_csv(trials, res, cfg.exp.cluster.n);
  emit("results.csv", results.str());
  emit("users.csv", users.str());
  emit("trials.csv", trials.str());
  emit("results.svg",
       svg_from_results((dir / "results.csv").string(), cfg.exp.experiment + " experiment", axis_label(cfg.exp),
                        cfg.exp.experiment == "finite" ? "sum of total delays (s)" : "sum of average delays (s)"));
  if (cfg.trace) {
    for (std::size_t k = 0; k < res.rows.size(); ++k) {
      const auto& row = res.rows[k];
      if (row.infeasible) continue;
      std::ostringstream os;
      write_trace_csv(os, row_trace(cfg.exp, row));
      emit("trace_" + std::to_string(k) + "_" + row.policy + ".csv", os.str());
    }
  }
  if (tune) {
    std::vector<TuneCheck> checks;
    std::cout << "out-of-sample check of tuned multipliers (5x pilot length):\n";
    for (const auto& e : tuned) {
      checks.push_back(check_tuned(cfg.exp, e));
      const auto& ck = checks.back();
      std::cout << "  " << to_string(e.policy) << " at " << num(e.sweep_value) << ": gamma=" << fmt17(e.multipliers.gamma)
                << " C=" << ck.total_C << " target " << cfg.exp.cluster.c_tot << " -> " << ck.status << '\n';
    }
    std::ostringstream os;
    write_multipliers(os, tuned, checks);
    emit("multipliers.ini", os.str());
  }
  info.finished = utc_now();
  info.outputs.push_back("manifest.ini");
  std::ostringstream man;
  write_manifest(man, cfg, info);
  write_file(dir / "manifest.ini", man.str());

  for (const auto& r : res.rows) {
    std::cout << std::setw(12) << num(r.sweep_value) << "  " << std::setw(11) << r.policy << "  ";
    if (r.reported_infinite()) std::cout << "inf" << (r.note.empty() ? "" : "  (" + r.note + ")");
    else std::cout << r.metric.mean << "  [" << r.metric.low << ", " << r.metric.high << "]";
    std::cout << '\n';
  }
  std::cout << "wrote " << info.outputs.size() << " files to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CRAN uplink fronthaul and power allocation simulator"};
  app.require_subcommand(1);
  const std::string cmd = command_line(argc, argv);

  Common sim, tun, par;
  auto* simulate = app.add_subcommand("simulate", "run the configured experiment");
  add_common(simulate, sim);
  simulate->add_option("--multipliers", sim.multipliers, "reuse a tuned multiplier file");

  auto* tune = app.add_subcommand("tune", "tune multipliers, run the experiment and write them out");
  add_common(tune, tun);

  auto* pareto = app.add_subcommand("pareto", "weighted-sum sweep over the beta grid");
  add_common(pareto, par);
  pareto->add_option("--multipliers", par.multipliers, "reuse a tuned multiplier file");

  std::string level = "fast";
  double bias = 0.0;
  std::uint64_t vseed = SuiteOptions{}.seed;
  auto* validate = app.add_subcommand("validate", "run the oracle suites");
  validate->add_option("--level", level, "fast or full")->check(CLI::IsMember({"fast", "full"}));
  validate->add_option("--inject-e1-bias", bias, "relative error added to every E1 value");
  validate->add_option("--seed", vseed, "suite seed");

  std::size_t states = 3, actions = 2, ltrials = 100000;
  double lmu = 0.5;
  std::uint64_t lseed = 1;
  auto* lemma2 = app.add_subcommand("lemma2", "geometric-horizon total reward vs discounted value on a toy MDP");
  lemma2->add_option("--states", states, "states of the random toy");
  lemma2->add_option("--actions", actions, "actions of the random toy");
  lemma2->add_option("--mu", lmu, "continue-probability");
  lemma2->add_option("--trials", ltrials, "Monte Carlo horizons");
  lemma2->add_option("--seed", lseed, "toy and sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return run(sim, simulate, "simulate", cmd, false);
    if (*tune) return run(tun, tune, "tune", cmd, true);
    if (*pareto) return run(par, pareto, "pareto", cmd, false);
    if (*validate) {
      detail::e1_bias().store(bias);
      SuiteOptions opt;
      opt.full = level == "full";
      opt.seed = vseed;
      const auto rep = run_validation(opt);
      print_report(std::cout, rep);
      return rep.passed() ? 0 : 1;
    }
    if (*lemma2) {
      const auto toy = ToyMDP::random(states, actions, lseed);
      std::vector<std::size_t> policy(states);
      for (std::size_t s = 0; s < states; ++s) policy[s] = s % actions;
      const auto rep = lemma2_check(toy, policy, lmu, ltrials, lseed + 1);
      std::cout << "exact " << fmt17(rep.exact) << "\nmonte carlo " << fmt17(rep.mc_mean) << " +- "
                << rep.mc_stderr << "\nz " << rep.z << '\n';
      std::cout << (rep.agrees() ? "agree within 3 standard errors\n" : "DISAGREE\n");
      return rep.agrees() ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
