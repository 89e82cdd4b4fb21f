// SPDX-License-Identifier: Apache-2.0
//
// Text formats of the command-line tool: INI configuration with environment
// overrides, shipped presets, result CSVs, multiplier files, run manifests
// and a small SVG line plot drawn from the results CSV.

#pragma once

#include "cran/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

extern char** environ;

namespace cran {

inline constexpr const char* kVersion = "0.3.0";

using Tree = boost::property_tree::ptree;

/// Experiment configuration plus options only the tool uses.
struct RunConfig {
  ExperimentConfig exp;
  bool trace = false;           // write trial 0 of every row as a slot trace
  std::vector<double> mu_users; // per-user continue-probabilities
};

// --- value formatting --------------------------------------------------------

/// %.17g, which reads back to the same double.
inline std::string fmt17(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Shortest round-trip form for CSV cells.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string join(const std::vector<double>& v, const char* sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += fmt17(v[i]);
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& text, const std::string& what) {
  const std::string s = trim(text);
  if (s.empty()) throw ConfigError(what + ": expected a number");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ConfigError(what + ": '" + s + "' is not a number");
  return v;
}

inline std::size_t parse_count(const std::string& text, const std::string& what) {
  const double v = parse_double(text, what);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) throw ConfigError(what + ": expected a nonnegative integer");
  return static_cast<std::size_t>(v);
}

inline bool parse_bool(const std::string& text, const std::string& what) {
  std::string s = trim(text);
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(what + ": expected true or false");
}

/// Numbers separated by spaces or commas.
inline std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::string s = text;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream in(s);
  std::vector<double> out;
  for (std::string tok; in >> tok;) out.push_back(parse_double(tok, what));
  return out;
}

/// Rows separated by ';'.
inline std::vector<std::vector<double>> parse_rows(const std::string& text, const std::string& what) {
  std::vector<std::vector<double>> rows;
  std::stringstream in(text);
  for (std::string row; std::getline(in, row, ';');) {
    if (trim(row).empty()) continue;
    rows.push_back(parse_list(row, what));
  }
  return rows;
}

inline std::string join_rows(const std::vector<std::vector<double>>& rows) {
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r) out += "; ";
    out += join(rows[r]);
  }
  return out;
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::string s = text;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

// --- configuration keys ------------------------------------------------------

struct Field {
  const char* section;
  const char* key;
  void (*set)(RunConfig&, const std::string&, const std::string&);
  std::string (*get)(const RunConfig&);
};

#define CRAN_FIELD(sec, name, setter, getter)                                                   \
  Field {                                                                                       \
    sec, name, [](RunConfig& r, const std::string& v, const std::string& w) { setter; },        \
        [](const RunConfig& r) -> std::string { return getter; }                                \
  }

inline const std::vector<Field>& config_fields() {
  static const std::vector<Field> fields = {
      CRAN_FIELD("cluster", "n", r.exp.cluster.n = parse_count(v, w), fmt17(double(r.exp.cluster.n))),
      CRAN_FIELD("cluster", "W", r.exp.cluster.W = parse_double(v, w), fmt17(r.exp.cluster.W)),
      CRAN_FIELD("cluster", "tau", r.exp.cluster.tau = parse_double(v, w), fmt17(r.exp.cluster.tau)),
      CRAN_FIELD("cluster", "sigma2", r.exp.cluster.sigma2 = parse_double(v, w), fmt17(r.exp.cluster.sigma2)),
      CRAN_FIELD("cluster", "c_tot", r.exp.cluster.c_tot = parse_double(v, w), fmt17(r.exp.cluster.c_tot)),
      CRAN_FIELD(
          "cluster", "L",
          {
            const auto rows = parse_rows(v, w);
            RealMatrix L(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
            for (std::size_t i = 0; i < rows.size(); ++i) {
              if (rows[i].size() != rows[0].size()) throw ConfigError(w + ": rows of L differ in length");
              for (std::size_t j = 0; j < rows[i].size(); ++j)
                L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            }
            r.exp.cluster.L = L;
          },
          [&] {
            std::vector<std::vector<double>> rows;
            const auto& L = r.exp.cluster.L;
            for (Eigen::Index i = 0; i < L.rows(); ++i) {
              rows.emplace_back();
              for (Eigen::Index j = 0; j < L.cols(); ++j) rows.back().push_back(L(i, j));
            }
            return join_rows(rows);
          }()),
      CRAN_FIELD("cluster", "p0", r.exp.cluster.p0 = parse_list(v, w), join(r.exp.cluster.p0)),
      CRAN_FIELD("cluster", "p_max", r.exp.cluster.p_max = parse_list(v, w), join(r.exp.cluster.p_max)),
      CRAN_FIELD("cluster", "lambda", r.exp.cluster.lambda = parse_list(v, w), join(r.exp.cluster.lambda)),
      CRAN_FIELD("cluster", "beta", r.exp.cluster.beta = parse_list(v, w), join(r.exp.cluster.beta)),
      CRAN_FIELD("cluster", "fading_variance", r.exp.cluster.fading_variance = parse_double(v, w),
                 fmt17(r.exp.cluster.fading_variance)),

      CRAN_FIELD("solver", "gamma", r.exp.solver.gamma = parse_double(v, w), fmt17(r.exp.solver.gamma)),
      CRAN_FIELD("solver", "power_price", r.exp.solver.power_price = parse_list(v, w), join(r.exp.solver.power_price)),
      CRAN_FIELD("solver", "grid_points", r.exp.solver.grid_points = parse_count(v, w),
                 fmt17(double(r.exp.solver.grid_points))),
      CRAN_FIELD("solver", "q_max_factor", r.exp.solver.q_max_factor = parse_double(v, w),
                 fmt17(r.exp.solver.q_max_factor)),
      CRAN_FIELD("solver", "q_min_ratio", r.exp.solver.q_min_ratio = parse_double(v, w),
                 fmt17(r.exp.solver.q_min_ratio)),
      CRAN_FIELD("solver", "alpha_guard", r.exp.solver.alpha_guard = parse_double(v, w),
                 fmt17(r.exp.solver.alpha_guard)),
      CRAN_FIELD("solver", "root_tol", r.exp.solver.root_tol = parse_double(v, w), fmt17(r.exp.solver.root_tol)),

      CRAN_FIELD("experiment", "kind", r.exp.experiment = trim(v), r.exp.experiment),
      CRAN_FIELD(
          "experiment", "policies",
          {
            r.exp.policies.clear();
            for (const auto& p : split_words(v)) r.exp.policies.push_back(parse_policy(p));
            if (r.exp.policies.empty()) throw ConfigError(w + ": at least one policy is needed");
          },
          [&] {
            std::string s;
            for (auto k : r.exp.policies) s += (s.empty() ? "" : " ") + std::string(to_string(k));
            return s;
          }()),
      CRAN_FIELD("experiment", "trials", r.exp.trials = parse_count(v, w), fmt17(double(r.exp.trials))),
      CRAN_FIELD("experiment", "threads", r.exp.threads = parse_count(v, w), fmt17(double(r.exp.threads))),
      CRAN_FIELD("experiment", "seed", r.exp.seed = parse_count(v, w), std::to_string(r.exp.seed)),
      CRAN_FIELD(
          "experiment", "horizon",
          {
            const auto s = trim(v);
            if (s == "fixed") r.exp.horizon.kind = Horizon::Kind::fixed;
            else if (s == "geometric") r.exp.horizon.kind = Horizon::Kind::geometric;
            else throw ConfigError(w + ": expected fixed or geometric");
          },
          std::string(r.exp.horizon.kind == Horizon::Kind::fixed ? "fixed" : "geometric")),
      CRAN_FIELD("experiment", "T", r.exp.horizon.T = parse_count(v, w), fmt17(double(r.exp.horizon.T))),
      CRAN_FIELD("experiment", "mu", r.exp.horizon.mu = parse_double(v, w), fmt17(r.exp.horizon.mu)),
      CRAN_FIELD(
          "experiment", "mu_users",
          {
            r.mu_users = parse_list(v, w);
            if (!r.mu_users.empty()) r.exp.horizon.mu = combined_mu(r.mu_users);
          },
          join(r.mu_users)),
      CRAN_FIELD("experiment", "burn_in", r.exp.horizon.burn_in = parse_count(v, w),
                 fmt17(double(r.exp.horizon.burn_in))),
      CRAN_FIELD("experiment", "horizon_cap", r.exp.horizon.cap = parse_count(v, w),
                 fmt17(double(r.exp.horizon.cap))),
      CRAN_FIELD("experiment", "sweep", r.exp.sweep_param = trim(v), r.exp.sweep_param),
      CRAN_FIELD("experiment", "sweep_values", r.exp.sweep_values = parse_list(v, w), join(r.exp.sweep_values)),
      CRAN_FIELD("experiment", "p_d_target", r.exp.p_d_target = parse_list(v, w), join(r.exp.p_d_target)),
      CRAN_FIELD("experiment", "power_match", r.exp.power_match = parse_bool(v, w),
                 std::string(r.exp.power_match ? "true" : "false")),
      CRAN_FIELD("experiment", "fixed_power", r.exp.fixed_power = parse_list(v, w), join(r.exp.fixed_power)),
      CRAN_FIELD("experiment", "qref_pilot_slots", r.exp.qref_pilot_slots = parse_count(v, w),
                 fmt17(double(r.exp.qref_pilot_slots))),
      CRAN_FIELD("experiment", "q_ref", r.exp.q_ref = parse_list(v, w), join(r.exp.q_ref)),
      CRAN_FIELD("experiment", "crosslinks", r.exp.crosslinks = parse_bool(v, w),
                 std::string(r.exp.crosslinks ? "true" : "false")),
      CRAN_FIELD("experiment", "trim_to_backlog", r.exp.trim_to_backlog = parse_bool(v, w),
                 std::string(r.exp.trim_to_backlog ? "true" : "false")),
      CRAN_FIELD("experiment", "initial_backlog", r.exp.initial_backlog = parse_list(v, w),
                 join(r.exp.initial_backlog)),
      CRAN_FIELD("experiment", "beta_grid", r.exp.beta_grid = parse_rows(v, w), join_rows(r.exp.beta_grid)),
      CRAN_FIELD("experiment", "slot_cap", r.exp.slot_cap = parse_double(v, w), fmt17(r.exp.slot_cap)),
      CRAN_FIELD("experiment", "trace", r.trace = parse_bool(v, w), std::string(r.trace ? "true" : "false")),

      CRAN_FIELD("tuning", "enabled", r.exp.tuning.enabled = parse_bool(v, w),
                 std::string(r.exp.tuning.enabled ? "true" : "false")),
      CRAN_FIELD("tuning", "pilot_slots", r.exp.tuning.pilot_slots = parse_count(v, w),
                 fmt17(double(r.exp.tuning.pilot_slots))),
      CRAN_FIELD("tuning", "pilot_trials", r.exp.tuning.pilot_trials = parse_count(v, w),
                 fmt17(double(r.exp.tuning.pilot_trials))),
      CRAN_FIELD("tuning", "tolerance", r.exp.tuning.tolerance = parse_double(v, w), fmt17(r.exp.tuning.tolerance)),
      CRAN_FIELD("tuning", "max_iterations", r.exp.tuning.max_iterations = static_cast<int>(parse_count(v, w)),
                 fmt17(double(r.exp.tuning.max_iterations))),
      CRAN_FIELD("tuning", "max_expansions", r.exp.tuning.max_expansions = static_cast<int>(parse_count(v, w)),
                 fmt17(double(r.exp.tuning.max_expansions))),
      CRAN_FIELD("tuning", "gamma_init", r.exp.tuning.gamma_init = parse_double(v, w), fmt17(r.exp.tuning.gamma_init)),
      CRAN_FIELD("tuning", "power_price_init", r.exp.tuning.power_price_init = parse_double(v, w),
                 fmt17(r.exp.tuning.power_price_init)),

      CRAN_FIELD("instability", "eps", r.exp.instability.eps = parse_double(v, w), fmt17(r.exp.instability.eps)),
      CRAN_FIELD("instability", "min_slots", r.exp.instability.min_slots = parse_count(v, w),
                 fmt17(double(r.exp.instability.min_slots))),
  };
  return fields;
}

#undef CRAN_FIELD

inline bool same_name(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  return true;
}

inline const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : config_fields())
    if (same_name(section, f.section) && same_name(key, f.key)) return &f;
  return nullptr;
}

inline Tree::path_type key_path(const std::string& section, const std::string& key) {
  return Tree::path_type(section + "/" + key, '/');
}

/// Copies every key of `src` into `dst`; later values win. Sections other
/// than the configuration ones are rejected, except [run], which manifests
/// carry and loading ignores.
inline void merge_tree(Tree& dst, const Tree& src, const std::string& origin) {
  for (const auto& [section, body] : src) {
    if (same_name(section, "run")) continue;
    if (!body.data().empty() && body.empty())
      throw ConfigError(origin + ": key '" + section + "' outside of any section");
    for (const auto& [key, value] : body) {
      const Field* f = find_field(section, key);
      if (!f) throw ConfigError(origin + ": unknown key '" + key + "' in section [" + section + "]");
      dst.put(key_path(f->section, f->key), value.data());
    }
  }
}

inline Tree parse_ini_text(const std::string& text, const std::string& origin) {
  Tree t;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, t);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return t;
}

inline Tree read_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ini_text(ss.str(), path);
}

/// Applies CRAN_<SECTION>_<KEY> environment variables (names matched without
/// regard to case). Variables that name no key are left alone.
inline void apply_env_overrides(Tree& t, char** env = environ) {
  if (!env) return;
  for (char** e = env; *e; ++e) {
    const std::string entry = *e;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = entry.substr(0, eq);
    if (name.size() < 6 || !same_name(name.substr(0, 5), "CRAN_")) continue;
    const std::string rest = name.substr(5);
    const auto us = rest.find('_');
    if (us == std::string::npos) continue;
    if (const Field* f = find_field(rest.substr(0, us), rest.substr(us + 1)))
      t.put(key_path(f->section, f->key), entry.substr(eq + 1));
  }
}

inline RunConfig config_from_tree(const Tree& t) {
  RunConfig r;
  for (const auto& f : config_fields()) {
    if (auto v = t.get_optional<std::string>(key_path(f.section, f.key)))
      f.set(r, *v, std::string("[") + f.section + "] " + f.key);
  }
  r.exp.validate();
  return r;
}

/// Every key with its effective value, so the echo alone reproduces the run.
inline Tree config_to_tree(const RunConfig& r) {
  Tree t;
  for (const auto& f : config_fields()) t.put(key_path(f.section, f.key), f.get(r));
  return t;
}

inline std::string tree_to_ini(const Tree& t) {
  std::ostringstream os;
  boost::property_tree::ini_parser::write_ini(os, t);
  return os.str();
}

// --- presets -----------------------------------------------------------------

inline const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> p = {
      {"fig2", R"([cluster]
n = 2
W = 2e6
tau = 1e-3
sigma2 = 1e-13
c_tot = 10
L = 1e-13 1e-14; 1e-14 1e-13
p0 = 0.1 0.1
p_max = 3 3
lambda = 1e5 1e5
beta = 1 1
[experiment]
kind = average
policies = joint fixed_power
trials = 20
T = 20000
sweep = lambda1
sweep_values = 1e5 2.5e5 4e5 5.5e5 7e5 8.5e5 1e6 1.2e6
p_d_target = 2.9 2.9
power_match = true
)"},
      {"fig3", R"([cluster]
n = 2
W = 2e6
tau = 1e-3
sigma2 = 1e-13
c_tot = 10
L = 1e-13 1e-14; 1e-14 1e-13
p0 = 0.1 0.1
p_max = 3 3
lambda = 7e5 1e5
beta = 1 1
[experiment]
kind = average
policies = joint fixed_power
trials = 20
T = 20000
sweep = c_tot
sweep_values = 4 5 6 8 10 12
p_d_target = 2.9 2.9
power_match = true
)"},
      {"fig4", R"([cluster]
n = 2
W = 2e6
tau = 1e-3
sigma2 = 1e-13
c_tot = 10
L = 1e-13 1e-14; 1e-14 1e-13
p0 = 1 1
p_max = 1 1
lambda = 5e5 1e5
beta = 1 1
[experiment]
kind = finite
policies = discounted fixed_power
trials = 50
horizon = geometric
sweep = mu
sweep_values = 0.5 0.6 0.7 0.8 0.9 0.95
)"},
      {"pareto", R"([cluster]
n = 2
W = 2e6
tau = 1e-3
sigma2 = 1e-13
c_tot = 4
L = 1e-13 0; 0 1e-13
p0 = 0.1 0.1
p_max = 3 3
lambda = 6e5 6e5
beta = 1 1
[experiment]
kind = pareto
policies = joint
trials = 20
T = 20000
p_d_target = 2.9 2.9
crosslinks = false
beta_grid = 1 4; 1 2; 1 1; 2 1; 4 1
)"},
  };
  return p;
}

/// Command-line values that take precedence over files and environment.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> threads;
};

/// Preset, then config file, then environment, then flags.
inline Tree assemble_config(const std::string& preset, const std::string& config_path, const Overrides& o,
                            char** env = environ) {
  Tree t;
  if (!preset.empty()) {
    const auto it = presets().find(preset);
    if (it == presets().end()) throw ConfigError("unknown preset '" + preset + "'");
    merge_tree(t, parse_ini_text(it->second, "preset " + preset), "preset " + preset);
  }
  if (!config_path.empty()) merge_tree(t, read_ini_file(config_path), config_path);
  apply_env_overrides(t, env);
  if (o.seed) t.put(key_path("experiment", "seed"), std::to_string(*o.seed));
  if (o.trials) t.put(key_path("experiment", "trials"), std::to_string(*o.trials));
  if (o.threads) t.put(key_path("experiment", "threads"), std::to_string(*o.threads));
  return t;
}

// --- multiplier files --------------------------------------------------------

/// Measured constraint usage of tuned multipliers on a fresh, longer run.
struct TuneCheck {
  double total_C = 0.0;
  std::vector<double> p_d;
  bool unstable = false;
  std::string status;  // met | slack | violated | unstable
};

inline void write_multipliers(std::ostream& os, const MultiplierBook& book,
                              const std::vector<TuneCheck>& checks = {}) {
  Tree t;
  for (std::size_t k = 0; k < book.size(); ++k) {
    const std::string s = "point" + std::to_string(k);
    const auto& e = book[k];
    t.put(key_path(s, "sweep_value"), fmt17(e.sweep_value));
    t.put(key_path(s, "policy"), std::string(to_string(e.policy)));
    t.put(key_path(s, "gamma"), fmt17(e.multipliers.gamma));
    t.put(key_path(s, "power_price"), join(e.multipliers.power_price));
    t.put(key_path(s, "fixed_power"), join(e.multipliers.fixed_power));
    if (k < checks.size()) {
      t.put(key_path(s, "check_total_C"), fmt17(checks[k].total_C));
      t.put(key_path(s, "check_p_d"), join(checks[k].p_d));
      t.put(key_path(s, "check_status"), checks[k].status);
    }
  }
  boost::property_tree::ini_parser::write_ini(os, t);
}

inline MultiplierBook read_multipliers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read multiplier file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const Tree t = parse_ini_text(ss.str(), path);
  MultiplierBook book;
  for (const auto& [section, body] : t) {
    MultiplierEntry e;
    const std::string w = path + " [" + section + "]";
    e.sweep_value = parse_double(body.get<std::string>("sweep_value", "nan"), w + " sweep_value");
    e.policy = parse_policy(body.get<std::string>("policy", "joint"));
    e.multipliers.gamma = parse_double(body.get<std::string>("gamma", ""), w + " gamma");
    e.multipliers.power_price = parse_list(body.get<std::string>("power_price", ""), w + " power_price");
    e.multipliers.fixed_power = parse_list(body.get<std::string>("fixed_power", ""), w + " fixed_power");
    book.push_back(std::move(e));
  }
  return book;
}

// --- result files ------------------------------------------------------------

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

/// sweep_value, policy, mean_metric, ci_low, ci_high, unstable_fraction.
/// Rows reported as infinite carry "inf" in the three metric columns.
inline void write_results_csv(std::ostream& os, const ExperimentResult& res) {
  os << "sweep_value,policy,mean_metric,ci_low,ci_high,unstable_fraction\n";
  for (const auto& r : res.rows) {
    os << num(r.sweep_value) << ',' << r.policy << ',';
    if (r.reported_infinite()) os << "inf,inf,inf";
    else os << num(r.metric.mean) << ',' << num(r.metric.low) << ',' << num(r.metric.high);
    os << ',' << num(r.unstable_fraction) << '\n';
  }
}

/// One row per (sweep value, policy, user).
inline void write_users_csv(std::ostream& os, const ExperimentResult& res) {
  os << "sweep_value,policy,user,beta,delay_mean,delay_low,delay_high,p_total_watts,gamma,power_price,"
        "fixed_power_watts,total_C_mean,infeasible,note\n";
  for (const auto& r : res.rows) {
    const std::size_t n = std::max(r.beta.size(), r.delay.size());
    const auto at = [](const std::vector<double>& v, std::size_t i) {
      return i < v.size() ? v[i] : std::numeric_limits<double>::quiet_NaN();
    };
    for (std::size_t i = 0; i < n; ++i) {
      os << num(r.sweep_value) << ',' << r.policy << ',' << i << ',' << num(at(r.beta, i)) << ',';
      if (i < r.delay.size()) os << num(r.delay[i].mean) << ',' << num(r.delay[i].low) << ',' << num(r.delay[i].high);
      else os << "nan,nan,nan";
      os << ',' << num(at(r.p_total, i)) << ',' << num(r.infeasible ? std::numeric_limits<double>::quiet_NaN()
                                                                    : r.multipliers.gamma)
         << ',' << num(at(r.multipliers.power_price, i)) << ',' << num(at(r.multipliers.fixed_power, i)) << ','
         << num(r.infeasible ? std::numeric_limits<double>::quiet_NaN() : r.total_C.mean) << ','
         << (r.infeasible ? 1 : 0) << ',' << csv_quote(r.note) << '\n';
    }
  }
}

/// One row per (sweep value, policy, trial) with per-user delay and power.
inline void write_trials_csv(std::ostream& os, const ExperimentResult& res, std::size_t n) {
  os << "sweep_value,policy,trial,metric,total_C,drift_slope,unstable,slots";
  for (std::size_t i = 0; i < n; ++i) os << ",delay_" << i;
  for (std::size_t i = 0; i < n; ++i) os << ",p_total_" << i;
  os << '\n';
  for (const auto& t : res.trials) {
    os << num(t.sweep_value) << ',' << t.policy << ',' << t.trial << ',' << num(t.metric) << ',' << num(t.total_C)
       << ',' << num(t.drift_slope) << ',' << (t.unstable ? 1 : 0) << ',' << t.slots;
    for (std::size_t i = 0; i < n; ++i) os << ',' << num(i < t.delay.size() ? t.delay[i] : 0.0);
    for (std::size_t i = 0; i < n; ++i) os << ',' << num(i < t.p_total.size() ? t.p_total[i] : 0.0);
    os << '\n';
  }
}

/// Minimal CSV reader for files this tool wrote (quoted cells allowed).
inline std::vector<std::map<std::string, std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cell += '"', ++i;
        else if (c == '"') quoted = false;
        else cell += c;
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(cell);
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t k = 0; k < header.size() && k < cells.size(); ++k) row[header[k]] = cells[k];
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- plot --------------------------------------------------------------------

/// Line plot of mean_metric against sweep_value, one polyline per policy,
/// with confidence bars. Infinite points are marked along the top edge.
inline std::string svg_from_results(const std::string& results_csv, const std::string& title,
                                    const std::string& xlabel, const std::string& ylabel) {
  struct Pt {
    double x, y, lo, hi;
  };
  std::map<std::string, std::vector<Pt>> series;
  std::vector<std::string> order;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& row : read_csv(results_csv)) {
    const double x = std::strtod(row.at("sweep_value").c_str(), nullptr);
    if (!std::isfinite(x)) continue;
    Pt p{x, std::strtod(row.at("mean_metric").c_str(), nullptr), std::strtod(row.at("ci_low").c_str(), nullptr),
         std::strtod(row.at("ci_high").c_str(), nullptr)};
    const auto& name = row.at("policy");
    if (!series.count(name)) order.push_back(name);
    series[name].push_back(p);
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    if (std::isfinite(p.y)) {
      y0 = std::min(y0, std::isfinite(p.lo) ? p.lo : p.y);
      y1 = std::max(y1, std::isfinite(p.hi) ? p.hi : p.y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  y0 = std::min(y0, 0.0);
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  y1 *= 1.08;
  const double W = 640, H = 420, L = 80, R = 150, T = 40, B = 60;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream os;
  char buf[256];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n",
                L, T, W - L - R, H - T - B);
  os << buf;
  for (int k = 0; k <= 5; ++k) {
    const double xv = x0 + (x1 - x0) * k / 5.0, yv = y0 + (y1 - y0) * k / 5.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.3g</text>\n", sx(xv), H - B + 18,
                  xv);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3g</text>\n", L - 6, sy(yv) + 4, yv);
    os << buf;
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << xlabel
     << "</text>\n";
  os << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
  for (std::size_t s = 0; s < order.size(); ++s) {
    const char* col = colors[s % 5];
    std::string path;
    for (const auto& p : series[order[s]]) {
      if (!std::isfinite(p.y)) {
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\" text-anchor=\"middle\">inf</text>\n",
                      sx(p.x), T + 14 + 12.0 * static_cast<double>(s), col);
        os << buf;
        continue;
      }
      std::snprintf(buf, sizeof buf, "%s%g,%g", path.empty() ? "M" : " L", sx(p.x), sy(p.y));
      path += buf;
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\"/>\n<circle cx=\"%g\" cy=\"%g\" "
                    "r=\"3\" fill=\"%s\"/>\n",
                    sx(p.x), sy(p.lo), sx(p.x), sy(p.hi), col, sx(p.x), sy(p.y), col);
      os << buf;
    }
    if (!path.empty()) os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << col << "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\"/><text x=\"%g\" y=\"%g\">%s</text>\n",
                  W - R + 12, T + 10 + 18.0 * static_cast<double>(s), W - R + 36,
                  T + 10 + 18.0 * static_cast<double>(s), col, W - R + 42, T + 14 + 18.0 * static_cast<double>(s),
                  order[s].c_str());
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

// --- manifest ----------------------------------------------------------------

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunInfo {
  std::string command;
  std::string subcommand;
  std::string started;
  std::string finished;
  std::string multipliers;  // file the multipliers came from, if any
  std::vector<std::string> outputs;
};

/// Configuration echo followed by a [run] section. Loading the manifest as a
/// config file reproduces the run.
inline void write_manifest(std::ostream& os, const RunConfig& cfg, const RunInfo& info) {
  Tree t = config_to_tree(cfg);
  t.put(key_path("run", "subcommand"), info.subcommand);
  t.put(key_path("run", "command"), info.command);
  t.put(key_path("run", "version"), std::string(kVersion));
  t.put(key_path("run", "seed"), std::to_string(cfg.exp.seed));
  t.put(key_path("run", "pilot_seed"), std::to_string(pilot_seed(cfg.exp.seed)));
  t.put(key_path("run", "trial_streams"), "0.." + std::to_string(cfg.exp.trials - 1));
  t.put(key_path("run", "started"), info.started);
  t.put(key_path("run", "finished"), info.finished);
  if (!info.multipliers.empty()) t.put(key_path("run", "multipliers"), info.multipliers);
  std::string outs;
  for (const auto& o : info.outputs) outs += (outs.empty() ? "" : " ") + o;
  t.put(key_path("run", "outputs"), outs);
  boost::property_tree::ini_parser::write_ini(os, t);
}

// --- running -----------------------------------------------------------------

/// Runs the configured experiment kind.
inline ExperimentResult run_configured(const ExperimentConfig& cfg, const MultiplierBook& book,
                                       MultiplierBook* tuned) {
  if (cfg.experiment == "finite") return run_finite_service_experiment(cfg, book, tuned);
  if (cfg.experiment == "pareto") return pareto_sweep(cfg, book, tuned);
  return run_average_reward_experiment(cfg, book, tuned);
}

/// Configuration the experiment used for one result row.
inline ExperimentConfig row_config(const ExperimentConfig& cfg, const MetricRow& row) {
  ExperimentConfig c = cfg;
  if (cfg.experiment == "pareto") {
    c.sweep_param = "none";
    c.cluster.beta = row.beta;
    return c;
  }
  if (cfg.experiment == "finite") {
    c.horizon.kind = Horizon::Kind::geometric;
    if (c.sweep_param == "none") return c;
  }
  return at_sweep_point(c, row.sweep_value);
}

/// Slot trace of trial 0 for one feasible row.
inline Trace row_trace(const ExperimentConfig& cfg, const MetricRow& row) {
  const auto c = row_config(cfg, row);
  const auto policy = build_policy(c, parse_policy(row.policy), row.multipliers);
  Trace trace;
  run_trial(policy, c.horizon, c.seed, 0, c.initial_backlog, &trace, c.instability);
  return trace;
}

/// Re-measures constraint usage of tuned multipliers on a run five times the
/// pilot length with streams the tuner never saw.
inline TuneCheck check_tuned(const ExperimentConfig& cfg, const MultiplierEntry& e) {
  ExperimentConfig c = cfg;
  if (cfg.experiment == "pareto") {
    for (const auto& b : cfg.beta_grid) {
      const double ratio = b[1] > 0.0 ? b[0] / b[1] : std::numeric_limits<double>::infinity();
      if (ratio == e.sweep_value) c.cluster.beta = b;
    }
    c.sweep_param = "none";
  } else if (!std::isnan(e.sweep_value)) {
    c = at_sweep_point(c, e.sweep_value);
  }
  const auto policy = build_policy(c, e.policy, e.multipliers);
  std::vector<TrialSummary> runs;
  if (e.policy == PolicyKind::discounted) {
    c.horizon.kind = Horizon::Kind::geometric;
    runs = run_trials(policy, c.horizon, pilot_seed(c.seed) + 7, 5 * c.tuning.pilot_trials, c.threads,
                      c.initial_backlog, c.instability);
  } else {
    Horizon h;
    h.T = 5 * c.tuning.pilot_slots;
    runs.push_back(run_trial(policy, h, pilot_seed(c.seed) + 7, 0, c.initial_backlog, nullptr, c.instability));
  }
  TuneCheck out;
  out.p_d.assign(c.cluster.n, 0.0);
  double slots = 0.0;
  for (const auto& s : runs) {
    slots += static_cast<double>(s.slots);
    out.total_C += s.total_C();
    out.unstable = out.unstable || s.unstable;
    for (std::size_t i = 0; i < c.cluster.n; ++i) out.p_d[i] += s.sum_pd[i];
  }
  out.total_C /= slots;
  for (double& p : out.p_d) p /= slots;
  const double tol = c.tuning.tolerance;
  auto meets = [&](double got, double target) {
    if (std::abs(got - target) <= tol * target) return std::string("met");
    return std::string(got < target ? "slack" : "violated");
  };
  out.status = meets(out.total_C, c.cluster.c_tot);
  if (e.policy == PolicyKind::joint && c.p_d_target.size() == c.cluster.n) {
    for (std::size_t i = 0; i < c.cluster.n; ++i)
      if (meets(out.p_d[i], c.p_d_target[i]) == "violated") out.status = "violated";
  }
  if (out.unstable) out.status = "unstable";
  return out;
}

}  // namespace cran
