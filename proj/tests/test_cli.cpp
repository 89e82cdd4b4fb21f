// SPDX-License-Identifier: Apache-2.0
//
// Runs the cran-sim binary named by $CRAN_SIM.

#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* p = std::getenv("CRAN_SIM");
  REQUIRE(p != nullptr);
  return p;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cran-cli-test-" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const fs::path& dir, const std::string& env = "") {
  const auto log = dir / "console.txt";
  const std::string cmd = env + " " + cli() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

std::size_t lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

const char* kMinimal = R"([cluster]
n = 1
L = 1e-13
p0 = 0.1
p_max = 0.1
lambda = 1e5
beta = 1
[solver]
gamma = 1e-3
[experiment]
policies = fixed_power
trials = 1
T = 10
trace = true
[tuning]
enabled = false
)";

const char* kTunable = R"([cluster]
n = 1
L = 1e-13
p0 = 0.5
p_max = 0.5
lambda = 3e5
beta = 1
c_tot = 3
[solver]
grid_points = 64
[experiment]
policies = fixed_power
trials = 2
T = 3000
[tuning]
pilot_slots = 20000
)";

}  // namespace

TEST_CASE("missing config file exits 2 and names the path") {
  const auto dir = scratch("missing");
  const auto r = run("simulate --config /no/such/file.ini --out-dir " + (dir / "o").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.out.find("/no/such/file.ini") != std::string::npos);
}

TEST_CASE("unknown keys are configuration errors") {
  const auto dir = scratch("unknown");
  const auto cfg = write(dir / "c.ini", std::string(kMinimal) + "[experiment]\nbogus = 1\n");
  CHECK(run("simulate --config " + cfg.string(), dir).code == 2);
  const auto cfg2 = write(dir / "d.ini", "[cluster]\nn = 1\nL = 1e-13\nlambda = 1e5\nfoo = 2\n");
  CHECK(run("simulate --config " + cfg2.string(), dir).code == 2);
}

TEST_CASE("minimal one-user run writes one trace row per slot") {
  const auto dir = scratch("minimal");
  const auto cfg = write(dir / "c.ini", kMinimal);
  const auto out = dir / "o";
  const auto r = run("simulate --config " + cfg.string() + " --out-dir " + out.string(), dir);
  REQUIRE(r.code == 0);
  const auto trace = slurp(out / "trace_0_fixed_power.csv");
  CHECK(lines(trace) == 11);  // header + 10 slots
  CHECK(trace.rfind("t,user,Q_bits,R_bps,C_bpshz,p_d_watts,A_bits\n", 0) == 0);
  CHECK(slurp(out / "results.csv").rfind("sweep_value,policy,mean_metric,ci_low,ci_high,unstable_fraction\n", 0) == 0);
  CHECK(fs::exists(out / "manifest.ini"));
  CHECK(fs::exists(out / "results.svg"));
}

TEST_CASE("zero fronthaul budget with traffic exits 3") {
  const auto dir = scratch("zero");
  const auto cfg = write(dir / "c.ini", kTunable);
  const auto r = run("tune --config " + cfg.string() + " --out-dir " + (dir / "o").string(), dir,
                     "CRAN_CLUSTER_C_TOT=0");
  CHECK(r.code == 3);
  CHECK(r.out.find("infeasible") != std::string::npos);
}

TEST_CASE("environment overrides reach the manifest") {
  const auto dir = scratch("env");
  const auto cfg = write(dir / "c.ini", kMinimal);
  const auto r = run("simulate --config " + cfg.string() + " --out-dir " + (dir / "o").string(), dir,
                     "CRAN_EXPERIMENT_T=7 cran_cluster_lambda=1.2e5");
  REQUIRE(r.code == 0);
  const auto manifest = slurp(dir / "o" / "manifest.ini");
  CHECK(manifest.find("T=7\n") != std::string::npos);
  CHECK(manifest.find("lambda=120000\n") != std::string::npos);
  CHECK(lines(slurp(dir / "o" / "trace_0_fixed_power.csv")) == 8);
}

TEST_CASE("flags override files") {
  const auto dir = scratch("flags");
  const auto cfg = write(dir / "c.ini", kMinimal);
  REQUIRE(run("simulate --config " + cfg.string() + " --seed 42 --trials 3 --out-dir " + (dir / "o").string(), dir)
              .code == 0);
  const auto manifest = slurp(dir / "o" / "manifest.ini");
  CHECK(manifest.find("seed=42\n") != std::string::npos);
  CHECK(manifest.find("trials=3\n") != std::string::npos);
  CHECK(lines(slurp(dir / "o" / "trials.csv")) == 4);
}

TEST_CASE("tuned multipliers reproduce the tuned run") {
  const auto dir = scratch("tune");
  const auto cfg = write(dir / "c.ini", kTunable);
  const auto tuned = run("tune --config " + cfg.string() + " --out-dir " + (dir / "t").string(), dir);
  REQUIRE(tuned.code == 0);
  REQUIRE(fs::exists(dir / "t" / "multipliers.ini"));
  const auto book = slurp(dir / "t" / "multipliers.ini");
  CHECK(book.find("check_status=met") != std::string::npos);
  const auto again = run("simulate --config " + cfg.string() + " --multipliers " +
                             (dir / "t" / "multipliers.ini").string() + " --out-dir " + (dir / "s").string(),
                         dir);
  REQUIRE(again.code == 0);
  for (const char* f : {"results.csv", "users.csv", "trials.csv"}) {
    INFO(f);
    CHECK(slurp(dir / "t" / f) == slurp(dir / "s" / f));
  }
}

TEST_CASE("rerunning a manifest reproduces the CSVs") {
  const auto dir = scratch("manifest");
  const auto cfg = write(dir / "c.ini", kTunable);
  REQUIRE(run("simulate --config " + cfg.string() + " --out-dir " + (dir / "a").string(), dir).code == 0);
  REQUIRE(run("simulate --config " + (dir / "a" / "manifest.ini").string() + " --out-dir " + (dir / "b").string(),
              dir)
              .code == 0);
  for (const char* f : {"results.csv", "users.csv", "trials.csv"}) {
    INFO(f);
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
}

TEST_CASE("validation passes and catches a tampered E1") {
  const auto dir = scratch("validate");
  const auto ok = run("validate --level fast", dir);
  CHECK(ok.code == 0);
  CHECK(ok.out.find("all checks passed") != std::string::npos);
  const auto bad = run("validate --level fast --inject-e1-bias 1e-6", dir);
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("lemma2 subcommand") {
  const auto dir = scratch("lemma2");
  const auto r = run("lemma2 --states 4 --mu 0.7 --trials 50000", dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("agree within") != std::string::npos);
}

TEST_CASE("bad command lines") {
  const auto dir = scratch("usage");
  CHECK(run("", dir).code == 2);
  CHECK(run("simulate", dir).code == 2);
  CHECK(run("simulate --preset fig9", dir).code == 2);
}
