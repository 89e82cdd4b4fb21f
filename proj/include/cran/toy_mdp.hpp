// SPDX-License-Identifier: Apache-2.0
//
// Small finite MDP used to check that the expected total reward over a
// geometric horizon equals the discounted value of the same policy.

#pragma once

#include "cran/config.hpp"
#include "cran/engine.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace cran {

struct ToyMDP {
  std::size_t states = 1;
  std::size_t actions = 1;
  // reward[s][a]
  std::vector<std::vector<double>> reward;
  // transition[a](s, s')
  std::vector<RealMatrix> transition;
  std::vector<double> initial;  // distribution of the first state

  void validate() const {
    if (states < 1 || actions < 1) throw ConfigError("toy MDP needs at least one state and action");
    if (reward.size() != states) throw ConfigError("reward table must have one row per state");
    for (const auto& r : reward)
      if (r.size() != actions) throw ConfigError("reward table must have one column per action");
    if (transition.size() != actions) throw ConfigError("one transition matrix per action");
    for (const auto& P : transition) {
      if (P.rows() != static_cast<Eigen::Index>(states) || P.cols() != static_cast<Eigen::Index>(states))
        throw ConfigError("transition matrices must be states x states");
      for (Eigen::Index s = 0; s < P.rows(); ++s) {
        if ((P.row(s).array() < 0.0).any()) throw ConfigError("transition probabilities must be nonnegative");
        if (std::abs(P.row(s).sum() - 1.0) > 1e-12) throw ConfigError("transition rows must sum to 1");
      }
    }
    if (initial.size() != states) throw ConfigError("initial distribution must have one entry per state");
  }

  /// Random toy with `states` states and `actions` actions; rewards in [0, 1).
  static ToyMDP random(std::size_t states, std::size_t actions, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ToyMDP m;
    m.states = states;
    m.actions = actions;
    m.reward.assign(states, std::vector<double>(actions));
    for (auto& row : m.reward)
      for (double& r : row) r = u(rng);
    for (std::size_t a = 0; a < actions; ++a) {
      RealMatrix P(states, states);
      for (std::size_t s = 0; s < states; ++s) {
        double sum = 0.0;
        for (std::size_t t = 0; t < states; ++t) sum += P(s, t) = u(rng) + 0.05;
        P.row(s) /= sum;
      }
      m.transition.push_back(P);
    }
    m.initial.assign(states, 0.0);
    m.initial[0] = 1.0;
    return m;
  }

  /// One state, one action, constant reward r.
  static ToyMDP constant(double r) {
    ToyMDP m;
    m.reward = {{r}};
    m.transition = {RealMatrix::Ones(1, 1)};
    m.initial = {1.0};
    return m;
  }
};

/// Exact discounted value sum_t mu^t E[r_t] of a stationary deterministic
/// policy (`policy[s]` is the action in state s), from (I - mu P) v = r.
inline double discounted_value(const ToyMDP& m, const std::vector<std::size_t>& policy, double mu) {
  m.validate();
  const auto S = static_cast<Eigen::Index>(m.states);
  RealMatrix P(S, S);
  Eigen::VectorXd r(S), d0(S);
  for (Eigen::Index s = 0; s < S; ++s) {
    const std::size_t a = policy.at(static_cast<std::size_t>(s));
    P.row(s) = m.transition.at(a).row(s);
    r(s) = m.reward[static_cast<std::size_t>(s)][a];
    d0(s) = m.initial[static_cast<std::size_t>(s)];
  }
  const Eigen::VectorXd v = (RealMatrix::Identity(S, S) - mu * P).partialPivLu().solve(r);
  return d0.dot(v);
}

struct Lemma2Report {
  double exact = 0.0;
  double mc_mean = 0.0;
  double mc_stderr = 0.0;
  double z = 0.0;  // (mc - exact) / stderr
  std::size_t trials = 0;

  bool agrees(double k = 3.0) const {
    if (mc_stderr == 0.0) return std::abs(mc_mean - exact) <= 1e-12 * std::max(1.0, std::abs(exact));
    return std::abs(z) <= k;
  }
};

/// Monte-Carlo total reward over horizons T ~ 1 + Geometric(1 - mu) against
/// the exact discounted value.
inline Lemma2Report lemma2_check(const ToyMDP& m, const std::vector<std::size_t>& policy, double mu,
                                 std::size_t trials, std::uint64_t seed) {
  m.validate();
  if (!(mu > 0.0 && mu < 1.0)) throw ConfigError("mu must lie in (0, 1)");
  Lemma2Report rep;
  rep.exact = discounted_value(m, policy, mu);
  rep.trials = trials;
  Rng rng(seed);
  std::geometric_distribution<std::uint64_t> geo(1.0 - mu);
  std::discrete_distribution<std::size_t> start(m.initial.begin(), m.initial.end());
  std::vector<std::discrete_distribution<std::size_t>> step;
  for (std::size_t s = 0; s < m.states; ++s) {
    std::vector<double> w(m.states);
    for (std::size_t t = 0; t < m.states; ++t)
      w[t] = m.transition[policy[s]](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
    step.emplace_back(w.begin(), w.end());
  }
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t k = 0; k < trials; ++k) {
    const std::uint64_t T = geo(rng) + 1;
    std::size_t s = start(rng);
    double total = 0.0;
    for (std::uint64_t t = 0; t < T; ++t) {
      total += m.reward[s][policy[s]];
      if (t + 1 < T) s = step[s](rng);
    }
    sum += total;
    sum2 += total * total;
  }
  const double N = static_cast<double>(trials);
  rep.mc_mean = sum / N;
  const double var = trials > 1 ? std::max(0.0, (sum2 - N * rep.mc_mean * rep.mc_mean) / (N - 1.0)) : 0.0;
  rep.mc_stderr = std::sqrt(var / N);
  rep.z = rep.mc_stderr > 0.0 ? (rep.mc_mean - rep.exact) / rep.mc_stderr : 0.0;
  return rep;
}

}  // namespace cran
