#pragma once

// TD errors, GAE, decoupled actor/critic estimates, reward-decay profiles and the empirical
// advantage-variance table.
//
// Conventions: a trajectory has T token records. `values` always has T + 1 entries; entry T is
// the tail bootstrap (0 when the episode terminated, V(s_T) when it was cut off).

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vcppo/core_mdp.hpp"
#include "vcppo/errors.hpp"
#include "vcppo/function_approx.hpp"

namespace vcppo {

struct GaeConfig {
  double gamma = 1.0;
  double lambda_actor = 0.95;
  double lambda_critic = 1.0;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gae.gamma: must be in (0, 1]");
    if (!(lambda_actor >= 0.0 && lambda_actor <= 1.0)) throw ConfigError("gae.lambda_actor: must be in [0, 1]");
    if (!(lambda_critic >= 0.0 && lambda_critic <= 1.0)) throw ConfigError("gae.lambda_critic: must be in [0, 1]");
  }
};

struct TokenRecord {
  std::vector<double> features;
  Token action = 0;
  double behavior_logprob = 0.0;
  double reward = 0.0;
  int position = 0;
};

struct Trajectory {
  std::vector<TokenRecord> records;
  int prompt_id = 0;
  // False only when collection stopped before the environment finished the episode; the tail is
  // then bootstrapped from V(final_features).
  bool terminated = true;
  std::vector<double> final_features;

  std::size_t size() const { return records.size(); }

  double total_reward() const {
    double r = 0.0;
    for (const auto& rec : records) r += rec.reward;
    return r;
  }

  std::vector<double> rewards() const {
    std::vector<double> r;
    r.reserve(records.size());
    for (const auto& rec : records) r.push_back(rec.reward);
    return r;
  }
};

struct AdvantageSet {
  std::vector<double> advantages;
  std::vector<double> value_targets;
  std::vector<double> values_used;  // V(s_t) for t < T (bootstrap entry excluded)
};

/// V(s_0..s_{T-1}) followed by the tail bootstrap.
inline std::vector<double> evaluate_values(const Trajectory& traj, const ValueModel* value) {
  std::vector<double> v(traj.size() + 1, 0.0);
  if (value == nullptr) return v;
  for (std::size_t t = 0; t < traj.size(); ++t) v[t] = value_predict(*value, traj.records[t].features);
  if (!traj.terminated) v[traj.size()] = value_predict(*value, traj.final_features);
  return v;
}

/// delta_t = r_t + gamma V(s_{t+1}) - V(s_t).
inline std::vector<double> td_errors(std::span<const double> rewards, std::span<const double> values,
                                     double gamma = 1.0) {
  if (values.size() != rewards.size() + 1)
    throw UsageError("td_errors: values must have length T + 1 (T = " + std::to_string(rewards.size()) + ")");
  std::vector<double> d(rewards.size());
  for (std::size_t t = 0; t < rewards.size(); ++t) d[t] = rewards[t] + gamma * values[t + 1] - values[t];
  return d;
}

inline std::vector<double> td_errors(const Trajectory& traj, std::span<const double> values, double gamma = 1.0) {
  const auto r = traj.rewards();
  return td_errors(r, values, gamma);
}

/// Backward recursion A_t = delta_t + gamma lambda A_{t+1}, A_T = 0.
inline std::vector<double> gae(std::span<const double> deltas, double lam, double gamma = 1.0) {
  if (!(lam >= 0.0 && lam <= 1.0)) throw UsageError("gae: lambda must be in [0, 1]");
  std::vector<double> a(deltas.size());
  double next = 0.0;
  const double decay = gamma * lam;
  for (std::size_t i = deltas.size(); i-- > 0;) {
    next = deltas[i] + decay * next;
    a[i] = next;
  }
  return a;
}

/// Regression targets for the critic. lambda = 1 (with gamma = 1) returns the suffix reward sum
/// plus the tail bootstrap directly, without passing through V; otherwise A_t(lambda) + V(s_t).
inline std::vector<double> value_targets(std::span<const double> rewards, std::span<const double> values,
                                         double lam, double gamma = 1.0) {
  if (values.size() != rewards.size() + 1) throw UsageError("value_targets: values must have length T + 1");
  const std::size_t T = rewards.size();
  std::vector<double> out(T);
  if (lam == 1.0) {
    double acc = values[T];
    for (std::size_t i = T; i-- > 0;) {
      acc = rewards[i] + gamma * acc;
      out[i] = acc;
    }
    return out;
  }
  const auto adv = gae(td_errors(rewards, values, gamma), lam, gamma);
  for (std::size_t t = 0; t < T; ++t) out[t] = adv[t] + values[t];
  return out;
}

inline std::vector<double> value_targets(const Trajectory& traj, std::span<const double> values, double lam,
                                         double gamma = 1.0) {
  const auto r = traj.rewards();
  return value_targets(r, values, lam, gamma);
}

/// Actor advantages with lambda_actor and critic targets with lambda_critic, sharing one set of
/// V(s_t) evaluations. `value == nullptr` means V = 0.
inline AdvantageSet decoupled_estimate(const Trajectory& traj, const ValueModel* value, const GaeConfig& cfg) {
  const auto v = evaluate_values(traj, value);
  const auto r = traj.rewards();
  AdvantageSet out;
  out.advantages = gae(td_errors(r, v, cfg.gamma), cfg.lambda_actor, cfg.gamma);
  out.value_targets = value_targets(r, v, cfg.lambda_critic, cfg.gamma);
  out.values_used.assign(v.begin(), v.end() - 1);
  return out;
}

inline AdvantageSet decoupled_estimate(const Trajectory& traj, const ValueModel& value, const GaeConfig& cfg) {
  return decoupled_estimate(traj, &value, cfg);
}

/// Advantage a zero-value model assigns to position t of a length-T trajectory whose only reward is
/// r_terminal at the end: lambda^(T-1-t) r_terminal. Built by the same repeated multiplication as
/// the GAE recursion so the two agree exactly.
inline std::vector<double> reward_decay_profile(int T, double lam, double r_terminal) {
  if (T < 1) throw UsageError("reward_decay_profile: T must be >= 1");
  std::vector<double> p(static_cast<std::size_t>(T));
  double acc = r_terminal;
  p[static_cast<std::size_t>(T - 1)] = acc;
  for (int t = T - 2; t >= 0; --t) {
    acc = lam * acc;
    p[static_cast<std::size_t>(t)] = acc;
  }
  return p;
}

/// In-place batch whitening (population std). No-op when std < 1e-12 apart from centering.
inline void whiten(std::vector<double>& xs) {
  if (xs.empty()) return;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  const double sd = std::sqrt(var);
  for (auto& x : xs) x = sd < 1e-12 ? x - mean : (x - mean) / sd;
}

struct VarianceRow {
  double lambda = 0.0;
  double variance_a0 = 0.0;
  std::size_t n_samples = 0;
  // Decomposition of Var[A_0] into the weighted TD-error variances and the covariance cross terms.
  double variance_term = 0.0;
  double covariance_term = 0.0;
};

/// Sample (population) variance of the position-0 advantage per lambda. TD errors past a
/// trajectory's end are treated as 0 so trajectories of different length share one index space.
inline std::vector<VarianceRow> advantage_variance_table(const std::vector<Trajectory>& batch, const ValueModel* value,
                                                         std::span<const double> lambda_grid, double gamma = 1.0) {
  if (batch.size() < 2) throw UsageError("advantage_variance_table: need at least 2 trajectories");
  std::size_t horizon = 0;
  for (const auto& tr : batch) {
    if (tr.size() == 0) throw UsageError("advantage_variance_table: empty trajectory");
    horizon = std::max(horizon, tr.size());
  }
  const double n = static_cast<double>(batch.size());
  std::vector<std::vector<double>> deltas;
  deltas.reserve(batch.size());
  for (const auto& tr : batch) {
    auto d = td_errors(tr, evaluate_values(tr, value), gamma);
    d.resize(horizon, 0.0);
    deltas.push_back(std::move(d));
  }
  std::vector<double> mean(horizon, 0.0);
  for (const auto& d : deltas)
    for (std::size_t l = 0; l < horizon; ++l) mean[l] += d[l];
  for (auto& m : mean) m /= n;
  std::vector<double> cov(horizon * horizon, 0.0);
  for (const auto& d : deltas)
    for (std::size_t i = 0; i < horizon; ++i)
      for (std::size_t j = 0; j < horizon; ++j) cov[i * horizon + j] += (d[i] - mean[i]) * (d[j] - mean[j]);
  for (auto& c : cov) c /= n;

  std::vector<VarianceRow> rows;
  for (double lam : lambda_grid) {
    VarianceRow row;
    row.lambda = lam;
    row.n_samples = batch.size();
    double a_mean = 0.0;
    std::vector<double> a0(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      a0[k] = gae(deltas[k], lam, gamma)[0];
      a_mean += a0[k];
    }
    a_mean /= n;
    for (double a : a0) row.variance_a0 += (a - a_mean) * (a - a_mean);
    row.variance_a0 /= n;
    const double w = gamma * lam;
    for (std::size_t i = 0; i < horizon; ++i) {
      const double wi = std::pow(w, static_cast<double>(i));
      row.variance_term += wi * wi * cov[i * horizon + i];
      for (std::size_t j = i + 1; j < horizon; ++j)
        row.covariance_term += 2.0 * wi * std::pow(w, static_cast<double>(j)) * cov[i * horizon + j];
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace vcppo
