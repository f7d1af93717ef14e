#pragma once

// Exhaustive enumeration on small environments: exact trajectory distributions, exact policy
// gradients and the value-function invariance check for GAE policy gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "vcppo/advantage.hpp"
#include "vcppo/core_mdp.hpp"
#include "vcppo/function_approx.hpp"

namespace vcppo {

inline constexpr double kDefaultEnumerationCap = 1e6;

struct WeightedTrajectory {
  Trajectory trajectory;
  double probability = 0.0;
};

struct TrajectoryDistribution {
  std::vector<WeightedTrajectory> entries;
  double total_probability = 0.0;
};

inline void check_enumeration_cap(const EnvSpec& env, double cap) {
  const double required = std::pow(static_cast<double>(env.vocab.size()), env.t_max);
  if (required > cap)
    throw CapExceeded("enumeration needs |vocab|^t_max = " + std::to_string(required) +
                          " which exceeds the cap " + std::to_string(cap) + "; raise the cap or shrink t_max",
                      required);
}

namespace detail {

template <typename Visit>
void expand(const EnvSpec& env, const PolicyModel& policy, const State& s, double prob, Trajectory& path, Visit&& visit) {
  const auto lp = log_softmax(policy_logits(policy, s.features));
  for (std::size_t a = 0; a < lp.size(); ++a) {
    const double p = std::exp(lp[a]);
    if (p == 0.0) continue;
    const auto res = step(env, s, static_cast<Token>(a));
    path.records.push_back(TokenRecord{s.features, static_cast<Token>(a), lp[a], res.reward, s.position});
    if (res.done) {
      visit(path, prob * p);
    } else {
      expand(env, policy, res.next, prob * p, path, visit);
    }
    path.records.pop_back();
  }
}

}  // namespace detail

/// Depth-first expansion of every action sequence with non-zero probability. Without `prompt`,
/// the initial-prompt distribution (uniform over bit-strings) is enumerated as well.
inline TrajectoryDistribution enumerate_trajectories(const EnvSpec& env, const PolicyModel& policy,
                                                     std::optional<int> prompt = std::nullopt,
                                                     double cap = kDefaultEnumerationCap) {
  env.validate();
  check_enumeration_cap(env, cap);
  TrajectoryDistribution dist;
  const auto n_prompts = env.num_prompts();
  for (std::int64_t pid = 0; pid < n_prompts; ++pid) {
    if (prompt && *prompt != pid) continue;
    const double p0 = prompt ? 1.0 : 1.0 / static_cast<double>(n_prompts);
    Trajectory path;
    path.prompt_id = static_cast<int>(pid);
    detail::expand(env, policy, initial_state(env, static_cast<int>(pid)), p0, path,
                   [&](const Trajectory& tr, double p) { dist.entries.push_back({tr, p}); });
  }
  for (const auto& e : dist.entries) dist.total_probability += e.probability;
  return dist;
}

/// Sum over trajectories of p(tau) * sum_t grad log pi(a_t|s_t) * G_t, with G_t the full
/// Monte-Carlo return from t.
inline std::vector<double> exact_reinforce_gradient(const TrajectoryDistribution& dist, const PolicyModel& policy) {
  std::vector<double> g(policy.params().size(), 0.0);
  for (const auto& [tr, p] : dist.entries) {
    const auto returns = value_targets(tr, std::vector<double>(tr.size() + 1, 0.0), 1.0);
    for (std::size_t t = 0; t < tr.size(); ++t)
      if (returns[t] != 0.0) accumulate_grad_logprob(policy, tr.records[t].features, tr.records[t].action, p * returns[t], g);
  }
  return g;
}

/// Negative controls for the invariance check.
enum class BiasInjection {
  none,
  // Adds V(s_{t+1}) to A_t. The successor state depends on a_t, so this term is not a baseline.
  successor_value,
  // Adds V(s_t) to A_t. A state-only term: the expected gradient is unchanged.
  current_value,
};

/// Exact expectation of sum_t grad log pi(a_t|s_t) * A_t where A_t is lambda-GAE built from
/// `value` (nullptr means V = 0).
inline std::vector<double> exact_decoupled_gae_gradient(const TrajectoryDistribution& dist, const PolicyModel& policy,
                                                        const ValueModel* value, double lam_actor,
                                                        BiasInjection inject = BiasInjection::none) {
  std::vector<double> g(policy.params().size(), 0.0);
  for (const auto& [tr, p] : dist.entries) {
    const auto v = evaluate_values(tr, value);
    auto adv = gae(td_errors(tr, v, 1.0), lam_actor, 1.0);
    if (inject == BiasInjection::successor_value)
      for (std::size_t t = 0; t < adv.size(); ++t) adv[t] += v[t + 1];
    if (inject == BiasInjection::current_value)
      for (std::size_t t = 0; t < adv.size(); ++t) adv[t] += v[t];
    for (std::size_t t = 0; t < tr.size(); ++t)
      if (adv[t] != 0.0) accumulate_grad_logprob(policy, tr.records[t].features, tr.records[t].action, p * adv[t], g);
  }
  return g;
}

inline double linf_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct UnbiasednessRow {
  double lambda = 0.0;
  int value_sample = 0;
  double linf_diff = 0.0;
};

struct UnbiasednessReport {
  std::vector<UnbiasednessRow> rows;
  // Per lambda: || g_lambda(V=0) - g_1(V=0) ||_inf, the bias that lambda itself introduces.
  std::vector<std::pair<double, double>> lambda_bias;
  double max_diff = 0.0;
  double tolerance = 1e-9;
  bool passed() const { return max_diff <= tolerance; }
};

/// Random tabular value function with parameters uniform(-range, range).
inline ValueModel random_tabular_value(int feature_dim, std::uint64_t seed, int sample, double range = 2.0) {
  auto v = ValueModel::tabular(feature_dim);
  CounterRng rng(seed, Purpose::oracle, {static_cast<std::uint64_t>(sample)});
  for (auto& w : v.params().values) w = rng.uniform(-range, range);
  return v;
}

inline UnbiasednessReport unbiasedness_report(const EnvSpec& env, const PolicyModel& policy, int value_samples,
                                              const std::vector<double>& lam_grid, std::uint64_t seed = 0,
                                              BiasInjection inject = BiasInjection::none,
                                              double cap = kDefaultEnumerationCap) {
  const auto dist = enumerate_trajectories(env, policy, std::nullopt, cap);
  UnbiasednessReport rep;
  const auto g_mc = exact_decoupled_gae_gradient(dist, policy, nullptr, 1.0);
  for (double lam : lam_grid) {
    const auto g0 = exact_decoupled_gae_gradient(dist, policy, nullptr, lam);
    rep.lambda_bias.emplace_back(lam, linf_distance(g0, g_mc));
    for (int k = 0; k < value_samples; ++k) {
      const auto v = random_tabular_value(env.feature_dim(), seed, k);
      const auto gv = exact_decoupled_gae_gradient(dist, policy, &v, lam, inject);
      const double d = linf_distance(gv, g0);
      rep.rows.push_back({lam, k, d});
      rep.max_diff = std::max(rep.max_diff, d);
    }
  }
  return rep;
}

struct PolicySummary {
  double success = 0.0;      // probability of reward_correct
  double mean_length = 0.0;  // expected number of emitted tokens
  double mean_reward = 0.0;
};

/// Exact expected success, length and reward of `policy` over the prompt distribution.
inline PolicySummary exact_summary(const EnvSpec& env, const PolicyModel& policy) {
  PolicySummary out;
  const double p0 = 1.0 / static_cast<double>(env.num_prompts());
  auto walk = [&](auto&& self, const State& s, double prob) -> void {
    const auto probs = action_probabilities(policy, s.features);
    for (std::size_t a = 0; a < probs.size(); ++a) {
      const double p = prob * probs[a];
      if (p == 0.0) continue;
      const auto res = step(env, s, static_cast<Token>(a));
      if (res.done) {
        out.mean_length += p * res.next.position;
        out.mean_reward += p * res.reward;
        if (res.reward == env.reward_correct) out.success += p;
      } else {
        self(self, res.next, p);
      }
    }
  };
  for (std::int64_t pid = 0; pid < env.num_prompts(); ++pid) walk(walk, initial_state(env, static_cast<int>(pid)), p0);
  return out;
}

/// E[G_t | features(s_t) = x] under the on-policy state distribution, for every reachable x.
/// This is the best any function of the observation can predict.
inline std::map<std::vector<double>, double> exact_feature_values(const EnvSpec& env, const PolicyModel& policy) {
  std::map<std::vector<double>, std::pair<double, double>> acc;  // mass, mass * value
  const double p0 = 1.0 / static_cast<double>(env.num_prompts());
  auto value_of = [&](auto&& self, const State& s, double reach) -> double {
    const auto probs = action_probabilities(policy, s.features);
    double v = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
      if (probs[a] == 0.0) continue;
      const auto res = step(env, s, static_cast<Token>(a));
      v += probs[a] * (res.reward + (res.done ? 0.0 : self(self, res.next, reach * probs[a])));
    }
    auto& slot = acc[s.features];
    slot.first += reach;
    slot.second += reach * v;
    return v;
  };
  for (std::int64_t pid = 0; pid < env.num_prompts(); ++pid)
    value_of(value_of, initial_state(env, static_cast<int>(pid)), p0);
  std::map<std::vector<double>, double> out;
  for (const auto& [x, mv] : acc)
    if (mv.first > 0.0) out[x] = mv.second / mv.first;
  return out;
}

}  // namespace vcppo
