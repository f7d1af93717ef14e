#pragma once

// Baseline PPO, VC-PPO (decoupled lambdas on top of a pretrained critic) and leave-one-out GRPO,
// together with KL reward shaping and offline value pretraining.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vcppo/advantage.hpp"
#include "vcppo/core_mdp.hpp"
#include "vcppo/diagnostics.hpp"
#include "vcppo/errors.hpp"
#include "vcppo/function_approx.hpp"
#include "vcppo/oracle.hpp"
#include "vcppo/rng.hpp"

namespace vcppo {

enum class Algorithm { ppo, vcppo, grpo };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ppo: return "ppo";
    case Algorithm::vcppo: return "vcppo";
    case Algorithm::grpo: return "grpo";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "ppo") return Algorithm::ppo;
  if (s == "vcppo") return Algorithm::vcppo;
  if (s == "grpo") return Algorithm::grpo;
  throw ConfigError("train.algorithm: unknown algorithm '" + s + "' (expected ppo, vcppo or grpo)");
}

struct TrainConfig {
  GaeConfig gae;
  double clip_eps = 0.2;
  int epochs = 4;
  int minibatches = 4;
  int batch_trajectories = 64;
  double lr_policy = 0.05;
  double lr_value = 0.1;
  double kl_beta = 0.0;
  bool whiten_advantages = false;
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::vcppo;
  int rounds = 500;
  int grpo_group_size = 8;
  bool grpo_std_normalize = false;
  double value_clip = 0.0;  // 0 disables value-loss clipping
  double grad_clip = 0.0;   // 0 disables global-norm gradient clipping

  void validate() const {
    gae.validate();
    if (!(clip_eps > 0.0)) throw ConfigError("train.clip_eps: must be > 0");
    if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
    if (minibatches < 1) throw ConfigError("train.minibatches: must be >= 1");
    if (batch_trajectories < 1) throw ConfigError("train.batch_trajectories: must be >= 1");
    if (!(lr_policy >= 0.0)) throw ConfigError("train.lr_policy: must be >= 0");
    if (!(lr_value >= 0.0)) throw ConfigError("train.lr_value: must be >= 0");
    if (!(kl_beta >= 0.0)) throw ConfigError("train.kl_beta: must be >= 0");
    if (rounds < 0) throw ConfigError("train.rounds: must be >= 0");
    if (value_clip < 0.0) throw ConfigError("train.value_clip: must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("train.grad_clip: must be >= 0");
    if (algorithm == Algorithm::grpo) {
      if (grpo_group_size < 2) throw ConfigError("train.grpo_group_size: must be >= 2");
      if (batch_trajectories % grpo_group_size != 0)
        throw ConfigError("train.batch_trajectories: must be a multiple of grpo_group_size for grpo");
    }
  }

  /// The (lambda_actor, lambda_critic) pair actually used. Baseline PPO shares lambda_actor.
  GaeConfig effective_gae() const {
    GaeConfig g = gae;
    if (algorithm == Algorithm::ppo) g.lambda_critic = g.lambda_actor;
    return g;
  }
};

struct ValuePretrainConfig {
  int steps = 100;
  int batch_trajectories = 64;
  double lr_value = 0.1;
  int checkpoint_every = 50;
  double ev_threshold = 0.95;
  double loss_threshold = 0.0;  // loss <= 0 never happens with noisy returns: early stop is opt-in
  int patience = 50;
  int heldout_trajectories = 512;

  void validate() const {
    if (steps < 0) throw ConfigError("pretrain.steps: must be >= 0");
    if (batch_trajectories < 1) throw ConfigError("pretrain.batch_trajectories: must be >= 1");
    if (!(lr_value > 0.0)) throw ConfigError("pretrain.lr_value: must be > 0");
    if (checkpoint_every < 1) throw ConfigError("pretrain.checkpoint_every: must be >= 1");
    if (patience < 0) throw ConfigError("pretrain.patience: must be >= 0");
    if (heldout_trajectories < 2) throw ConfigError("pretrain.heldout_trajectories: must be >= 2");
  }
};

// ---------------------------------------------------------------------------------------------
// Estimators

/// min(ratio A, clip(ratio, 1 - eps, 1 + eps) A).
inline double ppo_clip_objective(double ratio, double advantage, double clip_eps) {
  if (!(ratio > 0.0)) throw UsageError("ppo_clip_objective: ratio must be > 0");
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

inline double value_loss(double prediction, double target) {
  const double d = prediction - target;
  return 0.5 * d * d;
}

inline double value_loss_grad(double prediction, double target) { return prediction - target; }

/// r_t <- r_t - beta (log pi(a_t|s_t) - log pi_ref(a_t|s_t)).
inline Trajectory shape_rewards_kl(Trajectory traj, std::span<const double> policy_logprobs,
                                   std::span<const double> ref_logprobs, double beta) {
  if (policy_logprobs.size() != traj.size() || ref_logprobs.size() != traj.size())
    throw UsageError("shape_rewards_kl: log-probability vectors must match trajectory length");
  if (beta == 0.0) return traj;
  for (std::size_t t = 0; t < traj.size(); ++t)
    traj.records[t].reward -= beta * (policy_logprobs[t] - ref_logprobs[t]);
  return traj;
}

/// Leave-one-out advantages A_i = r_i - mean_{j != i} r_j; optionally divided by the group std.
inline std::vector<double> grpo_advantages(std::span<const double> group_rewards, bool std_normalize = false) {
  const std::size_t g = group_rewards.size();
  if (g < 2) throw UsageError("grpo_advantages: group size must be >= 2");
  // Summing pairwise differences keeps equal rewards at exactly zero advantage.
  std::vector<double> out(g, 0.0);
  const double denom = static_cast<double>(g - 1);
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = 0; j < g; ++j)
      if (j != i) out[i] += group_rewards[i] - group_rewards[j];
    out[i] /= denom;
  }
  if (std_normalize) {
    const double sd = std::sqrt(population_variance(group_rewards));
    if (sd > 1e-12)
      for (auto& a : out) a /= sd;
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Collection

/// Samples one episode. The first draw of `rng` picks the prompt unless `prompt_id` is given.
inline Trajectory rollout(const EnvSpec& env, const PolicyModel& policy, CounterRng& rng,
                          std::optional<int> prompt_id = std::nullopt) {
  State s = prompt_id ? initial_state(env, *prompt_id) : reset(env, static_cast<std::int64_t>(rng.next_u64() >> 1));
  Trajectory tr;
  tr.prompt_id = s.prompt_id;
  while (true) {
    const auto [action, logprob] = sample_action(policy, s.features, rng);
    auto res = step(env, s, action);
    tr.records.push_back(TokenRecord{std::move(s.features), action, logprob, res.reward, s.position});
    if (res.done) {
      tr.terminated = true;
      tr.final_features = std::move(res.next.features);
      return tr;
    }
    s = std::move(res.next);
  }
}

struct CollectOptions {
  std::uint64_t seed = 0;
  Purpose purpose = Purpose::collect;
  std::uint64_t round = 0;
  int batch_trajectories = 64;
  int group_size = 1;  // > 1: consecutive groups share one prompt
  int workers = 1;
};

/// Trajectory i draws from its own stream (seed, purpose, round, i), so the batch is the same for
/// any worker count; workers only partition the indices.
inline std::vector<Trajectory> collect_batch(const EnvSpec& env, const PolicyModel& policy, const CollectOptions& opt) {
  std::vector<Trajectory> out(static_cast<std::size_t>(opt.batch_trajectories));
  auto work = [&](int worker) {
    for (int i = worker; i < opt.batch_trajectories; i += opt.workers) {
      CounterRng rng(opt.seed, opt.purpose, {opt.round, static_cast<std::uint64_t>(i)});
      std::optional<int> prompt;
      if (opt.group_size > 1) {
        CounterRng prng(opt.seed, Purpose::group_prompt,
                        {static_cast<std::uint64_t>(opt.purpose), opt.round, static_cast<std::uint64_t>(i / opt.group_size)});
        prompt = prompt_from_seed(env, prng.next_u64() >> 1);
      }
      out[static_cast<std::size_t>(i)] = rollout(env, policy, rng, prompt);
    }
  };
  const int workers = std::max(1, std::min(opt.workers, opt.batch_trajectories));
  if (workers == 1) {
    work(0);
    return out;
  }
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
  pool.clear();
  return out;
}

// ---------------------------------------------------------------------------------------------
// Training state and one optimization round

struct RunState {
  PolicyModel policy;
  std::optional<ValueModel> value;
  PolicyModel reference_policy;
  long long step = 0;
  std::uint64_t seed = 0;
  std::string run_id = "run";
  MetricSink* sink = nullptr;
  std::uint64_t reference_hash = 0;

  RunState(PolicyModel initial_policy, std::optional<ValueModel> initial_value, std::uint64_t run_seed,
           std::string id = "run", MetricSink* metric_sink = nullptr)
      : policy(std::move(initial_policy)),
        value(std::move(initial_value)),
        reference_policy(policy),
        seed(run_seed),
        run_id(std::move(id)),
        sink(metric_sink),
        reference_hash(reference_policy.params().hash()) {}
};

struct StepReport {
  std::vector<std::pair<std::string, double>> metrics;
  std::map<int, PositionBucket> advantage_by_position;
  std::map<int, double> value_by_position;

  std::optional<double> metric(const std::string& name) const {
    for (const auto& [n, v] : metrics)
      if (n == name) return v;
    return std::nullopt;
  }
};

/// Exact expected success and length are cheap for the parity environments up to this many
/// (prompt, position) pairs.
inline constexpr double kExactSummaryBudget = 2e5;

inline bool exact_summary_feasible(const EnvSpec& env) {
  return static_cast<double>(env.num_prompts()) * env.t_max <= kExactSummaryBudget;
}

namespace detail {

struct FlatToken {
  const std::vector<double>* features;
  Token action;
  double old_logprob;
  double advantage;
  double target;
  double old_value;
};

inline double l2norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void clip_norm(std::vector<double>& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = l2norm(g);
  if (n > max_norm)
    for (auto& x : g) x *= max_norm / n;
}

inline std::string dump_state(const RunState& run, int epoch, int minibatch, double policy_loss, double vloss) {
  std::ostringstream os;
  os << "step=" << run.step << " epoch=" << epoch << " minibatch=" << minibatch << " policy_loss=" << policy_loss
     << " value_loss=" << vloss << "\npolicy[" << run.policy.params().shape_tag << "]:";
  for (double v : run.policy.params().values) os << ' ' << format_double(v);
  if (run.value) {
    os << "\nvalue[" << run.value->params().shape_tag << "]:";
    for (double v : run.value->params().values) os << ' ' << format_double(v);
  }
  os << '\n';
  return os.str();
}

}  // namespace detail

/// One round of Algorithm-1-style optimization on a collected batch:
///   1. KL shaping against the frozen reference policy (identity when beta = 0);
///   2. advantages / value targets (ppo: one lambda; vcppo: lambda_actor / lambda_critic;
///      grpo: leave-one-out group advantages, no critic);
///   3. `epochs` passes over `minibatches` shuffled token minibatches, ascending the clipped
///      surrogate and descending 0.5 (V - R)^2, both averaged per token;
///   4. metrics, appended to run.sink under run.step when a sink is attached.
inline StepReport train_step(RunState& run, const std::vector<Trajectory>& batch, const TrainConfig& cfg,
                             const EnvSpec& env) {
  if (batch.empty()) throw UsageError("train_step: empty batch");
  const bool use_value = cfg.algorithm != Algorithm::grpo;
  if (use_value && !run.value) throw UsageError("train_step: algorithm " + to_string(cfg.algorithm) + " needs a value model");
  const GaeConfig gae_cfg = cfg.effective_gae();

  // 1. KL shaping.
  std::vector<Trajectory> shaped;
  shaped.reserve(batch.size());
  for (const auto& tr : batch) {
    if (cfg.kl_beta == 0.0) {
      shaped.push_back(tr);
      continue;
    }
    std::vector<double> lp(tr.size()), lref(tr.size());
    for (std::size_t t = 0; t < tr.size(); ++t) {
      lp[t] = tr.records[t].behavior_logprob;
      lref[t] = log_prob(run.reference_policy, tr.records[t].features, tr.records[t].action);
    }
    shaped.push_back(shape_rewards_kl(tr, lp, lref, cfg.kl_beta));
  }

  // 2. Advantages and targets.
  std::vector<AdvantageSet> sets(shaped.size());
  if (use_value) {
    for (std::size_t k = 0; k < shaped.size(); ++k) sets[k] = decoupled_estimate(shaped[k], &*run.value, gae_cfg);
  } else {
    const auto g = static_cast<std::size_t>(cfg.grpo_group_size);
    if (shaped.size() % g != 0) throw UsageError("train_step: grpo batch is not a whole number of groups");
    for (std::size_t start = 0; start < shaped.size(); start += g) {
      std::vector<double> rewards;
      for (std::size_t k = start; k < start + g; ++k) rewards.push_back(shaped[k].total_reward());
      const auto adv = grpo_advantages(rewards, cfg.grpo_std_normalize);
      for (std::size_t k = start; k < start + g; ++k) {
        const auto T = shaped[k].size();
        sets[k].advantages.assign(T, adv[k - start]);
        sets[k].value_targets.assign(T, 0.0);
        sets[k].values_used.assign(T, 0.0);
      }
    }
  }

  std::vector<detail::FlatToken> tokens;
  std::vector<std::pair<int, double>> pos_adv;
  std::vector<std::pair<double, double>> frac_adv;
  std::vector<double> targets_all, values_all;
  std::map<int, std::pair<double, std::size_t>> value_pos;
  for (std::size_t k = 0; k < shaped.size(); ++k) {
    const auto& tr = shaped[k];
    for (std::size_t t = 0; t < tr.size(); ++t) {
      const auto& rec = tr.records[t];
      tokens.push_back({&batch[k].records[t].features, rec.action, rec.behavior_logprob, sets[k].advantages[t],
                        sets[k].value_targets[t], sets[k].values_used[t]});
      pos_adv.emplace_back(rec.position, sets[k].advantages[t]);
      frac_adv.emplace_back(static_cast<double>(rec.position) / static_cast<double>(tr.size()), sets[k].advantages[t]);
      targets_all.push_back(sets[k].value_targets[t]);
      values_all.push_back(sets[k].values_used[t]);
      auto& vp = value_pos[rec.position];
      vp.first += sets[k].values_used[t];
      vp.second += 1;
    }
  }
  if (cfg.whiten_advantages) {
    std::vector<double> a;
    for (const auto& tok : tokens) a.push_back(tok.advantage);
    whiten(a);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i].advantage = a[i];
  }

  // Exact statistics of the policy that generated this batch, before it is updated.
  std::optional<PolicySummary> exact;
  if (exact_summary_feasible(env)) exact = exact_summary(env, run.policy);

  // 3. Epochs over shuffled minibatches.
  std::vector<std::size_t> order(tokens.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng shuffle_rng(run.seed, Purpose::shuffle, {static_cast<std::uint64_t>(run.step)});
  const std::size_t mb_count = std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatches), tokens.size());

  double policy_loss_sum = 0.0, value_loss_sum = 0.0, ratio_sum = 0.0;
  std::size_t clipped = 0, evaluated = 0, passes = 0;
  std::vector<double> pgrad(run.policy.params().size());
  std::vector<double> vgrad(use_value ? run.value->params().size() : 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_in_place(order, shuffle_rng);
    for (std::size_t m = 0; m < mb_count; ++m) {
      const std::size_t begin = m * order.size() / mb_count;
      const std::size_t end = (m + 1) * order.size() / mb_count;
      const double n = static_cast<double>(end - begin);
      std::fill(pgrad.begin(), pgrad.end(), 0.0);
      double mb_policy = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& tok = tokens[order[i]];
        const double lp = log_prob(run.policy, *tok.features, tok.action);
        const double ratio = std::exp(lp - tok.old_logprob);
        const double surrogate = ppo_clip_objective(ratio, tok.advantage, cfg.clip_eps);
        mb_policy += surrogate;
        ratio_sum += ratio;
        if (std::abs(ratio - 1.0) > cfg.clip_eps) ++clipped;
        ++evaluated;
        // The unclipped branch carries the gradient whenever it attains the minimum.
        if (ratio * tok.advantage <= std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * tok.advantage &&
            tok.advantage != 0.0)
          accumulate_grad_logprob(run.policy, *tok.features, tok.action, tok.advantage * ratio / n, pgrad);
      }
      mb_policy /= n;
      detail::clip_norm(pgrad, cfg.grad_clip);
      sgd_apply(run.policy.params(), pgrad, cfg.lr_policy);

      double mb_value = 0.0;
      if (use_value) {
        std::fill(vgrad.begin(), vgrad.end(), 0.0);
        for (std::size_t i = begin; i < end; ++i) {
          const auto& tok = tokens[order[i]];
          const double v = value_predict(*run.value, *tok.features);
          double loss = value_loss(v, tok.target);
          double dv = value_loss_grad(v, tok.target);
          if (cfg.value_clip > 0.0) {
            const double vc = tok.old_value + std::clamp(v - tok.old_value, -cfg.value_clip, cfg.value_clip);
            const double loss_c = value_loss(vc, tok.target);
            // The clipped branch only wins when clipping is active, where it is constant in phi.
            if (loss_c > loss) {
              loss = loss_c;
              dv = 0.0;
            }
          }
          mb_value += loss;
          if (dv != 0.0) accumulate_grad_value(*run.value, *tok.features, dv / n, vgrad);
        }
        mb_value /= n;
        detail::clip_norm(vgrad, cfg.grad_clip);
        sgd_apply(run.value->params(), vgrad, -cfg.lr_value);
      }

      if (!std::isfinite(mb_policy) || !std::isfinite(mb_value) || !run.policy.params().all_finite() ||
          (use_value && !run.value->params().all_finite()))
        throw NumericError("non-finite loss or parameters at step " + std::to_string(run.step),
                           detail::dump_state(run, epoch, static_cast<int>(m), mb_policy, mb_value));
      policy_loss_sum += -mb_policy;
      value_loss_sum += mb_value;
      ++passes;
    }
  }

  // 4. Metrics.
  StepReport rep;
  std::vector<double> lengths;
  double reward_sum = 0.0, successes = 0.0;
  for (const auto& tr : batch) {
    lengths.push_back(static_cast<double>(tr.size()));
    const double r = tr.total_reward();
    reward_sum += r;
    if (tr.terminated && tr.records.back().reward == env.reward_correct) successes += 1.0;
  }
  const auto ls = length_stats(lengths);
  const double nb = static_cast<double>(batch.size());
  auto& M = rep.metrics;
  M.emplace_back("mean_reward", reward_sum / nb);
  M.emplace_back("success_rate", successes / nb);
  M.emplace_back("mean_length", ls.mean);
  M.emplace_back("length_p10", ls.p10);
  M.emplace_back("length_p50", ls.p50);
  M.emplace_back("length_p90", ls.p90);
  M.emplace_back("policy_loss", passes ? policy_loss_sum / static_cast<double>(passes) : 0.0);
  if (use_value) {
    M.emplace_back("value_loss", passes ? value_loss_sum / static_cast<double>(passes) : 0.0);
    M.emplace_back("explained_variance", targets_all.size() >= 2 ? explained_variance(targets_all, values_all) : 0.0);
  }
  M.emplace_back("mean_ratio", evaluated ? ratio_sum / static_cast<double>(evaluated) : 1.0);
  M.emplace_back("clip_fraction", evaluated ? static_cast<double>(clipped) / static_cast<double>(evaluated) : 0.0);
  const auto pstats = position_advantage_stats(pos_adv);
  bool frac_degenerate = false;
  M.emplace_back("posadv_corr", pstats.pearson_r);
  M.emplace_back("posadv_corr_frac", position_frac_correlation(frac_adv, frac_degenerate));
  M.emplace_back("posadv_degenerate", pstats.degenerate ? 1.0 : 0.0);
  if (exact) {
    M.emplace_back("exact_success", exact->success);
    M.emplace_back("exact_mean_length", exact->mean_length);
  }
  rep.advantage_by_position = pstats.per_position;
  for (const auto& [pos, sv] : value_pos) rep.value_by_position[pos] = sv.first / static_cast<double>(sv.second);

  if (run.sink)
    for (const auto& [name, v] : M) run.sink->append(run.run_id, run.step, name, v);
  ++run.step;
  return rep;
}

// ---------------------------------------------------------------------------------------------
// Offline value pretraining

struct PretrainPoint {
  long long step = 0;
  double value_loss = 0.0;               // training-batch loss before the update
  double explained_variance = 0.0;       // training batch, Monte-Carlo targets, before the update
  double heldout_explained_variance = 0.0;  // held-out states, after the update
  double heldout_loss = 0.0;             // held-out states, after the update
};

struct ValueCheckpoint {
  long long step = 0;
  std::vector<double> values;
};

struct PretrainResult {
  ValueModel value;
  std::vector<PretrainPoint> history;
  std::vector<ValueCheckpoint> checkpoints;
  bool stopped_on_thresholds = false;
  bool plateau_warning = false;
};

struct PretrainContext {
  std::uint64_t seed = 0;
  int workers = 1;
  long long start_step = 0;  // resume point; steps start_step+1 .. cfg.steps are run
  MetricSink* sink = nullptr;
  std::string run_id = "pretrain";
  std::function<void(const ValueCheckpoint&)> on_checkpoint;
};

/// Held-out regression set for pretraining: states visited by the frozen policy, paired with
/// the exact conditional expected return when the environment is enumerable and with the
/// Monte-Carlo return otherwise.
struct HeldoutSet {
  std::vector<std::vector<double>> features;
  std::vector<double> targets;
  bool exact = false;
};

inline HeldoutSet make_heldout_set(const EnvSpec& env, const PolicyModel& policy, const ValuePretrainConfig& cfg,
                                   const PretrainContext& ctx) {
  HeldoutSet h;
  const auto batch = collect_batch(env, policy,
                                   {ctx.seed, Purpose::heldout, 0, cfg.heldout_trajectories, 1, ctx.workers});
  std::optional<std::map<std::vector<double>, double>> exact;
  if (exact_summary_feasible(env)) exact = exact_feature_values(env, policy);
  h.exact = exact.has_value();
  for (const auto& tr : batch) {
    const auto mc = value_targets(tr, std::vector<double>(tr.size() + 1, 0.0), 1.0);
    for (std::size_t t = 0; t < tr.size(); ++t) {
      h.features.push_back(tr.records[t].features);
      h.targets.push_back(exact ? exact->at(tr.records[t].features) : mc[t]);
    }
  }
  return h;
}

inline std::pair<double, double> heldout_fit(const ValueModel& value, const HeldoutSet& h) {
  std::vector<double> pred(h.features.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = value_predict(value, h.features[i]);
    loss += value_loss(pred[i], h.targets[i]);
  }
  loss /= static_cast<double>(std::max<std::size_t>(1, pred.size()));
  const double ev = pred.size() >= 2 ? explained_variance(h.targets, pred) : 0.0;
  return {loss, ev};
}

/// Offline critic training under a frozen policy: every step samples a batch, regresses V onto
/// the lambda = 1 (Monte-Carlo) targets with one token-averaged SGD step, and records the loss
/// and explained variance. Stops at cfg.steps or once the held-out explained variance reaches
/// ev_threshold and the batch loss is at most loss_threshold. A checkpoint is taken every
/// checkpoint_every steps and at termination.
inline PretrainResult value_pretrain(const PolicyModel& policy, ValueModel value, const EnvSpec& env,
                                     const ValuePretrainConfig& cfg, const PretrainContext& ctx = {}) {
  cfg.validate();
  PretrainResult res{std::move(value), {}, {}, false, false};
  if (ctx.start_step >= cfg.steps) return res;
  const auto heldout = make_heldout_set(env, policy, cfg, ctx);

  std::vector<double> grad(res.value.params().size());
  std::vector<double> recent;
  double best_smoothed = std::numeric_limits<double>::infinity();
  long long best_step = ctx.start_step;

  auto checkpoint = [&](long long s) {
    ValueCheckpoint c{s, res.value.params().values};
    if (ctx.on_checkpoint) ctx.on_checkpoint(c);
    res.checkpoints.push_back(std::move(c));
  };

  for (long long s = ctx.start_step + 1; s <= cfg.steps; ++s) {
    const auto batch = collect_batch(env, policy,
                                     {ctx.seed, Purpose::pretrain, static_cast<std::uint64_t>(s),
                                      cfg.batch_trajectories, 1, ctx.workers});
    std::vector<double> targets, preds;
    std::vector<const std::vector<double>*> feats;
    for (const auto& tr : batch) {
      const auto tgt = value_targets(tr, std::vector<double>(tr.size() + 1, 0.0), 1.0);
      for (std::size_t t = 0; t < tr.size(); ++t) {
        feats.push_back(&tr.records[t].features);
        targets.push_back(tgt[t]);
        preds.push_back(value_predict(res.value, tr.records[t].features));
      }
    }
    const double n = static_cast<double>(targets.size());
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      loss += value_loss(preds[i], targets[i]);
      accumulate_grad_value(res.value, *feats[i], value_loss_grad(preds[i], targets[i]) / n, grad);
    }
    loss /= n;
    sgd_apply(res.value.params(), grad, -cfg.lr_value);
    if (!res.value.params().all_finite() || !std::isfinite(loss))
      throw NumericError("value pretraining diverged at step " + std::to_string(s), "");

    PretrainPoint pt;
    pt.step = s;
    pt.value_loss = loss;
    pt.explained_variance = targets.size() >= 2 ? explained_variance(targets, preds) : 0.0;
    std::tie(pt.heldout_loss, pt.heldout_explained_variance) = heldout_fit(res.value, heldout);
    res.history.push_back(pt);
    if (ctx.sink) {
      ctx.sink->append(ctx.run_id, s, "pretrain_value_loss", pt.value_loss);
      ctx.sink->append(ctx.run_id, s, "pretrain_explained_variance", pt.explained_variance);
      ctx.sink->append(ctx.run_id, s, "pretrain_heldout_explained_variance", pt.heldout_explained_variance);
      ctx.sink->append(ctx.run_id, s, "pretrain_heldout_loss", pt.heldout_loss);
    }

    recent.push_back(loss);
    if (recent.size() > 10) recent.erase(recent.begin());
    double smoothed = 0.0;
    for (double l : recent) smoothed += l;
    smoothed /= static_cast<double>(recent.size());
    if (smoothed < best_smoothed) {
      best_smoothed = smoothed;
      best_step = s;
    } else if (cfg.patience > 0 && s - best_step >= cfg.patience && !res.plateau_warning) {
      res.plateau_warning = true;
      if (ctx.sink) ctx.sink->append(ctx.run_id, s, "pretrain_plateau_warning", 1.0);
    }

    const bool done_thresholds = pt.heldout_explained_variance >= cfg.ev_threshold && loss <= cfg.loss_threshold;
    if (done_thresholds) res.stopped_on_thresholds = true;
    if (s % cfg.checkpoint_every == 0 || s == cfg.steps || done_thresholds) checkpoint(s);
    if (done_thresholds) break;
  }
  return res;
}

}  // namespace vcppo
