#include <gtest/gtest.h>

#include <cmath>

#include "vcppo/advantage.hpp"
#include "vcppo/oracle.hpp"
#include "vcppo/trainers.hpp"

using namespace vcppo;

namespace {

// Independent oracle: direct evaluation of Eq. 3, A_t = sum_l lambda^l delta_{t+l}.
std::vector<double> gae_direct(const std::vector<double>& d, double lam) {
  std::vector<double> a(d.size(), 0.0);
  for (std::size_t t = 0; t < d.size(); ++t)
    for (std::size_t l = 0; t + l < d.size(); ++l) a[t] += std::pow(lam, static_cast<double>(l)) * d[t + l];
  return a;
}

Trajectory sparse_trajectory(int T, double r_terminal, int feature_dim = 1) {
  Trajectory tr;
  for (int t = 0; t < T; ++t) {
    TokenRecord rec;
    rec.features.assign(static_cast<std::size_t>(feature_dim), 0.0);
    rec.position = t;
    rec.reward = t == T - 1 ? r_terminal : 0.0;
    tr.records.push_back(rec);
  }
  return tr;
}

}  // namespace

TEST(Advantage, TdErrorExamples) {
  const std::vector<double> r{0, 0, 1};
  const auto d = td_errors(r, std::vector<double>{0.5, 0.5, 0.5, 0.0}, 1.0);
  EXPECT_EQ(d, (std::vector<double>{0, 0, 0.5}));
  EXPECT_EQ(td_errors(r, std::vector<double>(4, 0.0)), r);
  EXPECT_THROW(td_errors(r, std::vector<double>(3, 0.0)), UsageError);
}

TEST(Advantage, PerfectValueGivesZeroMeanTdErrors) {
  const auto env = tiny_chain();
  const auto policy = PolicyModel::tabular(env.feature_dim(), 3);
  const auto exact = exact_feature_values(env, policy);
  const auto batch = collect_batch(env, policy, CollectOptions{.seed = 5, .batch_trajectories = 100000});
  std::vector<double> sum(static_cast<std::size_t>(env.t_max), 0.0);
  std::vector<double> count(static_cast<std::size_t>(env.t_max), 0.0);
  for (const auto& tr : batch) {
    std::vector<double> v(tr.size() + 1, 0.0);
    for (std::size_t t = 0; t < tr.size(); ++t) v[t] = exact.at(tr.records[t].features);
    const auto d = td_errors(tr, v);
    for (std::size_t t = 0; t < d.size(); ++t) {
      sum[t] += d[t];
      count[t] += 1.0;
    }
  }
  for (std::size_t t = 0; t < sum.size(); ++t)
    if (count[t] > 0) {
      EXPECT_NEAR(sum[t] / count[t], 0.0, 1e-2) << "position " << t;
    }
}

TEST(Advantage, GaeExamples) {
  const std::vector<double> d{0, 0, 0.5};
  EXPECT_EQ(gae(d, 1.0), (std::vector<double>{0.5, 0.5, 0.5}));
  EXPECT_EQ(gae(d, 0.0), (std::vector<double>{0, 0, 0.5}));
  const auto half = gae(d, 0.5);
  const auto oracle = gae_direct(d, 0.5);
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(half[static_cast<std::size_t>(t)], oracle[static_cast<std::size_t>(t)], 1e-15);
  EXPECT_NEAR(half[0], 0.125, 1e-15);
  EXPECT_NEAR(half[1], 0.25, 1e-15);
  EXPECT_THROW(gae(d, 1.5), UsageError);
}

TEST(Advantage, RecursionEqualsDirectSum) {
  CounterRng rng(9, Purpose::oracle, {0});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> d(1 + rng.below(30));
    for (auto& x : d) x = rng.uniform(-2.0, 2.0);
    const double lam = rng.uniform();
    const auto a = gae(d, lam);
    const auto b = gae_direct(d, lam);
    for (std::size_t t = 0; t < d.size(); ++t) EXPECT_NEAR(a[t], b[t], 1e-10);
  }
}

TEST(Advantage, ValueTargetExamples) {
  const std::vector<double> r{0, 0, 1};
  const std::vector<double> v{0.3, -0.7, 2.0, 0.0};
  EXPECT_EQ(value_targets(r, v, 1.0), (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(value_targets(r, std::vector<double>{9, 9, 9, 0}, 1.0), (std::vector<double>{1, 1, 1}));
  const auto one_step = value_targets(r, v, 0.0);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(one_step[t], r[t] + v[t + 1], 1e-15);
}

TEST(Advantage, TelescopingAtLambdaOne) {
  CounterRng rng(10, Purpose::oracle, {0});
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 1 + static_cast<int>(rng.below(15));
    std::vector<double> r(static_cast<std::size_t>(T), 0.0), v(static_cast<std::size_t>(T) + 1, 0.0);
    r.back() = rng.uniform(-1.0, 1.0);
    for (int t = 0; t < T; ++t) v[static_cast<std::size_t>(t)] = rng.uniform(-1.0, 1.0);
    const auto a = gae(td_errors(r, v), 1.0);
    const auto tgt = value_targets(r, v, 1.0);
    for (int t = 0; t < T; ++t) {
      double suffix = 0.0;
      for (int l = t; l < T; ++l) suffix += r[static_cast<std::size_t>(l)];
      EXPECT_NEAR(a[static_cast<std::size_t>(t)], suffix - v[static_cast<std::size_t>(t)], 1e-12);
      EXPECT_NEAR(tgt[static_cast<std::size_t>(t)] - v[static_cast<std::size_t>(t)], a[static_cast<std::size_t>(t)], 1e-12);
    }
  }
}

TEST(Advantage, DecoupledExamples) {
  const auto tr = sparse_trajectory(10, 1.0);
  const auto out = decoupled_estimate(tr, nullptr, GaeConfig{1.0, 0.95, 1.0});
  for (int t = 0; t < 10; ++t) {
    EXPECT_NEAR(out.advantages[static_cast<std::size_t>(t)], std::pow(0.95, 9 - t), 1e-14);
    EXPECT_EQ(out.value_targets[static_cast<std::size_t>(t)], 1.0);
  }
  EXPECT_EQ(out.values_used.size(), 10u);
}

TEST(Advantage, DecoupledDegeneracyAndSymmetry) {
  const auto env = parity_chain(3, 8);
  auto value = ValueModel::tabular(env.feature_dim());
  CounterRng rng(12, Purpose::oracle, {0});
  for (auto& w : value.params().values) w = rng.uniform(-1.0, 1.0);
  const auto policy = PolicyModel::tabular(env.feature_dim(), 3);
  const auto batch = collect_batch(env, policy, CollectOptions{.seed = 1, .batch_trajectories = 50});
  for (const auto& tr : batch) {
    const auto v = evaluate_values(tr, &value);
    const auto single = gae(td_errors(tr, v), 0.9);
    const auto same = decoupled_estimate(tr, value, GaeConfig{1.0, 0.9, 0.9});
    EXPECT_EQ(same.advantages, single);
    const auto ab = decoupled_estimate(tr, value, GaeConfig{1.0, 0.7, 0.95});
    const auto ba = decoupled_estimate(tr, value, GaeConfig{1.0, 0.95, 0.7});
    const auto run_a = decoupled_estimate(tr, value, GaeConfig{1.0, 0.7, 0.7});
    const auto run_b = decoupled_estimate(tr, value, GaeConfig{1.0, 0.95, 0.95});
    EXPECT_EQ(ab.advantages, run_a.advantages);
    EXPECT_EQ(ab.value_targets, run_b.value_targets);
    EXPECT_EQ(ba.advantages, run_b.advantages);
    EXPECT_EQ(ba.value_targets, run_a.value_targets);
  }
}

TEST(Advantage, TruncatedTrajectoryBootstrapsTail) {
  auto tr = sparse_trajectory(3, 0.0, 2);
  tr.terminated = false;
  tr.final_features = {0.0, 1.0};
  auto value = ValueModel::tabular(2);
  value.params().values = {0.0, 0.75};
  const auto v = evaluate_values(tr, &value);
  EXPECT_EQ(v.back(), 0.75);
  EXPECT_EQ(value_targets(tr, v, 1.0), (std::vector<double>{0.75, 0.75, 0.75}));
  tr.terminated = true;
  EXPECT_EQ(evaluate_values(tr, &value).back(), 0.0);
}

TEST(Advantage, DecayProfileExamples) {
  EXPECT_NEAR(reward_decay_profile(5, 0.95, 1.0)[0], 0.81450625, 1e-15);
  const auto long_profile = reward_decay_profile(200, 0.95, 1.0);
  EXPECT_NEAR(long_profile[0], std::pow(0.95, 199), 1e-18);
  EXPECT_LT(long_profile[0], 4e-5);
  EXPECT_GT(long_profile[0], 3.6e-5);
  for (double a : reward_decay_profile(17, 1.0, -0.5)) EXPECT_EQ(a, -0.5);
  EXPECT_EQ(reward_decay_profile(1, 0.95, 0.3), std::vector<double>{0.3});
  EXPECT_THROW(reward_decay_profile(0, 0.95, 1.0), UsageError);
}

TEST(Advantage, DecayLawMatchesGaeExactlyAndIsMonotone) {
  for (int T : {1, 2, 7, 50, 200}) {
    for (double lam : {0.0, 0.5, 0.9, 0.95, 1.0}) {
      const auto tr = sparse_trajectory(T, 1.0);
      const auto a = decoupled_estimate(tr, nullptr, GaeConfig{1.0, lam, 1.0}).advantages;
      EXPECT_EQ(a, reward_decay_profile(T, lam, 1.0)) << "T=" << T << " lam=" << lam;
      if (lam > 0.0 && lam < 1.0) {
        for (int t = 1; t < T; ++t)
          EXPECT_GE(std::abs(a[static_cast<std::size_t>(t)]), std::abs(a[static_cast<std::size_t>(t - 1)]));
      }
    }
  }
}

TEST(Advantage, VarianceTableDegenerateCases) {
  const std::vector<double> grid{0.0, 0.5, 1.0};
  std::vector<Trajectory> same(5, sparse_trajectory(4, 1.0));
  for (const auto& row : advantage_variance_table(same, nullptr, grid)) EXPECT_EQ(row.variance_a0, 0.0);
  // Deterministic policy and environment: always the same prompt and actions.
  const auto env = parity_chain(2, 4);
  auto policy = PolicyModel::tabular(env.feature_dim(), 3);
  const auto layout = env.layout();
  for (int slot = 0; slot < layout.position_slots; ++slot)
    policy.params().values[static_cast<std::size_t>(kThink * layout.dim + slot)] = 1000.0;
  std::vector<Trajectory> det;
  for (int i = 0; i < 20; ++i) {
    CounterRng rng(0, Purpose::collect, {static_cast<std::uint64_t>(i)});
    det.push_back(rollout(env, policy, rng, 2));
  }
  for (const auto& row : advantage_variance_table(det, nullptr, grid)) EXPECT_EQ(row.variance_a0, 0.0);
  EXPECT_THROW(advantage_variance_table(std::vector<Trajectory>(1, sparse_trajectory(3, 1.0)), nullptr, grid),
               UsageError);
}

TEST(Advantage, VarianceGrowsWithLambdaOnParityChain) {
  const auto env = parity_chain(6, 12);
  const auto policy = PolicyModel::tabular(env.feature_dim(), 3);
  const auto batch = collect_batch(env, policy, CollectOptions{.seed = 3, .batch_trajectories = 10000});
  const std::vector<double> grid{0.0, 0.5, 0.9, 0.95, 1.0};
  const auto rows = advantage_variance_table(batch, nullptr, grid);
  ASSERT_EQ(rows.size(), grid.size());
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(rows[i - 1].variance_a0, rows[i].variance_a0);
  // Eq. 6 decomposition reproduces the direct sample variance.
  for (const auto& row : rows) {
    EXPECT_NEAR(row.variance_term + row.covariance_term, row.variance_a0, 1e-9);
    EXPECT_EQ(row.n_samples, 10000u);
  }
}

TEST(Advantage, WhiteningIsOptInAndCentersScales) {
  std::vector<double> xs{1, 2, 3, 4};
  whiten(xs);
  double m = 0.0, s = 0.0;
  for (double x : xs) m += x;
  for (double x : xs) s += x * x;
  EXPECT_NEAR(m, 0.0, 1e-12);
  EXPECT_NEAR(s / 4.0, 1.0, 1e-12);
  EXPECT_FALSE(TrainConfig{}.whiten_advantages);
}
