#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "vcppo/diagnostics.hpp"
#include "vcppo/experiment.hpp"

using namespace vcppo;

TEST(Diagnostics, ExplainedVarianceExamples) {
  const std::vector<double> t{0.3, -1.0, 2.0, 0.5};
  EXPECT_EQ(explained_variance(t, t), 1.0);
  const std::vector<double> mean(4, (0.3 - 1.0 + 2.0 + 0.5) / 4.0);
  EXPECT_NEAR(explained_variance(t, mean), 0.0, 1e-12);
  // Population variances: Var([-1, 1]) = 1, Var([0, 1]) = 0.25, so 1 - 1 / 0.25 = -3.
  EXPECT_NEAR(explained_variance(std::vector<double>{0, 1}, std::vector<double>{1, 0}), -3.0, 1e-15);
}

TEST(Diagnostics, ExplainedVarianceDegenerateAndErrors) {
  const std::vector<double> c{2.0, 2.0, 2.0};
  EXPECT_EQ(explained_variance(c, c), 1.0);
  EXPECT_EQ(explained_variance(c, std::vector<double>{0.0, 5.0, -3.0}), kExplainedVarianceFloor);
  EXPECT_EQ(explained_variance(std::vector<double>{0, 1}, std::vector<double>{100, -100}), kExplainedVarianceFloor);
  EXPECT_THROW(explained_variance(c, std::vector<double>{1.0}), UsageError);
  EXPECT_THROW(explained_variance(std::vector<double>{1.0}, std::vector<double>{1.0}), UsageError);
}

TEST(Diagnostics, ExplainedVarianceAtMostOne) {
  CounterRng rng(1, Purpose::oracle, {0});
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> t(2 + rng.below(20)), p(t.size());
    for (auto& x : t) x = rng.uniform(-1.0, 1.0);
    for (auto& x : p) x = rng.uniform(-1.0, 1.0);
    const double ev = explained_variance(t, p);
    EXPECT_LE(ev, 1.0);
    EXPECT_TRUE(std::isfinite(ev));
    // Prediction offset by a constant leaves the residual variance at 0.
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = t[i] + 0.7;
    EXPECT_NEAR(explained_variance(t, p), 1.0, 1e-12);
  }
}

TEST(Diagnostics, PositionAdvantageExamples) {
  std::vector<std::pair<int, double>> constant{{0, 1.0}, {1, 1.0}, {2, 1.0}};
  const auto c = position_advantage_stats(constant);
  EXPECT_EQ(c.pearson_r, 0.0);
  EXPECT_TRUE(c.degenerate);
  std::vector<std::pair<int, double>> dec;
  for (int t = 0; t < 10; ++t) dec.emplace_back(t, 5.0 - 0.5 * t);
  const auto d = position_advantage_stats(dec);
  EXPECT_NEAR(d.pearson_r, -1.0, 1e-12);
  EXPECT_FALSE(d.degenerate);
  std::vector<std::pair<int, double>> one_pos{{3, 1.0}, {3, 2.0}};
  EXPECT_TRUE(position_advantage_stats(one_pos).degenerate);
}

TEST(Diagnostics, PositionAdvantageOrderInvariant) {
  CounterRng rng(2, Purpose::oracle, {0});
  std::vector<std::pair<int, double>> batch;
  for (int i = 0; i < 300; ++i) batch.emplace_back(static_cast<int>(rng.below(12)), rng.uniform(-1.0, 1.0));
  const auto a = position_advantage_stats(batch);
  std::reverse(batch.begin(), batch.end());
  for (std::size_t i = batch.size(); i > 1; --i) std::swap(batch[i - 1], batch[rng.below(i)]);
  const auto b = position_advantage_stats(batch);
  EXPECT_EQ(a.pearson_r, b.pearson_r);
  ASSERT_EQ(a.per_position.size(), b.per_position.size());
  for (const auto& [pos, bucket] : a.per_position) {
    EXPECT_EQ(bucket.mean_advantage, b.per_position.at(pos).mean_advantage);
    EXPECT_EQ(bucket.count, b.per_position.at(pos).count);
  }
}

TEST(Diagnostics, BiasedValueMakesEarlyTokensLookBetter) {
  ExperimentConfig c;
  c.env = parity_chain(6, 12);
  c.model.policy_init = PolicyInit{"cold_start", 4.0, -2.0, 0.0};
  const auto policy = make_policy(c);
  const auto value = init_biased_value(ValueModel::tabular(c.env.feature_dim()), 1.0, c.env.t_max, c.env.layout());
  const auto batch = collect_batch(c.env, policy, {0, Purpose::collect, 0, 512, 1, 1});
  std::vector<std::pair<int, double>> pa;
  for (const auto& tr : batch) {
    const auto set = decoupled_estimate(tr, value, GaeConfig{1.0, 1.0, 1.0});
    for (std::size_t t = 0; t < tr.size(); ++t) pa.emplace_back(tr.records[t].position, set.advantages[t]);
  }
  const auto stats = position_advantage_stats(pa);
  EXPECT_LT(stats.pearson_r, 0.0);
  EXPECT_FALSE(stats.degenerate);
  // Earliest position carries the largest mean advantage.
  const double first = stats.per_position.begin()->second.mean_advantage;
  for (const auto& [pos, bucket] : stats.per_position) EXPECT_LE(bucket.mean_advantage, first + 1e-12) << pos;
}

TEST(Diagnostics, LengthStatsExamples) {
  const std::vector<double> fives(7, 5.0);
  const auto s = length_stats(fives);
  EXPECT_EQ(s.mean, 5.0);
  EXPECT_EQ(s.p10, 5.0);
  EXPECT_EQ(s.p50, 5.0);
  EXPECT_EQ(s.p90, 5.0);
  std::vector<double> hundred;
  for (int i = 100; i >= 1; --i) hundred.push_back(i);
  const auto h = length_stats(hundred);
  EXPECT_EQ(h.mean, 50.5);
  EXPECT_EQ(h.p10, 10.0);
  EXPECT_EQ(h.p50, 50.0);
  EXPECT_EQ(h.p90, 90.0);
  EXPECT_THROW(length_stats(std::vector<double>{}), UsageError);
}

TEST(Diagnostics, SinkRejectsDuplicatesAndNonFinite) {
  MetricSink sink;
  sink.append("r", 0, "x", 1.0);
  sink.append("r", 1, "x", 2.0);
  sink.append("other", 0, "x", 3.0);
  EXPECT_THROW(sink.append("r", 0, "x", 4.0), UsageError);
  EXPECT_THROW(sink.append("r", 2, "x", std::nan("")), UsageError);
  EXPECT_THROW(sink.append("r", 3, "x", INFINITY), UsageError);
  EXPECT_EQ(sink.records().size(), 3u);
  EXPECT_EQ(sink.to_csv(), "run_id,step,name,value\nr,0,x,1\nr,1,x,2\nother,0,x,3\n");
  EXPECT_EQ(*sink.find("r", 1, "x"), 2.0);
  EXPECT_FALSE(sink.find("r", 9, "x").has_value());
  const auto jsonl = sink.to_jsonl();
  EXPECT_NE(jsonl.find("{\"run_id\":\"r\",\"step\":0,\"name\":\"x\",\"value\":1.0}"), std::string::npos);
}

TEST(Diagnostics, SinkRoundTripsDoubles) {
  MetricSink sink;
  const double v = 0.1 + 0.2;
  sink.append("r", 0, "x", v);
  const auto csv = sink.to_csv();
  const auto last = csv.substr(csv.rfind(',') + 1);
  EXPECT_EQ(std::stod(last), v);
}

TEST(Diagnostics, SinkAcceptsConcurrentAppends) {
  MetricSink sink;
  std::vector<std::jthread> threads;
  for (int w = 0; w < 8; ++w)
    threads.emplace_back([&sink, w] {
      for (int s = 0; s < 500; ++s) sink.append("run" + std::to_string(w), s, "m", static_cast<double>(s));
    });
  threads.clear();
  EXPECT_EQ(sink.records().size(), 4000u);
  for (int w = 0; w < 8; ++w) EXPECT_EQ(sink.series("run" + std::to_string(w), "m").size(), 500u);
}

TEST(Diagnostics, TrainingMetricsAreFiniteAndUnique) {
  ExperimentConfig c;
  c.run_id = "d";
  c.env = parity_chain(4, 10);
  c.model.value_init = ValueInit{"biased", 1.0, 0, ""};
  c.train.rounds = 20;
  c.train.batch_trajectories = 32;
  const auto res = run_training(c, std::nullopt);
  std::set<std::tuple<std::string, long long, std::string>> keys;
  for (const auto& r : res.metrics.records()) {
    EXPECT_TRUE(std::isfinite(r.value)) << r.name;
    EXPECT_TRUE(keys.insert({r.run_id, r.step, r.name}).second);
  }
  EXPECT_EQ(res.metrics.series("d", "posadv_corr").size(), 20u);
  EXPECT_EQ(res.metrics.series("d", "posadv_corr_frac").size(), 20u);
}
