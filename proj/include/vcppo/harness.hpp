#pragma once

// Subcommand implementations behind tools/vcppo_cli. Each command resolves its configuration
// (file, then --override assignments, then the --seed/--workers/--output-dir flags), runs the
// study and writes its files from this single coordinating thread.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vcppo/advantage.hpp"
#include "vcppo/experiment.hpp"
#include "vcppo/oracle.hpp"

namespace vcppo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheckFailed = 3;

struct CommonOptions {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

/// File, then overrides, then the dedicated flags (which win).
inline ExperimentConfig resolve_config(const CommonOptions& opt) {
  Json j = opt.config_path ? read_json_file(*opt.config_path) : Json::object();
  for (const auto& o : opt.overrides) apply_override(j, o);
  if (opt.seed) apply_override(j, "train.seed=" + std::to_string(*opt.seed));
  if (opt.workers) apply_override(j, "workers=" + std::to_string(*opt.workers));
  if (opt.output_dir) j["output_dir"] = *opt.output_dir;
  return config_from_json(j);
}

inline std::filesystem::path prepare_output(const ExperimentConfig& cfg) {
  std::filesystem::path out(cfg.output_dir);
  std::filesystem::create_directories(out);
  write_text(out / "config.resolved.json", config_to_json(cfg).dump(2) + "\n");
  return out;
}

/// Maps exceptions to the documented exit codes and prints a one-line diagnosis.
template <typename F>
int guarded(const char* command, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << command << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CapExceeded& e) {
    std::cerr << command << ": " << e.what() << "\n";
    return kExitRuntime;
  } catch (const NumericError& e) {
    std::cerr << command << ": numeric error: " << e.what() << "\n" << e.dump << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << command << ": error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------------------------------------
// train

inline int cmd_train(const CommonOptions& opt) {
  return guarded("train", [&] {
    const auto cfg = resolve_config(opt);
    const auto out = prepare_output(cfg);
    const auto res = run_training(cfg, out);
    const auto s = res.metrics.find(cfg.run_id, cfg.train.rounds, "exact_success");
    std::cout << "train: " << cfg.train.rounds << " rounds of " << to_string(cfg.train.algorithm) << " written to "
              << out.string();
    if (s) std::cout << " (final exact success " << *s << ")";
    std::cout << "\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------------------------
// pretrain-value

inline int cmd_pretrain_value(const CommonOptions& opt) {
  return guarded("pretrain-value", [&] {
    const auto cfg = resolve_config(opt);
    if (!cfg.pretrain) throw ConfigError("pretrain: section required for pretrain-value");
    const auto out = prepare_output(cfg);
    const auto hash = config_hash(cfg);
    const auto policy = make_policy(cfg);
    std::int64_t start = 0;
    auto value = make_value(cfg, &start);

    MetricSink sink;
    PretrainContext ctx;
    ctx.seed = cfg.train.seed;
    ctx.workers = cfg.workers;
    ctx.start_step = start;
    ctx.sink = &sink;
    ctx.run_id = cfg.run_id;
    ctx.on_checkpoint = [&](const ValueCheckpoint& c) {
      ModelParams mp = value.params();
      mp.values = c.values;
      write_checkpoint(out / ("value_step" + std::to_string(c.step) + ".ckpt"), make_checkpoint(mp, "value", c.step, hash));
    };
    const auto res = value_pretrain(policy, value, cfg.env, *cfg.pretrain, ctx);
    write_text(out / "pretrain_curve.csv", pretrain_curve_csv(res.history));
    write_text(out / "metrics.csv", sink.to_csv());
    std::cout << "pretrain-value: steps " << start + 1 << ".." << (res.history.empty() ? start : res.history.back().step);
    if (!res.history.empty())
      std::cout << ", held-out explained variance " << res.history.back().heldout_explained_variance;
    if (res.plateau_warning) std::cout << " (loss plateau warning)";
    std::cout << "\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------------------------
// oracle-check

/// The policy whose gradient the oracle examines.
inline PolicyModel oracle_policy(const ExperimentConfig& cfg) {
  const auto& kind = cfg.oracle.policy;
  const int fd = cfg.env.feature_dim(), ad = cfg.env.action_dim();
  if (kind == "uniform") return PolicyModel::tabular(fd, ad);
  if (kind == "initial") return make_policy(cfg);
  if (kind == "random") {
    auto p = PolicyModel::tabular(fd, ad);
    CounterRng rng(cfg.train.seed, Purpose::oracle, {0xbeefULL});
    for (auto& w : p.params().values) w = rng.uniform(-1.0, 1.0);
    return p;
  }
  if (kind == "deterministic") {
    // THINK until ready, then the running-parity answer; the margins underflow exp() so every
    // non-chosen action has probability exactly 0.
    auto p = PolicyModel::tabular(fd, ad);
    const auto l = cfg.env.layout();
    auto& w = p.params().values;
    constexpr double big = 1000.0;
    w[static_cast<std::size_t>(kThink * fd + l.ready_offset + 0)] = 2 * big;
    w[static_cast<std::size_t>(kAns0 * fd + l.ready_offset + 1)] = big;
    w[static_cast<std::size_t>(kAns1 * fd + l.ready_offset + 1)] = big;
    w[static_cast<std::size_t>(kAns0 * fd + l.parity_offset + 0)] = big;
    w[static_cast<std::size_t>(kAns1 * fd + l.parity_offset + 1)] = big;
    return p;
  }
  throw ConfigError("oracle.policy: expected uniform, random, deterministic or initial, got '" + kind + "'");
}

inline std::string unbiasedness_csv(const UnbiasednessReport& rep) {
  std::ostringstream os;
  os << "lambda,value_sample,linf_diff\n";
  for (const auto& r : rep.rows) os << format_double(r.lambda) << ',' << r.value_sample << ',' << format_double(r.linf_diff) << '\n';
  return os.str();
}

inline int cmd_oracle_check(const CommonOptions& opt, bool inject_bias) {
  return guarded("oracle-check", [&] {
    const auto cfg = resolve_config(opt);
    const auto out = prepare_output(cfg);
    const auto policy = oracle_policy(cfg);
    auto rep = unbiasedness_report(cfg.env, policy, cfg.oracle.value_samples, cfg.oracle.lambda_grid, cfg.train.seed,
                                   inject_bias ? BiasInjection::successor_value : BiasInjection::none, cfg.oracle.cap);
    rep.tolerance = cfg.oracle.tolerance;
    write_text(out / "oracle_report.csv", unbiasedness_csv(rep));
    std::ostringstream lb;
    lb << "lambda,linf_bias_vs_lambda1\n";
    for (const auto& [lam, b] : rep.lambda_bias) lb << format_double(lam) << ',' << format_double(b) << '\n';
    write_text(out / "oracle_lambda_bias.csv", lb.str());
    MetricSink sink;
    sink.append(cfg.run_id, 0, "oracle_max_linf_diff", rep.max_diff);
    sink.append(cfg.run_id, 0, "oracle_passed", rep.passed() ? 1.0 : 0.0);
    write_text(out / "metrics.csv", sink.to_csv());
    std::cout << "oracle-check: " << rep.rows.size() << " (lambda, value) pairs, max L-inf difference "
              << format_double(rep.max_diff) << " (tolerance " << rep.tolerance << ")"
              << (inject_bias ? " [bias injected]" : "") << " -> " << (rep.passed() ? "PASS" : "FAIL") << "\n";
    for (const auto& [lam, bias] : rep.lambda_bias) {
      double worst = 0.0;
      for (const auto& r : rep.rows)
        if (r.lambda == lam) worst = std::max(worst, r.linf_diff);
      std::cout << "  lambda=" << lam << ": max value-function effect " << format_double(worst)
                << ", lambda bias vs lambda=1 " << format_double(bias) << "\n";
    }
    return rep.passed() ? kExitOk : kExitCheckFailed;
  });
}

// ---------------------------------------------------------------------------------------------
// decay-demo

struct DecayOptions {
  int T = 200;
  double lambda = 0.95;
  double r = 1.0;
};

inline int cmd_decay_demo(const CommonOptions& opt, const DecayOptions& d) {
  return guarded("decay-demo", [&] {
    if (d.T < 1) throw ConfigError("--T: must be >= 1");
    if (!(d.lambda >= 0.0 && d.lambda <= 1.0)) throw ConfigError("--lambda: must lie in [0, 1]");
    const auto cfg = resolve_config(opt);
    const auto out = prepare_output(cfg);
    const auto profile = reward_decay_profile(d.T, d.lambda, d.r);
    std::ostringstream os;
    os << "position,advantage\n";
    MetricSink sink;
    for (int t = 0; t < d.T; ++t) {
      os << t << ',' << format_double(profile[static_cast<std::size_t>(t)]) << '\n';
      sink.append(cfg.run_id, t, "decay_advantage", profile[static_cast<std::size_t>(t)]);
    }
    write_text(out / "decay_profile.csv", os.str());
    write_text(out / "metrics.csv", sink.to_csv());
    std::cout << "decay-demo: T=" << d.T << " lambda=" << d.lambda << " first entry " << format_double(profile.front())
              << " (" << format_double(profile.front() / (d.r == 0.0 ? 1.0 : d.r)) << " of the terminal reward)\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------------------------
// failure-demo

struct FailureDemoArms {
  ExperimentConfig a;  // baseline PPO, reward-model-style value init, shared lambda
  ExperimentConfig b;  // VC-PPO, pretrained value, decoupled lambdas
};

inline FailureDemoArms failure_demo_arms(const ExperimentConfig& base) {
  FailureDemoArms arms{base, base};
  auto& a = arms.a;
  a.run_id = base.run_id + "_A";
  a.train.algorithm = Algorithm::ppo;
  a.train.gae.lambda_critic = a.train.gae.lambda_actor;
  a.model.value_init.kind = "biased";
  a.model.value_init.kappa = base.failure_demo.kappa;
  a.model.value_init.t_ref = base.failure_demo.t_ref;
  a.pretrain.reset();
  auto& b = arms.b;
  b.run_id = base.run_id + "_B";
  b.train.algorithm = Algorithm::vcppo;
  b.train.gae.lambda_critic = 1.0;
  b.model.value_init.kind = "zero";
  if (!b.pretrain) b.pretrain = ValuePretrainConfig{};
  a.validate();
  b.validate();
  return arms;
}

inline std::string lengths_csv(const TrainingResult& r) {
  std::ostringstream os;
  os << "step,mean_length,exact_mean_length,length_p10,length_p50,length_p90,success_rate,exact_success\n";
  for (std::size_t s = 0; s < r.reports.size(); ++s) {
    const auto& rep = r.reports[s];
    auto g = [&](const char* n) { return format_double(rep.metric(n).value_or(0.0)); };
    os << s << ',' << g("mean_length") << ',' << g("exact_mean_length") << ',' << g("length_p10") << ','
       << g("length_p50") << ',' << g("length_p90") << ',' << g("success_rate") << ',' << g("exact_success") << '\n';
  }
  return os.str();
}

inline std::string posadv_csv(const TrainingResult& r) {
  std::ostringstream os;
  os << "step,position,mean_advantage,count,mean_value,pearson_r\n";
  for (std::size_t s = 0; s < r.reports.size(); ++s) {
    const auto& rep = r.reports[s];
    const auto corr = format_double(rep.metric("posadv_corr").value_or(0.0));
    for (const auto& [pos, b] : rep.advantage_by_position) {
      const auto v = rep.value_by_position.count(pos) ? rep.value_by_position.at(pos) : 0.0;
      os << s << ',' << pos << ',' << format_double(b.mean_advantage) << ',' << b.count << ',' << format_double(v) << ','
         << corr << '\n';
    }
  }
  return os.str();
}

struct FailureDemoSummary {
  double a_length_step0 = 0.0;
  double a_length_check = 0.0;
  double a_length_ratio = 0.0;
  double a_posadv_r = 0.0;
  double b_min_length = 0.0;
  double b_final_success = 0.0;
  double a_final_success = 0.0;
  double b_pretrain_explained_variance = 0.0;
  bool length_collapse = false;
  bool negative_correlation = false;
  bool b_length_kept = false;
  bool b_success = false;
  bool b_beats_a = false;
  bool b_value_calibrated = false;
};

inline double final_metric(const TrainingResult& r, const std::string& run_id, long long step, const std::string& name) {
  const auto v = r.metrics.find(run_id, step, name);
  if (!v) throw std::runtime_error("missing metric " + name + " at step " + std::to_string(step));
  return *v;
}

/// Evaluates the failure-mode and VC-PPO claims on the two arms. Lengths and success rates are the
/// exact (enumerated) expectations of the policy at each step.
inline FailureDemoSummary summarize_failure_demo(const FailureDemoArms& arms, const TrainingResult& ra,
                                                 const TrainingResult& rb) {
  FailureDemoSummary s;
  const auto& fd = arms.a.failure_demo;
  auto len = [](const TrainingResult& r, std::size_t step) {
    return step < r.reports.size() ? r.reports[step].metric("exact_mean_length").value_or(0.0) : 0.0;
  };
  s.a_length_step0 = len(ra, 0);
  s.a_length_check = len(ra, static_cast<std::size_t>(fd.length_check_step));
  s.a_length_ratio = s.a_length_step0 > 0 ? s.a_length_check / s.a_length_step0 : 0.0;
  s.a_posadv_r = static_cast<std::size_t>(fd.correlation_check_step) < ra.reports.size()
                     ? ra.reports[static_cast<std::size_t>(fd.correlation_check_step)].metric("posadv_corr").value_or(0.0)
                     : 0.0;
  s.b_min_length = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < rb.reports.size(); ++k) s.b_min_length = std::min(s.b_min_length, len(rb, k));
  const auto fb = final_metric(rb, arms.b.run_id, arms.b.train.rounds, "exact_mean_length");
  s.b_min_length = std::min(s.b_min_length, fb);
  s.b_final_success = final_metric(rb, arms.b.run_id, arms.b.train.rounds, "exact_success");
  s.a_final_success = final_metric(ra, arms.a.run_id, arms.a.train.rounds, "exact_success");
  if (rb.pretrain && !rb.pretrain->history.empty())
    s.b_pretrain_explained_variance = rb.pretrain->history.back().heldout_explained_variance;
  s.length_collapse = s.a_length_ratio <= 0.7;
  s.negative_correlation = s.a_posadv_r < 0.0;
  s.b_length_kept = s.b_min_length >= arms.b.env.n_bits;
  s.b_success = s.b_final_success >= 0.95;
  s.b_beats_a = s.b_final_success > s.a_final_success;
  s.b_value_calibrated = s.b_pretrain_explained_variance >= 0.9;
  return s;
}

inline Json failure_summary_json(const FailureDemoArms& arms, const FailureDemoSummary& s) {
  Json j;
  j["length_check_step"] = arms.a.failure_demo.length_check_step;
  j["correlation_check_step"] = arms.a.failure_demo.correlation_check_step;
  j["rounds"] = arms.a.train.rounds;
  j["A"] = {{"length_step0", s.a_length_step0},
            {"length_at_check", s.a_length_check},
            {"length_ratio", s.a_length_ratio},
            {"posadv_r_at_check", s.a_posadv_r},
            {"final_success", s.a_final_success}};
  j["B"] = {{"pretrain_heldout_explained_variance", s.b_pretrain_explained_variance},
            {"min_length", s.b_min_length},
            {"final_success", s.b_final_success}};
  j["checks"] = {{"A_length_ratio_le_0.7", s.length_collapse},
                 {"A_posadv_r_negative", s.negative_correlation},
                 {"B_value_explained_variance_ge_0.9", s.b_value_calibrated},
                 {"B_min_length_ge_n", s.b_length_kept},
                 {"B_final_success_ge_0.95", s.b_success},
                 {"B_final_success_gt_A", s.b_beats_a}};
  return j;
}

inline int cmd_failure_demo(const CommonOptions& opt) {
  return guarded("failure-demo", [&] {
    const auto base = resolve_config(opt);
    const auto out = prepare_output(base);
    const auto arms = failure_demo_arms(base);
    const auto ra = run_training(arms.a, out / "arm_A");
    const auto rb = run_training(arms.b, out / "arm_B");
    write_text(out / "lengths_A.csv", lengths_csv(ra));
    write_text(out / "lengths_B.csv", lengths_csv(rb));
    write_text(out / "posadv_A.csv", posadv_csv(ra));
    write_text(out / "posadv_B.csv", posadv_csv(rb));
    std::string metrics = ra.metrics.to_csv();
    const std::string mb = rb.metrics.to_csv();
    metrics += mb.substr(mb.find('\n') + 1);
    write_text(out / "metrics.csv", metrics);
    const auto s = summarize_failure_demo(arms, ra, rb);
    write_text(out / "summary.json", failure_summary_json(arms, s).dump(2) + "\n");
    std::cout << "failure-demo: A length " << s.a_length_step0 << " -> " << s.a_length_check << " (ratio "
              << s.a_length_ratio << "), A posadv r " << s.a_posadv_r << "; B min length " << s.b_min_length
              << ", final success A " << s.a_final_success << " / B " << s.b_final_success << "\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------------------------
// variance-study

inline std::vector<VarianceRow> variance_study_table(const ExperimentConfig& cfg, const std::vector<double>& grid) {
  const auto& vs = cfg.variance_study;
  PolicyModel policy = vs.policy == "initial" ? make_policy(cfg) : PolicyModel::tabular(cfg.env.feature_dim(), cfg.env.action_dim());
  if (vs.policy != "initial" && vs.policy != "uniform")
    throw ConfigError("variance_study.policy: expected uniform or initial");
  const auto value = make_value(cfg);
  const auto batch = collect_batch(cfg.env, policy, {cfg.train.seed, Purpose::study, 0, vs.trajectories, 1, cfg.workers});
  return advantage_variance_table(batch, &value, grid, cfg.train.gae.gamma);
}

struct SweepRow {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double final_success = 0.0;
  double final_mean_length = 0.0;
};

inline ExperimentConfig sweep_arm(const ExperimentConfig& base, double lambda_actor, int seed_index) {
  ExperimentConfig c = base;
  c.run_id = base.run_id + "_lam" + format_double(lambda_actor) + "_s" + std::to_string(seed_index);
  c.train.algorithm = Algorithm::vcppo;
  c.train.gae.lambda_actor = lambda_actor;
  c.train.gae.lambda_critic = 1.0;
  c.train.seed = base.train.seed + static_cast<std::uint64_t>(seed_index);
  c.validate();
  return c;
}

/// Training-outcome sweep over lambda_actor with lambda_critic = 1. Every arm runs to completion.
inline std::vector<SweepRow> lambda_sweep(const ExperimentConfig& base, MetricSink* sink = nullptr) {
  std::vector<SweepRow> rows;
  for (double lam : base.variance_study.sweep_lambdas) {
    for (int s = 0; s < base.variance_study.sweep_seeds; ++s) {
      const auto c = sweep_arm(base, lam, s);
      SweepRow row{lam, c.train.seed, 0.0, 0.0};
      try {
        const auto r = run_training(c, std::nullopt);
        row.final_success = final_metric(r, c.run_id, c.train.rounds, "exact_success");
        row.final_mean_length = final_metric(r, c.run_id, c.train.rounds, "exact_mean_length");
        if (sink)
          for (const auto& rec : r.metrics.records()) sink->append(rec.run_id, rec.step, rec.name, rec.value);
      } catch (const NumericError& e) {
        // A diverged arm is recorded as a failure rather than aborting the sweep.
        std::cerr << "variance-study: arm " << c.run_id << " diverged: " << e.what() << "\n";
        row.final_success = 0.0;
        row.final_mean_length = 0.0;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

struct SweepSummaryRow {
  double lambda = 0.0;
  double mean_final_success = 0.0;
  double mean_final_length = 0.0;
  int seeds = 0;
};

inline std::vector<SweepSummaryRow> summarize_sweep(const std::vector<SweepRow>& rows) {
  std::vector<SweepSummaryRow> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SweepSummaryRow& s) { return s.lambda == r.lambda; });
    if (it == out.end()) {
      out.push_back({r.lambda, 0.0, 0.0, 0});
      it = out.end() - 1;
    }
    it->mean_final_success += r.final_success;
    it->mean_final_length += r.final_mean_length;
    ++it->seeds;
  }
  for (auto& s : out) {
    s.mean_final_success /= s.seeds;
    s.mean_final_length /= s.seeds;
  }
  return out;
}

inline int cmd_variance_study(const CommonOptions& opt, bool skip_sweep) {
  return guarded("variance-study", [&] {
    const auto cfg = resolve_config(opt);
    const auto out = prepare_output(cfg);
    MetricSink sink;
    const auto table = variance_study_table(cfg, cfg.variance_study.lambda_grid);
    std::ostringstream vt, dc;
    vt << "lambda,variance_a0,n_samples\n";
    dc << "lambda,variance_a0,variance_term,covariance_term\n";
    long long idx = 0;
    for (const auto& r : table) {
      vt << format_double(r.lambda) << ',' << format_double(r.variance_a0) << ',' << r.n_samples << '\n';
      dc << format_double(r.lambda) << ',' << format_double(r.variance_a0) << ',' << format_double(r.variance_term) << ','
         << format_double(r.covariance_term) << '\n';
      sink.append(cfg.run_id + "_variance", idx++, "variance_a0_lambda_" + format_double(r.lambda), r.variance_a0);
    }
    write_text(out / "variance_table.csv", vt.str());
    write_text(out / "variance_decomposition.csv", dc.str());
    std::cout << "variance-study: Var[A_0] over " << cfg.variance_study.trajectories << " trajectories:";
    for (const auto& r : table) std::cout << " lambda=" << r.lambda << ":" << r.variance_a0;
    std::cout << "\n";

    if (!skip_sweep) {
      const auto rows = lambda_sweep(cfg, &sink);
      std::ostringstream sw, sm;
      sw << "lambda_actor,seed,final_success,final_mean_length\n";
      for (const auto& r : rows)
        sw << format_double(r.lambda) << ',' << r.seed << ',' << format_double(r.final_success) << ','
           << format_double(r.final_mean_length) << '\n';
      sm << "lambda_actor,lambda_critic,mean_final_success,mean_final_length,seeds\n";
      for (const auto& s : summarize_sweep(rows)) {
        sm << format_double(s.lambda) << ",1," << format_double(s.mean_final_success) << ','
           << format_double(s.mean_final_length) << ',' << s.seeds << '\n';
        std::cout << "  lambda_actor=" << s.lambda << " mean final success " << s.mean_final_success << "\n";
      }
      write_text(out / "lambda_sweep.csv", sw.str());
      write_text(out / "lambda_sweep_summary.csv", sm.str());
    }
    write_text(out / "metrics.csv", sink.to_csv());
    return kExitOk;
  });
}

}  // namespace vcppo
