// Command-line front end: one subcommand per study. Exit codes: 0 success, 1 config error,
// 2 runtime error, 3 acceptance-check failure.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "vcppo/harness.hpp"

namespace {

void add_common(CLI::App* cmd, vcppo::CommonOptions& opt, std::string& config, std::string& out_dir,
                std::uint64_t& seed, int& workers) {
  cmd->add_option("--config", config, "Experiment configuration (JSON)");
  cmd->add_option("--override", opt.overrides, "Dotted KEY=VALUE assignment applied after the file (repeatable)")
      ->allow_extra_args(false);
  cmd->add_option("--output-dir", out_dir, "Directory for metrics, checkpoints and study CSVs");
  cmd->add_option("--seed", seed, "Training seed (overrides train.seed)");
  cmd->add_option("--workers", workers, "Collection worker threads (overrides workers)")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VC-PPO experiment harness"};
  app.require_subcommand(1);

  vcppo::CommonOptions opt;
  std::string config, out_dir;
  std::uint64_t seed = 0;
  int workers = 0;

  auto* train = app.add_subcommand("train", "Run a training experiment");
  auto* pretrain = app.add_subcommand("pretrain-value", "Pretrain the value model under the frozen initial policy");
  auto* oracle = app.add_subcommand("oracle-check", "Exact check that decoupled-GAE gradients ignore the value function");
  auto* decay = app.add_subcommand("decay-demo", "Write the reward-decay profile of a terminal reward");
  auto* failure = app.add_subcommand("failure-demo", "Baseline PPO with a biased value vs VC-PPO");
  auto* variance = app.add_subcommand("variance-study", "Advantage variance table and lambda_actor sweep");
  for (auto* c : {train, pretrain, oracle, decay, failure, variance}) add_common(c, opt, config, out_dir, seed, workers);

  bool inject_bias = false;
  oracle->add_flag("--inject-bias", inject_bias, "Negative control: add the successor value to every advantage");
  vcppo::DecayOptions decay_opt;
  decay->add_option("--T", decay_opt.T, "Trajectory length");
  decay->add_option("--lambda", decay_opt.lambda, "GAE lambda");
  decay->add_option("--r", decay_opt.r, "Terminal reward");
  bool skip_sweep = false;
  variance->add_flag("--skip-sweep", skip_sweep, "Only compute the variance table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : vcppo::kExitConfig;
  }

  if (!config.empty()) opt.config_path = config;
  if (!out_dir.empty()) opt.output_dir = out_dir;
  for (auto* c : {train, pretrain, oracle, decay, failure, variance}) {
    if (!*c) continue;
    if (c->count("--seed")) opt.seed = seed;
    if (c->count("--workers")) opt.workers = workers;
  }

  if (*train) return vcppo::cmd_train(opt);
  if (*pretrain) return vcppo::cmd_pretrain_value(opt);
  if (*oracle) return vcppo::cmd_oracle_check(opt, inject_bias);
  if (*decay) return vcppo::cmd_decay_demo(opt, decay_opt);
  if (*failure) return vcppo::cmd_failure_demo(opt);
  if (*variance) return vcppo::cmd_variance_study(opt, skip_sweep);
  return vcppo::kExitConfig;
}
