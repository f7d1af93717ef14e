#pragma once

// Experiment configuration (one JSON document, unknown keys rejected) and the full training run:
// model initialization, optional value pretraining, then the collection/optimization loop.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "vcppo/checkpoint.hpp"
#include "vcppo/core_mdp.hpp"
#include "vcppo/diagnostics.hpp"
#include "vcppo/errors.hpp"
#include "vcppo/function_approx.hpp"
#include "vcppo/trainers.hpp"

namespace vcppo {

using Json = nlohmann::ordered_json;

/// Initial policy. "uniform" is all-zero tabular parameters (or the seeded mlp init);
/// "cold_start" adds fixed logit offsets that imitate a supervised warm start:
///   THINK gets think_logit at every position and think_logit_ready extra once t >= n,
///   the answer matching the running parity gets answer_logit.
struct PolicyInit {
  std::string kind = "uniform";
  double think_logit = 0.0;
  double think_logit_ready = 0.0;
  double answer_logit = 0.0;
};

/// Initial critic. "zero", "biased" (reward-model-style prefix scores), or "checkpoint".
struct ValueInit {
  std::string kind = "zero";
  double kappa = 1.0;
  int t_ref = 0;  // 0 means t_max
  std::string checkpoint;
};

struct ModelConfig {
  std::string policy_arch = "tabular";
  std::string value_arch = "tabular";
  int hidden_width = 16;
  std::uint64_t init_seed = 0;
  PolicyInit policy_init;
  ValueInit value_init;
};

struct OracleStudyConfig {
  std::string policy = "uniform";  // uniform | random | deterministic | initial
  int value_samples = 20;
  std::vector<double> lambda_grid{0.9, 0.95, 1.0};
  double cap = kDefaultEnumerationCap;
  double tolerance = 1e-9;
};

struct FailureDemoConfig {
  double kappa = 1.0;
  int t_ref = 0;  // 0 means t_max
  int length_check_step = 200;
  int correlation_check_step = 10;
};

struct VarianceStudyConfig {
  int trajectories = 10000;
  std::vector<double> lambda_grid{0.9, 0.95, 0.99, 1.0};
  std::string policy = "uniform";  // uniform | initial
  std::vector<double> sweep_lambdas{0.9, 0.95, 0.99, 1.0};
  int sweep_seeds = 3;
};

struct ExperimentConfig {
  std::string run_id = "run";
  std::string output_dir = "runs/run";
  int workers = 1;
  EnvSpec env = parity_chain(6, 12);
  ModelConfig model;
  TrainConfig train;
  std::optional<ValuePretrainConfig> pretrain;
  OracleStudyConfig oracle;
  FailureDemoConfig failure_demo;
  VarianceStudyConfig variance_study;

  void validate() const {
    if (run_id.empty()) throw ConfigError("run_id: must be non-empty");
    for (char c : run_id)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
        throw ConfigError("run_id: only [A-Za-z0-9_.-] allowed, got '" + run_id + "'");
    if (workers < 1) throw ConfigError("workers: must be >= 1");
    env.validate();
    arch_from_string(model.policy_arch);
    arch_from_string(model.value_arch);
    if (model.hidden_width < 1) throw ConfigError("model.hidden_width: must be >= 1");
    const auto& pk = model.policy_init.kind;
    if (pk != "uniform" && pk != "cold_start") throw ConfigError("model.policy_init.kind: expected uniform or cold_start");
    const auto& vk = model.value_init.kind;
    if (vk != "zero" && vk != "biased" && vk != "checkpoint")
      throw ConfigError("model.value_init.kind: expected zero, biased or checkpoint");
    if (vk == "biased" && model.value_arch != "tabular")
      throw ConfigError("model.value_init.kind: biased initialization needs value_arch = tabular");
    if (vk == "checkpoint" && model.value_init.checkpoint.empty())
      throw ConfigError("model.value_init.checkpoint: path required for kind = checkpoint");
    train.validate();
    if (pretrain) pretrain->validate();
    if (oracle.value_samples < 1) throw ConfigError("oracle.value_samples: must be >= 1");
    if (variance_study.trajectories < 2) throw ConfigError("variance_study.trajectories: must be >= 2");
    if (variance_study.sweep_seeds < 1) throw ConfigError("variance_study.sweep_seeds: must be >= 1");
  }
};

// ---------------------------------------------------------------------------------------------
// JSON mapping

namespace detail {

class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void field(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const Json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string child(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  detail::Reader root(j, "config");
  root.field("run_id", c.run_id);
  root.field("output_dir", c.output_dir);
  root.field("workers", c.workers);
  if (const auto* e = root.section("env")) {
    detail::Reader r(*e, "env");
    r.field("kind", c.env.kind);
    if (c.env.kind == "tiny_chain") c.env = tiny_chain();
    r.field("n_bits", c.env.n_bits);
    r.field("t_max", c.env.t_max);
    r.field("reward_correct", c.env.reward_correct);
    r.field("reward_incorrect", c.env.reward_incorrect);
    r.finish();
  }
  if (const auto* m = root.section("model")) {
    detail::Reader r(*m, "model");
    r.field("policy_arch", c.model.policy_arch);
    r.field("value_arch", c.model.value_arch);
    r.field("hidden_width", c.model.hidden_width);
    r.field("init_seed", c.model.init_seed);
    if (const auto* p = r.section("policy_init")) {
      detail::Reader q(*p, r.child("policy_init"));
      q.field("kind", c.model.policy_init.kind);
      q.field("think_logit", c.model.policy_init.think_logit);
      q.field("think_logit_ready", c.model.policy_init.think_logit_ready);
      q.field("answer_logit", c.model.policy_init.answer_logit);
      q.finish();
    }
    if (const auto* v = r.section("value_init")) {
      detail::Reader q(*v, r.child("value_init"));
      q.field("kind", c.model.value_init.kind);
      q.field("kappa", c.model.value_init.kappa);
      q.field("t_ref", c.model.value_init.t_ref);
      q.field("checkpoint", c.model.value_init.checkpoint);
      q.finish();
    }
    r.finish();
  }
  if (const auto* t = root.section("train")) {
    detail::Reader r(*t, "train");
    if (const auto* g = r.section("gae")) {
      detail::Reader q(*g, r.child("gae"));
      q.field("gamma", c.train.gae.gamma);
      q.field("lambda_actor", c.train.gae.lambda_actor);
      q.field("lambda_critic", c.train.gae.lambda_critic);
      q.finish();
    }
    std::string algo = to_string(c.train.algorithm);
    r.field("algorithm", algo);
    c.train.algorithm = algorithm_from_string(algo);
    r.field("clip_eps", c.train.clip_eps);
    r.field("epochs", c.train.epochs);
    r.field("minibatches", c.train.minibatches);
    r.field("batch_trajectories", c.train.batch_trajectories);
    r.field("lr_policy", c.train.lr_policy);
    r.field("lr_value", c.train.lr_value);
    r.field("kl_beta", c.train.kl_beta);
    r.field("whiten_advantages", c.train.whiten_advantages);
    r.field("seed", c.train.seed);
    r.field("rounds", c.train.rounds);
    r.field("grpo_group_size", c.train.grpo_group_size);
    r.field("grpo_std_normalize", c.train.grpo_std_normalize);
    r.field("value_clip", c.train.value_clip);
    r.field("grad_clip", c.train.grad_clip);
    r.finish();
  }
  if (const auto* p = root.section("pretrain")) {
    if (!p->is_null()) {
      ValuePretrainConfig pc;
      detail::Reader r(*p, "pretrain");
      r.field("steps", pc.steps);
      r.field("batch_trajectories", pc.batch_trajectories);
      r.field("lr_value", pc.lr_value);
      r.field("checkpoint_every", pc.checkpoint_every);
      r.field("ev_threshold", pc.ev_threshold);
      r.field("loss_threshold", pc.loss_threshold);
      r.field("patience", pc.patience);
      r.field("heldout_trajectories", pc.heldout_trajectories);
      r.finish();
      c.pretrain = pc;
    }
  }
  if (const auto* o = root.section("oracle")) {
    detail::Reader r(*o, "oracle");
    r.field("policy", c.oracle.policy);
    r.field("value_samples", c.oracle.value_samples);
    r.field("lambda_grid", c.oracle.lambda_grid);
    r.field("cap", c.oracle.cap);
    r.field("tolerance", c.oracle.tolerance);
    r.finish();
  }
  if (const auto* f = root.section("failure_demo")) {
    detail::Reader r(*f, "failure_demo");
    r.field("kappa", c.failure_demo.kappa);
    r.field("t_ref", c.failure_demo.t_ref);
    r.field("length_check_step", c.failure_demo.length_check_step);
    r.field("correlation_check_step", c.failure_demo.correlation_check_step);
    r.finish();
  }
  if (const auto* v = root.section("variance_study")) {
    detail::Reader r(*v, "variance_study");
    r.field("trajectories", c.variance_study.trajectories);
    r.field("lambda_grid", c.variance_study.lambda_grid);
    r.field("policy", c.variance_study.policy);
    r.field("sweep_lambdas", c.variance_study.sweep_lambdas);
    r.field("sweep_seeds", c.variance_study.sweep_seeds);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

/// Every field with its resolved value; feeding this back through config_from_json reproduces
/// the same configuration.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["run_id"] = c.run_id;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["env"] = {{"kind", c.env.kind},
              {"n_bits", c.env.n_bits},
              {"t_max", c.env.t_max},
              {"reward_correct", c.env.reward_correct},
              {"reward_incorrect", c.env.reward_incorrect}};
  const auto& m = c.model;
  j["model"] = {{"policy_arch", m.policy_arch},
                {"value_arch", m.value_arch},
                {"hidden_width", m.hidden_width},
                {"init_seed", m.init_seed},
                {"policy_init",
                 {{"kind", m.policy_init.kind},
                  {"think_logit", m.policy_init.think_logit},
                  {"think_logit_ready", m.policy_init.think_logit_ready},
                  {"answer_logit", m.policy_init.answer_logit}}},
                {"value_init",
                 {{"kind", m.value_init.kind},
                  {"kappa", m.value_init.kappa},
                  {"t_ref", m.value_init.t_ref},
                  {"checkpoint", m.value_init.checkpoint}}}};
  const auto& t = c.train;
  j["train"] = {{"gae", {{"gamma", t.gae.gamma}, {"lambda_actor", t.gae.lambda_actor}, {"lambda_critic", t.gae.lambda_critic}}},
                {"algorithm", to_string(t.algorithm)},
                {"clip_eps", t.clip_eps},
                {"epochs", t.epochs},
                {"minibatches", t.minibatches},
                {"batch_trajectories", t.batch_trajectories},
                {"lr_policy", t.lr_policy},
                {"lr_value", t.lr_value},
                {"kl_beta", t.kl_beta},
                {"whiten_advantages", t.whiten_advantages},
                {"seed", t.seed},
                {"rounds", t.rounds},
                {"grpo_group_size", t.grpo_group_size},
                {"grpo_std_normalize", t.grpo_std_normalize},
                {"value_clip", t.value_clip},
                {"grad_clip", t.grad_clip}};
  if (c.pretrain) {
    const auto& p = *c.pretrain;
    j["pretrain"] = {{"steps", p.steps},
                     {"batch_trajectories", p.batch_trajectories},
                     {"lr_value", p.lr_value},
                     {"checkpoint_every", p.checkpoint_every},
                     {"ev_threshold", p.ev_threshold},
                     {"loss_threshold", p.loss_threshold},
                     {"patience", p.patience},
                     {"heldout_trajectories", p.heldout_trajectories}};
  } else {
    j["pretrain"] = nullptr;
  }
  j["oracle"] = {{"policy", c.oracle.policy},
                 {"value_samples", c.oracle.value_samples},
                 {"lambda_grid", c.oracle.lambda_grid},
                 {"cap", c.oracle.cap},
                 {"tolerance", c.oracle.tolerance}};
  j["failure_demo"] = {{"kappa", c.failure_demo.kappa},
                       {"t_ref", c.failure_demo.t_ref},
                       {"length_check_step", c.failure_demo.length_check_step},
                       {"correlation_check_step", c.failure_demo.correlation_check_step}};
  j["variance_study"] = {{"trajectories", c.variance_study.trajectories},
                         {"lambda_grid", c.variance_study.lambda_grid},
                         {"policy", c.variance_study.policy},
                         {"sweep_lambdas", c.variance_study.sweep_lambdas},
                         {"sweep_seeds", c.variance_study.sweep_seeds}};
  return j;
}

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when possible
/// (numbers, booleans, null, arrays) and taken as a string otherwise.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected KEY=VALUE");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  Json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || (*node)[parts[i]].is_null()) (*node)[parts[i]] = Json::object();
    node = &(*node)[parts[i]];
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + parts[i] + "' is not a section");
  }
  (*node)[parts.back()] = value;
}

/// FNV-1a of the canonical resolved JSON, minus fields that cannot change results.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  auto j = config_to_json(c);
  j.erase("output_dir");
  j.erase("workers");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path.string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// Model construction

inline PolicyModel make_policy(const ExperimentConfig& c) {
  const int fd = c.env.feature_dim(), ad = c.env.action_dim();
  PolicyModel p = c.model.policy_arch == "tabular" ? PolicyModel::tabular(fd, ad)
                                                   : PolicyModel::mlp(fd, ad, c.model.hidden_width, c.model.init_seed);
  const auto& pi = c.model.policy_init;
  if (pi.kind == "cold_start") {
    auto& w = p.params().values;
    const auto l = c.env.layout();
    if (p.arch() == Arch::tabular) {
      auto at = [&](Token a, int feature) -> double& { return w[static_cast<std::size_t>(a * fd + feature)]; };
      for (int t = 0; t < l.position_slots; ++t) at(kThink, t) += pi.think_logit;
      at(kThink, l.ready_offset + 1) += pi.think_logit_ready;
      at(kAns0, l.parity_offset + 0) += pi.answer_logit;
      at(kAns1, l.parity_offset + 1) += pi.answer_logit;
    } else {
      w[p.net.off_b2() + kThink] += pi.think_logit;
    }
  }
  return p;
}

inline ValueModel make_value(const ExperimentConfig& c, std::int64_t* loaded_step = nullptr) {
  const int fd = c.env.feature_dim();
  ValueModel v = c.model.value_arch == "tabular" ? ValueModel::tabular(fd)
                                                 : ValueModel::mlp(fd, c.model.hidden_width, c.model.init_seed);
  const auto& vi = c.model.value_init;
  if (vi.kind == "biased") {
    v = init_biased_value(std::move(v), vi.kappa, vi.t_ref > 0 ? vi.t_ref : c.env.t_max, c.env.layout());
  } else if (vi.kind == "checkpoint") {
    const auto ck = read_checkpoint(vi.checkpoint);
    if (ck.kind != "value") throw ConfigError("model.value_init.checkpoint: '" + vi.checkpoint + "' is not a value checkpoint");
    load_into(v.params(), ck);
    if (loaded_step) *loaded_step = ck.step;
  }
  return v;
}

// ---------------------------------------------------------------------------------------------
// Full run

struct TrainingResult {
  MetricSink metrics;
  PolicyModel policy;
  std::optional<ValueModel> value;
  std::optional<PretrainResult> pretrain;
  std::vector<StepReport> reports;
  std::vector<std::filesystem::path> checkpoints;
  std::uint64_t reference_hash_start = 0;
  std::uint64_t reference_hash_end = 0;
};

inline std::string pretrain_curve_csv(const std::vector<PretrainPoint>& h) {
  std::ostringstream os;
  os << "step,value_loss,explained_variance,heldout_loss,heldout_explained_variance\n";
  for (const auto& p : h)
    os << p.step << ',' << format_double(p.value_loss) << ',' << format_double(p.explained_variance) << ','
       << format_double(p.heldout_loss) << ',' << format_double(p.heldout_explained_variance) << '\n';
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

/// Runs the configured experiment. When `output_dir` is given, writes metrics.csv, metrics.jsonl,
/// config.resolved.json, final checkpoints and (with pretraining) the pretraining curve and
/// value_step{N}.ckpt files.
inline TrainingResult run_training(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& output_dir) {
  cfg.validate();
  const auto hash = config_hash(cfg);
  if (output_dir) {
    std::filesystem::create_directories(*output_dir);
    write_text(*output_dir / "config.resolved.json", config_to_json(cfg).dump(2) + "\n");
  }

  TrainingResult out{{}, make_policy(cfg), std::nullopt, std::nullopt, {}, {}, 0, 0};
  const bool use_value = cfg.train.algorithm != Algorithm::grpo;
  if (use_value) {
    out.value = make_value(cfg);
    if (cfg.pretrain) {
      PretrainContext ctx;
      ctx.seed = cfg.train.seed;
      ctx.workers = cfg.workers;
      ctx.sink = &out.metrics;
      ctx.run_id = cfg.run_id + "_pretrain";
      if (output_dir) {
        ctx.on_checkpoint = [&](const ValueCheckpoint& c) {
          const auto p = *output_dir / ("value_step" + std::to_string(c.step) + ".ckpt");
          ModelParams mp = out.value->params();
          mp.values = c.values;
          write_checkpoint(p, make_checkpoint(mp, "value", c.step, hash));
          out.checkpoints.push_back(p);
        };
      }
      auto pre = value_pretrain(out.policy, *out.value, cfg.env, *cfg.pretrain, ctx);
      out.value = pre.value;
      if (output_dir) write_text(*output_dir / "pretrain_curve.csv", pretrain_curve_csv(pre.history));
      out.pretrain = std::move(pre);
    }
  }

  RunState run(out.policy, out.value, cfg.train.seed, cfg.run_id, &out.metrics);
  out.reference_hash_start = run.reference_hash;
  for (int round = 0; round < cfg.train.rounds; ++round) {
    const auto batch = collect_batch(cfg.env, run.policy,
                                     {cfg.train.seed, Purpose::collect, static_cast<std::uint64_t>(round),
                                      cfg.train.batch_trajectories,
                                      cfg.train.algorithm == Algorithm::grpo ? cfg.train.grpo_group_size : 1, cfg.workers});
    out.reports.push_back(train_step(run, batch, cfg.train, cfg.env));
  }
  if (exact_summary_feasible(cfg.env)) {
    const auto ex = exact_summary(cfg.env, run.policy);
    out.metrics.append(cfg.run_id, run.step, "exact_success", ex.success);
    out.metrics.append(cfg.run_id, run.step, "exact_mean_length", ex.mean_length);
  }
  out.reference_hash_end = run.reference_policy.params().hash();
  out.policy = run.policy;
  out.value = run.value;

  if (output_dir) {
    write_text(*output_dir / "metrics.csv", out.metrics.to_csv());
    write_text(*output_dir / "metrics.jsonl", out.metrics.to_jsonl());
    const auto pp = *output_dir / "policy_final.ckpt";
    write_checkpoint(pp, make_checkpoint(out.policy.params(), "policy", run.step, hash));
    out.checkpoints.push_back(pp);
    if (out.value) {
      const auto vp = *output_dir / "value_final.ckpt";
      write_checkpoint(vp, make_checkpoint(out.value->params(), "value", run.step, hash));
      out.checkpoints.push_back(vp);
    }
  }
  return out;
}

}  // namespace vcppo
