#pragma once

// Policy and value approximators with analytic gradients.
//
// Both share one network representation:
//   tabular  out = W x                         (W is out_dim x in_dim, row-major)
//   mlp      out = W2 tanh(W1 x + b1) + b2     (params laid out as W1, b1, W2, b2)
// With one-hot inputs the tabular form is a lookup table; with the concatenated one-hot
// observation of the parity environments it sums one table row per active block.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vcppo/core_mdp.hpp"
#include "vcppo/errors.hpp"
#include "vcppo/rng.hpp"

namespace vcppo {

enum class Arch { tabular, mlp };

inline std::string to_string(Arch a) { return a == Arch::tabular ? "tabular" : "mlp"; }

inline Arch arch_from_string(const std::string& s) {
  if (s == "tabular") return Arch::tabular;
  if (s == "mlp") return Arch::mlp;
  throw ConfigError("unknown architecture '" + s + "' (expected tabular or mlp)");
}

struct ModelParams {
  std::vector<double> values;
  std::vector<double> grads;
  std::string shape_tag;

  ModelParams() = default;
  ModelParams(std::size_t n, std::string tag) : values(n, 0.0), grads(n, 0.0), shape_tag(std::move(tag)) {}

  std::size_t size() const { return values.size(); }
  void zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  /// FNV-1a over the raw bytes of `values`; used to assert parameters did not move.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : values) {
      std::uint64_t bits;
      static_assert(sizeof bits == sizeof v);
      std::memcpy(&bits, &v, sizeof v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
    return h;
  }
};

namespace detail {

class Network {
 public:
  Network() = default;

  Network(Arch arch, int in_dim, int out_dim, int hidden)
      : arch_(arch), in_(in_dim), out_(out_dim), hidden_(arch == Arch::mlp ? hidden : 0) {
    if (in_dim < 1 || out_dim < 1) throw ConfigError("network: dimensions must be positive");
    if (arch == Arch::mlp && hidden < 1) throw ConfigError("network: mlp hidden width must be positive");
    params_ = ModelParams(param_count(), make_tag());
  }

  Arch arch() const { return arch_; }
  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  int hidden() const { return hidden_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  void init_uniform(CounterRng& rng, double scale) {
    for (auto& v : params_.values) v = rng.uniform(-scale, scale);
  }

  std::vector<double> forward(std::span<const double> x) const {
    check_input(x);
    std::vector<double> y(static_cast<std::size_t>(out_), 0.0);
    const auto& p = params_.values;
    if (arch_ == Arch::tabular) {
      for (int o = 0; o < out_; ++o) {
        const double* row = p.data() + static_cast<std::size_t>(o) * in_;
        double acc = 0.0;
        for (int i = 0; i < in_; ++i)
          if (x[i] != 0.0) acc += row[i] * x[i];
        y[o] = acc;
      }
      return y;
    }
    const auto h = hidden_activations(x);
    const double* w2 = p.data() + off_w2();
    const double* b2 = p.data() + off_b2();
    for (int o = 0; o < out_; ++o) {
      double acc = b2[o];
      for (int j = 0; j < hidden_; ++j) acc += w2[o * hidden_ + j] * h[j];
      y[o] = acc;
    }
    return y;
  }

  /// Writes d(upstream . out)/d(params) into `g` (which must have param_count() entries).
  void backward(std::span<const double> x, std::span<const double> upstream, std::span<double> g) const {
    check_input(x);
    const auto& p = params_.values;
    if (arch_ == Arch::tabular) {
      for (int o = 0; o < out_; ++o) {
        if (upstream[o] == 0.0) continue;
        double* row = g.data() + static_cast<std::size_t>(o) * in_;
        for (int i = 0; i < in_; ++i)
          if (x[i] != 0.0) row[i] += upstream[o] * x[i];
      }
      return;
    }
    const auto h = hidden_activations(x);
    const double* w2 = p.data() + off_w2();
    double* gw1 = g.data();
    double* gb1 = g.data() + off_b1();
    double* gw2 = g.data() + off_w2();
    double* gb2 = g.data() + off_b2();
    for (int o = 0; o < out_; ++o) {
      gb2[o] += upstream[o];
      for (int j = 0; j < hidden_; ++j) gw2[o * hidden_ + j] += upstream[o] * h[j];
    }
    for (int j = 0; j < hidden_; ++j) {
      double dh = 0.0;
      for (int o = 0; o < out_; ++o) dh += upstream[o] * w2[o * hidden_ + j];
      const double dz = dh * (1.0 - h[j] * h[j]);
      gb1[j] += dz;
      if (dz == 0.0) continue;
      for (int i = 0; i < in_; ++i)
        if (x[i] != 0.0) gw1[j * in_ + i] += dz * x[i];
    }
  }

  std::size_t param_count() const {
    if (arch_ == Arch::tabular) return static_cast<std::size_t>(in_) * out_;
    return static_cast<std::size_t>(hidden_) * in_ + hidden_ + static_cast<std::size_t>(out_) * hidden_ + out_;
  }

  std::size_t off_b1() const { return static_cast<std::size_t>(hidden_) * in_; }
  std::size_t off_w2() const { return off_b1() + hidden_; }
  std::size_t off_b2() const { return off_w2() + static_cast<std::size_t>(out_) * hidden_; }

 private:
  void check_input(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_)
      throw UsageError("network: expected " + std::to_string(in_) + " features, got " + std::to_string(x.size()));
  }

  std::vector<double> hidden_activations(std::span<const double> x) const {
    const auto& p = params_.values;
    std::vector<double> h(static_cast<std::size_t>(hidden_));
    for (int j = 0; j < hidden_; ++j) {
      double acc = p[off_b1() + j];
      const double* row = p.data() + static_cast<std::size_t>(j) * in_;
      for (int i = 0; i < in_; ++i)
        if (x[i] != 0.0) acc += row[i] * x[i];
      h[j] = std::tanh(acc);
    }
    return h;
  }

  std::string make_tag() const {
    if (arch_ == Arch::tabular) return "tabular:in=" + std::to_string(in_) + ",out=" + std::to_string(out_);
    return "mlp:in=" + std::to_string(in_) + ",hidden=" + std::to_string(hidden_) + ",out=" + std::to_string(out_);
  }

  Arch arch_ = Arch::tabular;
  int in_ = 0;
  int out_ = 0;
  int hidden_ = 0;
  ModelParams params_;
};

}  // namespace detail

inline constexpr double kMlpInitScale = 0.1;

/// pi_theta(a | s) as a softmax over network logits.
struct PolicyModel {
  detail::Network net;

  static PolicyModel tabular(int feature_dim, int action_dim) {
    return PolicyModel{detail::Network(Arch::tabular, feature_dim, action_dim, 0)};
  }

  static PolicyModel mlp(int feature_dim, int action_dim, int hidden_width, std::uint64_t init_seed) {
    PolicyModel m{detail::Network(Arch::mlp, feature_dim, action_dim, hidden_width)};
    CounterRng rng(init_seed, Purpose::init, {1});
    m.net.init_uniform(rng, kMlpInitScale);
    return m;
  }

  Arch arch() const { return net.arch(); }
  int feature_dim() const { return net.in_dim(); }
  int action_dim() const { return net.out_dim(); }
  ModelParams& params() { return net.params(); }
  const ModelParams& params() const { return net.params(); }
};

/// V(s) as the single output of a network.
struct ValueModel {
  detail::Network net;

  static ValueModel tabular(int feature_dim) { return ValueModel{detail::Network(Arch::tabular, feature_dim, 1, 0)}; }

  static ValueModel mlp(int feature_dim, int hidden_width, std::uint64_t init_seed) {
    ValueModel m{detail::Network(Arch::mlp, feature_dim, 1, hidden_width)};
    CounterRng rng(init_seed, Purpose::init, {2});
    m.net.init_uniform(rng, kMlpInitScale);
    return m;
  }

  Arch arch() const { return net.arch(); }
  int feature_dim() const { return net.in_dim(); }
  ModelParams& params() { return net.params(); }
  const ModelParams& params() const { return net.params(); }
};

inline std::vector<double> policy_logits(const PolicyModel& policy, std::span<const double> features) {
  return policy.net.forward(features);
}

/// Numerically stable log-softmax.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double lz = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (auto& v : out) v = std::exp(v);
  return out;
}

inline std::vector<double> action_probabilities(const PolicyModel& policy, std::span<const double> features) {
  return softmax(policy_logits(policy, features));
}

inline double log_prob(const PolicyModel& policy, std::span<const double> features, Token action) {
  if (action < 0 || action >= policy.action_dim()) throw UsageError("log_prob: action out of range");
  return log_softmax(policy_logits(policy, features))[static_cast<std::size_t>(action)];
}

struct SampledAction {
  Token action = 0;
  double logprob = 0.0;
};

/// Inverse-CDF sampling from softmax(logits); consumes exactly one draw from `rng`.
inline SampledAction sample_action(const PolicyModel& policy, std::span<const double> features, CounterRng& rng) {
  const auto lp = log_softmax(policy_logits(policy, features));
  const double u = rng.uniform();
  double cdf = 0.0;
  std::size_t chosen = lp.size() - 1;
  for (std::size_t a = 0; a < lp.size(); ++a) {
    const double p = std::exp(lp[a]);
    cdf += p;
    if (u < cdf && p > 0.0) {
      chosen = a;
      break;
    }
  }
  // Guard against landing on a zero-probability tail action when cdf rounds below 1.
  while (std::exp(lp[chosen]) == 0.0 && chosen > 0) --chosen;
  return {static_cast<Token>(chosen), lp[chosen]};
}

inline double value_predict(const ValueModel& value, std::span<const double> features) {
  return value.net.forward(features)[0];
}

/// Gradient of log pi(action | features) w.r.t. all policy parameters. The result is also
/// accumulated into policy.params().grads.
inline std::vector<double> grad_logprob(PolicyModel& policy, std::span<const double> features, Token action) {
  if (action < 0 || action >= policy.action_dim()) throw UsageError("grad_logprob: action out of range");
  auto upstream = softmax(policy_logits(policy, features));
  for (auto& u : upstream) u = -u;
  upstream[static_cast<std::size_t>(action)] += 1.0;
  std::vector<double> g(policy.params().size(), 0.0);
  policy.net.backward(features, upstream, g);
  auto& acc = policy.params().grads;
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
  return g;
}

/// Same as grad_logprob but leaves the model untouched; `scale` multiplies the gradient.
inline void accumulate_grad_logprob(const PolicyModel& policy, std::span<const double> features, Token action,
                                    double scale, std::span<double> out) {
  auto upstream = softmax(policy_logits(policy, features));
  for (auto& u : upstream) u = -u * scale;
  upstream[static_cast<std::size_t>(action)] += scale;
  policy.net.backward(features, upstream, out);
}

inline std::vector<double> grad_value(ValueModel& value, std::span<const double> features) {
  std::vector<double> g(value.params().size(), 0.0);
  const double one = 1.0;
  value.net.backward(features, std::span<const double>(&one, 1), g);
  auto& acc = value.params().grads;
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
  return g;
}

inline void accumulate_grad_value(const ValueModel& value, std::span<const double> features, double scale,
                                  std::span<double> out) {
  value.net.backward(features, std::span<const double>(&scale, 1), out);
}

/// Reward-model-style initialization: V(s_t) = -kappa * (1 - min(t, t_ref) / t_ref).
/// Only the position block is set; the parity and readiness blocks are zeroed.
inline ValueModel init_biased_value(ValueModel value, double kappa, int t_ref, const FeatureLayout& layout) {
  if (value.arch() != Arch::tabular)
    throw UnsupportedConfiguration("init_biased_value: requires a tabular value model (position must be addressable)");
  if (!(kappa > 0.0)) throw ConfigError("init_biased_value: kappa must be > 0");
  if (t_ref < 1) throw ConfigError("init_biased_value: t_ref must be >= 1");
  if (value.feature_dim() != layout.dim) throw UsageError("init_biased_value: layout does not match value model");
  auto& w = value.params().values;
  std::fill(w.begin(), w.end(), 0.0);
  for (int t = 0; t < layout.position_slots; ++t)
    w[static_cast<std::size_t>(t)] = -kappa * (1.0 - static_cast<double>(std::min(t, t_ref)) / t_ref);
  return value;
}

namespace detail {

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return denom < 1e-12 ? diff : diff / denom;
}

template <typename Scalar>
double finite_diff_probe(detail::Network& net, std::span<const double> analytic, Scalar&& f, int probe_count,
                         std::uint64_t seed) {
  if (probe_count < 1) throw UsageError("finite_diff_check: probe_count must be >= 1");
  constexpr double h = 1e-5;
  CounterRng rng(seed, Purpose::oracle, {0xfdULL});
  auto& theta = net.params().values;
  double worst = 0.0;
  for (int k = 0; k < probe_count; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(theta.size()));
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = f();
    theta[i] = saved - h;
    const double down = f();
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

}  // namespace detail

/// Worst relative error between analytic d log pi(action|x) and central differences over
/// `probe_count` random parameter coordinates. Absolute error is used when both sides are < 1e-12.
inline double finite_diff_check(const PolicyModel& policy, std::span<const double> features, Token action,
                                int probe_count, std::uint64_t seed = 0) {
  PolicyModel probe = policy;
  probe.params().zero_grad();
  const auto analytic = grad_logprob(probe, features, action);
  return detail::finite_diff_probe(
      probe.net, analytic, [&] { return log_prob(probe, features, action); }, probe_count, seed);
}

inline double finite_diff_check(const ValueModel& value, std::span<const double> features, int probe_count,
                                std::uint64_t seed = 0) {
  ValueModel probe = value;
  probe.params().zero_grad();
  const auto analytic = grad_value(probe, features);
  return detail::finite_diff_probe(
      probe.net, analytic, [&] { return value_predict(probe, features); }, probe_count, seed);
}

/// Plain SGD: params += step * direction (direction already averaged by the caller).
inline void sgd_apply(ModelParams& params, std::span<const double> direction, double step) {
  for (std::size_t i = 0; i < params.values.size(); ++i) params.values[i] += step * direction[i];
}

}  // namespace vcppo
