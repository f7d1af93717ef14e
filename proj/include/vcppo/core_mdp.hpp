#pragma once

// Token-level MDP with deterministic append dynamics and a sparse verifier reward.
//
// ParityChain: the prompt is a uniform random bit-string b_1..b_n. The vocabulary is
// {THINK, ANS0, ANS1}; the two answer tokens are terminal. Every THINK reveals one more prompt
// bit to the observation, so a policy has to emit n THINK tokens before it can know the parity.
// TinyChain is the same environment fixed at n = 2, t_max = 4, small enough to enumerate.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vcppo/errors.hpp"
#include "vcppo/rng.hpp"

namespace vcppo {

using Token = int;

inline constexpr Token kThink = 0;
inline constexpr Token kAns0 = 1;
inline constexpr Token kAns1 = 2;

struct Vocab {
  std::vector<Token> tokens;
  std::vector<Token> terminal_tokens;

  std::size_t size() const { return tokens.size(); }

  bool contains(Token t) const { return t >= 0 && static_cast<std::size_t>(t) < tokens.size(); }

  bool is_terminal(Token t) const {
    return std::find(terminal_tokens.begin(), terminal_tokens.end(), t) != terminal_tokens.end();
  }

  void validate() const {
    if (tokens.empty()) throw ConfigError("vocab: tokens must be non-empty");
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] != static_cast<Token>(i))
        throw ConfigError("vocab: token identifiers must be contiguous from 0");
    if (terminal_tokens.empty()) throw ConfigError("vocab: terminal_tokens must be non-empty");
    if (terminal_tokens.size() >= tokens.size())
      throw ConfigError("vocab: terminal_tokens must be a strict subset of tokens");
    for (auto t : terminal_tokens)
      if (!contains(t)) throw ConfigError("vocab: terminal token outside vocabulary");
  }
};

inline Vocab parity_vocab() { return Vocab{{kThink, kAns0, kAns1}, {kAns0, kAns1}}; }

/// Offsets of the one-hot blocks inside an observation vector.
struct FeatureLayout {
  int position_slots = 0;  // one-hot position, capped at t_max
  int parity_offset = 0;   // one-hot running parity (2 entries)
  int ready_offset = 0;    // one-hot flag t >= n (2 entries)
  int dim = 0;
};

struct EnvSpec {
  std::string kind = "parity_chain";
  int n_bits = 3;
  int t_max = 8;
  Vocab vocab = parity_vocab();
  double reward_correct = 1.0;
  double reward_incorrect = -1.0;

  void validate() const {
    if (kind != "parity_chain" && kind != "tiny_chain")
      throw ConfigError("env.kind: unknown environment '" + kind + "'");
    if (n_bits < 1 || n_bits > 30) throw ConfigError("env.n_bits: must be in [1, 30]");
    if (t_max < n_bits + 1) throw ConfigError("env.t_max: must be >= n_bits + 1");
    if (!(reward_correct > reward_incorrect))
      throw ConfigError("env: reward_correct must exceed reward_incorrect");
    vocab.validate();
    if (vocab.size() != 3 || !vocab.is_terminal(kAns0) || !vocab.is_terminal(kAns1) ||
        vocab.is_terminal(kThink))
      throw ConfigError("env.vocab: parity environments use {THINK, ANS0, ANS1} with answers terminal");
  }

  FeatureLayout layout() const {
    FeatureLayout l;
    l.position_slots = t_max + 1;
    l.parity_offset = l.position_slots;
    l.ready_offset = l.parity_offset + 2;
    l.dim = l.ready_offset + 2;
    return l;
  }

  int feature_dim() const { return layout().dim; }
  int action_dim() const { return static_cast<int>(vocab.size()); }
  std::int64_t num_prompts() const { return std::int64_t{1} << n_bits; }
};

inline EnvSpec parity_chain(int n_bits, int t_max) {
  EnvSpec s;
  s.kind = "parity_chain";
  s.n_bits = n_bits;
  s.t_max = t_max;
  return s;
}

inline EnvSpec tiny_chain() {
  EnvSpec s = parity_chain(2, 4);
  s.kind = "tiny_chain";
  return s;
}

/// Bit i (0-based, i < n_bits) of the prompt, read left to right: prompt 0b101 with n = 3 is "101".
inline int prompt_bit(const EnvSpec& spec, int prompt_id, int i) {
  return (prompt_id >> (spec.n_bits - 1 - i)) & 1;
}

/// Parity of the first `count` prompt bits.
inline int running_parity(const EnvSpec& spec, int prompt_id, int count) {
  int p = 0;
  for (int i = 0; i < std::min(count, spec.n_bits); ++i) p ^= prompt_bit(spec, prompt_id, i);
  return p;
}

inline int prompt_parity(const EnvSpec& spec, int prompt_id) {
  return running_parity(spec, prompt_id, spec.n_bits);
}

inline Token correct_answer(const EnvSpec& spec, int prompt_id) {
  return prompt_parity(spec, prompt_id) == 0 ? kAns0 : kAns1;
}

inline std::vector<double> encode_features(const EnvSpec& spec, int prompt_id, int position) {
  const auto l = spec.layout();
  std::vector<double> x(static_cast<std::size_t>(l.dim), 0.0);
  x[static_cast<std::size_t>(std::min(position, spec.t_max))] = 1.0;
  x[static_cast<std::size_t>(l.parity_offset + running_parity(spec, prompt_id, position))] = 1.0;
  x[static_cast<std::size_t>(l.ready_offset + (position >= spec.n_bits ? 1 : 0))] = 1.0;
  return x;
}

struct State {
  int prompt_id = 0;
  std::vector<Token> emitted;
  int position = 0;
  std::vector<double> features;
  bool finished = false;

  bool operator==(const State&) const = default;
};

inline int prompt_from_seed(const EnvSpec& spec, std::uint64_t prompt_seed) {
  return static_cast<int>(detail::mix64(prompt_seed ^ 0x5eedULL) &
                          static_cast<std::uint64_t>(spec.num_prompts() - 1));
}

inline State initial_state(const EnvSpec& spec, int prompt_id) {
  if (prompt_id < 0 || prompt_id >= spec.num_prompts()) throw UsageError("initial_state: prompt id out of range");
  State s;
  s.prompt_id = prompt_id;
  s.features = encode_features(spec, prompt_id, 0);
  return s;
}

inline State reset(const EnvSpec& spec, std::int64_t prompt_seed) {
  spec.validate();
  if (prompt_seed < 0) throw UsageError("reset: prompt_seed must be >= 0");
  return initial_state(spec, prompt_from_seed(spec, static_cast<std::uint64_t>(prompt_seed)));
}

/// Rule-based verifier: +reward_correct iff the final token is the right answer.
/// Truncated or malformed responses score reward_incorrect.
inline double verify(const EnvSpec& spec, int prompt_id, std::span<const Token> emitted) {
  if (emitted.empty()) return spec.reward_incorrect;
  const Token last = emitted.back();
  if (!spec.vocab.is_terminal(last)) return spec.reward_incorrect;
  return last == correct_answer(spec, prompt_id) ? spec.reward_correct : spec.reward_incorrect;
}

struct StepResult {
  State next;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;
};

inline StepResult step(const EnvSpec& spec, const State& state, Token action) {
  if (state.finished) throw UsageError("step: episode already finished");
  if (!spec.vocab.contains(action)) throw UsageError("step: action outside vocabulary");
  StepResult out;
  out.next.prompt_id = state.prompt_id;
  out.next.emitted = state.emitted;
  out.next.emitted.push_back(action);
  out.next.position = state.position + 1;
  out.next.features = encode_features(spec, state.prompt_id, out.next.position);
  const bool terminal = spec.vocab.is_terminal(action);
  out.truncated = !terminal && out.next.position >= spec.t_max;
  out.done = terminal || out.truncated;
  out.next.finished = out.done;
  if (out.done) out.reward = verify(spec, state.prompt_id, out.next.emitted);
  return out;
}

}  // namespace vcppo
