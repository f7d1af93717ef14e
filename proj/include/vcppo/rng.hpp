#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <vector>

namespace vcppo {

namespace detail {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Stream identifiers used when deriving counter-based generators.
enum class Purpose : std::uint64_t {
  collect = 1,
  shuffle = 2,
  pretrain = 3,
  heldout = 4,
  init = 5,
  oracle = 6,
  study = 7,
  group_prompt = 8,
};

/// Counter-based generator. Output i of a stream is a pure function of (key, i), where the key is
/// derived from a seed and a list of stream ids. Streams for different (worker, round, ...) tuples
/// are independent and can be created anywhere without shared state.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {})
      : key_(detail::mix64(seed)) {
    for (auto id : stream) key_ = detail::mix64(key_ ^ detail::mix64(id + 0x632be59bd9b4e019ULL));
  }

  CounterRng(std::uint64_t seed, Purpose purpose, std::initializer_list<std::uint64_t> stream = {})
      : CounterRng(seed, {static_cast<std::uint64_t>(purpose)}) {
    for (auto id : stream) key_ = detail::mix64(key_ ^ detail::mix64(id + 0x632be59bd9b4e019ULL));
  }

  std::uint64_t next_u64() { return detail::mix64(key_ ^ detail::mix64(counter_++)); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  std::uint64_t counter() const { return counter_; }
  std::uint64_t key() const { return key_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle with a fixed algorithm, so orderings match across standard libraries.
template <typename T>
void shuffle_in_place(std::vector<T>& items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace vcppo
