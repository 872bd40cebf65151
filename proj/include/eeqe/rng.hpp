#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace eeqe {

/// Counter-based generator: the n-th output is the SplitMix64 finalizer
/// applied to `key + (n + 1) * 0x9E3779B97F4A7C15`. Outputs depend only on
/// (key, n), so streams are reproducible across platforms and can be derived
/// per module, per segment or per pool without sharing state.
///
/// Normal deviates use the Box-Muller transform; both deviates of a pair are
/// consumed so the stream position after k normals is deterministic.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) : key_(key) {}

  /// Stream for (seed, name, index). Distinct names or indices give
  /// statistically independent streams.
  static CounterRng derive(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace eeqe
