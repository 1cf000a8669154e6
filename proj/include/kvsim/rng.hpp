#pragma once

#include <cstdint>
#include <string_view>

namespace kvsim {

/// Counter-based random stream. Output i is a SplitMix64 finalizer applied to
/// key + i, so a stream is fully described by (key, counter) and children
/// derived by name never perturb their parent.
class RandomStream {
 public:
  RandomStream() = default;
  RandomStream(std::uint64_t seed, std::string_view name);

  /// Independent child stream keyed by this stream's key and `name`.
  RandomStream split(std::string_view name) const;
  RandomStream split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal(double mean, double stddev);
  double exponential(double rate);
  double lognormal(double mu, double sigma);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  explicit RandomStream(std::uint64_t key) : key_(key) {}

  std::uint64_t key_ = 0x9e3779b97f4a7c15ULL;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_name(std::string_view name);

}  // namespace kvsim
