#include "kvsim/rng.hpp"

#include <cmath>
#include <numbers>


namespace kvsim {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_name(std::string_view name) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RandomStream::RandomStream(std::uint64_t seed, std::string_view name)
    : key_(mix64(mix64(seed) ^ hash_name(name))) {}

RandomStream RandomStream::split(std::string_view name) const {
  return RandomStream(mix64(key_ ^ mix64(hash_name(name))));
}

RandomStream RandomStream::split(std::uint64_t index) const {
  return RandomStream(mix64(key_ + mix64(index ^ 0x5851f42d4c957f2dULL)));
}

std::uint64_t RandomStream::next_u64() {
  return mix64(key_ + 0x632be59bd9b4e019ULL * ++counter_);
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::int64_t RandomStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Lemire-free modulo is fine here; span is tiny relative to 2^64.
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

double RandomStream::normal(double mean, double stddev) {
  // Box-Muller, one variate per call so the counter advances by exactly two.
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  const double z = std::sqrt(-2.0 * std::log(u1)) *
                   std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

double RandomStream::exponential(double rate) {
  const double u = 1.0 - uniform();  // (0, 1]
  return -std::log(u) / rate;
}

double RandomStream::lognormal(double mu, double sigma) {
  return std::exp(normal(mu, sigma));
}

}  // namespace kvsim
