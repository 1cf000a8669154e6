#pragma once

#include <cstdint>

#include "kvsim/rng.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

/// Iteration timing parameters. Decode cost is bandwidth bound: every
/// iteration streams the KV history of the whole running batch from HBM.
struct LatencyModelConfig {
  /// Bytes of KV state per context token, summed over layers and heads.
  double kv_bytes_per_token = 147456.0;
  double bw_hbm = 864e9;   // bytes/s
  double bw_pcie = 32e9;   // bytes/s
  double prefill_us_per_token = 30.0;
  double decode_floor_us = 10000.0;
  double noise_stddev_frac = 0.05;

  void validate() const;
};

struct BatchLoad {
  std::int64_t total_ctx_tokens = 0;
  std::int64_t prefill_tokens = 0;
  double swap_bytes = 0.0;
};

class LatencyModel {
 public:
  static constexpr double kNoiseClampLo = 0.5;
  static constexpr double kNoiseClampHi = 2.0;

  LatencyModel(const LatencyModelConfig& config, RandomStream noise);

  /// floor + ctx*bytes/bw_hbm + prefill*us_per_token + swap/bw_pcie, in µs,
  /// without jitter.
  double mean_duration_us(const BatchLoad& load) const;

  /// Jittered duration rounded to whole microseconds, never below 1.
  Micros iteration_duration(const BatchLoad& load);

  double decode_term_us(std::int64_t ctx_tokens) const;
  double swap_bytes_for_blocks(std::int64_t blocks, std::int32_t block_size) const;

  const LatencyModelConfig& config() const { return config_; }

 private:
  LatencyModelConfig config_;
  RandomStream noise_;
};

/// Gap recorded by each request that emitted a token during an iteration.
inline Micros itl_for_iteration(Micros duration_us) { return duration_us; }

}  // namespace kvsim
