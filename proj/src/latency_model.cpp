#include "kvsim/latency_model.hpp"

#include <algorithm>
#include <cmath>

#include "kvsim/errors.hpp"

namespace kvsim {

void LatencyModelConfig::validate() const {
  if (!(kv_bytes_per_token > 0)) throw ConfigError("latency.kv_bytes_per_token must be > 0");
  if (!(bw_hbm > 0)) throw ConfigError("latency.bw_hbm must be > 0");
  if (!(bw_pcie > 0)) throw ConfigError("latency.bw_pcie must be > 0");
  if (!(prefill_us_per_token > 0)) throw ConfigError("latency.prefill_us_per_token must be > 0");
  if (!(decode_floor_us >= 0)) throw ConfigError("latency.decode_floor_us must be >= 0");
  if (!(noise_stddev_frac >= 0)) throw ConfigError("latency.noise_stddev_frac must be >= 0");
}

LatencyModel::LatencyModel(const LatencyModelConfig& config, RandomStream noise)
    : config_(config), noise_(noise) {}

double LatencyModel::decode_term_us(std::int64_t ctx_tokens) const {
  return static_cast<double>(ctx_tokens) * config_.kv_bytes_per_token /
         config_.bw_hbm * 1e6;
}

double LatencyModel::swap_bytes_for_blocks(std::int64_t blocks,
                                           std::int32_t block_size) const {
  return static_cast<double>(blocks) * block_size * config_.kv_bytes_per_token;
}

double LatencyModel::mean_duration_us(const BatchLoad& load) const {
  return config_.decode_floor_us + decode_term_us(load.total_ctx_tokens) +
         static_cast<double>(load.prefill_tokens) * config_.prefill_us_per_token +
         load.swap_bytes / config_.bw_pcie * 1e6;
}

Micros LatencyModel::iteration_duration(const BatchLoad& load) {
  double d = mean_duration_us(load);
  if (config_.noise_stddev_frac > 0) {
    const double f = std::clamp(noise_.normal(1.0, config_.noise_stddev_frac),
                                kNoiseClampLo, kNoiseClampHi);
    d *= f;
  }
  return std::max<Micros>(1, std::llround(d));
}

}  // namespace kvsim
