#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "kvsim/rng.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

/// Lognormal length law parameterized by its median; samples are rounded and
/// clamped into [1, max_len].
struct LogNormalSpec {
  double median = 100.0;
  double sigma = 0.5;

  std::int64_t sample(RandomStream& rng, std::int64_t max_len) const;
};

struct LengthDist {
  std::string name = "alpaca-like";
  LogNormalSpec prompt{50.0, 0.6};
  LogNormalSpec output{250.0, 0.6};
};

/// "alpaca-like" or "sharegpt-like". Throws UnknownPreset.
LengthDist preset(std::string_view name);

enum class ArrivalKind { None, Poisson, Closed, Trace, Profile };
enum class TrafficTier { Low, Medium, High };

std::string_view to_string(ArrivalKind k);
std::string_view to_string(TrafficTier t);
/// Conversations per hour per client for the three hour-of-day tiers.
double profile_rate_per_hour(TrafficTier tier);

struct WorkloadConfig {
  ArrivalKind arrival = ArrivalKind::Poisson;
  /// Per-client rate for Poisson arrivals.
  double rate_per_s = 0.5;
  TrafficTier tier = TrafficTier::Medium;
  std::string trace_path;
  /// Closed-loop think time between a finish and the client's next request.
  Micros think_time_us = 0;
  LengthDist lengths = preset("alpaca-like");
  std::int64_t n_clients = 1;
  Micros start_us = 0;

  void validate() const;
  /// Aggregate request rate across clients; 0 for closed-loop or trace modes.
  double total_rate_per_s() const;
};

struct TraceRow {
  Micros t_us = 0;
  std::int64_t prompt_len = 1;
  std::int64_t output_len = 1;
  TenantId tenant = 0;

  bool operator==(const TraceRow&) const = default;
};

/// CSV with header `t_us,prompt_len,output_len,tenant`. Throws IoError or
/// TraceParseError (with the offending line number).
std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path);
std::vector<TraceRow> parse_trace_csv(std::string_view text);
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows);

/// Benign arrival spec handed to the simulator, which assigns request ids.
struct Arrival {
  Micros t_us = 0;
  std::int64_t prompt_len = 1;
  std::int64_t output_len = 1;
  TenantId tenant = 0;
  std::int64_t client = 0;
};

/// Tenant ids for benign clients start here; attacker identities sit below.
inline constexpr TenantId kBenignTenantBase = 1000;

class Workload {
 public:
  Workload(const WorkloadConfig& config, RandomStream rng, Micros horizon_us,
           std::int64_t max_model_len);

  /// Next arrival in time order, or nullopt once past the horizon or the
  /// trace is exhausted. Closed-loop clients only re-arm via on_finished().
  std::optional<Arrival> next_arrival();
  std::optional<Micros> peek_time() const;
  void on_finished(std::int64_t client, Micros t_us);

  const WorkloadConfig& config() const { return config_; }

 private:
  struct Pending {
    Micros t_us;
    std::int64_t client;
    bool operator>(const Pending& o) const {
      return t_us != o.t_us ? t_us > o.t_us : client > o.client;
    }
  };

  Arrival sample_request(std::int64_t client, Micros t);
  void schedule_next(std::int64_t client, Micros after);

  WorkloadConfig config_;
  RandomStream rng_;
  Micros horizon_us_;
  std::int64_t max_model_len_;
  double per_client_rate_ = 0.0;
  std::vector<RandomStream> client_gap_rng_;
  std::vector<RandomStream> client_len_rng_;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> pending_;
  std::vector<TraceRow> trace_;
  std::size_t trace_pos_ = 0;
};

}  // namespace kvsim
