#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "json.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/event_log.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

struct MetricsRecord {
  RequestId request_id = 0;
  TenantClass tenant_class = TenantClass::Benign;
  Micros arrival_us = 0;
  std::optional<Micros> ttft_us;
  /// Mean gap between output tokens; absent with fewer than two tokens.
  std::optional<double> tpot_us;
  std::optional<Micros> itl_p99_us;
  std::optional<Micros> e2e_us;
  std::int64_t n_output_tokens = 0;
  std::int64_t preempt_count = 0;
  bool finished = false;
};

/// Record for a finished request. Throws NotFinished otherwise.
MetricsRecord finalize(const Request& r);
/// Record for a request in any state; unfinished requests have no E2E/TPOT.
MetricsRecord observe(const Request& r);

/// Nearest-rank percentile: sorted[ceil(p/100 * n) - 1]. Throws EmptyInput.
template <class T>
T percentile(std::vector<T> values, double p) {
  if (values.empty()) throw EmptyInput("percentile of an empty list");
  if (!(p > 0.0 && p <= 100.0)) throw ConfigError("percentile p must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  double p99 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Nearest-rank median/P99; nullopt for an empty list.
std::optional<Summary> summarize(const std::vector<double>& values);

struct ClassReport {
  std::int64_t submitted = 0;
  std::int64_t rejected = 0;
  std::int64_t finished = 0;
  std::int64_t in_flight = 0;
  /// Accepted but no token by the end of the run.
  std::int64_t starved = 0;
  std::int64_t output_tokens = 0;
  /// Preemptions suffered by requests of this class.
  std::int64_t preempted = 0;
  std::optional<Summary> ttft_us;
  std::optional<Summary> tpot_us;
  std::optional<Summary> e2e_us;
};

struct KvStats {
  double c_sat = 0.975;
  Micros total_us = 0;
  Micros busy_us = 0;
  std::int64_t iterations = 0;
  std::int64_t hol_blocked_steps = 0;
  /// Upward crossings of c_sat between consecutive iterations.
  std::int64_t csat_crossings = 0;
  /// Time spent in each 5%-wide usage bin; idle time counts as usage 0.
  std::vector<Micros> histogram_us = std::vector<Micros>(20, 0);
  Micros band_us = 0;
  double usage_time_integral = 0.0;

  double band_occupancy() const;
  double mean_usage() const;
};

/// Time-weighted KV statistics fed one iteration at a time.
class KvAccumulator {
 public:
  explicit KvAccumulator(double c_sat) { stats_.c_sat = c_sat; }

  void iteration(Micros start_us, Micros duration_us, double usage, bool blocked);
  void close(Micros end_us);
  const KvStats& stats() const { return stats_; }

 private:
  KvStats stats_;
  Micros last_end_us_ = 0;
  double prev_usage_ = 0.0;
};

struct Slowdown {
  double ttft = 1.0;
  double tpot = 1.0;
};

struct AggregateReport {
  std::map<TenantClass, ClassReport> classes;
  std::int64_t total_preemptions = 0;
  KvStats kv;
  /// Attacker summary, filled in by the simulator.
  nlohmann::json attacker = nlohmann::json::object();
  std::optional<Slowdown> slowdown;

  const ClassReport& cls(TenantClass c) const;
  nlohmann::json to_json() const;
  static AggregateReport from_json(const nlohmann::json& j);
};

struct RejectedCounts {
  std::map<TenantClass, std::int64_t> by_class;
};

AggregateReport aggregate(const std::vector<MetricsRecord>& records,
                          const RejectedCounts& rejected, const KvStats& kv);

/// Same report rebuilt from the event trace alone.
AggregateReport aggregate_from_events(const EventLog& log, double c_sat);

/// Benign mean TTFT/TPOT ratios. Throws ZeroBaseline when the baseline mean
/// is zero or missing.
Slowdown slowdown(const AggregateReport& report, const AggregateReport& baseline);

}  // namespace kvsim
