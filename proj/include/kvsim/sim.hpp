#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kvsim/attacker.hpp"
#include "kvsim/event_log.hpp"
#include "kvsim/kv_manager.hpp"
#include "kvsim/latency_model.hpp"
#include "kvsim/metrics.hpp"
#include "kvsim/probe.hpp"
#include "kvsim/scheduler.hpp"
#include "kvsim/workload.hpp"

namespace kvsim {

struct TraceConfig {
  /// Log every emitted token, not only each request's first.
  bool token_events = false;
};

struct SimConfig {
  std::string name = "scenario";
  std::uint64_t seed = 42;
  Micros horizon_us = 60 * kMicrosPerSecond;
  Micros idle_tick_us = 100;
  std::int64_t max_model_len = 8192;
  KvConfig kv;
  SchedulerConfig scheduler;
  LatencyModelConfig latency;
  WorkloadConfig workload;
  AttackerConfig attacker;
  ProbeConfig probe;
  /// "auto" trains a model from calibration runs on this node; anything else
  /// is a model file path.
  std::string probe_model = "auto";
  Micros calibration_horizon_us = 60 * kMicrosPerSecond;
  /// Calibration runs use their own seed so every run seed sees one model.
  std::uint64_t calibration_seed = 7;
  TraceConfig trace;
  /// Directory the free `run()` writes outputs to; empty to skip.
  std::string trace_output;

  void validate() const;
  /// Expected iteration time with the pool filled to c_sat.
  Micros default_t_wait_us() const;
};

struct SimClock {
  Micros now = 0;
  std::int64_t iteration_index = 0;
};

struct StepSummary {
  Micros start_us = 0;
  Micros duration_us = 0;
  bool idle = false;
  ScheduleOutput schedule;
};

struct LabeledWindow {
  ProbeWindowRecord window;
  double true_usage = 0.0;
  int true_bin = 0;
};

struct SeriesPoint {
  Micros t_us = 0;
  double value = 0.0;
};

struct RunReport {
  SimConfig config;
  std::string point = "base";
  SimClock clock;
  AggregateReport aggregate;
  EventLog log;
  std::vector<MetricsRecord> records;
  std::vector<SeriesPoint> kv_usage;
  std::vector<SeriesPoint> queue_waiting;
  std::vector<SeriesPoint> queue_running;
  std::vector<SeriesPoint> itl;
  std::vector<LabeledWindow> probe_windows;

  nlohmann::json to_json() const;
  std::vector<LabeledSample> labeled_samples() const;
};

class Simulation {
 public:
  explicit Simulation(const SimConfig& config,
                      std::shared_ptr<const ProbeModel> model = nullptr);

  bool done() const;
  StepSummary step_once();
  /// Steps until done and assembles the report.
  RunReport run();

  const SimClock& clock() const { return clock_; }
  const Scheduler& scheduler() const { return scheduler_; }
  const EventLog& log() const { return log_; }
  const AttackerAgent& attacker() const { return attacker_; }
  const SimConfig& config() const { return config_; }

 private:
  void deliver_arrivals();
  void poll_attacker();
  void submit(Request r, std::optional<AttackDispatch> dispatch);
  void log_schedule(const ScheduleOutput& out, Micros start, Micros duration);
  void after_iteration(const ScheduleOutput& out, Micros start, Micros duration);
  double usage_at(Micros t) const;
  nlohmann::json attacker_summary() const;

  SimConfig config_;
  SimClock clock_;
  Scheduler scheduler_;
  LatencyModel latency_;
  Workload workload_;
  AttackerAgent attacker_;
  EventLog log_;
  KvAccumulator kv_acc_;
  RejectedCounts rejected_;
  RequestId next_id_ = 1;
  std::map<RequestId, std::int64_t> client_of_;
  bool exhausted_ = false;

  struct IterationSample {
    Micros start = 0;
    Micros duration = 0;
    double usage = 0.0;
  };
  std::vector<IterationSample> iterations_;
  std::vector<SeriesPoint> queue_waiting_;
  std::vector<SeriesPoint> queue_running_;
  std::vector<SeriesPoint> itl_;
  std::vector<LabeledWindow> windows_;
};

/// Runs one configuration to completion, resolving the probe model when the
/// attacker needs one, and writes outputs if `trace_output` is set.
RunReport run(const SimConfig& config);

/// events.jsonl, report.json, *.csv series, requests.csv, probe_windows.csv.
void write_run_outputs(const RunReport& report, const std::filesystem::path& dir);

}  // namespace kvsim
