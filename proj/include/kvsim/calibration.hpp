#pragma once

#include <memory>
#include <vector>

#include "kvsim/probe.hpp"
#include "kvsim/sim.hpp"

namespace kvsim {

/// Occupancy levels held by the white-box filler while probes record ITL.
struct CalibrationPlan {
  std::vector<double> targets = {0.05, 0.15, 0.25, 0.35, 0.45, 0.55,
                                 0.65, 0.75, 0.85, 0.95, 1.0};
  Micros horizon_us = 60 * kMicrosPerSecond;
  int repeats = 1;

  /// One target at every bin center plus a saturated run.
  static CalibrationPlan for_bins(int n_bins, Micros horizon_us);
};

/// The calibration run for one target: same node, no benign traffic, a
/// usage-hold attacker with probes.
SimConfig calibration_config(const SimConfig& node, double target, std::uint64_t seed,
                             Micros horizon_us);

/// Labeled probe windows from every (target, repeat) run.
std::vector<LabeledSample> collect_probe_samples(const SimConfig& node,
                                                 const CalibrationPlan& plan);

/// Trains on all collected samples. Results are memoized per node
/// configuration for the life of the process.
std::shared_ptr<const ProbeModel> auto_probe_model(const SimConfig& node);

/// Model for a fill-squeeze attacker (loaded or auto-trained); null otherwise.
std::shared_ptr<const ProbeModel> resolve_probe_model(const SimConfig& config);

}  // namespace kvsim
