#include "kvsim/calibration.hpp"

#include <map>
#include <mutex>

#include "kvsim/config.hpp"

namespace kvsim {

CalibrationPlan CalibrationPlan::for_bins(int n_bins, Micros horizon_us) {
  CalibrationPlan plan;
  plan.horizon_us = horizon_us;
  plan.targets.clear();
  for (int b = 0; b < n_bins; ++b) plan.targets.push_back((b + 0.5) / n_bins);
  plan.targets.push_back(1.0);
  return plan;
}

SimConfig calibration_config(const SimConfig& node, double target, std::uint64_t seed,
                             Micros horizon_us) {
  SimConfig c = node;
  c.name = node.name + "-calibration";
  c.seed = seed;
  c.horizon_us = horizon_us;
  c.trace_output.clear();
  c.trace.token_events = false;
  c.workload = WorkloadConfig{};
  c.workload.arrival = ArrivalKind::None;
  c.workload.n_clients = 0;
  AttackerConfig a;
  a.strategy = Strategy::UsageHold;
  a.hold_target = target;
  a.probes_in_flight = std::max<std::int64_t>(1, node.attacker.probes_in_flight);
  a.c_sat = node.attacker.c_sat;
  a.hold_max_prompt = node.attacker.hold_max_prompt;
  c.attacker = a;
  // Calibration measures the node, not its defenses.
  c.scheduler.tenant_quota = TenantQuota{};
  c.scheduler.output_cap.reset();
  return c;
}

std::vector<LabeledSample> collect_probe_samples(const SimConfig& node,
                                                 const CalibrationPlan& plan) {
  std::vector<LabeledSample> out;
  std::uint64_t idx = 0;
  for (int rep = 0; rep < plan.repeats; ++rep) {
    for (double target : plan.targets) {
      const std::uint64_t seed = mix64(node.calibration_seed ^ mix64(0xca11b ^ idx++));
      Simulation sim(calibration_config(node, target, seed, plan.horizon_us));
      const RunReport r = sim.run();
      const auto s = r.labeled_samples();
      out.insert(out.end(), s.begin(), s.end());
    }
  }
  return out;
}

namespace {

std::string node_key(const SimConfig& c) {
  SimConfig k = calibration_config(c, 0.0, c.calibration_seed, c.calibration_horizon_us);
  k.name.clear();
  k.probe.holdout_fraction = c.probe.holdout_fraction;
  return to_json(k).dump();
}

}  // namespace

std::shared_ptr<const ProbeModel> auto_probe_model(const SimConfig& node) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const ProbeModel>> cache;
  const std::string key = node_key(node);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const auto plan = CalibrationPlan::for_bins(node.probe.n_bins, node.calibration_horizon_us);
  auto model = std::make_shared<const ProbeModel>(
      train(collect_probe_samples(node, plan), node.probe));
  std::lock_guard lock(mu);
  return cache.emplace(key, model).first->second;
}

std::shared_ptr<const ProbeModel> resolve_probe_model(const SimConfig& config) {
  if (config.attacker.strategy != Strategy::FillSqueeze) return nullptr;
  if (config.probe_model == "auto") return auto_probe_model(config);
  return std::make_shared<const ProbeModel>(ProbeModel::load(config.probe_model));
}

}  // namespace kvsim
