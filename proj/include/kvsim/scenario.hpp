#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kvsim/sim.hpp"

namespace kvsim {

struct SweepSpec {
  /// Dotted key path, e.g. "population.malicious_ratio".
  std::string parameter;
  std::vector<nlohmann::json> values;
};

struct Scenario {
  std::string name;
  /// Configuration tree without the scenario-level keys.
  nlohmann::json tree;
  std::optional<SweepSpec> sweep;
  std::optional<std::string> baseline_ref;
};

Scenario scenario_from_tree(const nlohmann::json& tree);
Scenario load_scenario(const std::filesystem::path& path);

/// Maps [population] users / malicious_ratio onto benign clients, attacker
/// identities and (for fixed-interval baselines without an explicit period)
/// the injection period. Returns the tree with the table removed.
nlohmann::json apply_population(nlohmann::json tree);

struct ScenarioPoint {
  std::string label;
  SimConfig config;
};

/// One point ("base") without a sweep, else one per sweep value.
std::vector<ScenarioPoint> expand(const Scenario& scenario,
                                  std::optional<std::uint64_t> seed_override = std::nullopt);

/// Worker count for sweeps: KVSIM_THREADS if set, else hardware concurrency.
std::size_t sweep_threads();

/// Runs points in parallel; when `out_root` is set each point's outputs go
/// to out_root/<scenario>/<label>/.
std::vector<RunReport> run_points(const std::vector<ScenarioPoint>& points,
                                  std::size_t threads,
                                  const std::optional<std::filesystem::path>& out_root);

}  // namespace kvsim
