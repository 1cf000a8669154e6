#include "kvsim/scenario.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "kvsim/calibration.hpp"
#include "kvsim/config.hpp"
#include "kvsim/errors.hpp"

namespace kvsim {

using nlohmann::json;

namespace {

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    parts.push_back(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (const auto& p : parts) {
    if (p.empty()) throw ConfigError("malformed key path '" + path + "'");
  }
  return parts;
}

const json* lookup(const json& tree, const std::vector<std::string>& parts) {
  const json* cur = &tree;
  for (const auto& p : parts) {
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(p);
    if (it == cur->end()) return nullptr;
    cur = &*it;
  }
  return cur;
}

void assign(json& tree, const std::vector<std::string>& parts, const json& value) {
  json* cur = &tree;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*cur)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) {
      throw ConfigError("key '" + parts[i] + "' is not a table");
    }
    cur = &next;
  }
  (*cur)[parts.back()] = value;
}

void check_sweep_type(const std::string& param, const json& value) {
  const auto parts = split_path(param);
  json proto;
  if (parts.size() == 2 && parts[0] == "population") {
    if (parts[1] == "users") proto = 1;
    else if (parts[1] == "malicious_ratio") proto = 0.5;
    else throw ConfigError("sweep parameter '" + param + "' is not a known key");
  } else {
    const json defaults = to_json(SimConfig{});
    const json* p = lookup(defaults, parts);
    if (!p) throw ConfigError("sweep parameter '" + param + "' is not a known key");
    proto = *p;
  }
  const auto bad = [&](const char* want) {
    return ConfigError(fmt::format("sweep value {} for '{}' is not {}", value.dump(), param, want));
  };
  if (proto.is_object()) throw ConfigError("sweep parameter '" + param + "' names a table");
  if (proto.is_number_integer() && !value.is_number_integer()) throw bad("an integer");
  if (proto.is_number_float() && !value.is_number()) throw bad("a number");
  if (proto.is_string() && !value.is_string()) throw bad("a string");
  if (proto.is_boolean() && !value.is_boolean()) throw bad("a boolean");
  if (proto.is_null() && !value.is_number()) throw bad("a number");
}

std::string label_for(const std::string& param, const json& value) {
  const std::string leaf = param.substr(param.rfind('.') + 1);
  return leaf + "=" + (value.is_string() ? value.get<std::string>() : value.dump());
}

}  // namespace

Scenario scenario_from_tree(const json& tree) {
  if (!tree.is_object()) throw ConfigError("scenario must be a table");
  Scenario s;
  s.tree = tree;
  if (auto it = tree.find("name"); it != tree.end()) {
    if (!it->is_string()) throw ConfigError("key 'name': expected string");
    s.name = it->get<std::string>();
  } else {
    s.name = "scenario";
    s.tree["name"] = s.name;
  }
  if (s.name.empty() || s.name.find('/') != std::string::npos) {
    throw ConfigError("key 'name' must be a non-empty name without '/'");
  }
  if (auto it = tree.find("baseline"); it != tree.end()) {
    if (!it->is_string()) throw ConfigError("key 'baseline': expected string");
    s.baseline_ref = it->get<std::string>();
    s.tree.erase("baseline");
  }
  if (auto it = tree.find("sweep"); it != tree.end()) {
    if (!it->is_object()) throw ConfigError("key 'sweep' must be a table");
    SweepSpec sw;
    for (const auto& [k, v] : it->items()) {
      if (k == "parameter") {
        if (!v.is_string()) throw ConfigError("key 'sweep.parameter': expected string");
        sw.parameter = v.get<std::string>();
      } else if (k == "values") {
        if (!v.is_array() || v.empty()) throw ConfigError("key 'sweep.values': expected non-empty array");
        sw.values = v.get<std::vector<json>>();
      } else {
        throw ConfigError("unknown key 'sweep." + k + "'");
      }
    }
    if (sw.parameter.empty()) throw ConfigError("key 'sweep.parameter' is required");
    if (sw.values.empty()) throw ConfigError("key 'sweep.values' is required");
    for (const auto& v : sw.values) check_sweep_type(sw.parameter, v);
    s.sweep = std::move(sw);
    s.tree.erase("sweep");
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_tree(load_config_tree(path));
}

json apply_population(json tree) {
  auto it = tree.find("population");
  if (it == tree.end()) return tree;
  const json pop = *it;
  tree.erase("population");
  if (!pop.is_object()) throw ConfigError("key 'population' must be a table");
  std::int64_t users = 0;
  double ratio = 0.0;
  for (const auto& [k, v] : pop.items()) {
    if (k == "users") {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
        throw ConfigError("key 'population.users': expected integer >= 1");
      }
      users = v.get<std::int64_t>();
    } else if (k == "malicious_ratio") {
      if (!v.is_number() || v.get<double>() < 0 || v.get<double>() > 1) {
        throw ConfigError("key 'population.malicious_ratio': expected number in [0, 1]");
      }
      ratio = v.get<double>();
    } else {
      throw ConfigError("unknown key 'population." + k + "'");
    }
  }
  if (users == 0) throw ConfigError("key 'population.users' is required");
  const std::int64_t benign = std::llround((1.0 - ratio) * static_cast<double>(users));
  const std::int64_t attackers = users - benign;

  if (lookup(tree, {"workload", "clients"})) {
    throw ConfigError("key 'workload.clients' conflicts with [population]");
  }
  if (lookup(tree, {"attacker", "identities"})) {
    throw ConfigError("key 'attacker.identities' conflicts with [population]");
  }
  assign(tree, {"workload", "clients"}, benign);
  assign(tree, {"attacker", "identities"}, std::max<std::int64_t>(1, attackers));
  if (attackers == 0) {
    assign(tree, {"attacker", "strategy"}, "none");
    return tree;
  }
  const json* strategy = lookup(tree, {"attacker", "strategy"});
  if (strategy && *strategy == "fixed-interval" &&
      !lookup(tree, {"attacker", "fixed_interval", "period_s"})) {
    // Attacker identities send at the benign per-client rate.
    WorkloadConfig defaults;
    double rate = defaults.rate_per_s;
    if (const json* r = lookup(tree, {"workload", "rate_per_s"}); r && r->is_number()) {
      rate = r->get<double>();
    }
    const json* arrival = lookup(tree, {"workload", "arrival"});
    if (arrival && *arrival == "profile") {
      TrafficTier tier = defaults.tier;
      if (const json* t = lookup(tree, {"workload", "tier"}); t && t->is_string()) {
        for (auto c : {TrafficTier::Low, TrafficTier::Medium, TrafficTier::High}) {
          if (to_string(c) == t->get<std::string>()) tier = c;
        }
      }
      rate = profile_rate_per_hour(tier) / 3600.0;
    }
    const double period = 1.0 / (rate * static_cast<double>(attackers));
    assign(tree, {"attacker", "fixed_interval", "period_s"}, std::round(period * 1e6) / 1e6);
  }
  return tree;
}

std::vector<ScenarioPoint> expand(const Scenario& scenario,
                                  std::optional<std::uint64_t> seed_override) {
  std::vector<std::pair<std::string, json>> trees;
  if (!scenario.sweep) {
    trees.emplace_back("base", scenario.tree);
  } else {
    const auto parts = split_path(scenario.sweep->parameter);
    for (const json& v : scenario.sweep->values) {
      json t = scenario.tree;
      assign(t, parts, v);
      trees.emplace_back(label_for(scenario.sweep->parameter, v), std::move(t));
    }
  }
  std::vector<ScenarioPoint> points;
  for (auto& [label, t] : trees) {
    json resolved = apply_population(std::move(t));
    if (seed_override) {
      if (*seed_override > static_cast<std::uint64_t>(INT64_MAX)) {
        throw ConfigError("--seed must fit in a signed 64-bit integer");
      }
      assign(resolved, {"sim", "seed"}, static_cast<std::int64_t>(*seed_override));
    }
    points.push_back({label, sim_config_from_json(resolved)});
  }
  return points;
}

std::size_t sweep_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("KVSIM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = static_cast<std::size_t>(v);
  }
  return n;
}

std::vector<RunReport> run_points(const std::vector<ScenarioPoint>& points,
                                  std::size_t threads,
                                  const std::optional<std::filesystem::path>& out_root) {
  // Models are shared across points and trained once, up front.
  std::vector<std::shared_ptr<const ProbeModel>> models;
  for (const auto& p : points) models.push_back(resolve_probe_model(p.config));

  std::vector<RunReport> reports(points.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      try {
        Simulation sim(points[i].config, models[i]);
        RunReport r = sim.run();
        r.point = points[i].label;
        if (out_root) {
          write_run_outputs(r, *out_root / points[i].config.name / points[i].label);
        }
        reports[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, points.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return reports;
}

}  // namespace kvsim
