#include "kvsim/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "kvsim/errors.hpp"

namespace kvsim {

using nlohmann::json;

json load_config_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (path.extension() == ".json") {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  return parse_toml(text, path.string());
}

namespace {

double to_seconds(Micros us) { return static_cast<double>(us) / 1e6; }

Micros from_seconds(double s, const std::string& key) {
  if (!std::isfinite(s)) throw ConfigError("key '" + key + "' must be finite");
  return std::llround(s * 1e6);
}

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

ArrivalKind arrival_from(const std::string& s, const std::string& key) {
  for (auto k : {ArrivalKind::None, ArrivalKind::Poisson, ArrivalKind::Closed,
                 ArrivalKind::Trace, ArrivalKind::Profile}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("key '" + key + "': unknown arrival kind '" + s + "'");
}

TrafficTier tier_from(const std::string& s, const std::string& key) {
  for (auto t : {TrafficTier::Low, TrafficTier::Medium, TrafficTier::High}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("key '" + key + "': unknown tier '" + s + "'");
}

Strategy strategy_from(const std::string& s, const std::string& key) {
  for (auto t : {Strategy::None, Strategy::FillSqueeze, Strategy::FixedInterval,
                 Strategy::UsageHold}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("key '" + key + "': unknown strategy '" + s + "'");
}

RecoveryMode recovery_from(const std::string& s, const std::string& key) {
  if (s == "swap") return RecoveryMode::Swap;
  if (s == "recompute") return RecoveryMode::Recompute;
  throw ConfigError("key '" + key + "': expected \"swap\" or \"recompute\"");
}

/// A table being consumed; keys never read are reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("key '" + path_ + "' must be a table");
  }

  std::string key(std::string_view k) const {
    return path_.empty() ? std::string(k) : path_ + "." + std::string(k);
  }

  const json* find(std::string_view k) {
    auto it = j_->find(std::string(k));
    if (it == j_->end()) return nullptr;
    used_.insert(std::string(k));
    return &*it;
  }

  bool get(std::string_view k, std::int64_t& out) {
    const json* v = find(k);
    if (!v) return false;
    if (!v->is_number_integer()) throw ConfigError("key '" + key(k) + "': expected integer");
    out = v->get<std::int64_t>();
    return true;
  }
  bool get(std::string_view k, double& out) {
    const json* v = find(k);
    if (!v) return false;
    if (!v->is_number()) throw ConfigError("key '" + key(k) + "': expected number");
    out = v->get<double>();
    return true;
  }
  bool get(std::string_view k, bool& out) {
    const json* v = find(k);
    if (!v) return false;
    if (!v->is_boolean()) throw ConfigError("key '" + key(k) + "': expected boolean");
    out = v->get<bool>();
    return true;
  }
  bool get(std::string_view k, std::string& out) {
    const json* v = find(k);
    if (!v) return false;
    if (!v->is_string()) throw ConfigError("key '" + key(k) + "': expected string");
    out = v->get<std::string>();
    return true;
  }
  // Null clears an optional, matching what to_json writes for unset values.
  bool take_null(std::string_view k) {
    auto it = j_->find(std::string(k));
    if (it == j_->end() || !it->is_null()) return false;
    used_.insert(std::string(k));
    return true;
  }
  template <class T>
  bool get(std::string_view k, std::optional<T>& out) {
    if (take_null(k)) {
      out.reset();
      return true;
    }
    T v{};
    if (!get(k, v)) return false;
    out = v;
    return true;
  }
  bool get_seconds(std::string_view k, Micros& out) {
    double s = 0;
    if (!get(k, s)) return false;
    out = from_seconds(s, key(k));
    return true;
  }
  bool get_seconds(std::string_view k, std::optional<Micros>& out) {
    if (take_null(k)) {
      out.reset();
      return true;
    }
    Micros v = 0;
    if (!get_seconds(k, v)) return false;
    out = v;
    return true;
  }
  template <class T>
  bool get_int(std::string_view k, T& out) {
    std::int64_t v = 0;
    if (!get(k, v)) return false;
    out = static_cast<T>(v);
    return true;
  }

  std::optional<Section> sub(std::string_view k) {
    const json* v = find(k);
    if (!v) return std::nullopt;
    return Section(*v, key(k));
  }

  void done() const {
    for (const auto& [k, v] : j_->items()) {
      if (!used_.contains(k)) throw ConfigError("unknown key '" + key(k) + "'");
    }
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_lognormal(Section& s, LogNormalSpec& spec) {
  s.get("median", spec.median);
  s.get("sigma", spec.sigma);
  s.done();
}

}  // namespace

json to_json(const SimConfig& c) {
  const auto& q = c.scheduler.tenant_quota;
  const auto& w = c.workload;
  const auto& a = c.attacker;
  const auto& p = c.probe;
  json sim = {{"seed", static_cast<std::int64_t>(c.seed)},
              {"horizon_s", to_seconds(c.horizon_us)},
              {"idle_tick_us", c.idle_tick_us},
              {"max_model_len", c.max_model_len}};
  if (!c.trace_output.empty()) sim["trace_output"] = c.trace_output;
  return {
      {"name", c.name},
      {"sim", std::move(sim)},
      {"kv",
       {{"total_blocks", c.kv.total_blocks},
        {"block_size", c.kv.block_size_tokens},
        {"watermark_blocks", c.kv.watermark_blocks}}},
      {"scheduler",
       {{"token_budget", c.scheduler.token_budget_per_iter},
        {"recovery", to_string(c.scheduler.recovery_mode)},
        {"max_running", opt(c.scheduler.max_running)},
        {"output_cap", opt(c.scheduler.output_cap)},
        {"quota",
         {{"max_outstanding_per_tenant", opt(q.max_outstanding_per_tenant)},
          {"max_expansion_ratio", opt(q.max_expansion_ratio)}}}}},
      {"latency",
       {{"kv_bytes_per_token", c.latency.kv_bytes_per_token},
        {"bw_hbm", c.latency.bw_hbm},
        {"bw_pcie", c.latency.bw_pcie},
        {"prefill_us_per_token", c.latency.prefill_us_per_token},
        {"decode_floor_us", c.latency.decode_floor_us},
        {"noise_stddev_frac", c.latency.noise_stddev_frac}}},
      {"workload",
       {{"arrival", to_string(w.arrival)},
        {"rate_per_s", w.rate_per_s},
        {"tier", to_string(w.tier)},
        {"trace_path", w.trace_path},
        {"think_time_s", to_seconds(w.think_time_us)},
        {"preset", w.lengths.name},
        {"prompt", {{"median", w.lengths.prompt.median}, {"sigma", w.lengths.prompt.sigma}}},
        {"output", {{"median", w.lengths.output.median}, {"sigma", w.lengths.output.sigma}}},
        {"clients", w.n_clients},
        {"start_s", to_seconds(w.start_us)}}},
      {"attacker",
       {{"strategy", to_string(a.strategy)},
        {"c_sat", a.c_sat},
        {"delta_margin", a.delta_margin},
        {"delta_large", a.delta_large},
        {"delta_small", a.delta_small},
        {"t_wait_s", a.t_wait_us ? json(to_seconds(*a.t_wait_us)) : json(nullptr)},
        {"backoff", a.backoff},
        {"probes_in_flight", a.probes_in_flight},
        {"concurrency_quota", opt(a.concurrency_quota)},
        {"identities", a.identities},
        {"start_s", to_seconds(a.start_us)},
        {"price_in_cents_per_m", a.pricing.input.cents_per_million},
        {"price_out_cents_per_m", a.pricing.output.cents_per_million},
        {"hold_target", a.hold_target},
        {"hold_max_prompt", a.hold_max_prompt},
        {"fixed_interval",
         {{"period_s", to_seconds(a.fixed.period_us)}, {"pool", a.fixed.pool}}}}},
      {"probe",
       {{"bins", p.n_bins},
        {"window_len", p.window_len},
        {"min_window", p.min_window},
        {"n_trees", p.hyper.n_rounds},
        {"max_depth", p.hyper.max_depth},
        {"learning_rate", p.hyper.learning_rate},
        {"l2", p.hyper.l2},
        {"min_child_hessian", p.hyper.min_child_hessian},
        {"max_bins", p.hyper.max_bins},
        {"holdout_fraction", p.holdout_fraction},
        {"model", c.probe_model},
        {"calibration_horizon_s", to_seconds(c.calibration_horizon_us)},
        {"calibration_seed", static_cast<std::int64_t>(c.calibration_seed)}}},
      {"trace", {{"token_events", c.trace.token_events}}}};
}

std::string to_toml(const SimConfig& c) {
  return "# Resolved scenario; re-runs to identical outputs.\n" + emit_toml(to_json(c));
}

SimConfig sim_config_from_json(const json& tree) {
  SimConfig c;
  Section root(tree, "");
  root.get("name", c.name);

  if (auto s = root.sub("sim")) {
    std::int64_t seed = 0;
    if (s->get("seed", seed)) {
      if (seed < 0) throw ConfigError("key 'sim.seed' must be >= 0");
      c.seed = static_cast<std::uint64_t>(seed);
    }
    s->get_seconds("horizon_s", c.horizon_us);
    s->get("idle_tick_us", c.idle_tick_us);
    s->get("max_model_len", c.max_model_len);
    s->get("trace_output", c.trace_output);
    s->done();
  }
  if (auto s = root.sub("kv")) {
    s->get("total_blocks", c.kv.total_blocks);
    s->get_int("block_size", c.kv.block_size_tokens);
    s->get("watermark_blocks", c.kv.watermark_blocks);
    s->done();
  }
  if (auto s = root.sub("scheduler")) {
    s->get("token_budget", c.scheduler.token_budget_per_iter);
    std::string mode;
    if (s->get("recovery", mode)) c.scheduler.recovery_mode = recovery_from(mode, s->key("recovery"));
    s->get("max_running", c.scheduler.max_running);
    s->get("output_cap", c.scheduler.output_cap);
    if (auto q = s->sub("quota")) {
      q->get("max_outstanding_per_tenant", c.scheduler.tenant_quota.max_outstanding_per_tenant);
      q->get("max_expansion_ratio", c.scheduler.tenant_quota.max_expansion_ratio);
      q->done();
    }
    s->done();
  }
  if (auto s = root.sub("latency")) {
    auto& l = c.latency;
    s->get("kv_bytes_per_token", l.kv_bytes_per_token);
    s->get("bw_hbm", l.bw_hbm);
    s->get("bw_pcie", l.bw_pcie);
    s->get("prefill_us_per_token", l.prefill_us_per_token);
    s->get("decode_floor_us", l.decode_floor_us);
    s->get("noise_stddev_frac", l.noise_stddev_frac);
    s->done();
  }
  if (auto s = root.sub("workload")) {
    auto& w = c.workload;
    std::string v;
    if (s->get("arrival", v)) w.arrival = arrival_from(v, s->key("arrival"));
    s->get("rate_per_s", w.rate_per_s);
    if (s->get("tier", v)) w.tier = tier_from(v, s->key("tier"));
    s->get("trace_path", w.trace_path);
    s->get_seconds("think_time_s", w.think_time_us);
    if (s->get("preset", v)) {
      if (v == "custom") {
        w.lengths.name = "custom";
      } else {
        w.lengths = preset(v);
      }
    }
    if (auto p = s->sub("prompt")) read_lognormal(*p, w.lengths.prompt);
    if (auto p = s->sub("output")) read_lognormal(*p, w.lengths.output);
    s->get("clients", w.n_clients);
    s->get_seconds("start_s", w.start_us);
    s->done();
  }
  if (auto s = root.sub("attacker")) {
    auto& a = c.attacker;
    std::string v;
    if (s->get("strategy", v)) a.strategy = strategy_from(v, s->key("strategy"));
    s->get("c_sat", a.c_sat);
    s->get("delta_margin", a.delta_margin);
    s->get("delta_large", a.delta_large);
    s->get("delta_small", a.delta_small);
    s->get_seconds("t_wait_s", a.t_wait_us);
    s->get("backoff", a.backoff);
    s->get("probes_in_flight", a.probes_in_flight);
    s->get("concurrency_quota", a.concurrency_quota);
    s->get("identities", a.identities);
    s->get_seconds("start_s", a.start_us);
    s->get("price_in_cents_per_m", a.pricing.input.cents_per_million);
    s->get("price_out_cents_per_m", a.pricing.output.cents_per_million);
    s->get("hold_target", a.hold_target);
    s->get("hold_max_prompt", a.hold_max_prompt);
    if (auto f = s->sub("fixed_interval")) {
      f->get_seconds("period_s", a.fixed.period_us);
      f->get("pool", a.fixed.pool);
      f->done();
    }
    s->done();
  }
  if (auto s = root.sub("probe")) {
    auto& p = c.probe;
    s->get_int("bins", p.n_bins);
    s->get_int("window_len", p.window_len);
    s->get_int("min_window", p.min_window);
    s->get_int("n_trees", p.hyper.n_rounds);
    s->get_int("max_depth", p.hyper.max_depth);
    s->get("learning_rate", p.hyper.learning_rate);
    s->get("l2", p.hyper.l2);
    s->get("min_child_hessian", p.hyper.min_child_hessian);
    s->get_int("max_bins", p.hyper.max_bins);
    s->get("holdout_fraction", p.holdout_fraction);
    s->get("model", c.probe_model);
    s->get_seconds("calibration_horizon_s", c.calibration_horizon_us);
    std::int64_t seed = 0;
    if (s->get("calibration_seed", seed)) c.calibration_seed = static_cast<std::uint64_t>(seed);
    s->done();
  }
  if (auto s = root.sub("trace")) {
    s->get("token_events", c.trace.token_events);
    s->done();
  }
  root.done();
  if (c.attacker.strategy == Strategy::FixedInterval) {
    baseline_pool(c.attacker.fixed.pool, c.max_model_len);  // throws UnknownPreset
  }
  c.validate();
  return c;
}

}  // namespace kvsim
