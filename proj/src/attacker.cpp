#include "kvsim/attacker.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "kvsim/errors.hpp"

namespace kvsim {

std::string Money::to_string() const {
  const std::int64_t a = units < 0 ? -units : units;
  return fmt::format("{}{}.{:08d}", units < 0 ? "-" : "", a / kUnitsPerUsd, a % kUnitsPerUsd);
}

Money cost_of(const CostParadigm& paradigm, const Pricing& pricing) {
  struct Visitor {
    const Pricing& p;
    Money operator()(const PlainTextCost& c) const {
      return p.input.for_tokens(c.h_in) + p.output.for_tokens(c.h_out);
    }
    Money operator()(const BlackBoxCost& c) const {
      Money m;
      for (const auto& it : c.iterations) m += (*this)(it);
      return m;
    }
    Money operator()(const WhiteBoxCost& c) const {
      // ms * W * cents/kWh / 3600 = 1e-8 USD units; round half up.
      const std::int64_t num = c.t_opt_ms * c.p_avg_w * c.p_e_cents_per_kwh;
      return Money{(num + 1800) / 3600};
    }
  };
  return std::visit(Visitor{pricing}, paradigm);
}

void CostLedger::charge_input(std::int64_t tokens, bool probe) {
  input_tokens_ += tokens;
  if (probe) probe_tokens_ += tokens;
  total_ += pricing_.input.for_tokens(tokens);
}

void CostLedger::charge_output(std::int64_t tokens, bool probe) {
  output_tokens_ += tokens;
  if (probe) probe_tokens_ += tokens;
  total_ += pricing_.output.for_tokens(tokens);
}

Money CostLedger::recompute() const {
  return cost_of(PlainTextCost{input_tokens_, output_tokens_}, pricing_);
}

double expansion_ratio(const Request& r) {
  if (r.prompt_len < 1) throw ConfigError("expansion_ratio needs prompt_len >= 1");
  return static_cast<double>(r.generated_len) / static_cast<double>(r.prompt_len);
}

// ---------------------------------------------------------------- arsenal

std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::High: return "high";
    case Tier::Mid: return "mid";
    case Tier::Low: return "low";
  }
  return "?";
}

std::int64_t PromptTier::expected_expansion_blocks(std::int32_t block_size) const {
  return static_cast<std::int64_t>(std::ceil(output.mean() / block_size));
}

namespace {
constexpr LengthRange kPlainInput{32, 128};
}

Arsenal Arsenal::standard(std::int64_t max_model_len) {
  const std::int64_t room = std::max<std::int64_t>(max_model_len - kPlainInput.hi, 2);
  Arsenal a;
  a.high = {"high", kPlainInput,
            {std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(0.9 * room))), room}};
  a.mid = {"mid", kPlainInput, {std::min<std::int64_t>(1000, room), std::min<std::int64_t>(2000, room)}};
  a.low = {"low", kPlainInput, {std::min<std::int64_t>(400, room), std::min<std::int64_t>(600, room)}};
  return a;
}

const PromptTier& Arsenal::get(Tier t) const {
  switch (t) {
    case Tier::High: return high;
    case Tier::Mid: return mid;
    case Tier::Low: return low;
  }
  return low;
}

std::vector<PromptTier> baseline_pool(std::string_view name, std::int64_t max_model_len) {
  auto fit = [&](PromptTier t) {
    t.input.hi = std::min(t.input.hi, max_model_len - 1);
    t.input.lo = std::min(t.input.lo, t.input.hi);
    const std::int64_t room = max_model_len - t.input.hi;
    t.output.hi = std::max<std::int64_t>(1, std::min(t.output.hi, room));
    t.output.lo = std::min(t.output.lo, t.output.hi);
    return t;
  };
  if (name == "engorgio-like") return {fit({"engorgio-like", {150, 300}, {1500, 4000}})};
  if (name == "loopllm-like" || name == "babbling") {
    return {fit({std::string(name), {50, 150}, {2000, 6000}})};
  }
  if (name == "extendattack-like") return {fit({"extendattack-like", {300, 800}, {1000, 3000}})};
  if (name == "high-tier") return {Arsenal::standard(max_model_len).high};
  if (name == "mixed") {
    return {fit({"engorgio-like", {150, 300}, {1500, 4000}}),
            fit({"loopllm-like", {50, 150}, {2000, 6000}}),
            fit({"extendattack-like", {300, 800}, {1000, 3000}})};
  }
  throw UnknownPreset("unknown attack pool '" + std::string(name) + "'");
}

std::optional<Tier> cheapest_satisfying(const Arsenal& arsenal, double estimate,
                                        std::int64_t capacity_blocks,
                                        std::int32_t block_size, double c_sat,
                                        double delta, const Pricing& pricing) {
  std::optional<Tier> best;
  Money best_cost;
  for (Tier t : {Tier::Low, Tier::Mid, Tier::High}) {
    const PromptTier& p = arsenal.get(t);
    const double expansion = static_cast<double>(p.expected_expansion_blocks(block_size)) /
                             static_cast<double>(capacity_blocks);
    if (estimate + expansion < c_sat + delta) continue;
    const Money c = cost_of(PlainTextCost{std::llround(p.input.mean()), std::llround(p.output.mean())},
                            pricing);
    if (!best || c < best_cost) {
      best = t;
      best_cost = c;
    }
  }
  return best;
}

// ---------------------------------------------------------------- controller

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::None: return "none";
    case Strategy::FillSqueeze: return "fill-squeeze";
    case Strategy::FixedInterval: return "fixed-interval";
    case Strategy::UsageHold: return "usage-hold";
  }
  return "?";
}

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::Fill: return "fill";
    case Regime::Buffer: return "buffer";
    case Regime::Squeeze: return "squeeze";
    case Regime::BackOff: return "backoff";
  }
  return "?";
}

std::string_view to_string(ActionKind a) {
  switch (a) {
    case ActionKind::DispatchHigh: return "dispatch_high";
    case ActionKind::DispatchLow: return "dispatch_low";
    case ActionKind::Sleep: return "sleep";
    case ActionKind::Probe: return "probe";
  }
  return "?";
}

void AttackerConfig::validate() const {
  if (!(c_sat > 0.5 && c_sat <= 1.0)) throw ConfigError("attacker.c_sat must be in (0.5, 1]");
  if (!(delta_small > 0 && delta_small <= delta_large && delta_large < 1)) {
    throw ConfigError("attacker thresholds need 0 < delta_small <= delta_large < 1");
  }
  if (delta_margin < 0) throw ConfigError("attacker.delta_margin must be >= 0");
  if (t_wait_us && *t_wait_us < 0) throw ConfigError("attacker.t_wait_s must be >= 0");
  if (probes_in_flight < 0) throw ConfigError("attacker.probes_in_flight must be >= 0");
  if (concurrency_quota && *concurrency_quota < 1) {
    throw ConfigError("attacker.concurrency_quota must be >= 1");
  }
  if (identities < 1) throw ConfigError("attacker.identities must be >= 1");
  if (start_us < 0) throw ConfigError("attacker.start_s must be >= 0");
  if (fixed.period_us < 1) throw ConfigError("attacker.fixed_interval.period_s must be > 0");
  if (!(hold_target >= 0 && hold_target <= 1)) {
    throw ConfigError("attacker.hold_target must be in [0, 1]");
  }
  if (hold_max_prompt < 1) throw ConfigError("attacker.hold_max_prompt must be >= 1");
  if (pricing.input.cents_per_million < 0 || pricing.output.cents_per_million < 0) {
    throw ConfigError("attacker prices must be >= 0");
  }
}

Regime classify(double delta_mem, const AttackerConfig& config) {
  if (delta_mem > config.delta_large) return Regime::Fill;
  if (delta_mem > config.delta_small) return Regime::Buffer;
  if (delta_mem > 0) return Regime::Squeeze;
  return Regime::BackOff;
}

Controller::Controller(const AttackerConfig& config, Micros t_wait_us)
    : config_(config), t_wait_us_(t_wait_us) {}

Action Controller::step(double usage_estimate) {
  state_.last_estimate = usage_estimate;
  state_.delta_mem = config_.c_sat - usage_estimate;
  state_.regime = classify(state_.delta_mem, config_);
  switch (state_.regime) {
    case Regime::Fill: return {ActionKind::DispatchHigh, Tier::High, 0};
    case Regime::Buffer: return {ActionKind::DispatchLow, Tier::Mid, 0};
    case Regime::Squeeze: return {ActionKind::DispatchLow, Tier::Low, 0};
    case Regime::BackOff:
      if (!config_.backoff) return {ActionKind::DispatchLow, Tier::Low, 0};
      return {ActionKind::Sleep, Tier::Low, t_wait_us_};
  }
  return {};
}

// ---------------------------------------------------------------- agent

AttackerAgent::AttackerAgent(const AttackerConfig& config, Arsenal arsenal, RandomStream rng,
                             std::shared_ptr<const ProbeModel> model, const ProbeConfig& probe,
                             std::int32_t block_size, std::int64_t max_model_len,
                             Micros default_t_wait_us)
    : config_(config), arsenal_(std::move(arsenal)), rng_(rng), model_(std::move(model)),
      probe_(probe), block_size_(block_size), max_model_len_(max_model_len),
      controller_(config, config.t_wait_us.value_or(default_t_wait_us)),
      ledger_(config.pricing) {
  config_.validate();
  if (config_.strategy == Strategy::FixedInterval) {
    pool_ = baseline_pool(config_.fixed.pool, max_model_len);
  }
  if (config_.strategy == Strategy::FillSqueeze && !model_) {
    throw ConfigError("fill-squeeze attacker needs a probe model");
  }
  next_fixed_us_ = config_.start_us;
}

AttackDispatch AttackerAgent::make_from(const PromptTier& tier, TenantClass cls) {
  AttackDispatch d;
  d.tenant_class = cls;
  d.origin = cls == TenantClass::Probe ? "probe" : tier.name;
  d.prompt_len = tier.input.sample(rng_);
  d.output_len = tier.output.sample(rng_);
  d.tenant = static_cast<TenantId>(1 + next_identity_++ % static_cast<std::uint64_t>(config_.identities));
  return d;
}

AttackDispatch AttackerAgent::make(Tier tier, TenantClass cls) {
  return make_from(arsenal_.get(tier), cls);
}

bool AttackerAgent::quota_available() const {
  return !config_.concurrency_quota || outstanding_attacks_ < *config_.concurrency_quota;
}

std::vector<AttackDispatch> AttackerAgent::poll(const Observation& obs) {
  std::vector<AttackDispatch> out;
  if (!active() || obs.now < config_.start_us) return out;

  const bool probing = config_.strategy == Strategy::FillSqueeze ||
                       config_.strategy == Strategy::UsageHold;
  if (probing) {
    while (probes_live_ < config_.probes_in_flight && obs.now >= sleep_until_us_) {
      out.push_back(make(Tier::Low, TenantClass::Probe));
      ++probes_live_;
      ++probe_requests_;
    }
  }

  switch (config_.strategy) {
    case Strategy::FixedInterval:
      while (next_fixed_us_ <= obs.now) {
        if (quota_available()) {
          const auto pick = static_cast<std::size_t>(
              rng_.uniform_int(0, static_cast<std::int64_t>(pool_.size()) - 1));
          out.push_back(make_from(pool_[pick], TenantClass::Attacker));
          ++outstanding_attacks_;
          ++attack_requests_;
        }
        next_fixed_us_ += config_.fixed.period_us;
      }
      break;
    case Strategy::UsageHold: {
      // White-box filler: top up toward the target with prompt-heavy
      // requests. Outputs of 1/8 to 1/4 of the prompt keep turnover low
      // enough that refills fit the prefill budget.
      std::int64_t pending = 0;
      for (const auto& [id, l] : live_) {
        if (!l.probe && !l.started) pending += l.prompt_blocks;
      }
      for (const auto& d : out) {
        if (d.tenant_class == TenantClass::Attacker) {
          pending += (d.prompt_len + block_size_ - 1) / block_size_;
        }
      }
      const auto target = static_cast<std::int64_t>(
          std::floor(config_.hold_target * static_cast<double>(obs.total_blocks)));
      std::int64_t need = target - obs.used_blocks - pending;
      while (need > 0 && quota_available()) {
        AttackDispatch d;
        d.tenant_class = TenantClass::Attacker;
        d.origin = "filler";
        d.prompt_len = std::min({need * block_size_, config_.hold_max_prompt,
                                 max_model_len_ * 4 / 5});
        d.output_len = rng_.uniform_int(std::max<std::int64_t>(16, d.prompt_len / 8),
                                        std::max<std::int64_t>(16, d.prompt_len / 4));
        d.tenant = static_cast<TenantId>(1 + next_identity_++ % static_cast<std::uint64_t>(config_.identities));
        need -= (d.prompt_len + block_size_ - 1) / block_size_;
        out.push_back(d);
        ++outstanding_attacks_;
        ++attack_requests_;
      }
      break;
    }
    case Strategy::FillSqueeze:
      for (auto& d : queued_) out.push_back(std::move(d));
      queued_.clear();
      break;
    case Strategy::None:
      break;
  }
  return out;
}

void AttackerAgent::on_accepted(RequestId id, const AttackDispatch& d) {
  Live l;
  l.probe = d.tenant_class == TenantClass::Probe;
  l.prompt_blocks = (d.prompt_len + block_size_ - 1) / block_size_;
  live_.emplace(id, std::move(l));
  ledger_.charge_input(d.prompt_len, d.tenant_class == TenantClass::Probe);
}

void AttackerAgent::on_rejected(const AttackDispatch& d) {
  ++rejected_;
  if (d.tenant_class == TenantClass::Probe) {
    --probes_live_;
  } else {
    --outstanding_attacks_;
  }
}

void AttackerAgent::on_token(RequestId id, Micros t_us, std::optional<Micros> gap) {
  auto it = live_.find(id);
  if (it == live_.end()) return;
  Live& l = it->second;
  l.started = true;
  ledger_.charge_output(1, l.probe);
  if (!l.probe || !gap) return;
  if (l.gaps.empty()) l.window_start_us = t_us - *gap;
  l.gaps.push_back(*gap);
  if (l.gaps.size() >= probe_.window_len) close_window(id, l, t_us);
}

void AttackerAgent::close_window(RequestId id, Live& live, Micros t_end) {
  ProbeWindowRecord w;
  w.request_id = id;
  w.t_start_us = live.window_start_us;
  w.t_end_us = t_end;
  w.gaps_us = std::move(live.gaps);
  live.gaps.clear();
  w.features = extract_features(ItlWindow{w.gaps_us, id, t_end}, probe_.min_window);
  if (model_) w.predicted_bin = model_->predict_features(w.features).bin;
  live.last_window = w.features;
  windows_.push_back(std::move(w));
}

void AttackerAgent::decide(Micros now, const FeatureVector& features) {
  const ProbeModel::Prediction pred = model_->predict_features(features);
  DecisionRecord rec;
  rec.t_us = now;
  rec.predicted_bin = pred.bin;
  rec.action = controller_.step(pred.usage_estimate);
  rec.estimate = controller_.state().last_estimate;
  rec.delta_mem = controller_.state().delta_mem;
  rec.regime = controller_.state().regime;
  if (rec.action.kind == ActionKind::Sleep) {
    sleep_until_us_ = now + rec.action.sleep_us;
  } else if (quota_available()) {
    queued_.push_back(make(rec.action.tier, TenantClass::Attacker));
    ++outstanding_attacks_;
    ++attack_requests_;
  } else {
    rec.quota_exhausted = true;
  }
  decisions_.push_back(rec);
}

void AttackerAgent::on_finished(RequestId id, Micros t_us) {
  auto it = live_.find(id);
  if (it == live_.end()) return;
  Live& l = it->second;
  if (l.probe) {
    if (l.gaps.size() >= probe_.min_window) close_window(id, l, t_us);
    // One estimate per completed probe, from its most recent window.
    if (config_.strategy == Strategy::FillSqueeze && l.last_window) {
      decide(t_us, *l.last_window);
    }
    --probes_live_;
  } else {
    --outstanding_attacks_;
  }
  live_.erase(it);
}

std::optional<Micros> AttackerAgent::next_wake(Micros now) const {
  if (!active()) return std::nullopt;
  if (now < config_.start_us) return config_.start_us;
  switch (config_.strategy) {
    case Strategy::FixedInterval: return next_fixed_us_;
    case Strategy::UsageHold: return now;
    case Strategy::FillSqueeze:
      if (!queued_.empty()) return now;
      if (probes_live_ < config_.probes_in_flight) return std::max(now, sleep_until_us_);
      return std::nullopt;
    case Strategy::None: break;
  }
  return std::nullopt;
}

std::vector<DecisionRecord> AttackerAgent::take_decisions() {
  std::vector<DecisionRecord> out;
  out.swap(decisions_);
  return out;
}

std::vector<ProbeWindowRecord> AttackerAgent::take_windows() {
  std::vector<ProbeWindowRecord> out;
  out.swap(windows_);
  return out;
}

}  // namespace kvsim
