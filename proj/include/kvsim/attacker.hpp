#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kvsim/probe.hpp"
#include "kvsim/rng.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

// ---------------------------------------------------------------- money

/// Fixed-point money in units of 1e-8 USD, so that one cent per million
/// tokens is exactly one unit per token.
struct Money {
  std::int64_t units = 0;

  static constexpr std::int64_t kUnitsPerUsd = 100'000'000;

  double usd() const { return static_cast<double>(units) / kUnitsPerUsd; }
  /// Exact decimal rendering, e.g. "0.00241500".
  std::string to_string() const;

  Money& operator+=(Money o) {
    units += o.units;
    return *this;
  }
  friend Money operator+(Money a, Money b) { return Money{a.units + b.units}; }
  auto operator<=>(const Money&) const = default;
};

/// Token price in cents per million tokens.
struct TokenPrice {
  std::int64_t cents_per_million = 0;

  Money for_tokens(std::int64_t tokens) const { return Money{tokens * cents_per_million}; }
};

/// Defaults follow GPT-4o mini list pricing: $0.15 / $0.60 per million tokens.
struct Pricing {
  TokenPrice input{15};
  TokenPrice output{60};
};

struct PlainTextCost {
  std::int64_t h_in = 0;
  std::int64_t h_out = 0;
};
struct BlackBoxCost {
  std::vector<PlainTextCost> iterations;
};
/// Optimization compute: duration (ms) * average power (W) * energy price
/// (cents per kWh).
struct WhiteBoxCost {
  std::int64_t t_opt_ms = 0;
  std::int64_t p_avg_w = 0;
  std::int64_t p_e_cents_per_kwh = 0;
};
using CostParadigm = std::variant<WhiteBoxCost, BlackBoxCost, PlainTextCost>;

Money cost_of(const CostParadigm& paradigm, const Pricing& pricing);

/// Running token/cost tally. Probe tokens are included in the input/output
/// totals and additionally tracked on their own.
class CostLedger {
 public:
  explicit CostLedger(Pricing pricing = {}) : pricing_(pricing) {}

  void charge_input(std::int64_t tokens, bool probe);
  void charge_output(std::int64_t tokens, bool probe);

  std::int64_t input_tokens() const { return input_tokens_; }
  std::int64_t output_tokens() const { return output_tokens_; }
  std::int64_t probe_tokens() const { return probe_tokens_; }
  Money total() const { return total_; }
  /// Total rebuilt from the token counters alone.
  Money recompute() const;
  const Pricing& pricing() const { return pricing_; }

 private:
  Pricing pricing_;
  std::int64_t input_tokens_ = 0;
  std::int64_t output_tokens_ = 0;
  std::int64_t probe_tokens_ = 0;
  Money total_;
};

double expansion_ratio(const Request& r);

// ---------------------------------------------------------------- arsenal

enum class Tier { High, Mid, Low };
std::string_view to_string(Tier t);

/// Inclusive uniform integer range.
struct LengthRange {
  std::int64_t lo = 1;
  std::int64_t hi = 1;

  double mean() const { return 0.5 * static_cast<double>(lo + hi); }
  std::int64_t sample(RandomStream& rng) const { return rng.uniform_int(lo, hi); }
};

struct PromptTier {
  std::string name;
  LengthRange input;
  LengthRange output;

  /// E(p): expected output tokens over the block size, rounded up.
  std::int64_t expected_expansion_blocks(std::int32_t block_size) const;
};

struct Arsenal {
  PromptTier high;
  PromptTier mid;
  PromptTier low;

  /// High outputs in [0.9, 1.0] of the output room left by the longest
  /// input; Mid 1000-2000; Low 400-600. Inputs are short plain text.
  static Arsenal standard(std::int64_t max_model_len);
  const PromptTier& get(Tier t) const;
};

/// Named payload pools for scheduler-oblivious baselines: "engorgio-like",
/// "loopllm-like", "extendattack-like", "babbling", "high-tier".
std::vector<PromptTier> baseline_pool(std::string_view name, std::int64_t max_model_len);

/// Cheapest tier whose expected expansion satisfies
/// estimate + E(p)/capacity >= c_sat + delta, or nullopt if none does.
std::optional<Tier> cheapest_satisfying(const Arsenal& arsenal, double estimate,
                                        std::int64_t capacity_blocks,
                                        std::int32_t block_size, double c_sat,
                                        double delta, const Pricing& pricing);

// ---------------------------------------------------------------- controller

enum class Strategy { None, FillSqueeze, FixedInterval, UsageHold };
std::string_view to_string(Strategy s);

struct FixedIntervalConfig {
  Micros period_us = kMicrosPerSecond;
  std::string pool = "babbling";
};

struct AttackerConfig {
  Strategy strategy = Strategy::None;
  double c_sat = 0.975;
  double delta_margin = 0.01;
  double delta_large = 0.30;
  double delta_small = 0.05;
  /// Defaults to two iterations at c_sat occupancy when unset.
  std::optional<Micros> t_wait_us;
  bool backoff = true;
  /// Probe requests kept in flight at all times.
  std::int64_t probes_in_flight = 1;
  std::optional<std::int64_t> concurrency_quota;
  /// Tenant identities the attacker rotates through.
  std::int64_t identities = 1;
  Micros start_us = 0;
  Pricing pricing;
  FixedIntervalConfig fixed;
  /// Ground-truth occupancy target for calibration runs.
  double hold_target = 0.5;
  std::int64_t hold_max_prompt = 4096;

  void validate() const;
};

enum class Regime { Fill, Buffer, Squeeze, BackOff };
std::string_view to_string(Regime r);

/// Regime for a memory gap: > delta_large Fill, (delta_small, delta_large]
/// Buffer, (0, delta_small] Squeeze, <= 0 BackOff.
Regime classify(double delta_mem, const AttackerConfig& config);

enum class ActionKind { DispatchHigh, DispatchLow, Sleep, Probe };
std::string_view to_string(ActionKind a);

struct Action {
  ActionKind kind = ActionKind::Sleep;
  /// Payload tier for dispatches (Mid when a DispatchLow fills the buffer band).
  Tier tier = Tier::Low;
  Micros sleep_us = 0;
};

struct ControllerState {
  double last_estimate = 0.0;
  double delta_mem = 0.0;
  Regime regime = Regime::Fill;
};

/// Pure decision rule of the adaptive injection loop.
class Controller {
 public:
  Controller(const AttackerConfig& config, Micros t_wait_us);

  Action step(double usage_estimate);
  const ControllerState& state() const { return state_; }
  Micros t_wait_us() const { return t_wait_us_; }

 private:
  AttackerConfig config_;
  Micros t_wait_us_;
  ControllerState state_;
};

// ---------------------------------------------------------------- agent

struct AttackDispatch {
  TenantClass tenant_class = TenantClass::Attacker;
  TenantId tenant = 0;
  std::string origin;
  std::int64_t prompt_len = 1;
  std::int64_t output_len = 1;
};

/// What the agent may look at before each scheduler step. `true_usage` is
/// read only by the white-box calibration strategy.
struct Observation {
  Micros now = 0;
  double true_usage = 0.0;
  std::int64_t used_blocks = 0;
  std::int64_t total_blocks = 0;
};

struct DecisionRecord {
  Micros t_us = 0;
  int predicted_bin = 0;
  double estimate = 0.0;
  double delta_mem = 0.0;
  Regime regime = Regime::Fill;
  Action action;
  /// Dispatch suppressed by the concurrency quota.
  bool quota_exhausted = false;
};

struct ProbeWindowRecord {
  RequestId request_id = 0;
  Micros t_start_us = 0;
  Micros t_end_us = 0;
  std::vector<Micros> gaps_us;
  FeatureVector features{};
  std::optional<int> predicted_bin;
};

class AttackerAgent {
 public:
  AttackerAgent(const AttackerConfig& config, Arsenal arsenal, RandomStream rng,
                std::shared_ptr<const ProbeModel> model, const ProbeConfig& probe,
                std::int32_t block_size, std::int64_t max_model_len,
                Micros default_t_wait_us);

  /// Requests to submit before the next scheduler step.
  std::vector<AttackDispatch> poll(const Observation& obs);
  void on_accepted(RequestId id, const AttackDispatch& d);
  void on_rejected(const AttackDispatch& d);
  /// One token emitted by a request this agent owns; `gap` is absent for the
  /// first token.
  void on_token(RequestId id, Micros t_us, std::optional<Micros> gap);
  void on_finished(RequestId id, Micros t_us);

  bool owns(RequestId id) const { return live_.contains(id); }
  /// Earliest time the agent wants to act while the node is idle.
  std::optional<Micros> next_wake(Micros now) const;
  bool active() const { return config_.strategy != Strategy::None; }

  std::vector<DecisionRecord> take_decisions();
  std::vector<ProbeWindowRecord> take_windows();

  const CostLedger& ledger() const { return ledger_; }
  const AttackerConfig& config() const { return config_; }
  std::int64_t attack_requests() const { return attack_requests_; }
  std::int64_t probe_requests() const { return probe_requests_; }
  std::int64_t rejected() const { return rejected_; }
  std::int64_t outstanding_attacks() const { return outstanding_attacks_; }
  Micros t_wait_us() const { return controller_.t_wait_us(); }

 private:
  struct Live {
    bool probe = false;
    bool started = false;
    std::int64_t prompt_blocks = 0;
    // Partial probe window.
    Micros window_start_us = 0;
    std::vector<Micros> gaps;
    std::optional<FeatureVector> last_window;
  };

  AttackDispatch make(Tier tier, TenantClass cls);
  AttackDispatch make_from(const PromptTier& tier, TenantClass cls);
  void close_window(RequestId id, Live& live, Micros t_end);
  void decide(Micros now, const FeatureVector& features);
  bool quota_available() const;

  AttackerConfig config_;
  Arsenal arsenal_;
  RandomStream rng_;
  std::shared_ptr<const ProbeModel> model_;
  ProbeConfig probe_;
  std::int32_t block_size_;
  std::int64_t max_model_len_;
  std::vector<PromptTier> pool_;
  Controller controller_;
  CostLedger ledger_;

  std::map<RequestId, Live> live_;
  std::int64_t probes_live_ = 0;
  std::int64_t outstanding_attacks_ = 0;
  std::int64_t attack_requests_ = 0;
  std::int64_t probe_requests_ = 0;
  std::int64_t rejected_ = 0;
  std::uint64_t next_identity_ = 0;

  Micros next_fixed_us_ = 0;
  Micros sleep_until_us_ = 0;
  std::vector<AttackDispatch> queued_;

  std::vector<DecisionRecord> decisions_;
  std::vector<ProbeWindowRecord> windows_;
};

}  // namespace kvsim
