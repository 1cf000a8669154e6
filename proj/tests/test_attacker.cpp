#include <gtest/gtest.h>

#include "kvsim/attacker.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/rng.hpp"

using namespace kvsim;

namespace {

AttackerConfig defaults() { return AttackerConfig{}; }

AttackerAgent fixed_agent(Micros period, std::uint64_t seed, const std::string& pool = "babbling") {
  AttackerConfig c;
  c.strategy = Strategy::FixedInterval;
  c.fixed.period_us = period;
  c.fixed.pool = pool;
  return AttackerAgent(c, Arsenal::standard(8192), RandomStream(seed, "attacker"), nullptr,
                       ProbeConfig{}, 16, 8192, 50'000);
}

std::vector<AttackDispatch> poll_until(AttackerAgent& a, Micros end, Micros step) {
  std::vector<AttackDispatch> out;
  for (Micros t = 0; t < end; t += step) {
    Observation o;
    o.now = t;
    o.total_blocks = 2048;
    for (auto& d : a.poll(o)) out.push_back(d);
  }
  return out;
}

}  // namespace

TEST(Controller, FarBelowSaturationFills) {
  Controller c(defaults(), 1000);
  const Action a = c.step(0.30);
  EXPECT_EQ(a.kind, ActionKind::DispatchHigh);
  EXPECT_EQ(a.tier, Tier::High);
  EXPECT_EQ(c.state().regime, Regime::Fill);
  EXPECT_DOUBLE_EQ(c.state().delta_mem, 0.975 - 0.30);
}

TEST(Controller, NearSaturationSqueezes) {
  Controller c(defaults(), 1000);
  const Action a = c.step(0.95);
  EXPECT_EQ(a.kind, ActionKind::DispatchLow);
  EXPECT_EQ(a.tier, Tier::Low);
  EXPECT_EQ(c.state().regime, Regime::Squeeze);
}

TEST(Controller, AboveSaturationSleeps) {
  Controller c(defaults(), 1234);
  const Action a = c.step(0.99);
  EXPECT_EQ(a.kind, ActionKind::Sleep);
  EXPECT_EQ(a.sleep_us, 1234);
  EXPECT_EQ(c.state().regime, Regime::BackOff);
}

TEST(Controller, BufferBandDispatchesMid) {
  Controller c(defaults(), 1000);
  const Action a = c.step(0.80);
  EXPECT_EQ(a.kind, ActionKind::DispatchLow);
  EXPECT_EQ(a.tier, Tier::Mid);
  EXPECT_EQ(c.state().regime, Regime::Buffer);
}

TEST(Controller, DisabledBackOffKeepsSqueezing) {
  AttackerConfig cfg;
  cfg.backoff = false;
  Controller c(cfg, 1000);
  const Action a = c.step(0.99);
  EXPECT_EQ(a.kind, ActionKind::DispatchLow);
  EXPECT_EQ(a.tier, Tier::Low);
}

TEST(Controller, ClassifyBoundaries) {
  const auto cfg = defaults();
  EXPECT_EQ(classify(0.3000001, cfg), Regime::Fill);
  EXPECT_EQ(classify(0.30, cfg), Regime::Buffer);
  EXPECT_EQ(classify(0.05, cfg), Regime::Squeeze);
  EXPECT_EQ(classify(1e-9, cfg), Regime::Squeeze);
  EXPECT_EQ(classify(0.0, cfg), Regime::BackOff);
  EXPECT_EQ(classify(-0.02, cfg), Regime::BackOff);
}

TEST(Config, RejectsInvertedThresholds) {
  AttackerConfig c;
  c.delta_small = 0.4;
  c.delta_large = 0.3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Cost, PlainTextZero) {
  EXPECT_EQ(cost_of(PlainTextCost{0, 0}, Pricing{}).units, 0);
}

TEST(Cost, PlainTextHandArithmetic) {
  // 100 * 1.5e-7 + 4000 * 6e-7 = 0.000015 + 0.0024 = 0.002415 USD
  const Money m = cost_of(PlainTextCost{100, 4000}, Pricing{});
  EXPECT_EQ(m.units, 241'500);
  EXPECT_EQ(m.to_string(), "0.00241500");
  EXPECT_DOUBLE_EQ(m.usd(), 0.002415);
}

TEST(Cost, BlackBoxSumsIterations) {
  BlackBoxCost b{{{100, 4000}, {10, 20}, {0, 0}}};
  EXPECT_EQ(cost_of(b, Pricing{}).units, 241'500 + 10 * 15 + 20 * 60);
}

TEST(Cost, WhiteBoxEnergy) {
  // 3.6e6 ms at 1000 W is 1 kWh; at 12 cents/kWh that is $0.12.
  const Money m = cost_of(WhiteBoxCost{3'600'000, 1000, 12}, Pricing{});
  EXPECT_EQ(m.to_string(), "0.12000000");
}

TEST(Cost, NegativeRendering) {
  EXPECT_EQ(Money{-5}.to_string(), "-0.00000005");
}

TEST(Ledger, IncrementalMatchesRecompute) {
  CostLedger l;
  RandomStream r(4, "ledger");
  for (int i = 0; i < 1000; ++i) {
    l.charge_input(r.uniform_int(0, 5000), r.uniform_int(0, 1) == 1);
    l.charge_output(r.uniform_int(0, 50), r.uniform_int(0, 1) == 1);
  }
  EXPECT_EQ(l.total(), l.recompute());
  EXPECT_LE(l.probe_tokens(), l.input_tokens() + l.output_tokens());
}

TEST(Expansion, Examples) {
  Request r;
  r.prompt_len = 50;
  r.generated_len = 500;
  EXPECT_DOUBLE_EQ(expansion_ratio(r), 10.0);
  r.generated_len = 0;
  EXPECT_DOUBLE_EQ(expansion_ratio(r), 0.0);
  r.generated_len = 50;
  EXPECT_DOUBLE_EQ(expansion_ratio(r), 1.0);
}

TEST(Arsenal, StandardTiers) {
  const Arsenal a = Arsenal::standard(8192);
  const std::int64_t room = 8192 - 128;
  EXPECT_EQ(a.high.output.hi, room);
  EXPECT_EQ(a.high.output.lo, static_cast<std::int64_t>(std::ceil(0.9 * room)));
  EXPECT_EQ(a.mid.output.lo, 1000);
  EXPECT_EQ(a.mid.output.hi, 2000);
  EXPECT_EQ(a.low.output.lo, 400);
  EXPECT_EQ(a.low.output.hi, 600);
  EXPECT_LE(a.high.input.hi + a.high.output.hi, 8192);
  EXPECT_EQ(a.low.expected_expansion_blocks(16), 32);  // ceil(500 / 16)
}

TEST(Arsenal, PoolsFitContext) {
  for (const char* name : {"engorgio-like", "loopllm-like", "extendattack-like", "babbling", "high-tier", "mixed"}) {
    for (const auto& t : baseline_pool(name, 2048)) {
      EXPECT_LE(t.input.hi + t.output.hi, 2048) << name;
      EXPECT_LE(t.output.lo, t.output.hi) << name;
    }
  }
  EXPECT_THROW(baseline_pool("nope", 8192), UnknownPreset);
}

TEST(Arsenal, CheapestSatisfyingTier) {
  const Arsenal a = Arsenal::standard(8192);
  // Low adds 32 of 2048 blocks (~1.6%), Mid ~4.6%, High ~23%.
  EXPECT_EQ(cheapest_satisfying(a, 0.97, 2048, 16, 0.975, 0.01, Pricing{}), Tier::Low);
  EXPECT_EQ(cheapest_satisfying(a, 0.95, 2048, 16, 0.975, 0.01, Pricing{}), Tier::Mid);
  EXPECT_EQ(cheapest_satisfying(a, 0.80, 2048, 16, 0.975, 0.01, Pricing{}), Tier::High);
  EXPECT_FALSE(cheapest_satisfying(a, 0.30, 2048, 16, 0.975, 0.01, Pricing{}).has_value());
}

TEST(FixedInterval, OnePerPeriod) {
  auto a = fixed_agent(kMicrosPerSecond, 1);
  const auto d = poll_until(a, 10 * kMicrosPerSecond, 100'000);
  EXPECT_EQ(d.size(), 10u);
  EXPECT_EQ(a.attack_requests(), 10);
}

TEST(FixedInterval, DispatchesDrawFromThePool) {
  auto a = fixed_agent(kMicrosPerSecond, 1);
  const auto pool = baseline_pool("babbling", 8192);
  for (const auto& d : poll_until(a, 20 * kMicrosPerSecond, 100'000)) {
    EXPECT_EQ(d.tenant_class, TenantClass::Attacker);
    EXPECT_GE(d.prompt_len, pool[0].input.lo);
    EXPECT_LE(d.prompt_len, pool[0].input.hi);
    EXPECT_GE(d.output_len, pool[0].output.lo);
    EXPECT_LE(d.output_len, pool[0].output.hi);
  }
}

TEST(FixedInterval, SameSeedSameSequence) {
  auto a = fixed_agent(kMicrosPerSecond, 9);
  auto b = fixed_agent(kMicrosPerSecond, 9);
  const auto x = poll_until(a, 30 * kMicrosPerSecond, 50'000);
  const auto y = poll_until(b, 30 * kMicrosPerSecond, 50'000);
  ASSERT_EQ(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].prompt_len, y[i].prompt_len);
    EXPECT_EQ(x[i].output_len, y[i].output_len);
    EXPECT_EQ(x[i].tenant, y[i].tenant);
  }
}

TEST(FixedInterval, QuotaCapsOutstanding) {
  AttackerConfig c;
  c.strategy = Strategy::FixedInterval;
  c.fixed.period_us = 100'000;
  c.concurrency_quota = 3;
  AttackerAgent a(c, Arsenal::standard(8192), RandomStream(1, "attacker"), nullptr,
                  ProbeConfig{}, 16, 8192, 50'000);
  const auto d = poll_until(a, 5 * kMicrosPerSecond, 100'000);
  EXPECT_EQ(d.size(), 3u);
}

TEST(Agent, FillSqueezeNeedsAModel) {
  AttackerConfig c;
  c.strategy = Strategy::FillSqueeze;
  EXPECT_THROW(AttackerAgent(c, Arsenal::standard(8192), RandomStream(1, "attacker"), nullptr,
                             ProbeConfig{}, 16, 8192, 50'000),
               ConfigError);
}
