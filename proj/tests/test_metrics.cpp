#include <gtest/gtest.h>

#include "desk.hpp"
#include "kvsim/metrics.hpp"
#include "kvsim/sim.hpp"

using namespace kvsim;

namespace {

Request finished_request(Micros arrival, Micros first, Micros last, std::int64_t tokens) {
  Request r;
  r.id = 1;
  r.arrival_us = arrival;
  r.first_token_us = first;
  r.last_token_us = last;
  r.finish_us = last;
  r.generated_len = tokens;
  r.state = RequestState::Finished;
  return r;
}

AggregateReport benign_means(double ttft_us, double tpot_us) {
  AggregateReport a;
  ClassReport c;
  c.ttft_us = Summary{1, ttft_us, ttft_us, ttft_us, ttft_us, ttft_us};
  c.tpot_us = Summary{1, tpot_us, tpot_us, tpot_us, tpot_us, tpot_us};
  a.classes[TenantClass::Benign] = c;
  return a;
}

}  // namespace

TEST(Finalize, TtftAndTpot) {
  const auto m = finalize(finished_request(0, 150'000, 7'000'000, 200));
  EXPECT_EQ(*m.ttft_us, 150'000);
  EXPECT_NEAR(*m.tpot_us, (7'000'000.0 - 150'000.0) / 199.0, 1e-9);
  EXPECT_NEAR(*m.tpot_us / 1000.0, 34.42, 0.005);
  EXPECT_EQ(*m.e2e_us, 7'000'000);
}

TEST(Finalize, SingleTokenHasNoTpot) {
  const auto m = finalize(finished_request(10, 20, 20, 1));
  EXPECT_EQ(*m.ttft_us, 10);
  EXPECT_FALSE(m.tpot_us.has_value());
}

TEST(Finalize, UnfinishedThrows) {
  Request r;
  r.state = RequestState::Running;
  EXPECT_THROW(finalize(r), NotFinished);
  EXPECT_NO_THROW(observe(r));
  EXPECT_FALSE(observe(r).e2e_us.has_value());
}

TEST(Percentile, NearestRank) {
  std::vector<int> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(percentile(v, 99.0), 99);
  EXPECT_EQ(percentile(v, 100.0), 100);
  EXPECT_EQ(percentile(v, 50.0), 50);
  EXPECT_EQ(percentile(std::vector<int>{42}, 99.0), 42);
  EXPECT_EQ(percentile(std::vector<int>{42}, 1.0), 42);
}

TEST(Percentile, EmptyThrows) {
  EXPECT_THROW(percentile(std::vector<double>{}, 50.0), EmptyInput);
  EXPECT_FALSE(summarize({}).has_value());
}

TEST(Slowdown, Ratio) {
  const auto s = slowdown(benign_means(11.046e6, 40e3), benign_means(0.146e6, 20e3));
  EXPECT_NEAR(s.ttft, 75.66, 0.01);
  EXPECT_DOUBLE_EQ(s.tpot, 2.0);
}

TEST(Slowdown, Identity) {
  const auto a = benign_means(5e5, 3e4);
  const auto s = slowdown(a, a);
  EXPECT_DOUBLE_EQ(s.ttft, 1.0);
  EXPECT_DOUBLE_EQ(s.tpot, 1.0);
}

TEST(Slowdown, ZeroBaselineThrows) {
  EXPECT_THROW(slowdown(benign_means(1, 1), benign_means(0, 1)), ZeroBaseline);
  EXPECT_THROW(slowdown(benign_means(1, 1), AggregateReport{}), ZeroBaseline);
}

TEST(KvAccumulator, BandAndCrossings) {
  KvAccumulator acc(0.975);
  acc.iteration(0, 10, 0.50, false);
  acc.iteration(10, 10, 0.98, false);   // crossing 1
  acc.iteration(20, 10, 0.99, true);
  acc.iteration(30, 10, 0.90, false);
  acc.iteration(40, 10, 0.975, false);  // crossing 2
  acc.iteration(100, 10, 0.98, false);  // after idle gap: crossing 3
  acc.close(200);
  const auto& s = acc.stats();
  EXPECT_EQ(s.csat_crossings, 3);
  EXPECT_EQ(s.band_us, 40);
  EXPECT_EQ(s.total_us, 200);
  EXPECT_DOUBLE_EQ(s.band_occupancy(), 0.2);
  EXPECT_EQ(s.hol_blocked_steps, 1);
  Micros hist = 0;
  for (Micros h : s.histogram_us) hist += h;
  EXPECT_EQ(hist, 200);
  EXPECT_EQ(s.histogram_us[0], 140);
}

class LoadedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SimConfig c = presets::desk_node();
    c.kv.total_blocks = 512;
    c.workload.arrival = ArrivalKind::Poisson;
    c.workload.n_clients = 8;
    c.workload.rate_per_s = 0.5;
    c.horizon_us = 60 * kMicrosPerSecond;
    report_ = new RunReport(run(c));
  }
  static void TearDownTestSuite() {
    delete report_;
    report_ = nullptr;
  }
  static RunReport* report_;
};

RunReport* LoadedRun::report_ = nullptr;

TEST_F(LoadedRun, CensoringPartitionsSubmissions) {
  const auto& b = report_->aggregate.cls(TenantClass::Benign);
  EXPECT_GT(b.submitted, 0);
  EXPECT_EQ(b.starved + b.finished + b.in_flight, b.submitted);
  EXPECT_GT(report_->aggregate.total_preemptions, 0);
}

TEST_F(LoadedRun, EventReplayMatchesIncremental) {
  const auto replay = aggregate_from_events(report_->log, report_->aggregate.kv.c_sat);
  auto a = report_->aggregate.to_json();
  auto b = replay.to_json();
  a.erase("attacker");
  b.erase("attacker");
  EXPECT_EQ(a, b);
}

TEST_F(LoadedRun, ReportJsonRoundTrip) {
  const auto j = report_->aggregate.to_json();
  EXPECT_EQ(AggregateReport::from_json(j).to_json(), j);
}
