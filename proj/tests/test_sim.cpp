#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "desk.hpp"
#include "kvsim/config.hpp"
#include "kvsim/scenario.hpp"
#include "kvsim/sim.hpp"
#include "kvsim/workload.hpp"

using namespace kvsim;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kvsim-test-sim-" + std::to_string(getpid()) + "-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SimConfig trace_config(const std::string& name, const std::vector<TraceRow>& rows) {
  const fs::path dir = temp_dir(name);
  write_trace_csv(dir / "trace.csv", rows);
  SimConfig c = presets::desk_node();
  c.latency.noise_stddev_frac = 0.0;
  c.workload.arrival = ArrivalKind::Trace;
  c.workload.trace_path = (dir / "trace.csv").string();
  c.horizon_us = 600 * kMicrosPerSecond;
  return c;
}

std::string log_text(const EventLog& log) {
  std::string s;
  for (const Event& e : log.events()) s += EventLog::to_line(e) + "\n";
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SimConfig benign_poisson(std::int64_t clients, std::int64_t blocks) {
  SimConfig c = presets::desk_node();
  c.kv.total_blocks = blocks;
  c.workload.arrival = ArrivalKind::Poisson;
  c.workload.n_clients = clients;
  c.workload.rate_per_s = 0.2;
  c.horizon_us = 120 * kMicrosPerSecond;
  return c;
}

}  // namespace

TEST(Simulation, NoArrivalsNoRequests) {
  SimConfig c = presets::desk_node();
  c.horizon_us = 5 * kMicrosPerSecond;
  const RunReport r = run(c);
  EXPECT_TRUE(r.records.empty());
  for (const Event& e : r.log.events()) EXPECT_NE(e.kind, EventKind::Arrival);
  EXPECT_EQ(r.aggregate.cls(TenantClass::Benign).submitted, 0);
  EXPECT_EQ(r.log.events().back().kind, EventKind::RunEnd);
}

TEST(Simulation, SameSeedSameBytes) {
  const SimConfig c = benign_poisson(16, 512);
  const RunReport a = run(c);
  const RunReport b = run(c);
  EXPECT_EQ(log_text(a.log), log_text(b.log));
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Simulation, DifferentSeedDifferentRun) {
  SimConfig c = benign_poisson(16, 512);
  const RunReport a = run(c);
  c.seed = 43;
  EXPECT_NE(log_text(a.log), log_text(run(c).log));
}

TEST(Simulation, AmpleMemoryNeverPreempts) {
  SimConfig c = benign_poisson(16, 65536);
  c.horizon_us = 300 * kMicrosPerSecond;
  c.workload.rate_per_s = 0.02;
  const RunReport r = run(c);
  EXPECT_EQ(r.aggregate.total_preemptions, 0);
  const auto& b = r.aggregate.cls(TenantClass::Benign);
  EXPECT_GT(b.submitted, 0);
  EXPECT_EQ(b.starved, 0);
  // Anything unfinished arrived too close to the horizon to complete.
  for (const MetricsRecord& m : r.records) {
    if (!m.finished) EXPECT_GT(m.arrival_us, 200 * kMicrosPerSecond);
  }
}

TEST(Simulation, LoneRequestItlIsIterationTime) {
  Simulation sim(trace_config("lone", {{0, 20, 30, 1}}));
  std::vector<Micros> durations;
  while (!sim.done()) {
    const auto s = sim.step_once();
    if (!s.idle) durations.push_back(s.duration_us);
  }
  const Request& r = sim.scheduler().request(1);
  ASSERT_EQ(r.state, RequestState::Finished);
  ASSERT_EQ(r.itl_trace.size(), 29u);
  ASSERT_EQ(durations.size(), 30u);
  for (std::size_t i = 0; i < r.itl_trace.size(); ++i) {
    EXPECT_EQ(r.itl_trace[i].gap_us, durations[i + 1]);
  }
}

TEST(Simulation, IdleClockJumpsToNextArrival) {
  SimConfig c = trace_config("idle", {{1050, 10, 2, 1}});
  Simulation sim(c);
  const auto s = sim.step_once();
  EXPECT_TRUE(s.idle);
  EXPECT_EQ(sim.clock().now, 1100);
  EXPECT_FALSE(sim.step_once().idle);
}

TEST(Simulation, IdleWithoutWorkAdvancesOneTick) {
  SimConfig c = presets::desk_node();
  c.attacker.strategy = Strategy::FixedInterval;
  c.attacker.fixed.period_us = 10 * kMicrosPerSecond;
  c.attacker.start_us = 250;
  c.horizon_us = kMicrosPerSecond;
  Simulation sim(c);
  sim.step_once();
  EXPECT_EQ(sim.clock().now, 300);
}

TEST(Simulation, CoRunningRequestsShareItl) {
  std::vector<TraceRow> rows;
  for (TenantId t = 1; t <= 4; ++t) rows.push_back({0, 32, 40, t});
  Simulation sim(trace_config("cohort", rows));
  while (!sim.done()) sim.step_once();
  const auto& ref = sim.scheduler().request(1).itl_trace;
  ASSERT_EQ(ref.size(), 39u);
  for (RequestId id = 2; id <= 4; ++id) {
    const auto& t = sim.scheduler().request(id).itl_trace;
    ASSERT_EQ(t.size(), ref.size());
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i].gap_us, ref[i].gap_us);
  }
}

TEST(Simulation, ClockIsMonotone) {
  Simulation sim(benign_poisson(8, 512));
  Micros prev = 0;
  while (!sim.done()) {
    const auto s = sim.step_once();
    EXPECT_GE(s.start_us, prev);
    EXPECT_GE(sim.clock().now, s.start_us);
    prev = sim.clock().now;
  }
  Micros last = 0;
  for (const Event& e : sim.log().events()) {
    EXPECT_GE(e.t_us, last);
    last = e.t_us;
  }
}

TEST(Simulation, TokensConservedUnderCap) {
  SimConfig c = benign_poisson(12, 512);
  c.scheduler.output_cap = 64;
  c.horizon_us = 200 * kMicrosPerSecond;
  Simulation sim(c);
  while (!sim.done()) sim.step_once();
  std::int64_t emitted = 0;
  for (const Event& e : sim.log().events()) {
    if (e.kind == EventKind::Finish) emitted += e.detail.at("output_tokens").get<std::int64_t>();
  }
  std::int64_t expected = 0;
  for (const auto& [id, r] : sim.scheduler().requests()) {
    EXPECT_LE(r.generated_len, 64);
    if (r.state == RequestState::Finished) {
      EXPECT_EQ(r.generated_len, std::min<std::int64_t>(r.target_output_len, 64));
      expected += r.generated_len;
    }
  }
  EXPECT_EQ(emitted, expected);
  EXPECT_GT(expected, 0);
}

TEST(Simulation, ExportedScenarioReproducesRun) {
  SimConfig c = benign_poisson(8, 512);
  c.horizon_us = 60 * kMicrosPerSecond;
  const fs::path dir = temp_dir("export");
  const RunReport a = run(c);
  write_run_outputs(a, dir);
  for (const char* f : {"events.jsonl", "report.json", "kv_usage.csv", "queue_waiting.csv",
                        "queue_running.csv", "itl.csv", "requests.csv", "probe_windows.csv",
                        "scenario.toml"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto points = expand(load_scenario(dir / "scenario.toml"));
  ASSERT_EQ(points.size(), 1u);
  const RunReport b = run(points[0].config);
  EXPECT_EQ(log_text(a.log), log_text(b.log));
  const fs::path dir2 = temp_dir("export2");
  write_run_outputs(b, dir2);
  EXPECT_EQ(slurp(dir / "events.jsonl"), slurp(dir2 / "events.jsonl"));
  EXPECT_EQ(slurp(dir / "report.json"), slurp(dir2 / "report.json"));
}

TEST(Simulation, EventLogRoundTrips) {
  const RunReport a = run(benign_poisson(4, 512));
  const fs::path dir = temp_dir("jsonl");
  a.log.write_jsonl(dir / "e.jsonl");
  EXPECT_EQ(log_text(EventLog::read_jsonl(dir / "e.jsonl")), log_text(a.log));
}
