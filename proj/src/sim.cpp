#include "kvsim/sim.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "kvsim/calibration.hpp"
#include "kvsim/config.hpp"
#include "kvsim/errors.hpp"

namespace kvsim {

using nlohmann::json;

void SimConfig::validate() const {
  if (horizon_us <= 0) throw ConfigError("sim.horizon_s must be > 0");
  if (idle_tick_us <= 0) throw ConfigError("sim.idle_tick_us must be > 0");
  if (max_model_len < 2) throw ConfigError("sim.max_model_len must be >= 2");
  kv.validate();
  scheduler.validate();
  latency.validate();
  workload.validate();
  attacker.validate();
  probe.validate();
  if (calibration_horizon_us <= 0) throw ConfigError("probe.calibration_horizon_s must be > 0");
  const std::int64_t need =
      (max_model_len + kv.block_size_tokens - 1) / kv.block_size_tokens + kv.watermark_blocks;
  if (need > kv.total_blocks) {
    throw ConfigError(fmt::format(
        "sim.max_model_len {} needs {} blocks (with watermark) but kv.total_blocks is {}",
        max_model_len, need, kv.total_blocks));
  }
}

Micros SimConfig::default_t_wait_us() const {
  LatencyModel m(latency, RandomStream{});
  BatchLoad load;
  load.total_ctx_tokens = static_cast<std::int64_t>(attacker.c_sat *
                                                    static_cast<double>(kv.capacity_tokens()));
  return 2 * std::llround(m.mean_duration_us(load));
}

namespace {

SimConfig checked(const SimConfig& c) {
  c.validate();
  return c;
}

}  // namespace

Simulation::Simulation(const SimConfig& config, std::shared_ptr<const ProbeModel> model)
    : config_(checked(config)),
      scheduler_(config_.scheduler, config_.kv),
      latency_(config_.latency, RandomStream(config_.seed, "latency")),
      workload_(config_.workload, RandomStream(config_.seed, "workload"), config_.horizon_us,
                config_.max_model_len),
      attacker_(config_.attacker, Arsenal::standard(config_.max_model_len),
                RandomStream(config_.seed, "attacker"), std::move(model), config_.probe,
                config_.kv.block_size_tokens, config_.max_model_len,
                config_.default_t_wait_us()),
      kv_acc_(config_.attacker.c_sat) {}

bool Simulation::done() const { return exhausted_ || clock_.now >= config_.horizon_us; }

void Simulation::submit(Request r, std::optional<AttackDispatch> dispatch) {
  const RequestId id = r.id;
  const TenantClass cls = r.tenant_class;
  json detail = {{"class", to_string(cls)},
                 {"tenant", r.tenant},
                 {"origin", r.origin},
                 {"arrival_us", r.arrival_us},
                 {"prompt_len", r.prompt_len},
                 {"output_len", r.target_output_len}};
  try {
    scheduler_.submit(std::move(r));
  } catch (const QuotaExceeded& e) {
    detail["reason"] = e.what();
    log_.append(clock_.now, EventKind::Rejected, id, std::move(detail));
    ++rejected_.by_class[cls];
    if (dispatch) attacker_.on_rejected(*dispatch);
    return;
  }
  log_.append(clock_.now, EventKind::Arrival, id, detail);
  if (dispatch) {
    attacker_.on_accepted(id, *dispatch);
    log_.append(clock_.now,
                cls == TenantClass::Probe ? EventKind::ProbeDispatched
                                          : EventKind::AttackDispatched,
                id, {{"origin", dispatch->origin}, {"tenant", dispatch->tenant}});
  }
}

void Simulation::deliver_arrivals() {
  while (auto t = workload_.peek_time()) {
    if (*t > clock_.now) break;
    const Arrival a = *workload_.next_arrival();
    Request r;
    r.id = next_id_++;
    r.tenant_class = TenantClass::Benign;
    r.tenant = a.tenant;
    r.origin = config_.workload.lengths.name;
    r.arrival_us = a.t_us;
    r.prompt_len = a.prompt_len;
    r.target_output_len = a.output_len;
    if (a.client >= 0) client_of_[r.id] = a.client;
    submit(std::move(r), std::nullopt);
  }
}

void Simulation::poll_attacker() {
  if (!attacker_.active()) return;
  Observation obs;
  obs.now = clock_.now;
  obs.total_blocks = scheduler_.pool().total_blocks();
  obs.used_blocks = obs.total_blocks - scheduler_.pool().free_blocks();
  obs.true_usage = scheduler_.pool().used_fraction();
  for (AttackDispatch& d : attacker_.poll(obs)) {
    Request r;
    r.id = next_id_++;
    r.tenant_class = d.tenant_class;
    r.tenant = d.tenant;
    r.origin = d.origin;
    r.arrival_us = clock_.now;
    r.prompt_len = d.prompt_len;
    r.target_output_len = d.output_len;
    submit(std::move(r), d);
  }
}

void Simulation::log_schedule(const ScheduleOutput& out, Micros start, Micros duration) {
  for (RequestId id : out.admitted) {
    const bool resumed = std::find(out.resumed.begin(), out.resumed.end(), id) != out.resumed.end();
    const Request& r = scheduler_.request(id);
    log_.append(start, resumed ? EventKind::Resume : EventKind::Admission, id,
                {{"schedule_seq", r.schedule_seq}, {"prefill_target", r.prefill_target}});
  }
  for (const PreemptionRecord& p : out.preempted) {
    const Request& v = scheduler_.request(p.victim);
    log_.append(start, EventKind::Preemption, p.victim,
                {{"class", to_string(v.tenant_class)},
                 {"requester", p.requester},
                 {"victim_seq", p.victim_seq},
                 {"max_running_seq", p.max_running_seq},
                 {"mode", to_string(p.cost.mode)},
                 {"blocks", p.cost.blocks},
                 {"reprefill_tokens", p.cost.reprefill_tokens},
                 {"waiting_front", scheduler_.waiting().empty() ? json(nullptr)
                                                                : json(scheduler_.waiting().front())}});
  }
  log_.append(start, EventKind::KvSample, std::nullopt,
              {{"iteration", clock_.iteration_index},
               {"duration_us", duration},
               {"usage", out.used_fraction},
               {"blocked", out.blocked_head.has_value()},
               {"waiting", out.waiting_depth},
               {"running", out.running_depth},
               {"ctx_tokens", out.total_ctx_tokens},
               {"prefill_tokens", out.prefill_tokens},
               {"swap_blocks", out.swap_blocks}});
}

double Simulation::usage_at(Micros t) const {
  auto it = std::upper_bound(iterations_.begin(), iterations_.end(), t,
                             [](Micros v, const IterationSample& s) { return v < s.start; });
  if (it == iterations_.begin()) return 0.0;
  --it;
  return t < it->start + it->duration ? it->usage : 0.0;
}

void Simulation::after_iteration(const ScheduleOutput& out, Micros start, Micros duration) {
  const Micros now = clock_.now;
  for (RequestId id : out.decode_set) {
    const Request& r = scheduler_.request(id);
    std::optional<Micros> gap;
    if (r.generated_len > 1) gap = r.itl_trace.back().gap_us;
    if (r.generated_len == 1 || config_.trace.token_events) {
      json d = {{"n", r.generated_len}};
      if (gap) d["gap_us"] = *gap;
      log_.append(now, EventKind::TokenEmitted, id, std::move(d));
    }
    if (attacker_.owns(id)) attacker_.on_token(id, now, gap);
  }
  if (!out.decode_set.empty()) itl_.push_back({now, static_cast<double>(itl_for_iteration(duration))});

  for (RequestId id : out.finished) {
    const Request& r = scheduler_.request(id);
    log_.append(now, EventKind::Finish, id,
                {{"class", to_string(r.tenant_class)},
                 {"output_tokens", r.generated_len},
                 {"preempt_count", r.preempt_count}});
    if (attacker_.owns(id)) attacker_.on_finished(id, now);
    if (auto c = client_of_.find(id); c != client_of_.end()) {
      workload_.on_finished(c->second, now);
      client_of_.erase(c);
    }
  }

  for (ProbeWindowRecord& w : attacker_.take_windows()) {
    LabeledWindow lw;
    lw.true_usage = usage_at(w.t_start_us + (w.t_end_us - w.t_start_us) / 2);
    lw.true_bin = usage_to_bin(lw.true_usage, config_.probe.n_bins);
    json d = {{"t_start_us", w.t_start_us},
              {"gaps", w.gaps_us.size()},
              {"true_usage", lw.true_usage},
              {"true_bin", lw.true_bin}};
    if (w.predicted_bin) d["predicted_bin"] = *w.predicted_bin;
    log_.append(now, EventKind::ProbeWindow, w.request_id, std::move(d));
    lw.window = std::move(w);
    windows_.push_back(std::move(lw));
  }
  for (const DecisionRecord& rec : attacker_.take_decisions()) {
    log_.append(now, EventKind::ControllerDecision, std::nullopt,
                {{"decided_us", rec.t_us},
                 {"predicted_bin", rec.predicted_bin},
                 {"estimate", rec.estimate},
                 {"delta_mem", rec.delta_mem},
                 {"regime", to_string(rec.regime)},
                 {"action", to_string(rec.action.kind)},
                 {"tier", to_string(rec.action.tier)},
                 {"sleep_us", rec.action.sleep_us},
                 {"quota_exhausted", rec.quota_exhausted}});
  }

  kv_acc_.iteration(start, duration, out.used_fraction, out.blocked_head.has_value());
  iterations_.push_back({start, duration, out.used_fraction});
  queue_waiting_.push_back({start, static_cast<double>(out.waiting_depth)});
  queue_running_.push_back({start, static_cast<double>(out.running_depth)});
}

StepSummary Simulation::step_once() {
  StepSummary s;
  s.start_us = clock_.now;
  deliver_arrivals();
  poll_attacker();
  s.schedule = scheduler_.step();

  if (s.schedule.idle()) {
    s.idle = true;
    std::optional<Micros> next = workload_.peek_time();
    if (auto w = attacker_.next_wake(clock_.now)) next = next ? std::min(*next, *w) : *w;
    if (!next && !scheduler_.has_work()) {
      exhausted_ = true;
      return s;
    }
    const Micros tick = config_.idle_tick_us;
    Micros advance = tick;
    if (next && *next > clock_.now) advance = (*next - clock_.now + tick - 1) / tick * tick;
    clock_.now = std::min(clock_.now + advance, std::max(config_.horizon_us, clock_.now));
    return s;
  }

  BatchLoad load;
  load.total_ctx_tokens = s.schedule.total_ctx_tokens;
  load.prefill_tokens = s.schedule.prefill_tokens;
  load.swap_bytes = latency_.swap_bytes_for_blocks(s.schedule.swap_blocks,
                                                   config_.kv.block_size_tokens);
  s.duration_us = latency_.iteration_duration(load);
  log_schedule(s.schedule, s.start_us, s.duration_us);
  clock_.now += s.duration_us;
  ++clock_.iteration_index;
  scheduler_.complete_iteration(s.schedule, clock_.now);
  after_iteration(s.schedule, s.start_us, s.duration_us);
  return s;
}

json Simulation::attacker_summary() const {
  const CostLedger& l = attacker_.ledger();
  json decisions = json::object();
  std::int64_t quota_blocked = 0;
  for (const Event& e : log_.events()) {
    if (e.kind != EventKind::ControllerDecision) continue;
    decisions[e.detail.at("regime").get<std::string>()] =
        decisions.value(e.detail.at("regime").get<std::string>(), 0) + 1;
    if (e.detail.at("quota_exhausted").get<bool>()) ++quota_blocked;
  }
  return {{"strategy", to_string(config_.attacker.strategy)},
          {"attack_requests", attacker_.attack_requests()},
          {"probe_requests", attacker_.probe_requests()},
          {"rejected", attacker_.rejected()},
          {"input_tokens", l.input_tokens()},
          {"output_tokens", l.output_tokens()},
          {"probe_tokens", l.probe_tokens()},
          {"cost_units", l.total().units},
          {"cost_usd", l.total().to_string()},
          {"price_in_cents_per_m", l.pricing().input.cents_per_million},
          {"price_out_cents_per_m", l.pricing().output.cents_per_million},
          {"decisions", std::move(decisions)},
          {"quota_exhausted", quota_blocked},
          {"t_wait_us", attacker_.t_wait_us()}};
}

RunReport Simulation::run() {
  while (!done()) step_once();

  json generated = json::object();
  for (const auto& [id, r] : scheduler_.requests()) {
    if (r.state != RequestState::Finished) generated[std::to_string(id)] = r.generated_len;
  }
  log_.append(clock_.now, EventKind::RunEnd, std::nullopt,
              {{"iterations", clock_.iteration_index}, {"generated", std::move(generated)}});
  kv_acc_.close(clock_.now);

  RunReport rep;
  rep.config = config_;
  rep.clock = clock_;
  for (const auto& [id, r] : scheduler_.requests()) rep.records.push_back(observe(r));
  rep.aggregate = aggregate(rep.records, rejected_, kv_acc_.stats());
  rep.aggregate.attacker = attacker_summary();
  for (const auto& s : iterations_) rep.kv_usage.push_back({s.start, s.usage});
  rep.queue_waiting = queue_waiting_;
  rep.queue_running = queue_running_;
  rep.itl = itl_;
  rep.probe_windows = windows_;
  rep.log = log_;
  return rep;
}

json RunReport::to_json() const {
  return {{"scenario", config.name},
          {"point", point},
          {"seed", config.seed},
          {"horizon_us", config.horizon_us},
          {"end_us", clock.now},
          {"iterations", clock.iteration_index},
          {"requests", records.size()},
          {"events", log.size()},
          {"probe_windows", probe_windows.size()},
          {"aggregate", aggregate.to_json()}};
}

std::vector<LabeledSample> RunReport::labeled_samples() const {
  std::vector<LabeledSample> out;
  out.reserve(probe_windows.size());
  for (const auto& w : probe_windows) out.push_back({w.window.features, w.true_bin});
  return out;
}

RunReport run(const SimConfig& config) {
  config.validate();
  Simulation sim(config, resolve_probe_model(config));
  RunReport rep = sim.run();
  if (!config.trace_output.empty()) write_run_outputs(rep, config.trace_output);
  return rep;
}

namespace {

void write_series(const std::filesystem::path& path, const std::vector<SeriesPoint>& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t_us,value\n";
  for (const auto& p : s) out << fmt::format("{},{}\n", p.t_us, p.value);
}

std::string opt_str(const std::optional<Micros>& v) { return v ? std::to_string(*v) : ""; }
std::string opt_str(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : ""; }

}  // namespace

void write_run_outputs(const RunReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  report.log.write_jsonl(dir / "events.jsonl");
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw IoError("cannot write " + (dir / "report.json").string());
    out << report.to_json().dump(2) << '\n';
  }
  write_series(dir / "kv_usage.csv", report.kv_usage);
  write_series(dir / "queue_waiting.csv", report.queue_waiting);
  write_series(dir / "queue_running.csv", report.queue_running);
  write_series(dir / "itl.csv", report.itl);
  {
    std::ofstream out(dir / "requests.csv");
    if (!out) throw IoError("cannot write requests.csv");
    out << "request_id,class,arrival_us,ttft_us,tpot_us,itl_p99_us,e2e_us,n_output_tokens,"
           "preempt_count,finished\n";
    for (const auto& m : report.records) {
      out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", m.request_id,
                         to_string(m.tenant_class), m.arrival_us, opt_str(m.ttft_us),
                         opt_str(m.tpot_us), opt_str(m.itl_p99_us), opt_str(m.e2e_us),
                         m.n_output_tokens, m.preempt_count, m.finished ? 1 : 0);
    }
  }
  write_samples_csv(dir / "probe_windows.csv", report.labeled_samples());
  {
    std::ofstream out(dir / "scenario.toml");
    if (!out) throw IoError("cannot write scenario.toml");
    out << to_toml(report.config);
  }
}

}  // namespace kvsim
