#include "kvsim/metrics.hpp"

#include <numeric>

namespace kvsim {

using nlohmann::json;

MetricsRecord observe(const Request& r) {
  MetricsRecord m;
  m.request_id = r.id;
  m.tenant_class = r.tenant_class;
  m.arrival_us = r.arrival_us;
  m.n_output_tokens = r.generated_len;
  m.preempt_count = r.preempt_count;
  m.finished = r.state == RequestState::Finished;
  if (r.first_token_us) m.ttft_us = *r.first_token_us - r.arrival_us;
  if (m.finished) {
    m.e2e_us = *r.finish_us - r.arrival_us;
    if (r.generated_len >= 2) {
      m.tpot_us = static_cast<double>(*r.last_token_us - *r.first_token_us) /
                  static_cast<double>(r.generated_len - 1);
    }
  }
  if (!r.itl_trace.empty()) {
    std::vector<Micros> gaps;
    gaps.reserve(r.itl_trace.size());
    for (const auto& e : r.itl_trace) gaps.push_back(e.gap_us);
    m.itl_p99_us = percentile(std::move(gaps), 99.0);
  }
  return m;
}

MetricsRecord finalize(const Request& r) {
  if (r.state != RequestState::Finished) {
    throw NotFinished("request " + std::to_string(r.id) + " has not finished");
  }
  return observe(r);
}

std::optional<Summary> summarize(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  Summary s;
  s.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  s.median = percentile(values, 50.0);
  s.p99 = percentile(values, 99.0);
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  return s;
}

double KvStats::band_occupancy() const {
  return total_us > 0 ? static_cast<double>(band_us) / static_cast<double>(total_us) : 0.0;
}

double KvStats::mean_usage() const {
  return total_us > 0 ? usage_time_integral / static_cast<double>(total_us) : 0.0;
}

void KvAccumulator::iteration(Micros start_us, Micros duration_us, double usage, bool blocked) {
  if (start_us > last_end_us_) prev_usage_ = 0.0;  // idle gap
  const auto bins = static_cast<int>(stats_.histogram_us.size());
  const int b = std::min(static_cast<int>(std::floor(usage * bins)), bins - 1);
  stats_.histogram_us[static_cast<std::size_t>(std::max(b, 0))] += duration_us;
  if (usage >= stats_.c_sat) {
    stats_.band_us += duration_us;
    if (prev_usage_ < stats_.c_sat) ++stats_.csat_crossings;
  }
  stats_.usage_time_integral += usage * static_cast<double>(duration_us);
  stats_.busy_us += duration_us;
  ++stats_.iterations;
  if (blocked) ++stats_.hol_blocked_steps;
  prev_usage_ = usage;
  last_end_us_ = start_us + duration_us;
}

void KvAccumulator::close(Micros end_us) {
  stats_.total_us = std::max(end_us, last_end_us_);
  stats_.histogram_us[0] += stats_.total_us - stats_.busy_us;
}

const ClassReport& AggregateReport::cls(TenantClass c) const {
  static const ClassReport empty;
  auto it = classes.find(c);
  return it == classes.end() ? empty : it->second;
}

namespace {

json summary_json(const std::optional<Summary>& s) {
  if (!s) return nullptr;
  return {{"n", s->n},       {"mean", s->mean}, {"median", s->median},
          {"p99", s->p99},   {"min", s->min},   {"max", s->max}};
}

std::optional<Summary> summary_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  Summary s;
  s.n = j.at("n");
  s.mean = j.at("mean");
  s.median = j.at("median");
  s.p99 = j.at("p99");
  s.min = j.at("min");
  s.max = j.at("max");
  return s;
}

constexpr TenantClass kClasses[] = {TenantClass::Benign, TenantClass::Attacker,
                                    TenantClass::Probe};

}  // namespace

json AggregateReport::to_json() const {
  json jc = json::object();
  for (TenantClass c : kClasses) {
    const ClassReport& r = cls(c);
    jc[std::string(to_string(c))] = {
        {"submitted", r.submitted}, {"rejected", r.rejected},
        {"finished", r.finished},   {"in_flight", r.in_flight},
        {"starved", r.starved},     {"output_tokens", r.output_tokens},
        {"preempted", r.preempted}, {"ttft_us", summary_json(r.ttft_us)},
        {"tpot_us", summary_json(r.tpot_us)}, {"e2e_us", summary_json(r.e2e_us)}};
  }
  json j = {{"classes", std::move(jc)},
            {"total_preemptions", total_preemptions},
            {"kv",
             {{"c_sat", kv.c_sat},
              {"total_us", kv.total_us},
              {"busy_us", kv.busy_us},
              {"iterations", kv.iterations},
              {"hol_blocked_steps", kv.hol_blocked_steps},
              {"csat_crossings", kv.csat_crossings},
              {"histogram_us", kv.histogram_us},
              {"band_us", kv.band_us},
              {"band_occupancy", kv.band_occupancy()},
              {"mean_usage", kv.mean_usage()},
              {"usage_time_integral", kv.usage_time_integral}}},
            {"attacker", attacker}};
  if (slowdown) j["slowdown"] = {{"ttft", slowdown->ttft}, {"tpot", slowdown->tpot}};
  return j;
}

AggregateReport AggregateReport::from_json(const json& j) {
  AggregateReport a;
  try {
    for (TenantClass c : kClasses) {
      const json& r = j.at("classes").at(std::string(to_string(c)));
      ClassReport cr;
      cr.submitted = r.at("submitted");
      cr.rejected = r.at("rejected");
      cr.finished = r.at("finished");
      cr.in_flight = r.at("in_flight");
      cr.starved = r.at("starved");
      cr.output_tokens = r.at("output_tokens");
      cr.preempted = r.at("preempted");
      cr.ttft_us = summary_from(r.at("ttft_us"));
      cr.tpot_us = summary_from(r.at("tpot_us"));
      cr.e2e_us = summary_from(r.at("e2e_us"));
      a.classes[c] = cr;
    }
    a.total_preemptions = j.at("total_preemptions");
    const json& kv = j.at("kv");
    a.kv.c_sat = kv.at("c_sat");
    a.kv.total_us = kv.at("total_us");
    a.kv.busy_us = kv.at("busy_us");
    a.kv.iterations = kv.at("iterations");
    a.kv.hol_blocked_steps = kv.at("hol_blocked_steps");
    a.kv.csat_crossings = kv.at("csat_crossings");
    a.kv.histogram_us = kv.at("histogram_us").get<std::vector<Micros>>();
    a.kv.band_us = kv.at("band_us");
    a.kv.usage_time_integral = kv.at("usage_time_integral");
    a.attacker = j.value("attacker", json::object());
    if (j.contains("slowdown")) {
      a.slowdown = Slowdown{j["slowdown"].at("ttft"), j["slowdown"].at("tpot")};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed aggregate report: ") + e.what());
  }
  return a;
}

AggregateReport aggregate(const std::vector<MetricsRecord>& records,
                          const RejectedCounts& rejected, const KvStats& kv) {
  AggregateReport a;
  std::map<TenantClass, std::vector<double>> ttft, tpot, e2e;
  for (TenantClass c : kClasses) {
    a.classes[c] = ClassReport{};
    auto it = rejected.by_class.find(c);
    if (it != rejected.by_class.end()) a.classes[c].rejected = it->second;
  }
  for (const MetricsRecord& m : records) {
    ClassReport& r = a.classes[m.tenant_class];
    ++r.submitted;
    r.output_tokens += m.n_output_tokens;
    r.preempted += m.preempt_count;
    a.total_preemptions += m.preempt_count;
    if (m.finished) {
      ++r.finished;
    } else if (m.ttft_us) {
      ++r.in_flight;
    } else {
      ++r.starved;
    }
    if (m.ttft_us) ttft[m.tenant_class].push_back(static_cast<double>(*m.ttft_us));
    if (m.tpot_us) tpot[m.tenant_class].push_back(*m.tpot_us);
    if (m.e2e_us) e2e[m.tenant_class].push_back(static_cast<double>(*m.e2e_us));
  }
  for (TenantClass c : kClasses) {
    a.classes[c].ttft_us = summarize(ttft[c]);
    a.classes[c].tpot_us = summarize(tpot[c]);
    a.classes[c].e2e_us = summarize(e2e[c]);
  }
  a.kv = kv;
  return a;
}

AggregateReport aggregate_from_events(const EventLog& log, double c_sat) {
  struct Trace {
    TenantClass cls = TenantClass::Benign;
    Micros arrival = 0;
    std::optional<Micros> first;
    std::optional<Micros> finish;
    std::int64_t tokens = 0;
    std::int64_t preempts = 0;
  };
  std::map<RequestId, Trace> traces;
  RejectedCounts rejected;
  KvAccumulator acc(c_sat);
  Micros end_us = 0;
  for (const Event& e : log.events()) {
    switch (e.kind) {
      case EventKind::Arrival: {
        Trace t;
        t.cls = tenant_class_from_string(e.detail.at("class").get<std::string>());
        t.arrival = e.detail.at("arrival_us");
        traces[*e.request_id] = t;
        break;
      }
      case EventKind::Rejected:
        ++rejected.by_class[tenant_class_from_string(e.detail.at("class").get<std::string>())];
        break;
      case EventKind::TokenEmitted: {
        Trace& t = traces.at(*e.request_id);
        if (!t.first) t.first = e.t_us;
        break;
      }
      case EventKind::Preemption:
        ++traces.at(*e.request_id).preempts;
        break;
      case EventKind::Finish: {
        Trace& t = traces.at(*e.request_id);
        t.finish = e.t_us;
        t.tokens = e.detail.at("output_tokens");
        break;
      }
      case EventKind::KvSample:
        acc.iteration(e.t_us, e.detail.at("duration_us"), e.detail.at("usage"),
                      e.detail.at("blocked"));
        break;
      case EventKind::RunEnd:
        end_us = e.t_us;
        for (auto& [id, t] : traces) {
          if (!t.finish) t.tokens = e.detail.at("generated").value(std::to_string(id), std::int64_t{0});
        }
        break;
      default:
        break;
    }
  }
  acc.close(end_us);
  std::vector<MetricsRecord> records;
  for (const auto& [id, t] : traces) {
    MetricsRecord m;
    m.request_id = id;
    m.tenant_class = t.cls;
    m.arrival_us = t.arrival;
    m.n_output_tokens = t.tokens;
    m.preempt_count = t.preempts;
    m.finished = t.finish.has_value();
    if (t.first) m.ttft_us = *t.first - t.arrival;
    if (t.finish) {
      m.e2e_us = *t.finish - t.arrival;
      if (t.tokens >= 2) {
        m.tpot_us = static_cast<double>(*t.finish - *t.first) / static_cast<double>(t.tokens - 1);
      }
    }
    records.push_back(m);
  }
  return aggregate(records, rejected, acc.stats());
}

Slowdown slowdown(const AggregateReport& report, const AggregateReport& baseline) {
  const ClassReport& a = report.cls(TenantClass::Benign);
  const ClassReport& b = baseline.cls(TenantClass::Benign);
  if (!b.ttft_us || !(b.ttft_us->mean > 0) || !b.tpot_us || !(b.tpot_us->mean > 0)) {
    throw ZeroBaseline("baseline has no positive benign TTFT/TPOT mean");
  }
  if (!a.ttft_us || !a.tpot_us) {
    throw EmptyInput("report has no benign TTFT/TPOT samples");
  }
  return {a.ttft_us->mean / b.ttft_us->mean, a.tpot_us->mean / b.tpot_us->mean};
}

}  // namespace kvsim
