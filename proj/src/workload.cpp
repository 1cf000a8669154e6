#include "kvsim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kvsim/errors.hpp"

namespace kvsim {

std::int64_t LogNormalSpec::sample(RandomStream& rng, std::int64_t max_len) const {
  const double v = rng.lognormal(std::log(median), sigma);
  const auto n = static_cast<std::int64_t>(std::llround(v));
  return std::clamp<std::int64_t>(n, 1, std::max<std::int64_t>(1, max_len));
}

LengthDist preset(std::string_view name) {
  // Synthetic stand-ins: short instruction following vs long dialogue.
  if (name == "alpaca-like") {
    return {"alpaca-like", {50.0, 0.6}, {250.0, 0.6}};
  }
  if (name == "sharegpt-like") {
    return {"sharegpt-like", {300.0, 0.8}, {800.0, 0.7}};
  }
  throw UnknownPreset("unknown length preset '" + std::string(name) + "'");
}

std::string_view to_string(ArrivalKind k) {
  switch (k) {
    case ArrivalKind::None: return "none";
    case ArrivalKind::Poisson: return "poisson";
    case ArrivalKind::Closed: return "closed";
    case ArrivalKind::Trace: return "trace";
    case ArrivalKind::Profile: return "profile";
  }
  return "?";
}

std::string_view to_string(TrafficTier t) {
  switch (t) {
    case TrafficTier::Low: return "low";
    case TrafficTier::Medium: return "medium";
    case TrafficTier::High: return "high";
  }
  return "?";
}

double profile_rate_per_hour(TrafficTier tier) {
  switch (tier) {
    case TrafficTier::Low: return 13.7;     // 01:00
    case TrafficTier::Medium: return 47.9;  // 20:00
    case TrafficTier::High: return 115.1;   // 16:00
  }
  return 0.0;
}

void WorkloadConfig::validate() const {
  if (arrival == ArrivalKind::Poisson && !(rate_per_s > 0)) {
    throw ConfigError("workload.rate_per_s must be > 0 for poisson arrivals");
  }
  if (arrival == ArrivalKind::Trace && trace_path.empty()) {
    throw ConfigError("workload.trace_path is required for trace arrivals");
  }
  if (n_clients < 0) throw ConfigError("workload.n_clients must be >= 0");
  if (think_time_us < 0) throw ConfigError("workload.think_time_s must be >= 0");
  if (!(lengths.prompt.median >= 1) || !(lengths.output.median >= 1) ||
      lengths.prompt.sigma < 0 || lengths.output.sigma < 0) {
    throw ConfigError("workload length distribution needs median >= 1 and sigma >= 0");
  }
}

double WorkloadConfig::total_rate_per_s() const {
  switch (arrival) {
    case ArrivalKind::Poisson: return rate_per_s * static_cast<double>(n_clients);
    case ArrivalKind::Profile:
      return profile_rate_per_hour(tier) / 3600.0 * static_cast<double>(n_clients);
    default: return 0.0;
  }
}

std::vector<TraceRow> parse_trace_csv(std::string_view text) {
  std::vector<TraceRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "t_us,prompt_len,output_len,tenant") {
        throw TraceParseError("line 1: expected header 't_us,prompt_len,output_len,tenant'");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() != 4) {
      throw TraceParseError("line " + std::to_string(lineno) + ": expected 4 columns");
    }
    auto parse_int = [&](const std::string& s, const char* what) -> std::int64_t {
      std::size_t pos = 0;
      long long v = 0;
      try {
        v = std::stoll(s, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != s.size()) {
        throw TraceParseError("line " + std::to_string(lineno) + ": bad " + what +
                              " '" + s + "'");
      }
      return v;
    };
    TraceRow row;
    row.t_us = parse_int(cols[0], "t_us");
    row.prompt_len = parse_int(cols[1], "prompt_len");
    row.output_len = parse_int(cols[2], "output_len");
    const std::int64_t tenant = parse_int(cols[3], "tenant");
    if (row.t_us < 0 || row.prompt_len < 1 || row.output_len < 1 || tenant < 0) {
      throw TraceParseError("line " + std::to_string(lineno) +
                            ": values out of range");
    }
    row.tenant = static_cast<TenantId>(tenant);
    rows.push_back(row);
  }
  if (!header_seen) throw TraceParseError("empty trace file");
  std::stable_sort(rows.begin(), rows.end(),
                   [](const TraceRow& a, const TraceRow& b) { return a.t_us < b.t_us; });
  return rows;
}

std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_trace_csv(buf.str());
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace file " + path.string());
  out << "t_us,prompt_len,output_len,tenant\n";
  for (const auto& r : rows) {
    out << r.t_us << ',' << r.prompt_len << ',' << r.output_len << ',' << r.tenant << '\n';
  }
}

Workload::Workload(const WorkloadConfig& config, RandomStream rng,
                   Micros horizon_us, std::int64_t max_model_len)
    : config_(config), rng_(rng), horizon_us_(horizon_us),
      max_model_len_(max_model_len) {
  config_.validate();
  for (std::int64_t c = 0; c < config_.n_clients; ++c) {
    RandomStream client = rng_.split(static_cast<std::uint64_t>(c));
    client_gap_rng_.push_back(client.split("gaps"));
    client_len_rng_.push_back(client.split("lengths"));
  }
  switch (config_.arrival) {
    case ArrivalKind::None:
      break;
    case ArrivalKind::Poisson:
      per_client_rate_ = config_.rate_per_s;
      break;
    case ArrivalKind::Profile:
      per_client_rate_ = profile_rate_per_hour(config_.tier) / 3600.0;
      break;
    case ArrivalKind::Closed:
      for (std::int64_t c = 0; c < config_.n_clients; ++c) {
        pending_.push({config_.start_us, c});
      }
      break;
    case ArrivalKind::Trace:
      trace_ = read_trace_csv(config_.trace_path);
      break;
  }
  if (per_client_rate_ > 0) {
    for (std::int64_t c = 0; c < config_.n_clients; ++c) {
      schedule_next(c, config_.start_us);
    }
  }
}

void Workload::schedule_next(std::int64_t client, Micros after) {
  auto& g = client_gap_rng_[static_cast<std::size_t>(client)];
  const double gap_s = g.exponential(per_client_rate_);
  const Micros t = after + std::max<Micros>(1, std::llround(gap_s * 1e6));
  if (t < horizon_us_) pending_.push({t, client});
}

Arrival Workload::sample_request(std::int64_t client, Micros t) {
  auto& lr = client_len_rng_[static_cast<std::size_t>(client)];
  Arrival a;
  a.t_us = t;
  a.client = client;
  a.tenant = kBenignTenantBase + static_cast<TenantId>(client);
  a.prompt_len = config_.lengths.prompt.sample(lr, max_model_len_ - 1);
  a.output_len = config_.lengths.output.sample(lr, max_model_len_ - a.prompt_len);
  return a;
}

std::optional<Micros> Workload::peek_time() const {
  if (config_.arrival == ArrivalKind::Trace) {
    if (trace_pos_ < trace_.size() && trace_[trace_pos_].t_us < horizon_us_) {
      return trace_[trace_pos_].t_us;
    }
    return std::nullopt;
  }
  if (pending_.empty()) return std::nullopt;
  return pending_.top().t_us;
}

std::optional<Arrival> Workload::next_arrival() {
  if (config_.arrival == ArrivalKind::Trace) {
    if (trace_pos_ >= trace_.size() || trace_[trace_pos_].t_us >= horizon_us_) {
      return std::nullopt;
    }
    const TraceRow& row = trace_[trace_pos_++];
    Arrival a;
    a.t_us = row.t_us;
    a.prompt_len = std::min(row.prompt_len, max_model_len_ - 1);
    a.output_len = std::min(row.output_len, max_model_len_ - a.prompt_len);
    a.tenant = row.tenant;
    a.client = -1;
    return a;
  }
  if (pending_.empty()) return std::nullopt;
  const Pending p = pending_.top();
  if (p.t_us >= horizon_us_) return std::nullopt;
  pending_.pop();
  Arrival a = sample_request(p.client, p.t_us);
  if (per_client_rate_ > 0) schedule_next(p.client, p.t_us);
  return a;
}

void Workload::on_finished(std::int64_t client, Micros t_us) {
  if (config_.arrival != ArrivalKind::Closed || client < 0) return;
  const Micros t = t_us + config_.think_time_us;
  if (t < horizon_us_) pending_.push({t, client});
}

}  // namespace kvsim
