#include "kvsim/event_log.hpp"

#include <array>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "kvsim/errors.hpp"

namespace kvsim {

namespace {
constexpr std::array<std::string_view, 13> kNames = {
    "Arrival",    "Rejected",         "Admission",        "Resume",
    "TokenEmitted", "Preemption",     "Finish",           "ProbeDispatched",
    "AttackDispatched", "KvSample",   "ControllerDecision", "ProbeWindow",
    "RunEnd"};
}

std::string_view to_string(EventKind k) { return kNames[static_cast<std::size_t>(k)]; }

EventKind event_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == s) return static_cast<EventKind>(i);
  }
  throw ConfigError("unknown event kind '" + std::string(s) + "'");
}

void EventLog::append(Event e) {
  if (!events_.empty() && e.t_us < events_.back().t_us) {
    throw std::logic_error(fmt::format("event at {} us after event at {} us", e.t_us,
                                       events_.back().t_us));
  }
  events_.push_back(std::move(e));
}

void EventLog::append(Micros t, EventKind kind, std::optional<RequestId> id,
                      nlohmann::json detail) {
  append(Event{t, kind, id, std::move(detail)});
}

std::string EventLog::to_line(const Event& e) {
  std::string line = fmt::format(R"({{"t_us":{},"kind":"{}")", e.t_us, to_string(e.kind));
  if (e.request_id) line += fmt::format(R"(,"request_id":{})", *e.request_id);
  line += R"(,"detail":)";
  line += e.detail.dump();
  line += '}';
  return line;
}

Event EventLog::from_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  Event e;
  e.t_us = j.at("t_us");
  e.kind = event_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("request_id")) e.request_id = j.at("request_id").get<RequestId>();
  e.detail = j.value("detail", nlohmann::json::object());
  return e;
}

void EventLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write event log " + path.string());
  for (const Event& e : events_) out << to_line(e) << '\n';
  if (!out) throw IoError("failed writing event log " + path.string());
}

EventLog EventLog::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open event log " + path.string());
  EventLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) log.append(from_line(line));
  }
  return log;
}

}  // namespace kvsim
