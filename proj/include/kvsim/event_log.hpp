#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

enum class EventKind {
  Arrival,
  Rejected,
  Admission,
  Resume,
  TokenEmitted,
  Preemption,
  Finish,
  ProbeDispatched,
  AttackDispatched,
  KvSample,
  ControllerDecision,
  ProbeWindow,
  RunEnd,
};

std::string_view to_string(EventKind k);
EventKind event_kind_from_string(std::string_view s);

struct Event {
  Micros t_us = 0;
  EventKind kind = EventKind::Arrival;
  std::optional<RequestId> request_id;
  nlohmann::json detail = nlohmann::json::object();
};

/// Append-only, time-ordered event trace.
class EventLog {
 public:
  /// Throws std::logic_error if `e` is older than the last event.
  void append(Event e);
  void append(Micros t, EventKind kind, std::optional<RequestId> id,
              nlohmann::json detail = nlohmann::json::object());

  const std::vector<Event>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  static std::string to_line(const Event& e);
  static Event from_line(std::string_view line);
  void write_jsonl(const std::filesystem::path& path) const;
  static EventLog read_jsonl(const std::filesystem::path& path);

 private:
  std::vector<Event> events_;
};

}  // namespace kvsim
