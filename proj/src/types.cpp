#include "kvsim/types.hpp"

#include <string>

#include "kvsim/errors.hpp"

namespace kvsim {

std::string_view to_string(TenantClass c) {
  switch (c) {
    case TenantClass::Benign: return "benign";
    case TenantClass::Attacker: return "attacker";
    case TenantClass::Probe: return "probe";
  }
  return "?";
}

std::string_view to_string(RequestState s) {
  switch (s) {
    case RequestState::Waiting: return "waiting";
    case RequestState::Running: return "running";
    case RequestState::Swapped: return "swapped";
    case RequestState::Finished: return "finished";
  }
  return "?";
}

TenantClass tenant_class_from_string(std::string_view s) {
  if (s == "benign") return TenantClass::Benign;
  if (s == "attacker") return TenantClass::Attacker;
  if (s == "probe") return TenantClass::Probe;
  throw ConfigError("unknown tenant class '" + std::string(s) + "'");
}

}  // namespace kvsim
