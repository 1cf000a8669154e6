#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kvsim/metrics.hpp"

namespace kvsim {

struct RunSummary {
  std::string label;
  AggregateReport aggregate;
};

/// Reads <dir>/report.json. Throws IoError when missing, ConfigError when
/// malformed.
RunSummary load_run_summary(const std::filesystem::path& dir);

/// Comparison table over benign latency, preemptions and attacker spend.
/// TTFT columns in seconds, TPOT columns in milliseconds; slowdown columns
/// are relative to `baseline` when given.
std::string render_table(const std::vector<RunSummary>& runs,
                         const std::optional<RunSummary>& baseline);

}  // namespace kvsim
