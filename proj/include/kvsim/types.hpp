#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kvsim {

/// Simulated time in integer microseconds.
using Micros = std::int64_t;
using RequestId = std::uint64_t;
using TenantId = std::uint32_t;

inline constexpr Micros kMicrosPerSecond = 1'000'000;

enum class TenantClass { Benign, Attacker, Probe };
enum class RequestState { Waiting, Running, Swapped, Finished };

std::string_view to_string(TenantClass c);
std::string_view to_string(RequestState s);
TenantClass tenant_class_from_string(std::string_view s);

struct ItlEntry {
  Micros t_us = 0;
  Micros gap_us = 0;
};

/// A simulated inference job. `target_output_len` is ground truth the
/// attacker never observes.
struct Request {
  RequestId id = 0;
  TenantClass tenant_class = TenantClass::Benign;
  TenantId tenant = 0;
  /// Free-form origin label ("alpaca-like", "high", "probe", ...).
  std::string origin = "benign";
  Micros arrival_us = 0;
  std::int64_t prompt_len = 1;
  std::int64_t target_output_len = 1;
  std::int64_t generated_len = 0;
  std::int64_t prefill_progress = 0;
  /// Tokens that must be prefilled before decoding resumes. Equals prompt_len
  /// for fresh requests, prompt_len + generated_len after a recompute.
  std::int64_t prefill_target = 0;
  RequestState state = RequestState::Waiting;
  std::int64_t schedule_seq = -1;
  std::optional<Micros> first_token_us;
  std::optional<Micros> last_token_us;
  std::optional<Micros> finish_us;
  std::vector<ItlEntry> itl_trace;
  std::int64_t preempt_count = 0;
  bool admitted_once = false;

  bool prefill_done() const { return prefill_progress >= prefill_target; }
  std::int64_t context_tokens() const { return prompt_len + generated_len; }
};

}  // namespace kvsim
