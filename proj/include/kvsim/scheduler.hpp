#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "kvsim/kv_manager.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

enum class RecoveryMode { Swap, Recompute };

std::string_view to_string(RecoveryMode m);

/// Behavioral admission quota applied per tenant at submit time.
struct TenantQuota {
  std::optional<std::int64_t> max_outstanding_per_tenant;
  /// Tenants whose finished requests average more output than this multiple
  /// of their input are refused further submissions.
  std::optional<double> max_expansion_ratio;
};

struct SchedulerConfig {
  std::int64_t token_budget_per_iter = 512;
  RecoveryMode recovery_mode = RecoveryMode::Recompute;
  std::optional<std::int64_t> max_running;
  std::optional<std::int64_t> output_cap;
  TenantQuota tenant_quota;

  void validate() const;
};

struct RecoveryCost {
  RecoveryMode mode = RecoveryMode::Recompute;
  /// Blocks moved to host now (Swap) or discarded (Recompute).
  std::int64_t blocks = 0;
  /// Tokens the victim must prefill again before it can decode.
  std::int64_t reprefill_tokens = 0;
};

struct PreemptionRecord {
  RequestId victim = 0;
  /// Request whose block claim forced the preemption.
  RequestId requester = 0;
  std::int64_t victim_seq = 0;
  /// Highest schedule_seq among running requests when the victim was chosen.
  std::int64_t max_running_seq = 0;
  RecoveryCost cost;
};

struct ScheduleOutput {
  std::vector<RequestId> admitted;
  /// Re-admissions of previously preempted requests (subset of admitted).
  std::vector<RequestId> resumed;
  std::vector<std::pair<RequestId, std::int64_t>> prefill_chunks;
  /// Requests that emitted one token this iteration.
  std::vector<RequestId> decode_set;
  std::vector<PreemptionRecord> preempted;
  std::optional<RequestId> blocked_head;
  std::vector<RequestId> finished;

  std::int64_t prefill_tokens = 0;
  std::int64_t total_ctx_tokens = 0;
  std::int64_t swap_blocks = 0;
  /// KV occupancy while the iteration executes (before finished requests
  /// release their blocks).
  double used_fraction = 0.0;
  std::size_t waiting_depth = 0;
  std::size_t running_depth = 0;

  bool idle() const {
    return decode_set.empty() && prefill_chunks.empty() && preempted.empty() &&
           admitted.empty() && swap_blocks == 0;
  }
};

struct QueueDepths {
  std::size_t waiting = 0;
  std::size_t running = 0;
};

/// Iteration-level scheduler: FCFS admission with memory-based head-of-line
/// blocking, chunked prefill, continuous decode, LIFO preemption.
class Scheduler {
 public:
  Scheduler(const SchedulerConfig& config, const KvConfig& kv);

  /// Queues a new request at the tail of WAITING. Throws DuplicateId or
  /// QuotaExceeded.
  void submit(Request request);

  ScheduleOutput step();

  /// Stamps token and finish times for the iteration that ended at `end_us`.
  void complete_iteration(const ScheduleOutput& out, Micros end_us);

  /// Evicts a running victim and puts it at the front of WAITING.
  RecoveryCost apply_recovery(RequestId victim);

  QueueDepths queue_depths() const { return {waiting_.size(), running_.size()}; }
  bool has_work() const { return !waiting_.empty() || !running_.empty(); }

  const Request& request(RequestId id) const;
  bool knows(RequestId id) const { return requests_.contains(id); }
  const std::map<RequestId, Request>& requests() const { return requests_; }
  const std::deque<RequestId>& waiting() const { return waiting_; }
  const std::vector<RequestId>& running() const { return running_; }
  const BlockPool& pool() const { return pool_; }
  const SchedulerConfig& config() const { return config_; }

  std::int64_t effective_output_target(const Request& r) const;
  std::int64_t outstanding(TenantId tenant) const;

 private:
  struct TenantStats {
    std::int64_t outstanding = 0;
    std::int64_t finished_input = 0;
    std::int64_t finished_output = 0;
  };

  Request& mut(RequestId id);
  bool admit_head(ScheduleOutput& out, std::int64_t& budget);
  void finish(RequestId id);

  SchedulerConfig config_;
  BlockPool pool_;
  std::map<RequestId, Request> requests_;
  std::deque<RequestId> waiting_;
  std::vector<RequestId> running_;  // ascending schedule_seq
  std::int64_t next_seq_ = 0;
  std::unordered_map<TenantId, TenantStats> tenants_;
};

}  // namespace kvsim
