#include "kvsim/scheduler.hpp"

#include <algorithm>
#include <string>

#include "kvsim/errors.hpp"

namespace kvsim {

std::string_view to_string(RecoveryMode m) {
  return m == RecoveryMode::Swap ? "swap" : "recompute";
}

void SchedulerConfig::validate() const {
  if (token_budget_per_iter < 1) {
    throw ConfigError("scheduler.token_budget must be >= 1");
  }
  if (max_running && *max_running < 1) {
    throw ConfigError("scheduler.max_running must be >= 1");
  }
  if (output_cap && *output_cap < 1) {
    throw ConfigError("scheduler.output_cap must be >= 1");
  }
  if (tenant_quota.max_outstanding_per_tenant &&
      *tenant_quota.max_outstanding_per_tenant < 1) {
    throw ConfigError("scheduler.quota.max_outstanding_per_tenant must be >= 1");
  }
  if (tenant_quota.max_expansion_ratio && !(*tenant_quota.max_expansion_ratio > 0)) {
    throw ConfigError("scheduler.quota.max_expansion_ratio must be > 0");
  }
}

Scheduler::Scheduler(const SchedulerConfig& config, const KvConfig& kv)
    : config_(config), pool_(kv) {
  config_.validate();
}

const Request& Scheduler::request(RequestId id) const {
  auto it = requests_.find(id);
  if (it == requests_.end()) {
    throw UnknownRequest("unknown request " + std::to_string(id));
  }
  return it->second;
}

Request& Scheduler::mut(RequestId id) {
  return const_cast<Request&>(request(id));
}

std::int64_t Scheduler::effective_output_target(const Request& r) const {
  return config_.output_cap ? std::min(r.target_output_len, *config_.output_cap)
                            : r.target_output_len;
}

std::int64_t Scheduler::outstanding(TenantId tenant) const {
  auto it = tenants_.find(tenant);
  return it == tenants_.end() ? 0 : it->second.outstanding;
}

void Scheduler::submit(Request request) {
  if (requests_.contains(request.id)) {
    throw DuplicateId("request " + std::to_string(request.id) + " already submitted");
  }
  if (request.prompt_len < 1 || request.target_output_len < 1) {
    throw ConfigError("request " + std::to_string(request.id) +
                      " needs prompt_len >= 1 and target_output_len >= 1");
  }
  TenantStats& stats = tenants_[request.tenant];
  const TenantQuota& q = config_.tenant_quota;
  if (q.max_outstanding_per_tenant &&
      stats.outstanding >= *q.max_outstanding_per_tenant) {
    throw QuotaExceeded("tenant " + std::to_string(request.tenant) + " has " +
                        std::to_string(stats.outstanding) +
                        " outstanding requests");
  }
  if (q.max_expansion_ratio && stats.finished_input > 0 &&
      static_cast<double>(stats.finished_output) >
          *q.max_expansion_ratio * static_cast<double>(stats.finished_input)) {
    throw QuotaExceeded("tenant " + std::to_string(request.tenant) +
                        " exceeds the output/input expansion quota");
  }
  request.state = RequestState::Waiting;
  request.generated_len = 0;
  request.prefill_progress = 0;
  request.prefill_target = request.prompt_len;
  request.schedule_seq = -1;
  ++stats.outstanding;
  const RequestId id = request.id;
  requests_.emplace(id, std::move(request));
  waiting_.push_back(id);
}

bool Scheduler::admit_head(ScheduleOutput& out, std::int64_t& budget) {
  const RequestId head = waiting_.front();
  Request& r = mut(head);
  if (r.state == RequestState::Swapped) {
    const std::int64_t blocks = pool_.swapped_blocks(head);
    if (pool_.free_blocks() < blocks + pool_.watermark_blocks()) {
      out.blocked_head = head;
      return false;
    }
    out.swap_blocks += pool_.swap_in(head);
    out.resumed.push_back(head);
  } else {
    if (budget <= 0) return false;
    if (!pool_.can_allocate(r.prefill_target)) {
      out.blocked_head = head;
      return false;
    }
    pool_.allocate(head, r.prefill_target);
    const std::int64_t chunk = std::min(r.prefill_target - r.prefill_progress, budget);
    if (chunk > 0) {
      r.prefill_progress += chunk;
      budget -= chunk;
      out.prefill_chunks.emplace_back(head, chunk);
      out.prefill_tokens += chunk;
    }
    if (r.admitted_once) out.resumed.push_back(head);
  }
  r.state = RequestState::Running;
  r.schedule_seq = next_seq_++;
  r.admitted_once = true;
  waiting_.pop_front();
  running_.push_back(head);
  out.admitted.push_back(head);
  return true;
}

ScheduleOutput Scheduler::step() {
  ScheduleOutput out;
  std::int64_t budget = config_.token_budget_per_iter;

  // Prefill continues head-first for requests already in the batch.
  for (RequestId id : running_) {
    if (budget <= 0) break;
    Request& r = mut(id);
    if (r.prefill_done()) continue;
    const std::int64_t chunk = std::min(r.prefill_target - r.prefill_progress, budget);
    r.prefill_progress += chunk;
    budget -= chunk;
    out.prefill_chunks.emplace_back(id, chunk);
    out.prefill_tokens += chunk;
  }

  // FCFS admission; the first memory failure ends admission for this step.
  while (!waiting_.empty()) {
    if (config_.max_running &&
        static_cast<std::int64_t>(running_.size()) >= *config_.max_running) {
      break;
    }
    if (!admit_head(out, budget)) break;
  }

  // Decode: one token per fully prefilled request, oldest first.
  const std::vector<RequestId> batch = running_;
  for (RequestId id : batch) {
    Request& r = mut(id);
    if (r.state != RequestState::Running || !r.prefill_done()) continue;
    for (;;) {
      if (pool_.append_token(id).ok()) {
        ++r.generated_len;
        out.decode_set.push_back(id);
        break;
      }
      const RequestId victim = running_.back();
      PreemptionRecord rec;
      rec.victim = victim;
      rec.requester = id;
      rec.victim_seq = request(victim).schedule_seq;
      rec.max_running_seq = rec.victim_seq;
      for (RequestId other : running_) {
        rec.max_running_seq = std::max(rec.max_running_seq, request(other).schedule_seq);
      }
      rec.cost = apply_recovery(victim);
      if (rec.cost.mode == RecoveryMode::Swap) out.swap_blocks += rec.cost.blocks;
      out.preempted.push_back(rec);
      if (victim == id) break;
    }
  }

  for (RequestId id : running_) {
    const Request& r = request(id);
    out.total_ctx_tokens += r.prefill_done() ? pool_.context_tokens(id) : r.prefill_progress;
  }
  out.used_fraction = pool_.used_fraction();

  for (RequestId id : out.decode_set) {
    const Request& r = request(id);
    if (r.state == RequestState::Running &&
        r.generated_len >= effective_output_target(r)) {
      out.finished.push_back(id);
    }
  }
  for (RequestId id : out.finished) finish(id);

  out.waiting_depth = waiting_.size();
  out.running_depth = running_.size();
  return out;
}

RecoveryCost Scheduler::apply_recovery(RequestId victim) {
  Request& r = mut(victim);
  auto it = std::find(running_.begin(), running_.end(), victim);
  if (it == running_.end()) {
    throw UnknownRequest("apply_recovery: request " + std::to_string(victim) +
                         " is not running");
  }
  running_.erase(it);
  RecoveryCost cost;
  cost.mode = config_.recovery_mode;
  if (config_.recovery_mode == RecoveryMode::Swap) {
    cost.blocks = pool_.swap_out(victim);
    r.state = RequestState::Swapped;
  } else {
    cost.blocks = pool_.free(victim);
    r.prefill_progress = 0;
    r.prefill_target = r.prompt_len + r.generated_len;
    cost.reprefill_tokens = r.prefill_target;
    r.state = RequestState::Waiting;
  }
  ++r.preempt_count;
  waiting_.push_front(victim);
  return cost;
}

void Scheduler::finish(RequestId id) {
  Request& r = mut(id);
  pool_.free(id);
  running_.erase(std::find(running_.begin(), running_.end(), id));
  r.state = RequestState::Finished;
  TenantStats& stats = tenants_[r.tenant];
  --stats.outstanding;
  stats.finished_input += r.prompt_len;
  stats.finished_output += r.generated_len;
}

void Scheduler::complete_iteration(const ScheduleOutput& out, Micros end_us) {
  for (RequestId id : out.decode_set) {
    Request& r = mut(id);
    if (!r.first_token_us) {
      r.first_token_us = end_us;
    } else {
      r.itl_trace.push_back({end_us, end_us - *r.last_token_us});
    }
    r.last_token_us = end_us;
  }
  for (RequestId id : out.finished) mut(id).finish_us = end_us;
}

}  // namespace kvsim
