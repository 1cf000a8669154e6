#pragma once

#include <cstdint>
#include <unordered_map>

#include "kvsim/types.hpp"

namespace kvsim {

struct KvConfig {
  std::int64_t total_blocks = 2048;
  std::int32_t block_size_tokens = 16;
  std::int64_t watermark_blocks = 0;

  void validate() const;
  std::int64_t capacity_tokens() const { return total_blocks * block_size_tokens; }
};

struct KvUsageSample {
  Micros t_us = 0;
  double used_fraction = 0.0;
};

enum class AppendStatus { Ok, NeedsBlock };

struct AppendResult {
  AppendStatus status = AppendStatus::Ok;
  /// Meaningful only for NeedsBlock.
  bool granted = false;

  bool ok() const { return status == AppendStatus::Ok || granted; }
};

/// Paged KV-cache accounting. Every active request holds enough whole blocks
/// for its context; swapped requests hold blocks in host memory only.
///
/// free_blocks + sum(allocations) == total_blocks after every operation.
class BlockPool {
 public:
  explicit BlockPool(const KvConfig& config);

  std::int64_t blocks_for(std::int64_t tokens) const;

  /// Admission predicate: enough free blocks for the prompt plus watermark.
  bool can_allocate(std::int64_t prompt_tokens) const;

  /// Returns the number of blocks claimed. Throws InsufficientBlocks when the
  /// admission predicate does not hold.
  std::int64_t allocate(RequestId id, std::int64_t prompt_tokens);

  /// Grows the context of `id` by one token, claiming a block at a page
  /// boundary. A refused claim leaves the pool untouched.
  AppendResult append_token(RequestId id);

  /// Releases every device block held by `id`; returns the count released.
  std::int64_t free(RequestId id);

  std::int64_t swap_out(RequestId id);
  std::int64_t swap_in(RequestId id);

  KvUsageSample usage(Micros now = 0) const;
  double used_fraction() const;

  std::int64_t total_blocks() const { return config_.total_blocks; }
  std::int64_t free_blocks() const { return free_blocks_; }
  std::int64_t used_blocks() const { return config_.total_blocks - free_blocks_; }
  std::int32_t block_size() const { return config_.block_size_tokens; }
  std::int64_t watermark_blocks() const { return config_.watermark_blocks; }
  const KvConfig& config() const { return config_; }

  bool is_allocated(RequestId id) const { return allocations_.contains(id); }
  bool is_swapped(RequestId id) const { return swapped_.contains(id); }
  std::int64_t allocated_blocks(RequestId id) const;
  std::int64_t swapped_blocks(RequestId id) const;
  std::int64_t context_tokens(RequestId id) const;
  std::size_t allocation_count() const { return allocations_.size(); }

  /// Recomputes every invariant from scratch; true when all hold.
  bool check_invariants() const;

 private:
  struct Allocation {
    std::int64_t blocks = 0;
    std::int64_t tokens = 0;
  };

  KvConfig config_;
  std::int64_t free_blocks_ = 0;
  std::unordered_map<RequestId, Allocation> allocations_;
  std::unordered_map<RequestId, Allocation> swapped_;
};

}  // namespace kvsim
