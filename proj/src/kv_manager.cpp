#include "kvsim/kv_manager.hpp"

#include <string>

#include "kvsim/errors.hpp"

namespace kvsim {

void KvConfig::validate() const {
  if (total_blocks < 1) throw ConfigError("kv.total_blocks must be >= 1");
  if (block_size_tokens < 1) throw ConfigError("kv.block_size must be >= 1");
  if (watermark_blocks < 0 || watermark_blocks >= total_blocks) {
    throw ConfigError("kv.watermark_blocks must be in [0, total_blocks)");
  }
}

BlockPool::BlockPool(const KvConfig& config)
    : config_(config), free_blocks_(config.total_blocks) {
  config_.validate();
}

std::int64_t BlockPool::blocks_for(std::int64_t tokens) const {
  if (tokens <= 0) return 0;
  return (tokens + config_.block_size_tokens - 1) / config_.block_size_tokens;
}

bool BlockPool::can_allocate(std::int64_t prompt_tokens) const {
  return free_blocks_ >= blocks_for(prompt_tokens) + config_.watermark_blocks;
}

std::int64_t BlockPool::allocate(RequestId id, std::int64_t prompt_tokens) {
  if (allocations_.contains(id) || swapped_.contains(id)) {
    throw DuplicateId("request " + std::to_string(id) + " already holds blocks");
  }
  if (!can_allocate(prompt_tokens)) {
    throw InsufficientBlocks("cannot allocate " +
                             std::to_string(blocks_for(prompt_tokens)) +
                             " blocks for request " + std::to_string(id) +
                             " with " + std::to_string(free_blocks_) + " free");
  }
  const std::int64_t blocks = blocks_for(prompt_tokens);
  allocations_.emplace(id, Allocation{blocks, prompt_tokens});
  free_blocks_ -= blocks;
  return blocks;
}

AppendResult BlockPool::append_token(RequestId id) {
  auto it = allocations_.find(id);
  if (it == allocations_.end()) {
    throw UnknownRequest("append_token: request " + std::to_string(id) +
                         " has no allocation");
  }
  Allocation& a = it->second;
  const std::int64_t needed = blocks_for(a.tokens + 1);
  if (needed <= a.blocks) {
    ++a.tokens;
    return {AppendStatus::Ok, false};
  }
  if (free_blocks_ < 1) return {AppendStatus::NeedsBlock, false};
  --free_blocks_;
  ++a.blocks;
  ++a.tokens;
  return {AppendStatus::NeedsBlock, true};
}

std::int64_t BlockPool::free(RequestId id) {
  auto it = allocations_.find(id);
  if (it == allocations_.end()) {
    throw UnknownRequest("free: request " + std::to_string(id) +
                         " has no allocation");
  }
  const std::int64_t blocks = it->second.blocks;
  free_blocks_ += blocks;
  allocations_.erase(it);
  return blocks;
}

std::int64_t BlockPool::swap_out(RequestId id) {
  auto it = allocations_.find(id);
  if (it == allocations_.end()) {
    throw UnknownRequest("swap_out: request " + std::to_string(id) +
                         " has no allocation");
  }
  const Allocation a = it->second;
  allocations_.erase(it);
  swapped_.emplace(id, a);
  free_blocks_ += a.blocks;
  return a.blocks;
}

std::int64_t BlockPool::swap_in(RequestId id) {
  auto it = swapped_.find(id);
  if (it == swapped_.end()) {
    throw UnknownRequest("swap_in: request " + std::to_string(id) +
                         " is not swapped out");
  }
  const Allocation a = it->second;
  if (free_blocks_ < a.blocks + config_.watermark_blocks) {
    throw InsufficientBlocks("swap_in: request " + std::to_string(id) +
                             " needs " + std::to_string(a.blocks) +
                             " blocks, " + std::to_string(free_blocks_) +
                             " free");
  }
  swapped_.erase(it);
  allocations_.emplace(id, a);
  free_blocks_ -= a.blocks;
  return a.blocks;
}

KvUsageSample BlockPool::usage(Micros now) const {
  return {now, used_fraction()};
}

double BlockPool::used_fraction() const {
  return static_cast<double>(used_blocks()) /
         static_cast<double>(config_.total_blocks);
}

std::int64_t BlockPool::allocated_blocks(RequestId id) const {
  auto it = allocations_.find(id);
  return it == allocations_.end() ? 0 : it->second.blocks;
}

std::int64_t BlockPool::swapped_blocks(RequestId id) const {
  auto it = swapped_.find(id);
  return it == swapped_.end() ? 0 : it->second.blocks;
}

std::int64_t BlockPool::context_tokens(RequestId id) const {
  if (auto it = allocations_.find(id); it != allocations_.end()) {
    return it->second.tokens;
  }
  if (auto it = swapped_.find(id); it != swapped_.end()) {
    return it->second.tokens;
  }
  throw UnknownRequest("context_tokens: unknown request " + std::to_string(id));
}

bool BlockPool::check_invariants() const {
  if (free_blocks_ < 0 || free_blocks_ > config_.total_blocks) return false;
  std::int64_t held = 0;
  for (const auto& [id, a] : allocations_) {
    if (a.blocks < blocks_for(a.tokens)) return false;
    if (swapped_.contains(id)) return false;
    held += a.blocks;
  }
  for (const auto& [id, a] : swapped_) {
    if (a.blocks < blocks_for(a.tokens)) return false;
  }
  return free_blocks_ + held == config_.total_blocks;
}

}  // namespace kvsim
