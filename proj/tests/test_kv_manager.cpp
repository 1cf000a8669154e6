#include <gtest/gtest.h>

#include <map>
#include <vector>

#include "kvsim/errors.hpp"
#include "kvsim/kv_manager.hpp"
#include "kvsim/rng.hpp"

using namespace kvsim;

namespace {

BlockPool pool_of(std::int64_t total, std::int64_t watermark = 0) {
  KvConfig c;
  c.total_blocks = total;
  c.block_size_tokens = 16;
  c.watermark_blocks = watermark;
  return BlockPool(c);
}

// Fill a pool so exactly `free` blocks remain.
void leave_free(BlockPool& p, std::int64_t free) {
  const std::int64_t take = p.free_blocks() - free;
  if (take > 0) p.allocate(999'999, take * 16);
}

}  // namespace

TEST(CanAllocate, PromptNeedingThreeBlocksDoesNotFitInTwo) {
  auto p = pool_of(10);
  leave_free(p, 2);
  EXPECT_FALSE(p.can_allocate(40));
}

TEST(CanAllocate, SingleTokenFitsLastBlock) {
  auto p = pool_of(10);
  leave_free(p, 1);
  EXPECT_TRUE(p.can_allocate(1));
}

TEST(CanAllocate, WatermarkReservesLastBlock) {
  auto p = pool_of(10, 1);
  leave_free(p, 1);
  EXPECT_FALSE(p.can_allocate(16));
}

TEST(Allocate, RoundsUpToWholeBlocks) {
  auto p = pool_of(10);
  EXPECT_EQ(p.allocate(1, 33), 3);
  EXPECT_EQ(p.allocate(2, 16), 1);
  EXPECT_EQ(p.free_blocks(), 6);
  EXPECT_EQ(p.context_tokens(1), 33);
}

TEST(Allocate, OverCapacityThrows) {
  auto p = pool_of(10);
  p.allocate(1, 16 * 8);
  EXPECT_THROW(p.allocate(2, 16 * 3), InsufficientBlocks);
  EXPECT_EQ(p.free_blocks(), 2);
  EXPECT_TRUE(p.check_invariants());
}

TEST(Allocate, DuplicateIdThrows) {
  auto p = pool_of(10);
  p.allocate(1, 10);
  EXPECT_THROW(p.allocate(1, 10), DuplicateId);
}

TEST(AppendToken, WithinBlockNeedsNothing) {
  auto p = pool_of(10);
  p.allocate(1, 15);
  const auto r = p.append_token(1);
  EXPECT_EQ(r.status, AppendStatus::Ok);
  EXPECT_EQ(p.allocated_blocks(1), 1);
  EXPECT_EQ(p.context_tokens(1), 16);
}

TEST(AppendToken, BoundaryClaimsBlock) {
  auto p = pool_of(10);
  p.allocate(1, 16);
  const auto r = p.append_token(1);
  EXPECT_EQ(r.status, AppendStatus::NeedsBlock);
  EXPECT_TRUE(r.granted);
  EXPECT_EQ(p.free_blocks(), 8);
  EXPECT_EQ(p.allocated_blocks(1), 2);
}

TEST(AppendToken, RefusedClaimLeavesStateUnchanged) {
  auto p = pool_of(2);
  p.allocate(1, 16);
  p.allocate(2, 16);
  const auto r = p.append_token(1);
  EXPECT_EQ(r.status, AppendStatus::NeedsBlock);
  EXPECT_FALSE(r.granted);
  EXPECT_FALSE(r.ok());
  EXPECT_EQ(p.context_tokens(1), 16);
  EXPECT_EQ(p.allocated_blocks(1), 1);
  EXPECT_EQ(p.free_blocks(), 0);
}

TEST(AppendToken, UnknownRequestThrows) {
  auto p = pool_of(2);
  EXPECT_THROW(p.append_token(7), UnknownRequest);
}

TEST(Free, ReturnsHeldBlocks) {
  auto p = pool_of(10);
  p.allocate(1, 40);
  EXPECT_EQ(p.free(1), 3);
  EXPECT_EQ(p.free_blocks(), 10);
}

TEST(Free, DoubleFreeThrows) {
  auto p = pool_of(10);
  p.allocate(1, 40);
  p.free(1);
  EXPECT_THROW(p.free(1), UnknownRequest);
}

TEST(Free, FreeingEverythingRestoresPool) {
  auto p = pool_of(64);
  for (RequestId id = 1; id <= 6; ++id) p.allocate(id, 16 * static_cast<std::int64_t>(id) + 3);
  for (RequestId id = 1; id <= 6; ++id) p.free(id);
  EXPECT_EQ(p.free_blocks(), 64);
  EXPECT_EQ(p.allocation_count(), 0u);
}

TEST(Swap, OutReleasesDeviceBlocks) {
  auto p = pool_of(10);
  p.allocate(1, 80);
  EXPECT_EQ(p.swap_out(1), 5);
  EXPECT_EQ(p.free_blocks(), 10);
  EXPECT_EQ(p.swapped_blocks(1), 5);
  EXPECT_FALSE(p.is_allocated(1));
  EXPECT_TRUE(p.is_swapped(1));
}

TEST(Swap, RoundTripRestoresAllocation) {
  auto p = pool_of(10);
  p.allocate(1, 75);
  p.swap_out(1);
  leave_free(p, 5);
  EXPECT_EQ(p.swap_in(1), 5);
  EXPECT_EQ(p.allocated_blocks(1), 5);
  EXPECT_EQ(p.context_tokens(1), 75);
  EXPECT_EQ(p.free_blocks(), 0);
}

TEST(Swap, InWithoutRoomThrows) {
  auto p = pool_of(10);
  p.allocate(1, 80);
  p.swap_out(1);
  leave_free(p, 4);
  EXPECT_THROW(p.swap_in(1), InsufficientBlocks);
  EXPECT_TRUE(p.is_swapped(1));
  EXPECT_EQ(p.free_blocks(), 4);
}

TEST(Usage, Examples) {
  auto p = pool_of(1000);
  EXPECT_DOUBLE_EQ(p.used_fraction(), 0.0);
  p.allocate(1, 975 * 16);
  EXPECT_DOUBLE_EQ(p.used_fraction(), 0.975);
  p.allocate(2, 25 * 16);
  EXPECT_DOUBLE_EQ(p.used_fraction(), 1.0);
}

// Random operation sequences checked against a shadow model that tracks
// per-request token counts and recomputes block needs independently.
TEST(BlockPoolProperty, ConservationAgainstShadow) {
  RandomStream rng(2024, "kv-property");
  for (int seq = 0; seq < 300; ++seq) {
    const std::int64_t total = rng.uniform_int(3, 64);
    const std::int64_t watermark = rng.uniform_int(0, 2);
    auto p = pool_of(total, watermark);
    std::map<RequestId, std::int64_t> device, host;
    auto blocks = [](std::int64_t tokens) { return (tokens + 15) / 16; };
    auto shadow_free = [&] {
      std::int64_t used = 0;
      for (const auto& [id, t] : device) used += blocks(t);
      return total - used;
    };
    RequestId next = 1;
    for (int op = 0; op < 200; ++op) {
      const auto kind = rng.uniform_int(0, 4);
      if (kind == 0) {
        const std::int64_t prompt = rng.uniform_int(1, 200);
        const bool fits = shadow_free() - blocks(prompt) >= watermark;
        EXPECT_EQ(p.can_allocate(prompt), fits);
        if (fits) {
          p.allocate(next, prompt);
          device[next] = prompt;
        } else {
          EXPECT_THROW(p.allocate(next, prompt), InsufficientBlocks);
        }
        ++next;
      } else if (kind == 1 && !device.empty()) {
        auto it = std::next(device.begin(), rng.uniform_int(0, static_cast<std::int64_t>(device.size()) - 1));
        const bool boundary = it->second % 16 == 0;
        const auto r = p.append_token(it->first);
        if (!boundary) {
          EXPECT_EQ(r.status, AppendStatus::Ok);
          ++it->second;
        } else if (shadow_free() > 0) {
          EXPECT_TRUE(r.granted);
          ++it->second;
        } else {
          EXPECT_FALSE(r.ok());
        }
      } else if (kind == 2 && !device.empty()) {
        auto it = std::next(device.begin(), rng.uniform_int(0, static_cast<std::int64_t>(device.size()) - 1));
        EXPECT_EQ(p.free(it->first), blocks(it->second));
        device.erase(it);
      } else if (kind == 3 && !device.empty()) {
        auto it = std::next(device.begin(), rng.uniform_int(0, static_cast<std::int64_t>(device.size()) - 1));
        EXPECT_EQ(p.swap_out(it->first), blocks(it->second));
        host[it->first] = it->second;
        device.erase(it);
      } else if (kind == 4 && !host.empty()) {
        auto it = std::next(host.begin(), rng.uniform_int(0, static_cast<std::int64_t>(host.size()) - 1));
        if (shadow_free() >= blocks(it->second) + watermark) {
          EXPECT_EQ(p.swap_in(it->first), blocks(it->second));
          device[it->first] = it->second;
          host.erase(it);
        } else {
          EXPECT_THROW(p.swap_in(it->first), InsufficientBlocks);
        }
      }
      ASSERT_TRUE(p.check_invariants());
      ASSERT_EQ(p.free_blocks(), shadow_free());
      ASSERT_GE(p.free_blocks(), 0);
    }
  }
}
