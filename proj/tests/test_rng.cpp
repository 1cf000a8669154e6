#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "kvsim/rng.hpp"

using namespace kvsim;

TEST(RandomStream, SameSeedAndNameRepeat) {
  RandomStream a(42, "workload");
  RandomStream b(42, "workload");
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RandomStream, NamesAndSeedsSeparateStreams) {
  RandomStream a(42, "workload");
  RandomStream b(42, "attacker");
  RandomStream c(43, "workload");
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_NE(RandomStream(42, "workload").next_u64(), c.next_u64());
}

TEST(RandomStream, SplitDoesNotAdvanceParent) {
  RandomStream a(1, "x");
  RandomStream b(1, "x");
  (void)a.split("child").next_u64();
  (void)a.split(3).next_u64();
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_EQ(a.split("child").next_u64(), b.split("child").next_u64());
  EXPECT_NE(a.split(1).next_u64(), a.split(2).next_u64());
}

TEST(RandomStream, UniformIntCoversInclusiveRange) {
  RandomStream r(5, "int");
  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = r.uniform_int(-2, 3);
    ASSERT_GE(v, -2);
    ASSERT_LE(v, 3);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_EQ(r.uniform_int(7, 7), 7);
}

TEST(RandomStream, UniformInUnitInterval) {
  RandomStream r(9, "u");
  double sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(RandomStream, NormalMoments) {
  RandomStream r(11, "n");
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal(1.0, 0.05);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 1.0, 0.001);
  EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 0.05, 0.001);
}

TEST(RandomStream, ExponentialMean) {
  RandomStream r(13, "e");
  const int n = 100000;
  double s = 0;
  for (int i = 0; i < n; ++i) s += r.exponential(2.0);
  EXPECT_NEAR(s / n, 0.5, 0.01);
}
