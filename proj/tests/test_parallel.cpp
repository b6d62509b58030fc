#include <numeric>
#include <stdexcept>

#include <gtest/gtest.h>

#include "ldalign/parallel.hpp"
#include "ldalign/rng.hpp"

using namespace ldalign;

TEST(ParallelFor, CoversEveryIndexOnce) {
  for (std::size_t threads : {1u, 3u, 8u}) {
    set_num_threads(threads);
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) ASSERT_EQ(h, 1);
  }
  set_num_threads(0);
}

TEST(ParallelFor, RethrowsLowestIndexError) {
  set_num_threads(4);
  try {
    parallel_for(100, [](std::size_t i) {
      if (i == 17 || i == 60) throw std::runtime_error("fail " + std::to_string(i));
    });
    FAIL() << "expected exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "fail 17");
  }
  set_num_threads(0);
}

TEST(PairwiseSum, ScalarMatchesAndIsOrderFixed) {
  std::vector<double> v(1001);
  std::iota(v.begin(), v.end(), 0.0);
  EXPECT_EQ(pairwise_sum(std::span<const double>(v)), 500500.0);
  EXPECT_EQ(pairwise_sum(std::span<const double>()), 0.0);
}

TEST(PairwiseSum, VectorTreeIndependentOfThreads) {
  Rng rng(3);
  std::vector<AlignedVector<double>> base(13, AlignedVector<double>(50));
  for (auto& p : base) for (auto& x : p) x = uniform01(rng) - 0.5;
  AlignedVector<double> out1, out2;
  auto a = base, b = base;
  set_num_threads(1);
  pairwise_sum(a, out1);
  set_num_threads(4);
  pairwise_sum(b, out2);
  set_num_threads(0);
  EXPECT_EQ(out1, out2);
  double direct = 0;
  for (auto& p : base) direct += p[7];
  EXPECT_NEAR(out1[7], direct, 1e-12);
}

TEST(Rng, DeriveSeedIsStableAndSensitive) {
  EXPECT_EQ(derive_seed({1, 2, 3}), derive_seed({1, 2, 3}));
  EXPECT_NE(derive_seed({1, 2, 3}), derive_seed({1, 3, 2}));
  EXPECT_NE(derive_seed({0}), derive_seed({0, 0}));
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(r);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}
