#include <gtest/gtest.h>

#include <set>

#include "fedlp/partition.hpp"
#include "test_util.hpp"

using namespace fedlp;

namespace {

// 0.999 quantile of chi-square with 9 degrees of freedom (10 classes).
constexpr double kChi2Df9Q999 = 27.877164871256568;

Dataset balanced(std::size_t per_class, std::size_t classes = 10, std::uint64_t seed = 1) {
  return generate_synthetic({classes, per_class, 2, 1.0}, seed);
}

double chi_square(const Dataset& ds, std::span<const std::size_t> idx) {
  const auto h = ds.class_histogram(idx);
  double stat = 0.0;
  for (std::size_t n : h) {
    const double expect = static_cast<double>(idx.size()) / static_cast<double>(ds.num_classes);
    stat += (n - expect) * (n - expect) / expect;
  }
  return stat;
}

// Fraction of clients whose class histogram passes the 0.999 chi-square test, over several seeds.
template <typename Split>
double chi_square_pass_rate(const Dataset& ds, Split split) {
  std::size_t pass = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = split(seed);
    for (const auto& a : p.assignments) {
      pass += chi_square(ds, a) < kChi2Df9Q999;
      ++total;
    }
  }
  return static_cast<double>(pass) / total;
}

}  // namespace

TEST(PartitionIid, FiveHundredPerClientAtFullScale) {
  const auto ds = balanced(5000);
  const auto p = partition_iid(ds, 100, 7);
  ASSERT_EQ(p.num_clients(), 100u);
  for (const auto& a : p.assignments) EXPECT_EQ(a.size(), 500u);
  EXPECT_TRUE(p.valid(ds.size()));
  EXPECT_EQ(p.total(), ds.size());
}

TEST(PartitionIid, SingleClientOwnsEverything) {
  const auto ds = balanced(10);
  const auto p = partition_iid(ds, 1, 3);
  EXPECT_EQ(p.assignments[0].size(), ds.size());
}

TEST(PartitionIid, UnevenSizesDifferByAtMostOne) {
  const auto ds = balanced(7, 3);
  const auto p = partition_iid(ds, 4, 3);
  std::size_t lo = SIZE_MAX, hi = 0;
  for (const auto& a : p.assignments) {
    lo = std::min(lo, a.size());
    hi = std::max(hi, a.size());
  }
  EXPECT_LE(hi - lo, 1u);
  EXPECT_THROW(partition_iid(ds, 0, 1), ContractError);
}

TEST(PartitionIid, ClassHistogramsLookUniform) {
  const auto ds = balanced(500);
  EXPECT_GE(chi_square_pass_rate(ds, [&](std::uint64_t s) { return partition_iid(ds, 50, s); }), 0.95);
}

TEST(PartitionShards, HundredClientSettingGivesFiveHundredEach) {
  const auto ds = balanced(5000);
  const auto p = partition_shards(ds, 100, 250, 2, 0.05, 11);
  for (const auto& a : p.assignments) EXPECT_EQ(a.size(), 500u);
  EXPECT_TRUE(p.valid(ds.size()));
  EXPECT_EQ(p.total(), 50000u);
}

TEST(PartitionShards, FullyUniformLooksIid) {
  const auto ds = balanced(500);
  EXPECT_GE(chi_square_pass_rate(ds, [&](std::uint64_t s) { return partition_shards(ds, 50, 50, 2, 1.0, s); }), 0.95);
}

TEST(PartitionShards, NoUniformPartKeepsShardsToTwoLabels) {
  const auto ds = balanced(130);  // class runs of 130 do not align with shard size 50
  const auto p = partition_shards(ds, 20, 50, 1, 0.0, 5);
  for (const auto& a : p.assignments) {
    std::set<std::size_t> labels;
    for (std::size_t i : a) labels.insert(ds.labels[i]);
    EXPECT_LE(labels.size(), 2u);
  }
}

TEST(PartitionShards, LeftoverSamplesStayUnassigned) {
  const auto ds = balanced(100);
  const auto p = partition_shards(ds, 7, 30, 3, 0.2, 2);
  EXPECT_EQ(p.total(), 7u * 3u * 30u);
  EXPECT_TRUE(p.valid(ds.size()));
  EXPECT_THROW(partition_shards(ds, 20, 30, 2, 0.2, 2), ContractError);
}

TEST(PartitionDirichlet, SingleClientOwnsEverything) {
  const auto ds = balanced(20);
  const auto p = partition_dirichlet(ds, 1, 0.5, 4);
  EXPECT_EQ(p.assignments[0].size(), ds.size());
}

TEST(PartitionDirichlet, HugeAlphaIsNearUniform) {
  const auto ds = balanced(5000);
  const auto p = partition_dirichlet(ds, 100, 1e6, 8);
  EXPECT_EQ(p.total(), ds.size());
  for (const auto& a : p.assignments) {
    const auto h = ds.class_histogram(a);
    for (std::size_t n : h) EXPECT_NEAR(static_cast<double>(n) / a.size(), 0.1, 0.02);
  }
}

TEST(PartitionDirichlet, AlphaOneIsDeterministicAndUneven) {
  const auto ds = balanced(500);
  const auto a = partition_dirichlet(ds, 100, 1.0, 21);
  const auto b = partition_dirichlet(ds, 100, 1.0, 21);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.total(), ds.size());
  std::set<std::size_t> sizes;
  for (const auto& x : a.assignments) sizes.insert(x.size());
  EXPECT_GT(sizes.size(), 10u);
  EXPECT_THROW(partition_dirichlet(ds, 10, 0.0, 1), ContractError);
}

TEST(PartitionDirichlet, TinyAlphaStillCoversEverything) {
  const auto ds = balanced(50);
  const auto p = partition_dirichlet(ds, 30, 1e-3, 5);
  EXPECT_EQ(p.total(), ds.size());
  EXPECT_TRUE(p.valid(ds.size()));
}

TEST(LargestRemainder, ExactTotalsAndTieOrder) {
  const std::vector<double> w{0.5, 0.25, 0.25};
  EXPECT_EQ(largest_remainder(5, w), (std::vector<std::size_t>{3, 1, 1}));
  const std::vector<double> thirds{1.0 / 3, 1.0 / 3, 1.0 / 3};
  EXPECT_EQ(largest_remainder(10, thirds), (std::vector<std::size_t>{4, 3, 3}));
}

// Property: every partitioner on random small inputs is disjoint, in range,
// covers what its contract says, and is a pure function of its seed.
TEST(PartitionProperty, RandomInstances) {
  Rng gen(99);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t classes = 2 + gen.below(6);
    const auto ds = balanced(5 + gen.below(40), classes, trial);
    const std::size_t n = 1 + gen.below(std::min<std::size_t>(ds.size(), 25));
    const std::uint64_t seed = gen.next_u64();

    const auto iid = partition_iid(ds, n, seed);
    EXPECT_TRUE(iid.valid(ds.size()));
    EXPECT_EQ(iid.total(), ds.size());
    EXPECT_EQ(iid, partition_iid(ds, n, seed));

    const double alpha = std::exp(gen.uniform(-3.0, 4.0));
    const auto dir = partition_dirichlet(ds, n, alpha, seed);
    EXPECT_TRUE(dir.valid(ds.size()));
    EXPECT_EQ(dir.total(), ds.size());
    EXPECT_EQ(dir, partition_dirichlet(ds, n, alpha, seed));

    const std::size_t spc = 1 + gen.below(std::min<std::size_t>(3, ds.size() / n));
    const std::size_t shard = std::max<std::size_t>(1, ds.size() / (n * spc));
    const double frac = gen.uniform();
    const auto sh = partition_shards(ds, n, shard, spc, frac, seed);
    EXPECT_TRUE(sh.valid(ds.size()));
    EXPECT_EQ(sh.total(), n * spc * shard);
    EXPECT_EQ(sh, partition_shards(ds, n, shard, spc, frac, seed));
  }
}
