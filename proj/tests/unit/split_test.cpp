#include <gtest/gtest.h>

#include <bit>
#include <set>

#include "redline/hashing.hpp"
#include "redline/split.hpp"
#include "support/nets.hpp"

using namespace redline;
using namespace redline::testing;

namespace {

// c_in = 2, c_out = 3 with per-input rows [1,1,2] and [3,4,4].
Tensor4 shared_kernel_layer() { return Tensor4(1, 1, 2, 3, {1, 1, 2, 3, 4, 4}); }

// Independent recount: distinct bit patterns of each kernel, per input channel.
std::size_t distinct_kernels(const Tensor4& W) {
  std::size_t n = 0;
  for (std::size_t c = 0; c < W.c_in; ++c) {
    std::set<std::vector<std::uint32_t>> s;
    for (std::size_t j = 0; j < W.c_out; ++j) {
      std::vector<std::uint32_t> k;
      for (float v : W.kernel(c, j)) k.push_back(std::bit_cast<std::uint32_t>(v));
      s.insert(k);
    }
    n += s.size();
  }
  return n;
}

}  // namespace

TEST(SplitLayer, SharedKernelExample) {
  auto s = split_layer(shared_kernel_layer());
  EXPECT_EQ(s.unique_kernels[0], (std::vector<float>{1, 2}));
  EXPECT_EQ(s.dup[0], (std::vector<std::uint32_t>{0, 0, 1}));
  EXPECT_EQ(s.unique_kernels[1], (std::vector<float>{3, 4}));
  EXPECT_EQ(s.dup[1], (std::vector<std::uint32_t>{0, 1, 1}));
  auto ops = op_count(s, 3);
  EXPECT_EQ(ops.remaining, 4u);
  EXPECT_EQ(ops.original, 6u);
  EXPECT_NEAR(ops.ratio, 1.0 / 3.0, 1e-15);
}

TEST(SplitLayer, AllIdentical) {
  Rng rng(1);
  auto k = gaussian_values(rng, 9);
  Tensor4 W(3, 3, 4, 5);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t i = 0; i < 9; ++i) W.at(i / 3, i % 3, c, j) = k[i];
  auto ops = op_count(split_layer(W), 5);
  EXPECT_EQ(ops.remaining, 4u);
  EXPECT_NEAR(ops.ratio, 1.0 - 1.0 / 5.0, 1e-15);
}

TEST(SplitLayer, AllDistinct) {
  Rng rng(2);
  auto W = random_tensor(rng, 3, 3, 4, 5);
  auto ops = op_count(split_layer(W), 5, {7, 7});
  EXPECT_EQ(ops.remaining, 20u);
  EXPECT_EQ(ops.ratio, 0.0);
  EXPECT_EQ(ops.remaining_flops, 20u * 9 * 49);
}

TEST(SplitLayer, NegativeZeroIsADifferentKernel) {
  Tensor4 W(1, 1, 1, 2, {0.0f, -0.0f});
  EXPECT_EQ(split_layer(W).unique_count(0), 2u);
}

TEST(SplitLayer, ReconstructionAndSurjectivity) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    std::size_t k = dim(rng) % 2 ? 3 : 1;
    auto W = levels_tensor(rng, k, k, dim(rng), dim(rng), {-1.0f, 0.5f, 2.0f});
    auto s = split_layer(W);
    EXPECT_EQ(s.total_unique(), distinct_kernels(W));
    EXPECT_LE(s.total_unique(), W.c_in * W.c_out);
    for (std::size_t c = 0; c < W.c_in; ++c) {
      std::vector<bool> hit(s.unique_count(c), false);
      for (std::size_t j = 0; j < W.c_out; ++j) {
        ASSERT_LT(s.dup[c][j], s.unique_count(c));
        hit[s.dup[c][j]] = true;
        auto u = s.unique_kernel(c, s.dup[c][j]);
        auto orig = W.kernel(c, j);
        for (std::size_t i = 0; i < orig.size(); ++i)
          EXPECT_EQ(std::bit_cast<std::uint32_t>(u[i]), std::bit_cast<std::uint32_t>(orig[i]));
      }
      for (bool h : hit) EXPECT_TRUE(h);
    }
  }
}

TEST(SplitForward, AllDistinctIsBitwiseEqual) {
  Rng rng(4);
  NetworkGraph net;
  net.layers.push_back(conv_layer(random_tensor(rng, 3, 3, 3, 4)));
  net.layers.push_back(dense_layer(random_tensor(rng, 1, 1, 4, 2), Activation::identity));
  auto split = split_network(net).first;
  for (int i = 0; i < 20; ++i) {
    auto x = random_input(rng, 5, 5, 3);
    EXPECT_EQ(split_forward(split, x).data, forward(net, x).data);
  }
}

TEST(SplitForward, SharedKernelLayerMatchesDense) {
  Rng rng(5);
  NetworkGraph net;
  net.layers.push_back(dense_layer(shared_kernel_layer(), Activation::identity));
  auto split = split_network(net).first;
  for (int i = 0; i < 100; ++i) {
    auto x = random_input(rng, 1, 1, 2);
    EXPECT_LE(max_abs_diff(split_forward(split, x), forward(net, x)), 1e-5);
  }
}

TEST(SplitForward, ZeroInputGivesBiasOnly) {
  Rng rng(6);
  auto W = levels_tensor(rng, 3, 3, 3, 4, {-1.0f, 2.0f});
  NetworkGraph net;
  net.layers.push_back(conv_layer(W, Padding::same, 1, Activation::identity));
  net.layers[0].bias = {0.5f, -1.0f, 0.0f, 3.0f};
  auto split = split_network(net).first;
  auto y = split_forward(split, FeatureMap(4, 4, 3, std::vector<float>(48, 0.0f)));
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y.data[p * 4 + j], net.layers[0].bias[j]);
}

TEST(SplitForward, FunctionPreservedOnRandomNets) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    auto net = random_mixed_net(rng, true);
    auto split = split_network(net).first;
    for (int i = 0; i < 20; ++i) {
      auto x = random_input(rng, 6, 6, net.layers[0].in_channels());
      EXPECT_LE(max_abs_diff(split_forward(split, x), forward(net, x)), 1e-5);
    }
  }
}

TEST(Bell, KnownValues) {
  EXPECT_EQ(bell_number(0), 1u);
  EXPECT_EQ(bell_number(1), 1u);
  EXPECT_EQ(bell_number(2), 2u);
  EXPECT_EQ(bell_number(5), 52u);
  EXPECT_EQ(bell_number(8), 4140u);
  EXPECT_EQ(bell_number(25), 4638590332229999353ull);
  EXPECT_THROW(bell_number(26), Error);
}

TEST(Bell, MatchesStirlingRowSums) {
  // Independent route: B_n = sum_k S(n, k) with S(n,k) = k S(n-1,k) + S(n-1,k-1).
  std::vector<std::vector<unsigned long long>> S(16, std::vector<unsigned long long>(16, 0));
  S[0][0] = 1;
  for (std::size_t n = 1; n < 16; ++n)
    for (std::size_t k = 1; k <= n; ++k) S[n][k] = k * S[n - 1][k] + S[n - 1][k - 1];
  for (std::size_t n = 0; n < 16; ++n) {
    unsigned long long b = 0;
    for (auto v : S[n]) b += v;
    EXPECT_EQ(bell_number(n), b) << n;
  }
}

TEST(PartitionSearch, SingleChannel) {
  Tensor4 W(1, 1, 1, 4, {1, 2, 1, 3});
  auto r = partition_bruteforce(W);
  EXPECT_EQ(r.partitions, 1u);
  EXPECT_EQ(r.min_ops, op_count(split_layer(W), 4).remaining);
}

TEST(PartitionSearch, SharedKernelExample) {
  auto r = partition_bruteforce(shared_kernel_layer());
  EXPECT_EQ(r.partitions, 2u);
  EXPECT_EQ(r.min_ops, 4u);
}

TEST(PartitionSearch, EnumeratesBellManyPartitions) {
  Rng rng(8);
  for (std::size_t n = 1; n <= 6; ++n) {
    auto W = levels_tensor(rng, 1, 1, n, 3, {0.0f, 1.0f});
    EXPECT_EQ(partition_bruteforce(W).partitions, bell_number(n));
  }
  EXPECT_THROW(partition_bruteforce(Tensor4(1, 1, 9, 1)), Error);
}

TEST(PartitionSearch, SingletonIsOptimalOnHashedLayers) {
  Rng rng(9);
  std::uniform_int_distribution<std::size_t> dim(1, 5), modes(1, 3), ks(0, 1);
  for (int t = 0; t < 200; ++t) {
    std::size_t k = ks(rng) ? 3 : 1;
    std::vector<float> levels;
    for (std::size_t m = 0, M = modes(rng); m < M; ++m) levels.push_back(static_cast<float>(m) - 1.0f);
    auto W = levels_tensor(rng, k, k, dim(rng), dim(rng), levels);
    auto singleton = op_count(split_layer(W), W.c_out).remaining;
    EXPECT_EQ(singleton, partition_bruteforce(W).min_ops) << "trial " << t;
  }
}

TEST(SplitNetwork, UnhashedNetHasNoPruning) {
  Rng rng(10);
  for (int t = 0; t < 10; ++t) {
    auto net = random_mixed_net(rng, false);
    for (const auto& r : split_network(net).second) EXPECT_EQ(r.ops.ratio, 0.0);
  }
}

TEST(SplitNetwork, HashedTwoModeNetMatchesOracle) {
  Rng rng(11);
  NetworkGraph net;
  net.layers.push_back(dense_layer(Tensor4(1, 1, 6, 20, mixture_values(rng, 120, {-1, 1}, {0.05, 0.05}))));
  net.layers.push_back(dense_layer(Tensor4(1, 1, 20, 4, mixture_values(rng, 80, {-1, 1}, {0.05, 0.05}))));
  HashConfig cfg;
  cfg.bandwidth = 0.05;
  auto hashed = hash_network(net, cfg).first;
  auto [split, reports] = split_network(hashed);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& W = hashed.layers[l].weights;
    double expect = 1.0 - static_cast<double>(distinct_kernels(W)) / static_cast<double>(W.c_in * W.c_out);
    EXPECT_EQ(reports[l].ops.ratio, expect);
    EXPECT_GT(reports[l].ops.ratio, 0.0);
  }
}

TEST(SplitNetwork, IdempotentOpCounts) {
  Rng rng(12);
  auto net = random_mixed_net(rng, true);
  auto [once, r1] = split_network(net);
  auto [twice, r2] = split_network(once);
  ASSERT_EQ(r1.size(), r2.size());
  for (std::size_t l = 0; l < r1.size(); ++l) {
    EXPECT_EQ(r1[l].ops.remaining, r2[l].ops.remaining);
    EXPECT_EQ(r1[l].ops.remaining_flops, r2[l].ops.remaining_flops);
  }
  EXPECT_EQ(once, twice);
}

TEST(SplitNetwork, NonPrunableAndDepthwiseStayDense) {
  NetworkGraph net;
  LayerSpec dw;
  dw.kind = LayerKind::depthwise;
  dw.weights = Tensor4(1, 1, 1, 2, {1, 1});
  dw.bias = {0, 0};
  net.layers.push_back(dw);
  net.layers.push_back(dense_layer(Tensor4(1, 1, 2, 2, {1, 1, 1, 1})));
  net.layers[1].prunable = false;
  auto [split, reports] = split_network(net);
  EXPECT_FALSE(split.layers[0].split);
  EXPECT_FALSE(split.layers[1].split);
  EXPECT_TRUE(reports[0].skipped);
  EXPECT_TRUE(reports[1].skipped);
  EXPECT_EQ(reports[1].ops.ratio, 0.0);
}
