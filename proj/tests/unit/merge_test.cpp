#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "redline/merge.hpp"
#include "support/nets.hpp"

using namespace redline;
using namespace redline::testing;

namespace {

LayerSpec rows_layer(const std::vector<std::vector<float>>& rows) {
  // Each row is one output neuron of a dense layer.
  Tensor4 W(1, 1, rows[0].size(), rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t c = 0; c < rows[j].size(); ++c) W.at(0, 0, c, j) = rows[j][c];
  return dense_layer(W);
}

Dataset labelled_by(const NetworkGraph& net, std::vector<FeatureMap> xs) {
  Dataset ds;
  ds.height = xs[0].height, ds.width = xs[0].width, ds.channels = xs[0].channels;
  for (auto& x : xs) {
    ds.labels.push_back(static_cast<std::uint32_t>(argmax(forward(net, x).data)));
    ds.samples.push_back(std::move(x));
  }
  return ds;
}

}  // namespace

TEST(Distances, Examples) {
  auto l = rows_layer({{1, 0}, {0, 1}, {1, 0}});
  auto d = neuron_distances(l);
  EXPECT_NEAR(d[0 * 3 + 1], std::sqrt(2.0), 1e-15);
  EXPECT_EQ(d[0 * 3 + 2], 0.0);
}

TEST(Distances, SymmetricNonNegativeZeroDiagonal) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    auto l = conv_layer(random_tensor(rng, 3, 3, 3, 7));
    l.bias = gaussian_values(rng, 7);
    l.bn = random_bn(rng, 7);
    auto d = neuron_distances(l);
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_EQ(d[i * 7 + i], 0.0);
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(d[i * 7 + j], 0.0);
        EXPECT_EQ(d[i * 7 + j], d[j * 7 + i]);
      }
    }
  }
}

TEST(Distances, FullSignatureSeesBiasAndBatchNorm) {
  auto l = rows_layer({{1, 2}, {1, 2}});
  l.bias = {0, 1};
  EXPECT_EQ(neuron_distances(l, Signature::full)[1], 1.0);
  EXPECT_EQ(neuron_distances(l, Signature::weights_only)[1], 0.0);
  l.bias = {0, 0};
  l.bn = BatchNormStats{{0, 3}, {1, 1}};
  EXPECT_EQ(neuron_distances(l, Signature::full)[1], 3.0);
}

TEST(AlphaSchedule, Examples) {
  EXPECT_EQ(alpha_schedule(0.4, 9, AlphaStrategy::block),
            (std::vector<double>{0, 0, 0, 0.4, 0.4, 0.4, 0.8, 0.8, 0.8}));
  auto asc = alpha_schedule(0.5, 4, AlphaStrategy::linear_asc);
  std::vector<double> expect{0.125, 0.25, 0.375, 0.5};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(asc[i], expect[i], 1e-15);
  EXPECT_EQ(alpha_schedule(0.3, 3, AlphaStrategy::constant), (std::vector<double>{0.3, 0.3, 0.3}));
  auto desc = alpha_schedule(0.5, 4, AlphaStrategy::linear_desc);
  EXPECT_NEAR(desc[0], 0.375, 1e-15);
  EXPECT_EQ(desc[3], 0.0);
}

TEST(AlphaSchedule, ZeroAlphaIsZeroEverywhere) {
  for (auto s : {AlphaStrategy::constant, AlphaStrategy::linear_asc, AlphaStrategy::linear_desc,
                 AlphaStrategy::block})
    for (std::size_t L : {1u, 2u, 5u, 12u})
      for (double a : alpha_schedule(0.0, L, s)) EXPECT_EQ(a, 0.0);
}

TEST(AlphaSchedule, BlockSaturates) {
  auto a = alpha_schedule(0.9, 6, AlphaStrategy::block);
  EXPECT_NEAR(a[0], 0.8, 1e-12);
  EXPECT_EQ(a[5], 1.0);
  EXPECT_THROW(alpha_schedule(1.5, 3, AlphaStrategy::block), Error);
}

TEST(AlphaSchedule, StrategyNames) {
  EXPECT_EQ(parse_strategy("asc"), AlphaStrategy::linear_asc);
  EXPECT_EQ(parse_strategy("linear_desc"), AlphaStrategy::linear_desc);
  EXPECT_EQ(parse_strategy(to_string(AlphaStrategy::block)), AlphaStrategy::block);
  EXPECT_THROW(parse_strategy("zigzag"), Error);
}

TEST(MergeLayer, DuplicateRowsCollapse) {
  auto l = rows_layer({{1, 2}, {1, 2}, {3, 4}});
  auto next = dense_layer(Tensor4(1, 1, 3, 2, {1, 2, 3, 4, 5, 6}), Activation::identity);
  auto r = merge_layer(l, next, 0.0);
  EXPECT_EQ(r.plan.merged_count, 2u);
  EXPECT_EQ(r.plan.clusters, (std::vector<std::vector<std::size_t>>{{0, 1}, {2}}));
  EXPECT_EQ(r.layer.weights.data, (std::vector<float>{1, 3, 2, 4}));
  // Successor rows 0 and 1 (inputs from neurons 0, 1) summed.
  EXPECT_EQ(r.next.weights.data, (std::vector<float>{4, 6, 5, 6}));
}

TEST(MergeLayer, ThresholdMergesCloseNeuronsToMidpoint) {
  const float eps = 0.01f;
  auto l = rows_layer({{0}, {eps}, {10}});
  auto next = dense_layer(Tensor4(1, 1, 3, 1, {1, 1, 1}), Activation::identity);
  auto r = merge_layer(l, next, 0.25);
  EXPECT_GT(r.plan.threshold, eps);
  EXPECT_LT(r.plan.threshold, 10);
  EXPECT_EQ(r.plan.clusters, (std::vector<std::vector<std::size_t>>{{0, 1}, {2}}));
  EXPECT_FLOAT_EQ(r.layer.weights.data[0], eps / 2);
  EXPECT_EQ(r.next.weights.data, (std::vector<float>{2, 1}));
}

TEST(MergeLayer, ZeroAlphaOnDistinctNeuronsIsIdentity) {
  Rng rng(2);
  auto l = conv_layer(random_tensor(rng, 3, 3, 4, 6));
  auto next = conv_layer(random_tensor(rng, 3, 3, 6, 2));
  auto r = merge_layer(l, next, 0.0);
  EXPECT_EQ(r.layer, l);
  EXPECT_EQ(r.next, next);
  EXPECT_EQ(r.plan.merged_count, 6u);
}

TEST(MergeLayer, ClustersPartitionOutputs) {
  Rng rng(3);
  std::uniform_real_distribution<double> a(0, 1);
  for (int t = 0; t < 30; ++t) {
    auto l = dense_layer(random_tensor(rng, 1, 1, 3, 9));
    auto next = dense_layer(random_tensor(rng, 1, 1, 9, 2));
    auto r = merge_layer(l, next, a(rng));
    std::vector<int> seen(9, 0);
    std::size_t prev_first = 0;
    for (std::size_t q = 0; q < r.plan.clusters.size(); ++q) {
      const auto& c = r.plan.clusters[q];
      ASSERT_FALSE(c.empty());
      EXPECT_TRUE(std::is_sorted(c.begin(), c.end()));
      if (q) EXPECT_GT(c.front(), prev_first);
      prev_first = c.front();
      for (auto i : c) ++seen[i];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    EXPECT_EQ(r.layer.out_channels(), r.plan.clusters.size());
    EXPECT_EQ(r.next.weights.c_in, r.plan.clusters.size());
  }
}

TEST(MergeLayer, DepthwiseSuccessorRejected) {
  LayerSpec dw;
  dw.kind = LayerKind::depthwise;
  dw.weights = Tensor4(1, 1, 1, 2);
  dw.bias = {0, 0};
  EXPECT_THROW(merge_layer(rows_layer({{1}, {1}}), dw, 0.0), Error);
}

TEST(MergeNetwork, ExactAtZeroAlphaWithPlantedDuplicates) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    auto net = random_mixed_net(rng, false);
    auto& first = net.layers[0];
    if (first.out_channels() < 2) continue;
    plant_duplicate_neuron(first, 0, first.out_channels() - 1);
    auto [merged, plans] = merge_network(net, {0.0, AlphaStrategy::block, Signature::full});
    EXPECT_LT(merged.layers[0].out_channels(), net.layers[0].out_channels());
    for (int i = 0; i < 100; ++i) {
      auto x = random_input(rng, 6, 6, net.layers[0].in_channels());
      EXPECT_LE(max_abs_diff(forward(net, x), forward(merged, x)), 1e-5);
    }
  }
}

TEST(MergeNetwork, UnhashedRandomNetUnchangedAtZero) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    auto net = random_mixed_net(rng, false);
    auto [merged, plans] = merge_network(net);
    EXPECT_EQ(merged, net);
    for (const auto& p : plans) EXPECT_EQ(p.merged_count, p.neurons_before);
  }
}

TEST(MergeNetwork, IdempotentAtZero) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    auto net = random_mixed_net(rng, false);
    plant_duplicate_neuron(net.layers[0], 0, 1 % net.layers[0].out_channels());
    auto once = merge_network(net).first;
    EXPECT_EQ(merge_network(once).first, once);
  }
}

TEST(MergeNetwork, FinalAndSkipLayersExcluded) {
  NetworkGraph net;
  for (int l = 0; l < 3; ++l) net.layers.push_back(rows_layer({{1, 1}, {1, 1}}));
  net.skips.push_back({0, 1});
  auto [merged, plans] = merge_network(net);
  ASSERT_EQ(plans.size(), 3u);
  EXPECT_TRUE(plans[0].skipped);
  EXPECT_TRUE(plans[1].skipped);
  EXPECT_EQ(*plans[2].skipped, "final layer");
  EXPECT_EQ(merged, net);
}

TEST(MergeNetwork, PermutationEquivariance) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 8;
    NetworkGraph net;
    net.layers.push_back(dense_layer(random_tensor(rng, 1, 1, 3, n)));
    net.layers[0].bias = gaussian_values(rng, n, 0.1);
    plant_duplicate_neuron(net.layers[0], 1, 5);
    plant_duplicate_neuron(net.layers[0], 2, 6);
    net.layers.push_back(dense_layer(random_tensor(rng, 1, 1, n, 2), Activation::identity));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto pnet = net;  // output k of pnet is output perm[k] of net
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t c = 0; c < 3; ++c) pnet.layers[0].weights.at(0, 0, c, k) = net.layers[0].weights.at(0, 0, c, perm[k]);
      pnet.layers[0].bias[k] = net.layers[0].bias[perm[k]];
      for (std::size_t j = 0; j < 2; ++j) pnet.layers[1].weights.at(0, 0, k, j) = net.layers[1].weights.at(0, 0, perm[k], j);
    }
    MergeConfig cfg{0.2, AlphaStrategy::constant, Signature::full};
    auto [a, pa] = merge_network(net, cfg);
    auto [b, pb] = merge_network(pnet, cfg);
    std::set<std::set<std::size_t>> ca, cb;
    for (const auto& c : pa[0].clusters) ca.insert({c.begin(), c.end()});
    for (const auto& c : pb[0].clusters) {
      std::set<std::size_t> mapped;
      for (auto k : c) mapped.insert(perm[k]);
      cb.insert(mapped);
    }
    EXPECT_EQ(ca, cb);
    for (int i = 0; i < 20; ++i) {
      auto x = random_input(rng, 1, 1, 3);
      EXPECT_LE(max_abs_diff(forward(a, x), forward(b, x)), 1e-5);
    }
  }
}

TEST(Calibrate, FullToleranceAcceptsEverything) {
  Rng rng(8);
  auto net = random_mixed_net(rng, false);
  std::vector<FeatureMap> xs;
  for (int i = 0; i < 20; ++i) xs.push_back(random_input(rng, 6, 6, net.layers[0].in_channels()));
  auto cal = calibrate_alpha(net, labelled_by(net, xs), 1.0);
  EXPECT_EQ(cal.alpha, 1.0);
  EXPECT_TRUE(cal.accepted);
}

TEST(Calibrate, AnyMergeFlipsGivesZero) {
  // out0 = h0 - h2, out1 = -0.05 h0; merging neurons 0 and 2 zeroes out0 and flips argmax.
  NetworkGraph net;
  net.layers.push_back(rows_layer({{1}, {-1}, {1.1f}}));
  net.layers.push_back(dense_layer(Tensor4(1, 1, 3, 2, {1, -0.05f, 0, 0, -1, 0}), Activation::identity));
  std::vector<FeatureMap> xs;
  for (float v : {0.5f, 1.0f, 2.0f, 3.0f}) xs.push_back(FeatureMap::vector({v}));
  auto ds = labelled_by(net, xs);
  for (auto l : ds.labels) EXPECT_EQ(l, 1u);
  auto cal = calibrate_alpha(net, ds, 0.0, AlphaStrategy::constant);
  EXPECT_EQ(cal.alpha, 0.0);
  EXPECT_EQ(cal.accuracy, 1.0);
}

TEST(Calibrate, NextStepFails) {
  Rng rng(9);
  int checked = 0;
  for (int t = 0; t < 10; ++t) {
    auto net = random_mixed_net(rng, false);
    std::vector<FeatureMap> xs;
    for (int i = 0; i < 30; ++i) xs.push_back(random_input(rng, 6, 6, net.layers[0].in_channels()));
    auto ds = labelled_by(net, xs);
    auto cal = calibrate_alpha(net, ds, 0.1, AlphaStrategy::constant);
    ASSERT_TRUE(cal.accepted);
    MergeConfig at{cal.alpha, AlphaStrategy::constant, Signature::full};
    EXPECT_GE(accuracy(merge_network(net, at).first, ds), cal.baseline - 0.1);
    if (cal.alpha + 0.01 <= 1.0) {
      MergeConfig next{cal.alpha + 0.01, AlphaStrategy::constant, Signature::full};
      EXPECT_LT(accuracy(merge_network(net, next).first, ds), cal.baseline - 0.1);
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(Calibrate, EmptyDatasetRejected) {
  Rng rng(10);
  auto net = random_mixed_net(rng, false);
  EXPECT_THROW(calibrate_alpha(net, Dataset{}, 0.1), Error);
}
