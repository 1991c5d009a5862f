#include <gtest/gtest.h>

#include "redline/pipeline.hpp"
#include "support/nets.hpp"

using namespace redline;
using namespace redline::testing;

namespace {

NetworkGraph two_mode_net(Rng& rng) {
  NetworkGraph net;
  net.input_shape = std::array<std::size_t, 3>{5, 5, 4};
  auto a = conv_layer(Tensor4(3, 3, 4, 8, mixture_values(rng, 288, {-0.5, 0.5}, {0.05, 0.05})));
  a.bn = random_bn(rng, 8);
  net.layers.push_back(a);
  net.layers.push_back(dense_layer(Tensor4(1, 1, 8, 3, mixture_values(rng, 24, {-0.5, 0.5}, {0.05, 0.05})),
                                   Activation::identity));
  return net;
}

PipelineConfig pinned_bandwidth() {
  PipelineConfig cfg;
  cfg.hash.bandwidth = 0.05;
  return cfg;
}

}  // namespace

TEST(Pipeline, UnhashedRandomNetLosesNothing) {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    auto net = random_mixed_net(rng, false);
    PipelineConfig cfg;
    cfg.run_hash = false;
    auto r = run_pipeline(net, cfg);
    ASSERT_EQ(r.stages.size(), 2u);
    for (const auto& s : r.stages) {
      EXPECT_EQ(removed_pct(r.original.params, s.after.params), 0.0);
      EXPECT_EQ(removed_pct(r.original.flops, s.after.flops), 0.0);
    }
    for (const auto& rec : empirical_ratio_curves(r.network, r.merge_plans, r.split_reports)) {
      EXPECT_EQ(rec.merge_ratio, 0.0);
      EXPECT_EQ(rec.split_ratio, 0.0);
    }
  }
}

TEST(Pipeline, HashedNetKeepsHashedFunction) {
  Rng rng(2);
  auto net = two_mode_net(rng);
  auto cfg = pinned_bandwidth();
  auto r = run_pipeline(net, cfg);
  auto hashed = hash_network(net, cfg.hash).first;
  for (int i = 0; i < 50; ++i) {
    auto x = random_input(rng, 5, 5, 4);
    EXPECT_LE(max_abs_diff(forward(r.network, x), forward(hashed, x)), 1e-5);
  }
  EXPECT_GT(removed_pct(r.original.flops, r.stages.back().after.flops), 0.0);
  EXPECT_GT(removed_pct(r.original.distinct, r.stages.front().after.distinct), 90.0);
}

TEST(Pipeline, SplitRatiosMatchOpCountOracle) {
  Rng rng(3);
  auto net = two_mode_net(rng);
  auto cfg = pinned_bandwidth();
  cfg.run_merge = false;
  auto r = run_pipeline(net, cfg);
  auto hashed = hash_network(net, cfg.hash).first;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& W = hashed.layers[l].weights;
    EXPECT_EQ(r.split_reports[l].ops.ratio, op_count(split_layer(W), W.c_out).ratio);
  }
}

TEST(Pipeline, BoundAssessedOnHashStage) {
  Rng rng(4);
  auto r = run_pipeline(two_mode_net(rng), pinned_bandwidth());
  ASSERT_TRUE(r.bound);
  EXPECT_GT(r.bound->U, 0.0);
  EXPECT_TRUE(r.bound->E_norm);
  EXPECT_FALSE(r.bound_unavailable);
}

TEST(Pipeline, BoundUnavailableWithoutStatistics) {
  Rng rng(5);
  auto net = two_mode_net(rng);
  net.layers[0].bn.reset();
  auto r = run_pipeline(net, pinned_bandwidth());
  EXPECT_FALSE(r.bound);
  EXPECT_TRUE(r.bound_unavailable);
}

TEST(Pipeline, StageErrorNamesStage) {
  Rng rng(6);
  auto cfg = pinned_bandwidth();
  cfg.hash.grid_size = 4;
  try {
    run_pipeline(two_mode_net(rng), cfg);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "hash");
    EXPECT_EQ(e.layer(), 0u);
  }
}

TEST(Pipeline, ReportIsDeterministic) {
  Rng rng(7);
  auto net = two_mode_net(rng);
  auto cfg = pinned_bandwidth();
  auto a = pipeline_report(run_pipeline(net, cfg), cfg).dump(2);
  auto b = pipeline_report(run_pipeline(net, cfg), cfg).dump(2);
  EXPECT_EQ(a, b);
  auto j = Json::parse(a);
  EXPECT_EQ(j["stages"].size(), 3u);
  EXPECT_TRUE(j.contains("bound"));
  EXPECT_TRUE(j.contains("ratio_curves"));
  EXPECT_EQ(j["config"]["hash"]["bandwidth"].get<double>(), 0.05);
}

TEST(RatioCurves, SingleLayerPassesReportsThrough) {
  Rng rng(8);
  NetworkGraph net;
  net.layers.push_back(dense_layer(levels_tensor(rng, 1, 1, 3, 6, {0, 1}), Activation::identity));
  PipelineConfig cfg;
  cfg.run_hash = false;
  auto r = run_pipeline(net, cfg);
  auto rec = empirical_ratio_curves(r.network, r.merge_plans, r.split_reports);
  ASSERT_EQ(rec.size(), 1u);
  EXPECT_EQ(rec[0].c_in, 3u);
  EXPECT_EQ(rec[0].split_ratio, r.split_reports[0].ops.ratio);
  EXPECT_EQ(rec[0].merge_ratio, 0.0);
}

TEST(RatioCurves, MergeRatioFromPlan) {
  MergePlan p;
  p.layer_index = 0;
  p.neurons_before = 8;
  p.merged_count = 6;
  NetworkGraph net;
  net.layers.push_back(dense_layer(Tensor4(1, 1, 2, 6)));
  auto rec = empirical_ratio_curves(net, {p}, {});
  EXPECT_DOUBLE_EQ(rec[0].merge_ratio, 0.25);
  EXPECT_TRUE(rec[0].pruned);
}

TEST(RatioCurves, DepthwiseLayersReportZero) {
  Rng rng(9);
  NetworkGraph net;
  net.input_shape = std::array<std::size_t, 3>{6, 6, 2};
  net.layers.push_back(conv_layer(levels_tensor(rng, 3, 3, 2, 4, {0, 1})));
  LayerSpec dw;
  dw.kind = LayerKind::depthwise;
  dw.prunable = false;
  dw.padding = Padding::same;
  dw.weights = Tensor4(3, 3, 1, 4);
  std::fill(dw.weights.data.begin(), dw.weights.data.end(), 1.0f);
  dw.bias.assign(4, 0.0f);
  net.layers.push_back(dw);
  net.layers.push_back(dense_layer(levels_tensor(rng, 1, 1, 4, 2, {0, 1}), Activation::identity));
  PipelineConfig cfg;
  cfg.run_hash = false;
  auto r = run_pipeline(net, cfg);
  auto rec = empirical_ratio_curves(r.network, r.merge_plans, r.split_reports);
  EXPECT_EQ(rec[1].merge_ratio, 0.0);
  EXPECT_EQ(rec[1].split_ratio, 0.0);
  EXPECT_FALSE(rec[1].pruned);
}

TEST(Footprint, ParamsAndFlopsAgreeOnUniformWidthNets) {
  Rng rng(10);
  NetworkGraph net;
  net.input_shape = std::array<std::size_t, 3>{8, 8, 32};
  for (int l = 0; l < 3; ++l) {
    auto W = random_tensor(rng, 3, 3, 32, 32);
    plant_duplicate_kernels(rng, W, 0.5);
    net.layers.push_back(conv_layer(W));
  }
  PipelineConfig cfg;
  cfg.run_hash = false;
  auto r = run_pipeline(net, cfg);
  const auto& after = r.stages.back().after;
  double params = removed_pct(r.original.params, after.params);
  double flops = removed_pct(r.original.flops, after.flops);
  EXPECT_GT(flops, 0.0);
  EXPECT_NEAR(params, flops, 1.0);
}
