#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "redline/accounting.hpp"
#include "redline/error.hpp"
#include "redline/forward.hpp"
#include "redline/model.hpp"
#include "redline/parallel.hpp"

namespace redline {

// Per input channel: distinct kernels (exact bit equality) in first-occurrence
// order and the index each output uses.
inline SplitData split_layer(const Tensor4& W) {
  SplitData s;
  s.kernel_size = W.kernel_size();
  s.unique_kernels.resize(W.c_in);
  s.dup.resize(W.c_in);
  parallel_for(W.c_in, [&](std::size_t c) {
    std::map<std::vector<std::uint32_t>, std::uint32_t> seen;
    auto& blob = s.unique_kernels[c];
    auto& dup = s.dup[c];
    dup.resize(W.c_out);
    for (std::size_t j = 0; j < W.c_out; ++j) {
      auto k = W.kernel(c, j);
      std::vector<std::uint32_t> key(k.size());
      for (std::size_t i = 0; i < k.size(); ++i) key[i] = std::bit_cast<std::uint32_t>(k[i]);
      auto [it, fresh] = seen.emplace(std::move(key), static_cast<std::uint32_t>(seen.size()));
      if (fresh) blob.insert(blob.end(), k.begin(), k.end());
      dup[j] = it->second;
    }
  });
  return s;
}

struct OpCount {
  std::size_t remaining = 0;  // kernel applications
  std::size_t original = 0;
  double ratio = 0.0;         // 1 - remaining/original
  std::size_t remaining_flops = 0;  // multiplies over the output map
  std::size_t original_flops = 0;
};

inline OpCount op_count(const SplitData& s, std::size_t c_out, SpatialShape out = {1, 1}) {
  OpCount r;
  r.remaining = s.total_unique();
  r.original = s.unique_kernels.size() * c_out;
  r.ratio = r.original ? 1.0 - static_cast<double>(r.remaining) / static_cast<double>(r.original) : 0.0;
  const std::size_t scale = s.kernel_size * out.height * out.width;
  r.remaining_flops = r.remaining * scale;
  r.original_flops = r.original * scale;
  return r;
}

struct SplitReport {
  std::size_t layer_index = 0;
  std::size_t c_in = 0;
  OpCount ops;
  std::optional<std::string> skipped;
};

// Splits every prunable non-depthwise layer. Output spatial sizes come from
// the network's nominal input shape (1x1 when none is recorded).
inline std::pair<NetworkGraph, std::vector<SplitReport>> split_network(const NetworkGraph& net) {
  NetworkGraph out = net;
  std::vector<SplitReport> reports;
  SpatialShape in{1, 1};
  if (net.input_shape) in = {(*net.input_shape)[0], (*net.input_shape)[1]};
  auto shapes = output_shapes(net, in);
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& layer = out.layers[l];
    SplitReport rep;
    rep.layer_index = l;
    rep.c_in = layer.in_channels();
    if (!layer.prunable || layer.kind == LayerKind::depthwise) {
      rep.skipped = layer.prunable ? "depthwise" : "not prunable";
      const std::size_t flops = layer_flops(layer, shapes[l]);
      const std::size_t ops = layer.kind == LayerKind::depthwise ? layer.out_channels()
                                                                 : layer.weights.c_in * layer.weights.c_out;
      rep.ops = {ops, ops, 0.0, flops, flops};
      if (layer.split) {
        layer.split.reset();
      }
      reports.push_back(rep);
      continue;
    }
    layer.split = split_layer(layer.weights);
    rep.ops = op_count(*layer.split, layer.out_channels(), shapes[l]);
    reports.push_back(rep);
  }
  return {std::move(out), std::move(reports)};
}

// Evaluates a split network. Dense and split layers share one summation
// order, so this is the reference evaluator applied to the split graph.
inline FeatureMap split_forward(const NetworkGraph& split_net, const FeatureMap& input) {
  return forward(split_net, input);
}

// Exact Bell numbers for n <= 25 via B_{n+1} = sum_k C(n,k) B_k.
inline std::uint64_t bell_number(std::size_t n) {
  if (n > 25) throw Error(ErrorKind::domain, "bell_number overflows 64 bits beyond n = 25");
  std::vector<unsigned __int128> B(n + 1, 0);
  B[0] = 1;
  for (std::size_t m = 0; m < n; ++m) {
    unsigned __int128 s = 0, binom = 1;
    for (std::size_t k = 0; k <= m; ++k) {
      s += binom * B[k];
      binom = binom * (m - k) / (k + 1);
    }
    if (s > std::numeric_limits<std::uint64_t>::max()) throw Error(ErrorKind::domain, "bell_number overflow");
    B[m + 1] = s;
  }
  return static_cast<std::uint64_t>(B[n]);
}

struct PartitionSearch {
  std::size_t min_ops = 0;
  std::vector<std::vector<std::size_t>> best;  // blocks of input channels
  std::size_t partitions = 0;
};

// Exhaustive search over all set partitions of the input channels. A block C
// costs |C| times the number of distinct output kernels stacked over C.
inline PartitionSearch partition_bruteforce(const Tensor4& W) {
  const std::size_t n = W.c_in;
  if (n == 0 || n > 8) throw Error(ErrorKind::domain, "partition search supports 1..8 input channels");
  std::vector<std::size_t> cost(std::size_t{1} << n, 0);
  for (std::size_t mask = 1; mask < cost.size(); ++mask) {
    std::map<std::vector<std::uint32_t>, int> seen;
    std::size_t size = 0;
    for (std::size_t c = 0; c < n; ++c) size += (mask >> c) & 1u;
    for (std::size_t j = 0; j < W.c_out; ++j) {
      std::vector<std::uint32_t> key;
      for (std::size_t c = 0; c < n; ++c)
        if ((mask >> c) & 1u)
          for (float v : W.kernel(c, j)) key.push_back(std::bit_cast<std::uint32_t>(v));
      seen.emplace(std::move(key), 0);
    }
    cost[mask] = size * seen.size();
  }

  PartitionSearch result;
  result.min_ops = std::numeric_limits<std::size_t>::max();
  // Restricted growth strings: rgs[i] <= 1 + max(rgs[0..i-1]).
  std::vector<std::size_t> rgs(n, 0), peak(n, 0);
  while (true) {
    std::size_t blocks = peak[n - 1] + 1;
    std::vector<std::size_t> masks(blocks, 0);
    for (std::size_t i = 0; i < n; ++i) masks[rgs[i]] |= std::size_t{1} << i;
    std::size_t total = 0;
    for (auto m : masks) total += cost[m];
    ++result.partitions;
    if (total < result.min_ops) {
      result.min_ops = total;
      result.best.assign(blocks, {});
      for (std::size_t i = 0; i < n; ++i) result.best[rgs[i]].push_back(i);
    }
    std::size_t i = n - 1;
    while (i > 0 && rgs[i] == peak[i - 1] + 1) --i;
    if (i == 0) break;
    ++rgs[i];
    peak[i] = std::max(peak[i - 1], rgs[i]);
    for (std::size_t k = i + 1; k < n; ++k) {
      rgs[k] = 0;
      peak[k] = peak[k - 1];
    }
  }
  return result;
}

}  // namespace redline
