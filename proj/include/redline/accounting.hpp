#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "redline/forward.hpp"
#include "redline/model.hpp"

namespace redline {

struct ParamCount {
  std::size_t weights = 0;
  std::size_t bias = 0;
  std::size_t total() const { return weights + bias; }
};

struct NetworkParams {
  std::vector<ParamCount> per_layer;
  std::size_t weights = 0;
  std::size_t bias = 0;
  std::size_t total() const { return weights + bias; }
};

// Stored weights of a layer. A split layer stores only its unique kernels.
inline ParamCount count_layer_params(const LayerSpec& layer) {
  ParamCount p;
  p.weights = layer.split ? layer.split->total_unique() * layer.split->kernel_size
                          : layer.weights.size();
  p.bias = layer.bias.size();
  return p;
}

inline NetworkParams count_params(const NetworkGraph& net) {
  NetworkParams out;
  for (const auto& layer : net.layers) {
    auto p = count_layer_params(layer);
    out.per_layer.push_back(p);
    out.weights += p.weights;
    out.bias += p.bias;
  }
  return out;
}

// Distinct values under exact bit equality.
inline std::size_t count_distinct_values(std::span<const float> values) {
  std::unordered_set<std::uint32_t> seen;
  seen.reserve(values.size());
  for (float v : values) seen.insert(std::bit_cast<std::uint32_t>(v));
  return seen.size();
}

inline std::size_t count_layer_distinct(const LayerSpec& layer) {
  if (!layer.split) return count_distinct_values(layer.weights.data);
  std::unordered_set<std::uint32_t> seen;
  for (const auto& blob : layer.split->unique_kernels)
    for (float v : blob) seen.insert(std::bit_cast<std::uint32_t>(v));
  return seen.size();
}

struct NetworkDistinct {
  std::vector<std::size_t> per_layer;
  std::size_t total = 0;  // sum of per-layer counts
};

inline NetworkDistinct count_distinct(const NetworkGraph& net) {
  NetworkDistinct out;
  for (const auto& layer : net.layers) {
    out.per_layer.push_back(count_layer_distinct(layer));
    out.total += out.per_layer.back();
  }
  return out;
}

struct NetworkFlops {
  std::vector<std::size_t> per_layer;
  std::size_t total = 0;
};

// Multiplies of one layer producing an out_h x out_w map.
inline std::size_t layer_flops(const LayerSpec& layer, SpatialShape out) {
  const std::size_t positions = out.height * out.width;
  const auto& W = layer.weights;
  if (layer.kind == LayerKind::depthwise) return W.kernel_size() * W.c_out * positions;
  if (layer.split) return layer.split->total_unique() * layer.split->kernel_size * positions;
  return W.size() * positions;
}

// Input shape is (H, W); the channel count is implied by the first layer.
inline NetworkFlops count_flops(const NetworkGraph& net, SpatialShape input) {
  if (input.height == 0 || input.width == 0)
    throw Error(ErrorKind::shape, "input spatial shape must be positive");
  NetworkFlops out;
  auto shapes = output_shapes(net, input);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    out.per_layer.push_back(layer_flops(net.layers[l], shapes[l]));
    out.total += out.per_layer.back();
  }
  return out;
}

// Uses the network's nominal input shape, or 1x1 when none is recorded.
inline NetworkFlops count_flops(const NetworkGraph& net) {
  SpatialShape in{1, 1};
  if (net.input_shape) in = {(*net.input_shape)[0], (*net.input_shape)[1]};
  return count_flops(net, in);
}

}  // namespace redline
