#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "redline/error.hpp"

namespace redline {

// Weight block with fixed axis order [h][w][c_in][c_out] (row-major).
struct Tensor4 {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::vector<float> data;

  Tensor4() = default;
  Tensor4(std::size_t h_, std::size_t w_, std::size_t c_in_, std::size_t c_out_)
      : h(h_), w(w_), c_in(c_in_), c_out(c_out_), data(h_ * w_ * c_in_ * c_out_, 0.0f) {}
  Tensor4(std::size_t h_, std::size_t w_, std::size_t c_in_, std::size_t c_out_,
          std::vector<float> values)
      : h(h_), w(w_), c_in(c_in_), c_out(c_out_), data(std::move(values)) {
    if (data.size() != size())
      throw Error(ErrorKind::shape, "tensor data length " + std::to_string(data.size()) +
                                        " != h*w*c_in*c_out = " + std::to_string(size()));
  }

  std::size_t size() const { return h * w * c_in * c_out; }
  std::size_t kernel_size() const { return h * w; }

  std::size_t index(std::size_t y, std::size_t x, std::size_t c, std::size_t j) const {
    return ((y * w + x) * c_in + c) * c_out + j;
  }
  float& at(std::size_t y, std::size_t x, std::size_t c, std::size_t j) {
    return data[index(y, x, c, j)];
  }
  float at(std::size_t y, std::size_t x, std::size_t c, std::size_t j) const {
    return data[index(y, x, c, j)];
  }

  // Kernel W[:,:,c,j] flattened in (y, x) order.
  std::vector<float> kernel(std::size_t c, std::size_t j) const {
    std::vector<float> k;
    k.reserve(kernel_size());
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) k.push_back(at(y, x, c, j));
    return k;
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor4&) const = default;
};

struct BatchNormStats {
  std::vector<float> mean;
  std::vector<float> std;

  bool operator==(const BatchNormStats&) const = default;
};

enum class LayerKind { dense, conv2d, depthwise };
enum class Padding { same, valid };
enum class Activation { relu, identity };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::depthwise: return "depthwise";
  }
  return "?";
}
inline const char* to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }
inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

// Input-wise decomposition of a layer: per input channel, the distinct kernels
// in first-occurrence order and, per output, which of them reproduces it.
struct SplitData {
  std::size_t kernel_size = 1;  // h*w
  std::vector<std::vector<float>> unique_kernels;  // [c] -> count*kernel_size floats
  std::vector<std::vector<std::uint32_t>> dup;      // [c] -> c_out indices

  std::size_t unique_count(std::size_t c) const {
    return kernel_size == 0 ? 0 : unique_kernels[c].size() / kernel_size;
  }
  std::size_t total_unique() const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < unique_kernels.size(); ++c) n += unique_count(c);
    return n;
  }
  std::span<const float> unique_kernel(std::size_t c, std::size_t u) const {
    return std::span<const float>(unique_kernels[c]).subspan(u * kernel_size, kernel_size);
  }

  bool operator==(const SplitData&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  // Depthwise layers store their per-channel kernels as (h, w, 1, C).
  Tensor4 weights;
  std::vector<float> bias;
  std::size_t stride = 1;
  Padding padding = Padding::valid;
  Activation activation = Activation::identity;
  std::optional<BatchNormStats> bn;
  bool prunable = true;
  std::optional<SplitData> split;

  std::size_t in_channels() const {
    return kind == LayerKind::depthwise ? weights.c_out : weights.c_in;
  }
  std::size_t out_channels() const { return weights.c_out; }

  bool operator==(const LayerSpec&) const = default;
};

struct SkipEdge {
  std::size_t source = 0;
  std::size_t target = 0;

  bool operator==(const SkipEdge&) const = default;
  auto operator<=>(const SkipEdge&) const = default;
};

struct NetworkGraph {
  std::vector<LayerSpec> layers;
  std::vector<SkipEdge> skips;
  // Optional nominal input shape (H, W, C) used for FLOP accounting.
  std::optional<std::array<std::size_t, 3>> input_shape;

  std::size_t size() const { return layers.size(); }

  bool is_skip_source(std::size_t l) const {
    return std::any_of(skips.begin(), skips.end(), [&](const SkipEdge& e) { return e.source == l; });
  }
  bool is_skip_target(std::size_t l) const {
    return std::any_of(skips.begin(), skips.end(), [&](const SkipEdge& e) { return e.target == l; });
  }

  bool operator==(const NetworkGraph&) const = default;
};

// Activation map in H x W x C layout. Flat vectors are 1 x 1 x C.
struct FeatureMap {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, std::size_t c)
      : height(h), width(w), channels(c), data(h * w * c, 0.0f) {}
  FeatureMap(std::size_t h, std::size_t w, std::size_t c, std::vector<float> values)
      : height(h), width(w), channels(c), data(std::move(values)) {
    if (data.size() != h * w * c) throw Error(ErrorKind::shape, "feature map length mismatch");
  }
  static FeatureMap vector(std::vector<float> values) {
    auto n = values.size();
    return FeatureMap(1, 1, n, std::move(values));
  }

  float& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }

  bool operator==(const FeatureMap&) const = default;
};

inline void validate_layer(const LayerSpec& layer, std::size_t index) {
  const auto& W = layer.weights;
  if (W.data.size() != W.size())
    throw Error(ErrorKind::shape, "weight data length does not match its shape", index);
  if (W.h == 0 || W.w == 0 || W.c_in == 0 || W.c_out == 0)
    throw Error(ErrorKind::shape, "zero-sized weight axis", index);
  if (!W.all_finite()) throw Error(ErrorKind::non_finite, "non-finite weight", index);
  if (layer.bias.size() != W.c_out)
    throw Error(ErrorKind::shape, "bias length != c_out", index);
  for (float b : layer.bias)
    if (!std::isfinite(b)) throw Error(ErrorKind::non_finite, "non-finite bias", index);
  if (layer.stride == 0) throw Error(ErrorKind::shape, "stride must be positive", index);
  if (layer.kind == LayerKind::dense && (W.h != 1 || W.w != 1 || layer.stride != 1))
    throw Error(ErrorKind::shape, "dense layer needs h=w=1 and stride=1", index);
  if (layer.kind == LayerKind::depthwise && W.c_in != 1)
    throw Error(ErrorKind::shape, "depthwise weights must be (h, w, 1, C)", index);
  if (layer.bn) {
    if (layer.bn->mean.size() != W.c_out || layer.bn->std.size() != W.c_out)
      throw Error(ErrorKind::shape, "batch-norm statistics length != c_out", index);
    for (std::size_t c = 0; c < W.c_out; ++c) {
      if (!std::isfinite(layer.bn->mean[c]) || !std::isfinite(layer.bn->std[c]))
        throw Error(ErrorKind::non_finite, "non-finite batch-norm statistic", index);
      if (!(layer.bn->std[c] > 0.0f))
        throw Error(ErrorKind::domain, "batch-norm std must be positive", index);
    }
  }
  if (layer.split) {
    const auto& s = *layer.split;
    if (layer.kind == LayerKind::depthwise)
      throw Error(ErrorKind::shape, "depthwise layers cannot be split", index);
    if (s.kernel_size != W.kernel_size() || s.unique_kernels.size() != W.c_in ||
        s.dup.size() != W.c_in)
      throw Error(ErrorKind::shape, "split data does not match layer shape", index);
    for (std::size_t c = 0; c < W.c_in; ++c) {
      if (s.unique_kernels[c].size() % s.kernel_size != 0 || s.dup[c].size() != W.c_out)
        throw Error(ErrorKind::shape, "split channel data malformed", index);
      for (auto d : s.dup[c])
        if (d >= s.unique_count(c)) throw Error(ErrorKind::shape, "dup index out of range", index);
    }
  }
}

// Checks every structural invariant of a network; throws on the first violation.
inline void validate(const NetworkGraph& net) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    validate_layer(net.layers[l], l);
    if (l > 0 && net.layers[l].in_channels() != net.layers[l - 1].out_channels())
      throw Error(ErrorKind::shape,
                  "input channels " + std::to_string(net.layers[l].in_channels()) +
                      " != previous output channels " +
                      std::to_string(net.layers[l - 1].out_channels()),
                  l);
  }
  for (const auto& e : net.skips) {
    if (e.source >= e.target || e.target >= net.layers.size())
      throw Error(ErrorKind::shape, "skip edges must point forward to an existing layer");
    if (net.layers[e.source].out_channels() != net.layers[e.target].out_channels())
      throw Error(ErrorKind::shape, "skip edge joins layers with different channel counts",
                  e.target);
  }
}

}  // namespace redline
