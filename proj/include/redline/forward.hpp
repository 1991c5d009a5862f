#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "redline/error.hpp"
#include "redline/model.hpp"
#include "redline/parallel.hpp"

namespace redline {

struct SpatialShape {
  std::size_t height = 1;
  std::size_t width = 1;
};

struct ConvGeometry {
  std::size_t out_h = 1, out_w = 1;
  std::size_t pad_top = 0, pad_left = 0;
};

inline ConvGeometry conv_geometry(const LayerSpec& layer, SpatialShape in, std::size_t index = 0) {
  const std::size_t kh = layer.weights.h, kw = layer.weights.w, s = layer.stride;
  ConvGeometry g;
  if (layer.kind == LayerKind::dense) {
    g.out_h = in.height;
    g.out_w = in.width;
    return g;
  }
  if (layer.padding == Padding::valid) {
    if (in.height < kh || in.width < kw)
      throw Error(ErrorKind::shape, "input smaller than kernel under valid padding", index);
    g.out_h = (in.height - kh) / s + 1;
    g.out_w = (in.width - kw) / s + 1;
  } else {
    g.out_h = (in.height + s - 1) / s;
    g.out_w = (in.width + s - 1) / s;
    std::size_t need_h = (g.out_h - 1) * s + kh;
    std::size_t need_w = (g.out_w - 1) * s + kw;
    g.pad_top = need_h > in.height ? (need_h - in.height) / 2 : 0;
    g.pad_left = need_w > in.width ? (need_w - in.width) / 2 : 0;
  }
  return g;
}

namespace detail {

// Per-channel partial sums accumulated in ascending channel order; within a
// channel the kernel taps are summed in ascending (y, x) order. The split
// evaluator uses the same order, so both paths agree bit for bit.
inline void accumulate_layer(const LayerSpec& layer, const FeatureMap& in, FeatureMap& out,
                             const ConvGeometry& g) {
  const auto& W = layer.weights;
  const std::size_t kh = W.h, kw = W.w, s = layer.stride, c_out = W.c_out;
  const std::size_t c_in = layer.in_channels();
  std::vector<float> partial(c_out);
  std::vector<float> unique_partial;

  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      float* acc = &out.data[(oy * g.out_w + ox) * c_out];
      for (std::size_t j = 0; j < c_out; ++j) acc[j] = 0.0f;

      if (layer.kind == LayerKind::depthwise) {
        for (std::size_t j = 0; j < c_out; ++j) {
          float p = 0.0f;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            long iy = static_cast<long>(oy * s + ky) - static_cast<long>(g.pad_top);
            if (iy < 0 || iy >= static_cast<long>(in.height)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              long ix = static_cast<long>(ox * s + kx) - static_cast<long>(g.pad_left);
              if (ix < 0 || ix >= static_cast<long>(in.width)) continue;
              p += in.at(iy, ix, j) * W.at(ky, kx, 0, j);
            }
          }
          acc[j] = p;
        }
        continue;
      }

      for (std::size_t c = 0; c < c_in; ++c) {
        if (layer.split) {
          const auto& sp = *layer.split;
          const std::size_t n_unique = sp.unique_count(c);
          unique_partial.assign(n_unique, 0.0f);
          for (std::size_t u = 0; u < n_unique; ++u) {
            auto k = sp.unique_kernel(c, u);
            float p = 0.0f;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              long iy = static_cast<long>(oy * s + ky) - static_cast<long>(g.pad_top);
              if (iy < 0 || iy >= static_cast<long>(in.height)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                long ix = static_cast<long>(ox * s + kx) - static_cast<long>(g.pad_left);
                if (ix < 0 || ix >= static_cast<long>(in.width)) continue;
                p += in.at(iy, ix, c) * k[ky * kw + kx];
              }
            }
            unique_partial[u] = p;
          }
          const auto& dup = sp.dup[c];
          for (std::size_t j = 0; j < c_out; ++j) acc[j] += unique_partial[dup[j]];
        } else {
          for (std::size_t j = 0; j < c_out; ++j) partial[j] = 0.0f;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            long iy = static_cast<long>(oy * s + ky) - static_cast<long>(g.pad_top);
            if (iy < 0 || iy >= static_cast<long>(in.height)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              long ix = static_cast<long>(ox * s + kx) - static_cast<long>(g.pad_left);
              if (ix < 0 || ix >= static_cast<long>(in.width)) continue;
              const float x = in.at(iy, ix, c);
              const float* wrow = &W.data[W.index(ky, kx, c, 0)];
              for (std::size_t j = 0; j < c_out; ++j) partial[j] += x * wrow[j];
            }
          }
          for (std::size_t j = 0; j < c_out; ++j) acc[j] += partial[j];
        }
      }
    }
  }
}

}  // namespace detail

// Applies one layer up to (and excluding) skip-add and activation.
inline FeatureMap layer_preactivation(const LayerSpec& layer, const FeatureMap& in,
                                      std::size_t index = 0) {
  if (in.channels != layer.in_channels())
    throw Error(ErrorKind::shape,
                "input has " + std::to_string(in.channels) + " channels, layer expects " +
                    std::to_string(layer.in_channels()),
                index);
  auto g = conv_geometry(layer, {in.height, in.width}, index);
  FeatureMap out(g.out_h, g.out_w, layer.out_channels());
  detail::accumulate_layer(layer, in, out, g);
  const std::size_t c_out = layer.out_channels();
  for (std::size_t p = 0; p < g.out_h * g.out_w; ++p) {
    float* v = &out.data[p * c_out];
    for (std::size_t j = 0; j < c_out; ++j) {
      v[j] += layer.bias[j];
      if (layer.bn) v[j] = (v[j] - layer.bn->mean[j]) / layer.bn->std[j];
    }
  }
  return out;
}

inline void apply_activation(Activation act, FeatureMap& map) {
  if (act == Activation::relu)
    for (auto& v : map.data) v = v > 0.0f ? v : 0.0f;
}

// Reference evaluator. Layers run in order; skip sources contribute their
// post-activation output to the target's pre-activation.
inline FeatureMap forward(const NetworkGraph& net, const FeatureMap& input) {
  std::map<std::size_t, FeatureMap> kept;
  FeatureMap x = input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    FeatureMap y = layer_preactivation(layer, x, l);
    for (const auto& e : net.skips) {
      if (e.target != l) continue;
      auto it = kept.find(e.source);
      if (it == kept.end()) throw Error(ErrorKind::shape, "skip source not evaluated", l);
      const auto& src = it->second;
      if (src.height != y.height || src.width != y.width || src.channels != y.channels)
        throw Error(ErrorKind::shape, "skip-add between different shapes", l);
      for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += src.data[i];
    }
    apply_activation(layer.activation, y);
    for (float v : y.data)
      if (!std::isfinite(v)) throw Error(ErrorKind::non_finite, "non-finite activation", l);
    if (net.is_skip_source(l)) kept[l] = y;
    x = std::move(y);
  }
  return x;
}

inline FeatureMap forward(const NetworkGraph& net, const std::vector<float>& flat_input) {
  return forward(net, FeatureMap::vector(flat_input));
}

// Batched evaluation; parallel over items, each item evaluated independently.
inline std::vector<FeatureMap> forward_batch(const NetworkGraph& net,
                                             std::span<const FeatureMap> inputs) {
  std::vector<FeatureMap> out(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) { out[i] = forward(net, inputs[i]); });
  return out;
}

// Output spatial shape of every layer for a given input shape.
inline std::vector<SpatialShape> output_shapes(const NetworkGraph& net, SpatialShape input) {
  std::vector<SpatialShape> shapes;
  shapes.reserve(net.layers.size());
  SpatialShape cur = input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto g = conv_geometry(net.layers[l], cur, l);
    cur = {g.out_h, g.out_w};
    shapes.push_back(cur);
  }
  return shapes;
}

}  // namespace redline
