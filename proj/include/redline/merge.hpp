#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "redline/bundle.hpp"
#include "redline/error.hpp"
#include "redline/forward.hpp"
#include "redline/model.hpp"
#include "redline/parallel.hpp"

namespace redline {

enum class Signature { full, weights_only };

// Per-output feature vector: weights W[:,:,:,i], then bias and BN statistics
// unless restricted to weights.
inline std::vector<std::vector<double>> neuron_signatures(const LayerSpec& layer, Signature mode) {
  const auto& W = layer.weights;
  std::vector<std::vector<double>> sig(W.c_out);
  for (std::size_t i = 0; i < W.c_out; ++i) {
    auto& s = sig[i];
    s.reserve(W.h * W.w * W.c_in + 3);
    for (std::size_t y = 0; y < W.h; ++y)
      for (std::size_t x = 0; x < W.w; ++x)
        for (std::size_t c = 0; c < W.c_in; ++c) s.push_back(W.at(y, x, c, i));
    if (mode == Signature::full) {
      s.push_back(layer.bias[i]);
      if (layer.bn) {
        s.push_back(layer.bn->mean[i]);
        s.push_back(layer.bn->std[i]);
      }
    }
  }
  return sig;
}

// Symmetric c_out x c_out Euclidean distance matrix, row-major.
inline std::vector<double> neuron_distances(const LayerSpec& layer, Signature mode = Signature::full) {
  auto sig = neuron_signatures(layer, mode);
  const std::size_t n = sig.size();
  std::vector<double> d(n * n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double s = 0.0;
      const auto& a = sig[std::min(i, j)];
      const auto& b = sig[std::max(i, j)];
      for (std::size_t k = 0; k < a.size(); ++k) {
        double t = a[k] - b[k];
        s += t * t;
      }
      d[i * n + j] = std::sqrt(s);
    }
  });
  return d;
}

// Linear-interpolation percentile of the strictly positive off-diagonal
// distances; alpha = 0 gives 0 (exact duplicates only).
inline double merge_threshold(const std::vector<double>& dist, std::size_t n, double alpha) {
  if (alpha <= 0.0) return 0.0;
  std::vector<double> pos;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (dist[i * n + j] > 0.0) pos.push_back(dist[i * n + j]);
  if (pos.empty()) return 0.0;
  std::sort(pos.begin(), pos.end());
  double at = std::min(alpha, 1.0) * static_cast<double>(pos.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(at));
  auto hi = std::min(lo + 1, pos.size() - 1);
  return pos[lo] + (at - static_cast<double>(lo)) * (pos[hi] - pos[lo]);
}

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  // The smaller root wins so representatives are the smallest members.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

// Connected components of the graph {i~j : d_ij < threshold or d_ij == 0},
// each sorted, ordered by smallest member.
inline std::vector<std::vector<std::size_t>> threshold_clusters(const std::vector<double>& dist, std::size_t n,
                                                                double threshold) {
  DisjointSets ds(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = dist[i * n + j];
      if (d < threshold || d == 0.0) ds.unite(i, j);
    }
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> slot(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = ds.find(i);
    if (slot[r] == n) {
      slot[r] = clusters.size();
      clusters.emplace_back();
    }
    clusters[slot[r]].push_back(i);
  }
  return clusters;
}

struct MergePlan {
  std::size_t layer_index = 0;
  double alpha = 0.0;
  double threshold = 0.0;
  std::vector<std::vector<std::size_t>> clusters;
  std::size_t neurons_before = 0;
  std::size_t merged_count = 0;
  std::optional<std::string> skipped;  // reason when the layer was left alone
};

struct MergeOutcome {
  LayerSpec layer;
  LayerSpec next;
  MergePlan plan;
};

// Replaces each cluster of outputs of `layer` by its barycenter and sums the
// matching input columns of `next`.
inline MergeOutcome merge_layer(const LayerSpec& layer, const LayerSpec& next, double alpha,
                                Signature mode = Signature::full, std::size_t index = 0) {
  const auto& W = layer.weights;
  if (next.kind == LayerKind::depthwise || layer.kind == LayerKind::depthwise)
    throw Error(ErrorKind::shape, "depthwise layers cannot take part in merging", index);
  if (next.weights.c_in != W.c_out) throw Error(ErrorKind::shape, "successor does not consume this layer", index);
  if (alpha < 0.0 || alpha > 1.0) throw Error(ErrorKind::domain, "alpha must lie in [0, 1]", index);

  MergeOutcome out;
  out.plan.layer_index = index;
  out.plan.alpha = alpha;
  out.plan.neurons_before = W.c_out;
  const std::size_t n = W.c_out;
  auto dist = neuron_distances(layer, mode);
  out.plan.threshold = merge_threshold(dist, n, alpha);
  out.plan.clusters = threshold_clusters(dist, n, out.plan.threshold);
  const std::size_t k = out.plan.clusters.size();
  out.plan.merged_count = k;

  LayerSpec merged = layer;
  merged.split.reset();
  merged.weights = Tensor4(W.h, W.w, W.c_in, k);
  merged.bias.assign(k, 0.0f);
  if (layer.bn) merged.bn = BatchNormStats{std::vector<float>(k), std::vector<float>(k)};
  for (std::size_t q = 0; q < k; ++q) {
    const auto& members = out.plan.clusters[q];
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t y = 0; y < W.h; ++y)
      for (std::size_t x = 0; x < W.w; ++x)
        for (std::size_t c = 0; c < W.c_in; ++c) {
          double s = 0.0;
          for (auto i : members) s += W.at(y, x, c, i);
          merged.weights.at(y, x, c, q) = static_cast<float>(s * inv);
        }
    double b = 0.0, m = 0.0, sd = 0.0;
    for (auto i : members) {
      b += layer.bias[i];
      if (layer.bn) {
        m += layer.bn->mean[i];
        sd += layer.bn->std[i];
      }
    }
    merged.bias[q] = static_cast<float>(b * inv);
    if (layer.bn) {
      merged.bn->mean[q] = static_cast<float>(m * inv);
      merged.bn->std[q] = static_cast<float>(sd * inv);
    }
  }

  const auto& V = next.weights;
  LayerSpec updated = next;
  updated.split.reset();
  updated.weights = Tensor4(V.h, V.w, k, V.c_out);
  for (std::size_t y = 0; y < V.h; ++y)
    for (std::size_t x = 0; x < V.w; ++x)
      for (std::size_t q = 0; q < k; ++q)
        for (std::size_t j = 0; j < V.c_out; ++j) {
          float s = 0.0f;
          for (auto c : out.plan.clusters[q]) s += V.at(y, x, c, j);
          updated.weights.at(y, x, q, j) = s;
        }
  out.layer = std::move(merged);
  out.next = std::move(updated);
  return out;
}

enum class AlphaStrategy { constant, linear_asc, linear_desc, block };

inline const char* to_string(AlphaStrategy s) {
  switch (s) {
    case AlphaStrategy::constant: return "constant";
    case AlphaStrategy::linear_asc: return "asc";
    case AlphaStrategy::linear_desc: return "desc";
    case AlphaStrategy::block: return "block";
  }
  return "?";
}

inline AlphaStrategy parse_strategy(const std::string& s) {
  if (s == "constant") return AlphaStrategy::constant;
  if (s == "asc" || s == "linear_asc") return AlphaStrategy::linear_asc;
  if (s == "desc" || s == "linear_desc") return AlphaStrategy::linear_desc;
  if (s == "block") return AlphaStrategy::block;
  throw Error(ErrorKind::domain, "unknown alpha strategy '" + s + "'");
}

// Per-layer alpha for layers 0..L-1. Block boundaries sit at floor(L/3) and
// floor(2L/3) (0-based layer index).
inline std::vector<double> alpha_schedule(double alpha, std::size_t L, AlphaStrategy strategy) {
  if (alpha < 0.0 || alpha > 1.0) throw Error(ErrorKind::domain, "alpha must lie in [0, 1]");
  std::vector<double> a(L);
  const double n = static_cast<double>(L);
  for (std::size_t i = 0; i < L; ++i) {
    const double l = static_cast<double>(i + 1);
    switch (strategy) {
      case AlphaStrategy::constant: a[i] = alpha; break;
      case AlphaStrategy::linear_asc: a[i] = alpha * l / n; break;
      case AlphaStrategy::linear_desc: a[i] = alpha * (n - l) / n; break;
      case AlphaStrategy::block:
        if (i < L / 3) a[i] = std::max(2.0 * alpha - 1.0, 0.0);
        else if (i < 2 * L / 3) a[i] = alpha;
        else a[i] = std::min(2.0 * alpha, 1.0);
        break;
    }
  }
  return a;
}

inline std::optional<std::string> merge_exclusion(const NetworkGraph& net, std::size_t l) {
  const auto& layer = net.layers[l];
  if (l + 1 >= net.layers.size()) return "final layer";
  if (!layer.prunable) return "not prunable";
  if (layer.kind == LayerKind::depthwise) return "depthwise";
  if (net.layers[l + 1].kind == LayerKind::depthwise) return "feeds a depthwise layer";
  if (net.is_skip_source(l) || net.is_skip_target(l)) return "output joins a skip-add";
  return std::nullopt;
}

struct MergeConfig {
  double alpha = 0.0;
  AlphaStrategy strategy = AlphaStrategy::block;
  Signature signature = Signature::full;
};

// Merges layers front to back; the final layer is never merged.
inline std::pair<NetworkGraph, std::vector<MergePlan>> merge_network(const NetworkGraph& net,
                                                                     const MergeConfig& config = {}) {
  NetworkGraph out = net;
  std::vector<MergePlan> plans;
  auto alphas = alpha_schedule(config.alpha, net.layers.size(), config.strategy);
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    if (auto why = merge_exclusion(out, l)) {
      MergePlan p;
      p.layer_index = l;
      p.alpha = alphas[l];
      p.neurons_before = p.merged_count = out.layers[l].out_channels();
      p.skipped = *why;
      plans.push_back(std::move(p));
      continue;
    }
    auto r = merge_layer(out.layers[l], out.layers[l + 1], alphas[l], config.signature, l);
    out.layers[l] = std::move(r.layer);
    out.layers[l + 1] = std::move(r.next);
    plans.push_back(std::move(r.plan));
  }
  return {std::move(out), std::move(plans)};
}

// Index of the largest output; ties go to the lowest index.
inline std::size_t argmax(const std::vector<float>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline double accuracy(const NetworkGraph& net, const Dataset& ds) {
  if (ds.size() == 0) throw Error(ErrorKind::domain, "empty dataset");
  std::vector<double> hit(ds.size());
  parallel_for(ds.size(), [&](std::size_t i) {
    hit[i] = argmax(forward(net, ds.samples[i]).data) == ds.labels[i] ? 1.0 : 0.0;
  });
  return pairwise_sum(hit) / static_cast<double>(ds.size());
}

struct Calibration {
  double alpha = 0.0;
  double accuracy = 0.0;
  double baseline = 0.0;
  bool accepted = false;  // false when even alpha = 0 fails the check
};

// Largest alpha (resolution 0.01) whose merged network keeps accuracy within
// `tolerance` of the baseline: grid scan with step 0.05, then bisection between
// the largest passing grid point and its failing neighbour.
inline Calibration calibrate_alpha(const NetworkGraph& net, const Dataset& ds, double tolerance,
                                   AlphaStrategy strategy = AlphaStrategy::block,
                                   Signature signature = Signature::full) {
  if (ds.size() == 0) throw Error(ErrorKind::domain, "empty dataset");
  Calibration cal;
  cal.baseline = accuracy(net, ds);
  auto eval = [&](int hundredths) {
    MergeConfig cfg{hundredths / 100.0, strategy, signature};
    return accuracy(merge_network(net, cfg).first, ds);
  };
  auto passes = [&](double acc) { return acc >= cal.baseline - tolerance; };

  int lo = -1;
  double lo_acc = 0.0;
  for (int g = 0; g <= 100; g += 5) {
    double acc = eval(g);
    if (passes(acc)) lo = g, lo_acc = acc;
  }
  if (lo < 0) {
    cal.alpha = 0.0;
    cal.accuracy = eval(0);
    return cal;
  }
  int hi = lo + 5;
  if (hi > 100) hi = 101;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    if (mid > 100) break;
    double acc = eval(mid);
    if (passes(acc)) lo = mid, lo_acc = acc;
    else hi = mid;
  }
  cal.alpha = lo / 100.0;
  cal.accuracy = lo_acc;
  cal.accepted = true;
  return cal;
}

}  // namespace redline
