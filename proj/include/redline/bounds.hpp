#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "redline/error.hpp"
#include "redline/forward.hpp"
#include "redline/hashing.hpp"
#include "redline/model.hpp"
#include "redline/parallel.hpp"

namespace redline {

// Segment-width bound: sum over consecutive points of
// [first minimum, modes..., last minimum] of width times density mass.
inline double bound_A(const DensityEstimate& density, const std::vector<double>& minima,
                      const std::vector<double>& maxima) {
  if (maxima.empty()) throw Error(ErrorKind::domain, "no modes");
  if (minima.size() < 2) throw Error(ErrorKind::domain, "need both support ends");
  std::vector<double> pts;
  pts.reserve(maxima.size() + 2);
  pts.push_back(minima.front());
  pts.insert(pts.end(), maxima.begin(), maxima.end());
  pts.push_back(minima.back());
  double a = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    double width = pts[i + 1] - pts[i];
    if (width > 0.0) a += width * density.integral(pts[i], pts[i + 1]);
  }
  return a;
}

// KDE-variance bound, linear in the bandwidth.
inline double bound_B(double bandwidth) {
  if (!(bandwidth >= 0.0)) throw Error(ErrorKind::domain, "bandwidth must be non-negative");
  return bandwidth / kSqrt2Pi * (std::sqrt(2.0 / 3.14159265358979323846) + std::sqrt(3.0));
}

struct LayerBound {
  double A = 0.0;
  double B = 0.0;
  double u = 0.0;
  double layer_bound = 0.0;
  double neg_fraction_term = 1.0;
};

// 1 - erf(-mean/(std*sqrt 2)) with the channel-averaged statistics; 1 without BN.
inline double neg_fraction_term(const std::optional<BatchNormStats>& bn) {
  if (!bn || bn->mean.empty()) return 1.0;
  double m = 0.0, s = 0.0;
  for (float v : bn->mean) m += v;
  for (float v : bn->std) s += v;
  m /= static_cast<double>(bn->mean.size());
  s /= static_cast<double>(bn->std.size());
  return 1.0 - std::erf(-m / (s * std::sqrt(2.0)));
}

inline double layer_bound(double u, std::size_t w, std::size_t h, std::size_t c_in,
                          const std::optional<BatchNormStats>& bn) {
  if (u < 0.0) throw Error(ErrorKind::domain, "per-weight bound must be non-negative");
  if (w == 0 || h == 0 || c_in == 0) throw Error(ErrorKind::domain, "layer dims must be positive");
  return u / std::sqrt(static_cast<double>(c_in * w * h)) * neg_fraction_term(bn);
}

// A, B and u for one hashed layer. Degenerate layers are exact: all zero.
inline LayerBound per_weight_bound(const HashResult& r) {
  LayerBound b;
  if (r.degenerate) return b;
  b.A = bound_A(r.density, r.minima, r.maxima);
  b.B = bound_B(r.bandwidth);
  b.u = std::min(b.A, b.B);
  return b;
}

// Channel-mean magnitude of the BN means; 1 for layers without BN.
inline double operator_scale(const LayerSpec& layer) {
  if (!layer.bn || layer.bn->mean.empty()) return 1.0;
  double s = 0.0;
  for (float v : layer.bn->mean) s += std::abs(v);
  return s / static_cast<double>(layer.bn->mean.size());
}

enum class Verdict { safe, inconclusive };
inline const char* to_string(Verdict v) { return v == Verdict::safe ? "safe" : "inconclusive"; }

struct NetworkBound {
  double U = 0.0;
  std::vector<LayerBound> per_layer;
  std::optional<double> E_norm;
  std::optional<double> V_norm;
  double criterion_ratio = 0.0;
  Verdict verdict = Verdict::inconclusive;
};

// Left-to-right composition of the two-stage inequality
//   E|f~(g~) - f(g)| <= scale(g) * b_f + scale(f) * b_g,
// with scale(g) the product of the operator scales of the earlier layers.
// u[l] may be empty only for layers that are not prunable.
inline NetworkBound network_bound(const NetworkGraph& net, const std::vector<std::optional<LayerBound>>& per_weight) {
  NetworkBound nb;
  double acc = 0.0, prefix = 1.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    LayerBound lb;
    if (l < per_weight.size() && per_weight[l]) {
      lb = *per_weight[l];
    } else if (layer.prunable) {
      throw Error(ErrorKind::unavailable, "prunable layer has no per-weight bound", l);
    }
    const auto& W = layer.weights;
    lb.neg_fraction_term = neg_fraction_term(layer.bn);
    lb.layer_bound = layer_bound(lb.u, W.w, W.h, W.c_in, layer.bn);
    const double scale = operator_scale(layer);
    acc = l == 0 ? lb.layer_bound : prefix * lb.layer_bound + scale * acc;
    prefix *= scale;
    nb.per_layer.push_back(lb);
  }
  nb.U = acc;
  return nb;
}

inline NetworkBound network_bound(const NetworkGraph& net, const std::vector<std::optional<HashResult>>& results) {
  std::vector<std::optional<LayerBound>> pw(results.size());
  for (std::size_t l = 0; l < results.size(); ++l)
    if (results[l]) pw[l] = per_weight_bound(*results[l]);
  return network_bound(net, pw);
}

struct LogitNormEstimate {
  double E_norm = 0.0;
  double V_norm = 0.0;
  std::size_t source_layer = 0;
};

// Pushes the last BN layer's channel means (and variances, through squared
// weights) through the final layer.
inline LogitNormEstimate estimate_logit_norm(const NetworkGraph& net) {
  if (net.layers.size() < 2) throw Error(ErrorKind::unavailable, "need a BN layer before the final layer");
  std::optional<std::size_t> src;
  for (std::size_t l = net.layers.size() - 1; l-- > 0;)
    if (net.layers[l].bn) {
      src = l;
      break;
    }
  if (!src) throw Error(ErrorKind::unavailable, "no batch-norm statistics before the final layer");
  const auto& last = net.layers.back();
  const auto& bn = *net.layers[*src].bn;
  const auto& W = last.weights;
  if (last.kind == LayerKind::depthwise || bn.mean.size() != W.c_in)
    throw Error(ErrorKind::unavailable, "last BN layer width does not match the final layer input",
                net.layers.size() - 1);
  std::vector<double> e(W.c_out, 0.0), v(W.c_out, 0.0);
  for (std::size_t y = 0; y < W.h; ++y)
    for (std::size_t x = 0; x < W.w; ++x)
      for (std::size_t c = 0; c < W.c_in; ++c) {
        const double m = bn.mean[c];
        const double var = static_cast<double>(bn.std[c]) * bn.std[c];
        for (std::size_t j = 0; j < W.c_out; ++j) {
          const double wt = W.at(y, x, c, j);
          e[j] += wt * m;
          v[j] += wt * wt * var;
        }
      }
  LogitNormEstimate out;
  out.source_layer = *src;
  double se = 0.0, sv = 0.0;
  for (std::size_t j = 0; j < W.c_out; ++j) {
    const double ej = e[j] + last.bias[j];
    se += ej * ej;
    sv += v[j] * v[j];
  }
  out.E_norm = std::sqrt(se);
  out.V_norm = std::sqrt(sv);
  return out;
}

inline constexpr double kDefaultCriterionThreshold = 1.0 / 3.0;

inline Verdict hashing_criterion(double U, double E_norm, double V_norm,
                                 double threshold = kDefaultCriterionThreshold) {
  if (U < 0.0 || E_norm < 0.0 || V_norm < 0.0) throw Error(ErrorKind::domain, "inputs must be non-negative");
  if (U == 0.0) return Verdict::safe;
  if (E_norm <= V_norm) return Verdict::inconclusive;
  return U / (E_norm - V_norm) < threshold ? Verdict::safe : Verdict::inconclusive;
}

inline double criterion_ratio(double U, double E_norm, double V_norm) {
  constexpr double eps = 1e-12;
  if (U == 0.0) return 0.0;
  return U / std::max(E_norm - V_norm, eps);
}

// Bound plus criterion. Without usable BN statistics the verdict is safe only
// when U is exactly zero; otherwise the missing estimate is an error.
inline NetworkBound assess_network(const NetworkGraph& original,
                                   const std::vector<std::optional<HashResult>>& results,
                                   double threshold = kDefaultCriterionThreshold) {
  auto nb = network_bound(original, results);
  try {
    auto est = estimate_logit_norm(original);
    nb.E_norm = est.E_norm;
    nb.V_norm = est.V_norm;
    nb.criterion_ratio = criterion_ratio(nb.U, est.E_norm, est.V_norm);
    nb.verdict = hashing_criterion(nb.U, est.E_norm, est.V_norm, threshold);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::unavailable || nb.U != 0.0) throw;
    nb.verdict = Verdict::safe;
  }
  return nb;
}

// (U - measured) / U; closer to 0 is tighter. Exceeding the bound is an error.
inline double tightness(double U, double measured) {
  if (!(U > 0.0)) throw Error(ErrorKind::domain, "tightness needs a positive bound");
  if (measured < 0.0) throw Error(ErrorKind::domain, "divergence must be non-negative");
  if (measured > U)
    throw Error(ErrorKind::bound_violation,
                "measured divergence " + std::to_string(measured) + " exceeds bound " + std::to_string(U));
  return (U - measured) / U;
}

// Mean L2 distance between the outputs of two networks (data-driven helper).
inline double measure_divergence(const NetworkGraph& a, const NetworkGraph& b, std::span<const FeatureMap> inputs) {
  if (inputs.empty()) throw Error(ErrorKind::domain, "empty dataset");
  std::vector<double> dist(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) {
    auto ya = forward(a, inputs[i]);
    auto yb = forward(b, inputs[i]);
    if (ya.data.size() != yb.data.size()) throw Error(ErrorKind::shape, "output shapes differ");
    double s = 0.0;
    for (std::size_t k = 0; k < ya.data.size(); ++k) {
      double d = static_cast<double>(ya.data[k]) - yb.data[k];
      s += d * d;
    }
    dist[i] = std::sqrt(s);
  });
  return pairwise_sum(dist) / static_cast<double>(inputs.size());
}

}  // namespace redline
