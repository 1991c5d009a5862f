#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "redline/accounting.hpp"
#include "redline/error.hpp"
#include "redline/model.hpp"
#include "redline/parallel.hpp"
#include "redline/rng.hpp"

namespace redline {

inline constexpr double kSqrt2Pi = 2.50662827463100050242;

// Median gap between consecutive distinct values. Even-length gap lists take
// the midpoint of the two central gaps.
inline double default_bandwidth(std::span<const float> weights) {
  std::vector<double> v(weights.begin(), weights.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  if (v.size() < 2) throw Error(ErrorKind::degenerate, "fewer than two distinct weight values");
  std::vector<double> gaps(v.size() - 1);
  for (std::size_t i = 0; i + 1 < v.size(); ++i) gaps[i] = v[i + 1] - v[i];
  std::sort(gaps.begin(), gaps.end());
  const std::size_t n = gaps.size();
  return n % 2 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
}

struct DensityEstimate {
  std::vector<double> grid;
  std::vector<double> values;
  double bandwidth = 0.0;
  std::size_t sample_count = 0;

  double step() const { return grid.size() > 1 ? grid[1] - grid[0] : 0.0; }

  // Trapezoidal integral of the density over [a, b] (clamped to the grid),
  // linearly interpolating the density at the ends.
  double integral(double a, double b) const {
    if (grid.size() < 2 || b <= a) return 0.0;
    a = std::max(a, grid.front());
    b = std::min(b, grid.back());
    if (b <= a) return 0.0;
    auto value_at = [&](double x) {
      auto it = std::upper_bound(grid.begin(), grid.end(), x);
      std::size_t i = it == grid.begin() ? 0 : static_cast<std::size_t>(it - grid.begin()) - 1;
      if (i + 1 >= grid.size()) return values.back();
      double t = (x - grid[i]) / (grid[i + 1] - grid[i]);
      return values[i] + t * (values[i + 1] - values[i]);
    };
    std::size_t lo = static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), a) - grid.begin());
    std::size_t hi = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), b) - grid.begin());
    double sum = 0.0;
    double px = a, pv = value_at(a);
    for (std::size_t i = lo; i < hi; ++i) {
      sum += 0.5 * (pv + values[i]) * (grid[i] - px);
      px = grid[i];
      pv = values[i];
    }
    sum += 0.5 * (pv + value_at(b)) * (b - px);
    return sum;
  }

  double total_mass() const { return integral(grid.front(), grid.back()); }
};

// Gaussian KDE on grid_size uniform points spanning [lo - 3*bw, hi + 3*bw],
// where [lo, hi] defaults to the sample range. Kernels are truncated at 8 bw.
inline DensityEstimate kde_density(std::span<const float> sample, double bandwidth, std::size_t grid_size,
                                   std::optional<std::pair<double, double>> support = std::nullopt) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw Error(ErrorKind::domain, "bandwidth must be positive and finite");
  if (grid_size < 16) throw Error(ErrorKind::domain, "grid size must be at least 16");
  if (sample.empty()) throw Error(ErrorKind::degenerate, "empty weight sample");
  std::vector<double> w(sample.begin(), sample.end());
  for (double x : w)
    if (!std::isfinite(x)) throw Error(ErrorKind::non_finite, "non-finite weight");
  std::sort(w.begin(), w.end());
  double lo = w.front(), hi = w.back();
  if (support) {
    lo = std::min(lo, support->first);
    hi = std::max(hi, support->second);
  }

  DensityEstimate d;
  d.bandwidth = bandwidth;
  d.sample_count = w.size();
  d.grid.resize(grid_size);
  d.values.assign(grid_size, 0.0);
  const double a = lo - 3.0 * bandwidth, b = hi + 3.0 * bandwidth;
  for (std::size_t i = 0; i < grid_size; ++i)
    d.grid[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(grid_size - 1);
  d.grid.back() = b;

  const double norm = 1.0 / (static_cast<double>(w.size()) * bandwidth * kSqrt2Pi);
  const double reach = 8.0 * bandwidth;
  parallel_for(
      grid_size,
      [&](std::size_t i) {
        const double x = d.grid[i];
        auto first = std::lower_bound(w.begin(), w.end(), x - reach);
        auto last = std::upper_bound(first, w.end(), x + reach);
        double s = 0.0;
        for (auto it = first; it != last; ++it) {
          double z = (x - *it) / bandwidth;
          s += std::exp(-0.5 * z * z);
        }
        d.values[i] = s * norm;
      },
      64);
  return d;
}

struct Extrema {
  std::vector<double> minima;  // M-, both grid ends included
  std::vector<double> maxima;  // M+
  std::vector<std::size_t> min_index;  // grid indices
  std::vector<std::size_t> max_index;
};

// Local extrema from sign changes of the discrete first difference. A plateau
// collapses to its middle index. Interior minima that are not flanked by two
// maxima are dropped so that minima and maxima interleave.
inline Extrema extract_extrema(const DensityEstimate& d) {
  const auto& v = d.values;
  const std::size_t n = v.size();
  if (n < 3 || d.grid.size() != n) throw Error(ErrorKind::shape, "density grid too small");
  std::vector<int> sign(n - 1);
  std::vector<std::size_t> nz;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    sign[i] = (v[i + 1] > v[i]) - (v[i + 1] < v[i]);
    if (sign[i] != 0) nz.push_back(i);
  }
  struct Turn {
    std::size_t index;
    bool is_max;
  };
  std::vector<Turn> turns;
  for (std::size_t k = 0; k + 1 < nz.size(); ++k) {
    std::size_t a = nz[k], b = nz[k + 1];
    if (sign[a] > 0 && sign[b] < 0) turns.push_back({(a + 1 + b) / 2, true});
    if (sign[a] < 0 && sign[b] > 0) turns.push_back({(a + 1 + b) / 2, false});
  }
  while (!turns.empty() && !turns.front().is_max) turns.erase(turns.begin());
  while (!turns.empty() && !turns.back().is_max) turns.pop_back();
  if (turns.empty()) throw Error(ErrorKind::degenerate, "density has no interior maximum");

  Extrema e;
  e.min_index.push_back(0);
  for (const auto& t : turns) (t.is_max ? e.max_index : e.min_index).push_back(t.index);
  e.min_index.push_back(n - 1);
  // Modes are rounded to float once here so hashed weights equal them exactly.
  for (auto i : e.max_index) e.maxima.push_back(static_cast<double>(static_cast<float>(d.grid[i])));
  for (auto i : e.min_index) e.minima.push_back(d.grid[i]);
  return e;
}

// Greedy suppression: maxima are visited by decreasing density (ties to the
// lower index) and dropped when a retained maximum lies within tau. Between
// neighbouring retained maxima the deepest original minimum survives.
inline Extrema nms_maxima(const Extrema& e, const DensityEstimate& d, double tau) {
  if (tau <= 0.0 || e.maxima.size() <= 1) return e;
  std::vector<std::size_t> order(e.maxima.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return d.values[e.max_index[a]] > d.values[e.max_index[b]];
  });
  std::vector<std::size_t> kept;
  for (auto k : order) {
    bool close = std::any_of(kept.begin(), kept.end(),
                             [&](std::size_t r) { return std::abs(e.maxima[k] - e.maxima[r]) <= tau; });
    if (!close) kept.push_back(k);
  }
  std::sort(kept.begin(), kept.end());

  Extrema out;
  out.min_index.push_back(e.min_index.front());
  out.minima.push_back(e.minima.front());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    out.max_index.push_back(e.max_index[kept[r]]);
    out.maxima.push_back(e.maxima[kept[r]]);
    if (r + 1 == kept.size()) break;
    // Original minima between maxima kept[r] and kept[r+1] are min_index[kept[r]+1 .. kept[r+1]].
    std::size_t best = kept[r] + 1;
    for (std::size_t m = kept[r] + 1; m <= kept[r + 1]; ++m)
      if (d.values[e.min_index[m]] < d.values[e.min_index[best]]) best = m;
    out.min_index.push_back(e.min_index[best]);
    out.minima.push_back(e.minima[best]);
  }
  out.min_index.push_back(e.min_index.back());
  out.minima.push_back(e.minima.back());
  return out;
}

// Index of the cell [m_k, m_{k+1}) holding w; the last cell is closed.
inline std::size_t hash_cell(double w, const std::vector<double>& minima) {
  if (minima.size() < 2 || w < minima.front() || w > minima.back())
    throw Error(ErrorKind::domain, "weight outside hashing support");
  if (w == minima.back()) return minima.size() - 2;
  auto it = std::upper_bound(minima.begin(), minima.end(), w);
  return static_cast<std::size_t>(it - minima.begin()) - 1;
}

inline Tensor4 hash_layer(const Tensor4& weights, const std::vector<double>& minima,
                          const std::vector<double>& maxima) {
  if (maxima.empty() || minima.size() != maxima.size() + 1)
    throw Error(ErrorKind::shape, "need |M-| = |M+| + 1 with |M+| >= 1");
  Tensor4 out = weights;
  for (auto& w : out.data) w = static_cast<float>(maxima[hash_cell(w, minima)]);
  return out;
}

struct HashConfig {
  std::size_t grid_size = 2048;
  double tau = 0.0;
  std::vector<double> tau_schedule;  // per layer; falls back to tau
  std::optional<double> bandwidth;   // overrides the median-gap rule
  std::size_t subsample_threshold = 1'000'000;
  std::size_t subsample_size = 50'000;
  std::uint64_t seed = 0;

  double tau_for(std::size_t layer) const {
    return layer < tau_schedule.size() ? tau_schedule[layer] : tau;
  }
};

struct HashResult {
  std::vector<double> minima;
  std::vector<double> maxima;
  double bandwidth = 0.0;
  double tau = 0.0;
  Tensor4 hashed;
  std::size_t distinct_before = 0;
  std::size_t distinct_after = 0;
  bool degenerate = false;
  DensityEstimate density;  // empty for degenerate layers

  std::size_t n_modes() const { return maxima.size(); }
};

// Full per-layer protocol: bandwidth, density, extrema, suppression, hashing.
inline HashResult hash_weights(const Tensor4& weights, const HashConfig& config, std::size_t layer) {
  HashResult r;
  r.tau = config.tau_for(layer);
  r.distinct_before = count_distinct_values(weights.data);
  if (!weights.all_finite()) throw Error(ErrorKind::non_finite, "non-finite weight", layer);

  auto [mn, mx] = std::minmax_element(weights.data.begin(), weights.data.end());
  if (weights.data.empty() || *mn == *mx) {
    float v = weights.data.empty() ? 0.0f : *mn;
    r.minima = {v, v};
    r.maxima = {v};
    r.hashed = weights;
    r.distinct_after = r.distinct_before;
    r.degenerate = true;
    return r;
  }

  try {
    r.bandwidth = config.bandwidth ? *config.bandwidth : default_bandwidth(weights.data);
    std::span<const float> sample(weights.data);
    std::vector<float> sub;
    if (weights.data.size() > config.subsample_threshold && config.subsample_size < weights.data.size()) {
      // Partial Fisher-Yates on indices; stream keyed by (seed, layer).
      CounterRng rng(config.seed, layer);
      std::vector<std::uint32_t> idx(weights.data.size());
      std::iota(idx.begin(), idx.end(), 0u);
      for (std::size_t i = 0; i < config.subsample_size; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      sub.reserve(config.subsample_size);
      for (std::size_t i = 0; i < config.subsample_size; ++i) sub.push_back(weights.data[idx[i]]);
      sample = sub;
    }
    r.density = kde_density(sample, r.bandwidth, config.grid_size, std::make_pair<double, double>(*mn, *mx));
    auto ext = nms_maxima(extract_extrema(r.density), r.density, r.tau);
    r.minima = std::move(ext.minima);
    r.maxima = std::move(ext.maxima);
    r.hashed = hash_layer(weights, r.minima, r.maxima);
  } catch (const Error& e) {
    throw e.at_layer(layer);
  }
  r.distinct_after = count_distinct_values(r.hashed.data);
  return r;
}

// Hashes every prunable layer; others are copied untouched and get no result.
// Split annotations are dropped since hashing changes the kernels.
inline std::pair<NetworkGraph, std::vector<std::optional<HashResult>>> hash_network(
    const NetworkGraph& net, const HashConfig& config = {}) {
  NetworkGraph out = net;
  std::vector<std::optional<HashResult>> results(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (!net.layers[l].prunable) continue;
    results[l] = hash_weights(net.layers[l].weights, config, l);
    out.layers[l].weights = results[l]->hashed;
    out.layers[l].split.reset();
  }
  return {std::move(out), std::move(results)};
}

// Re-applies recorded partitions to a network (hashing is a fixed point on them).
inline NetworkGraph apply_partitions(const NetworkGraph& net,
                                     const std::vector<std::optional<HashResult>>& results) {
  NetworkGraph out = net;
  for (std::size_t l = 0; l < net.layers.size() && l < results.size(); ++l) {
    if (!results[l] || results[l]->degenerate) continue;
    try {
      out.layers[l].weights = hash_layer(net.layers[l].weights, results[l]->minima, results[l]->maxima);
    } catch (const Error& e) {
      throw e.at_layer(l);
    }
    out.layers[l].split.reset();
  }
  return out;
}

// 256-level uniform baseline; round half to even.
inline Tensor4 uniform_quantize_int8(const Tensor4& weights) {
  if (weights.data.empty()) return weights;
  auto [mn, mx] = std::minmax_element(weights.data.begin(), weights.data.end());
  if (*mn == *mx) return weights;
  const double lo = *mn;
  const double scale = (static_cast<double>(*mx) - lo) / 255.0;
  Tensor4 out = weights;
  for (auto& w : out.data) {
    double q = std::nearbyint((static_cast<double>(w) - lo) / scale);
    w = static_cast<float>(lo + q * scale);
  }
  return out;
}

inline double compression_ratio(std::size_t distinct_before, std::size_t distinct_after) {
  if (distinct_before == 0) throw Error(ErrorKind::domain, "distinct_before must be positive");
  return 100.0 * (1.0 - static_cast<double>(distinct_after) / static_cast<double>(distinct_before));
}

}  // namespace redline
