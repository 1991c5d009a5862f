#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "redline/error.hpp"
#include "redline/parallel.hpp"
#include "redline/rng.hpp"

namespace redline {

namespace detail {

inline long double log_binomial(std::size_t n, std::size_t k) {
  return std::lgamma(static_cast<long double>(n) + 1) - std::lgamma(static_cast<long double>(k) + 1) -
         std::lgamma(static_cast<long double>(n - k) + 1);
}

// Neumaier compensated accumulator.
struct CompensatedSum {
  long double sum = 0, carry = 0;
  void add(long double x) {
    long double t = sum + x;
    if (std::fabs(sum) >= std::fabs(x)) carry += (sum - t) + x;
    else carry += (x - t) + sum;
    sum = t;
  }
  long double value() const { return sum + carry; }
};

}  // namespace detail

inline constexpr std::size_t kMaxExactDraws = 64;

// Probability of exactly k distinct values among n uniform draws from K:
// C(K,k) * sum_i (-1)^i C(k,i) ((k-i)/K)^n, evaluated in log space.
inline double prob_distinct(std::size_t K, std::size_t n, std::size_t k) {
  if (K == 0 || n == 0) throw Error(ErrorKind::domain, "K and n must be positive");
  if (K > kMaxExactDraws || n > kMaxExactDraws)
    throw Error(ErrorKind::domain, "prob_distinct is limited to K, n <= 64");
  if (k == 0 || k > std::min(K, n)) throw Error(ErrorKind::domain, "k must lie in [1, min(K, n)]");
  const long double logK = std::log(static_cast<long double>(K));
  detail::CompensatedSum s;
  for (std::size_t i = 0; i < k; ++i) {
    long double mag = detail::log_binomial(k, i) + n * (std::log(static_cast<long double>(k - i)) - logK);
    long double term = std::exp(mag);
    s.add(i % 2 ? -term : term);
  }
  return static_cast<double>(std::exp(detail::log_binomial(K, k)) * s.value());
}

// K (1 - (1 - 1/K)^n).
inline double expected_distinct_uniform(double K, double n) {
  if (!(K >= 1.0) || !(n >= 1.0)) throw Error(ErrorKind::domain, "K and n must be at least 1");
  if (K == 1.0) return 1.0;
  return -K * std::expm1(n * std::log1p(-1.0 / K));
}

// Linearity of expectation: sum_i 1 - (1 - p_i)^n.
inline double expected_distinct(const std::vector<double>& probs, double n) {
  std::vector<double> t(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    t[i] = probs[i] >= 1.0 ? 1.0 : -std::expm1(n * std::log1p(-probs[i]));
  return pairwise_sum(t);
}

// Sum over value sets S of |S| P(exactly S is drawn), with
// P(exactly S) = sum_{T subset S} (-1)^{|S|-|T|} (sum_{i in T} p_i)^n.
inline double expected_distinct_subsets(const std::vector<double>& probs, std::size_t n) {
  const std::size_t m = probs.size();
  if (m == 0 || m > 16) throw Error(ErrorKind::domain, "subset enumeration needs 1..16 symbols");
  const std::size_t full = std::size_t{1} << m;
  std::vector<long double> power(full);
  for (std::size_t mask = 0; mask < full; ++mask) {
    long double s = 0;
    for (std::size_t i = 0; i < m; ++i)
      if ((mask >> i) & 1u) s += probs[i];
    power[mask] = std::pow(s, static_cast<long double>(n));
  }
  detail::CompensatedSum e;
  for (std::size_t S = 1; S < full; ++S) {
    const int size = std::popcount(S);
    detail::CompensatedSum p;
    for (std::size_t T = S;; T = (T - 1) & S) {
      long double v = power[T];
      p.add((size - std::popcount(T)) % 2 ? -v : v);
      if (T == 0) break;
    }
    e.add(size * p.value());
  }
  return static_cast<double>(e.value());
}

// The arrangement sum read literally: sum_v v sum_{|K| = m-v} (1 - sum_K p)^n.
// Kept for comparison; it counts P(no value of K drawn), not P(exactly the
// complement drawn), so it overestimates (m=2, p=1/2, n=2 gives 2.5, not 1.5).
inline double expected_distinct_literal_arrangement(const std::vector<double>& probs, std::size_t n) {
  const std::size_t m = probs.size();
  if (m == 0 || m > 16) throw Error(ErrorKind::domain, "subset enumeration needs 1..16 symbols");
  detail::CompensatedSum e;
  for (std::size_t K = 0; K < (std::size_t{1} << m); ++K) {
    long double s = 0;
    for (std::size_t i = 0; i < m; ++i)
      if ((K >> i) & 1u) s += probs[i];
    std::size_t v = m - static_cast<std::size_t>(std::popcount(K));
    if (v == 0) continue;
    e.add(v * std::pow(1.0L - s, static_cast<long double>(n)));
  }
  return static_cast<double>(e.value());
}

// Expected merge pruning: symbol space w*h*c_in*modes, c_out draws.
inline double expected_merge_ratio(std::size_t w, std::size_t h, std::size_t c_in, std::size_t c_out,
                                   std::size_t modes) {
  if (!w || !h || !c_in || !c_out || !modes) throw Error(ErrorKind::domain, "dimensions must be positive");
  double K = static_cast<double>(w) * h * c_in * modes;
  return 1.0 - expected_distinct_uniform(K, static_cast<double>(c_out)) / static_cast<double>(c_out);
}

// Expected split pruning: symbol space w*h*modes, c_out draws.
inline double expected_split_ratio(std::size_t w, std::size_t h, std::size_t c_out, std::size_t modes) {
  if (!w || !h || !c_out || !modes) throw Error(ErrorKind::domain, "dimensions must be positive");
  double K = static_cast<double>(w) * h * modes;
  return 1.0 - expected_distinct_uniform(K, static_cast<double>(c_out)) / static_cast<double>(c_out);
}

enum class PriorKind { uniform, gaussian, exponential, custom };

inline const char* to_string(PriorKind p) {
  switch (p) {
    case PriorKind::uniform: return "uniform";
    case PriorKind::gaussian: return "gaussian";
    case PriorKind::exponential: return "exponential";
    case PriorKind::custom: return "custom";
  }
  return "?";
}

struct Prior {
  PriorKind kind = PriorKind::uniform;
  double mean = 0.0, stddev = 1.0;  // gaussian
  double rate = 1.0;                // exponential
  std::vector<double> probs;        // custom

  static Prior uniform() { return {}; }
  static Prior gaussian(double mu = 0.0, double sigma = 1.0) { return {PriorKind::gaussian, mu, sigma, 1.0, {}}; }
  static Prior exponential(double lambda = 1.0) { return {PriorKind::exponential, 0.0, 1.0, lambda, {}}; }
  static Prior custom(std::vector<double> p) { return {PriorKind::custom, 0.0, 1.0, 1.0, std::move(p)}; }
};

// Probabilities over m support points. Gaussian points are equispaced on
// mean +- 3 sd, exponential points on [0, 5/rate]; densities are normalized.
inline std::vector<double> discretize(const Prior& prior, std::size_t m) {
  if (m == 0) throw Error(ErrorKind::domain, "prior needs at least one support point");
  std::vector<double> p(m);
  switch (prior.kind) {
    case PriorKind::uniform: std::fill(p.begin(), p.end(), 1.0); break;
    case PriorKind::gaussian: {
      if (!(prior.stddev > 0.0)) throw Error(ErrorKind::domain, "gaussian prior needs sd > 0");
      for (std::size_t i = 0; i < m; ++i) {
        double x = m == 1 ? prior.mean
                          : prior.mean - 3.0 * prior.stddev + 6.0 * prior.stddev * static_cast<double>(i) / (m - 1.0);
        double z = (x - prior.mean) / prior.stddev;
        p[i] = std::exp(-0.5 * z * z);
      }
      break;
    }
    case PriorKind::exponential: {
      if (!(prior.rate > 0.0)) throw Error(ErrorKind::domain, "exponential prior needs rate > 0");
      for (std::size_t i = 0; i < m; ++i) {
        double x = m == 1 ? 0.0 : 5.0 / prior.rate * static_cast<double>(i) / (m - 1.0);
        p[i] = prior.rate * std::exp(-prior.rate * x);
      }
      break;
    }
    case PriorKind::custom:
      if (prior.probs.size() != m) throw Error(ErrorKind::domain, "custom prior size does not match support");
      p = prior.probs;
      break;
  }
  double total = 0.0;
  for (double v : p) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorKind::domain, "prior probabilities must be positive");
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

enum class Level { merge, split };
inline const char* to_string(Level l) { return l == Level::merge ? "merge" : "split"; }

// alphabet: a neuron (merge) or kernel (split) is one symbol out of
//   modes * w*h*c_in  (merge)  or  modes * w*h  (split)
// points, the sample space behind the closed forms.
// product: a neuron or kernel is a vector of iid per-weight symbols over `modes` values.
enum class SymbolModel { alphabet, product };
inline const char* to_string(SymbolModel m) { return m == SymbolModel::alphabet ? "alphabet" : "product"; }

struct BirthdayConfig {
  Prior prior;
  std::size_t w = 1, h = 1, c_in = 1, c_out = 1;
  std::size_t modes = 2;
  std::size_t samples = 100'000;
  std::uint64_t seed = 0;
  SymbolModel model = SymbolModel::alphabet;

  std::size_t symbols_per_item(Level level) const { return level == Level::merge ? w * h * c_in : w * h; }
  std::size_t alphabet_size(Level level) const { return modes * symbols_per_item(level); }
};

enum class EstimateMethod { closed_form, exact_linearity, monte_carlo };
inline const char* to_string(EstimateMethod m) {
  switch (m) {
    case EstimateMethod::closed_form: return "closed_form";
    case EstimateMethod::exact_linearity: return "exact_linearity";
    case EstimateMethod::monte_carlo: return "monte_carlo";
  }
  return "?";
}

struct BirthdayEstimate {
  double expected_distinct = 0.0;
  double pruning_ratio = 0.0;
  double stderr_ = 0.0;
  EstimateMethod method = EstimateMethod::monte_carlo;
  std::optional<double> exact_distinct;  // linearity value when tractable
  std::size_t trials = 0;
};

inline constexpr std::size_t kExactAlphabetLimit = 1'000'000;

namespace detail {

inline std::size_t count_distinct_ids(std::vector<std::uint32_t>& ids) {
  std::sort(ids.begin(), ids.end());
  return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
}

// Distinct rows among n rows of length d (row-major), exact comparison.
inline std::size_t count_distinct_rows(const std::vector<std::uint16_t>& rows, std::size_t n, std::size_t d) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto row = [&](std::size_t i) { return rows.begin() + static_cast<std::ptrdiff_t>(i * d); };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(row(a), row(a) + static_cast<std::ptrdiff_t>(d), row(b),
                                        row(b) + static_cast<std::ptrdiff_t>(d));
  });
  std::size_t distinct = n ? 1 : 0;
  for (std::size_t k = 1; k < n; ++k)
    if (!std::equal(row(order[k]), row(order[k]) + static_cast<std::ptrdiff_t>(d), row(order[k - 1])))
      ++distinct;
  return distinct;
}

}  // namespace detail

// Distinct items among c_out draws, one value per trial; the trial stream is
// keyed by (seed, level, trial) so results do not depend on thread count.
inline std::vector<double> mc_distinct_samples(const BirthdayConfig& cfg, Level level, std::size_t trials,
                                               std::size_t groups = 1) {
  const std::size_t n = cfg.c_out;
  if (n == 0) throw Error(ErrorKind::domain, "c_out must be positive");
  const std::size_t d = cfg.symbols_per_item(level);
  std::vector<double> out(trials);
  if (cfg.model == SymbolModel::alphabet) {
    AliasTable table(discretize(cfg.prior, cfg.alphabet_size(level)));
    parallel_for(
        trials,
        [&](std::size_t t) {
          CounterRng rng(cfg.seed, (static_cast<std::uint64_t>(level) << 56) ^ t);
          double acc = 0.0;
          std::vector<std::uint32_t> ids(n);
          for (std::size_t g = 0; g < groups; ++g) {
            for (auto& id : ids) id = static_cast<std::uint32_t>(table.sample(rng));
            acc += static_cast<double>(detail::count_distinct_ids(ids));
          }
          out[t] = acc / static_cast<double>(groups);
        },
        16);
  } else {
    if (cfg.modes > 65535) throw Error(ErrorKind::domain, "product model supports at most 65535 modes");
    AliasTable table(discretize(cfg.prior, cfg.modes));
    parallel_for(
        trials,
        [&](std::size_t t) {
          CounterRng rng(cfg.seed, (static_cast<std::uint64_t>(level) << 56) ^ (1ULL << 55) ^ t);
          double acc = 0.0;
          std::vector<std::uint16_t> rows(n * d);
          for (std::size_t g = 0; g < groups; ++g) {
            for (auto& s : rows) s = static_cast<std::uint16_t>(table.sample(rng));
            acc += static_cast<double>(detail::count_distinct_rows(rows, n, d));
          }
          out[t] = acc / static_cast<double>(groups);
        },
        4);
  }
  return out;
}

// Exact expected distinct count when the item space is small enough to list.
inline std::optional<double> exact_expected_distinct(const BirthdayConfig& cfg, Level level) {
  const double n = static_cast<double>(cfg.c_out);
  if (cfg.model == SymbolModel::alphabet) {
    if (cfg.alphabet_size(level) > kExactAlphabetLimit) return std::nullopt;
    return expected_distinct(discretize(cfg.prior, cfg.alphabet_size(level)), n);
  }
  const std::size_t d = cfg.symbols_per_item(level);
  double space = std::pow(static_cast<double>(cfg.modes), static_cast<double>(d));
  if (space > static_cast<double>(kExactAlphabetLimit)) return std::nullopt;
  auto p = discretize(cfg.prior, cfg.modes);
  std::vector<double> items(static_cast<std::size_t>(space));
  for (std::size_t idx = 0; idx < items.size(); ++idx) {
    double prob = 1.0;
    std::size_t rest = idx;
    for (std::size_t k = 0; k < d; ++k) {
      prob *= p[rest % cfg.modes];
      rest /= cfg.modes;
    }
    items[idx] = prob;
  }
  return expected_distinct(items, n);
}

inline BirthdayEstimate mc_expected_distinct(const BirthdayConfig& cfg, Level level) {
  if (cfg.samples < 2) throw Error(ErrorKind::domain, "need at least two Monte-Carlo trials");
  auto v = mc_distinct_samples(cfg, level, cfg.samples);
  const double T = static_cast<double>(v.size());
  const double mean = pairwise_sum(v) / T;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
  const double var = pairwise_sum(sq) / (T - 1.0);
  BirthdayEstimate e;
  e.expected_distinct = mean;
  e.pruning_ratio = 1.0 - mean / static_cast<double>(cfg.c_out);
  e.stderr_ = std::sqrt(var / T) / static_cast<double>(cfg.c_out);  // on the ratio scale
  e.method = EstimateMethod::monte_carlo;
  e.exact_distinct = exact_expected_distinct(cfg, level);
  e.trials = v.size();
  return e;
}

// Central band holding `coverage` of the simulated per-layer pruning ratio.
// Split ratios average c_in independent channels, as the empirical layer
// ratio does.
struct RatioBand {
  double lo = 0.0, hi = 0.0, mean = 0.0;
};

inline RatioBand mc_ratio_band(const BirthdayConfig& cfg, Level level, std::size_t trials, double coverage = 0.99) {
  auto v = mc_distinct_samples(cfg, level, trials, level == Level::split ? cfg.c_in : 1);
  for (auto& x : v) x = 1.0 - x / static_cast<double>(cfg.c_out);
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    double at = p * static_cast<double>(v.size() - 1);
    auto i = static_cast<std::size_t>(std::floor(at));
    auto j = std::min(i + 1, v.size() - 1);
    return v[i] + (at - static_cast<double>(i)) * (v[j] - v[i]);
  };
  RatioBand b;
  b.lo = q((1.0 - coverage) / 2.0);
  b.hi = q(1.0 - (1.0 - coverage) / 2.0);
  b.mean = pairwise_sum(std::vector<double>(v.begin(), v.end())) / static_cast<double>(v.size());
  return b;
}

struct SweepRow {
  std::size_t c_in = 0, c_out = 0, w = 0, h = 0, modes = 0;
  std::string prior;
  Level level = Level::merge;
  double expected_distinct = 0.0;
  double ratio = 0.0;
  double stderr_ = 0.0;
  EstimateMethod method = EstimateMethod::closed_form;
};

inline SweepRow closed_form_row(std::size_t w, std::size_t h, std::size_t c_in, std::size_t c_out, std::size_t modes,
                                Level level) {
  SweepRow r{c_in, c_out, w, h, modes, "uniform", level, 0.0, 0.0, 0.0, EstimateMethod::closed_form};
  r.ratio = level == Level::merge ? expected_merge_ratio(w, h, c_in, c_out, modes)
                                  : expected_split_ratio(w, h, c_out, modes);
  r.expected_distinct = (1.0 - r.ratio) * static_cast<double>(c_out);
  return r;
}

// Closed forms for a 3x3x32x128 layer across mode counts.
inline std::vector<SweepRow> sweep_fig4(const std::vector<std::size_t>& modes_grid) {
  std::vector<SweepRow> rows;
  for (auto m : modes_grid) {
    rows.push_back(closed_form_row(3, 3, 32, 128, m, Level::merge));
    rows.push_back(closed_form_row(3, 3, 32, 128, m, Level::split));
  }
  return rows;
}

inline std::vector<std::size_t> default_fig4_modes() {
  std::vector<std::size_t> m;
  for (std::size_t v = 2; v <= 4096; v *= 2) m.push_back(v);
  return m;
}

// c_in swept with c_in * c_out held near 64^2 (exact at powers of two), 3x3
// kernels, one mode count; per prior, the exact linearity value and a
// Monte-Carlo estimate for both levels, plus the uniform closed forms.
inline std::vector<SweepRow> sweep_fig5(const std::vector<std::size_t>& c_in_grid, const std::vector<Prior>& priors,
                                        std::size_t modes, std::size_t trials, std::uint64_t seed) {
  std::vector<SweepRow> rows;
  for (auto c_in : c_in_grid) {
    const std::size_t c_out =
        static_cast<std::size_t>(std::llround(4096.0 / static_cast<double>(c_in)));
    for (Level level : {Level::merge, Level::split}) rows.push_back(closed_form_row(3, 3, c_in, c_out, modes, level));
    for (const auto& prior : priors) {
      for (Level level : {Level::merge, Level::split}) {
        BirthdayConfig cfg;
        cfg.prior = prior;
        cfg.w = cfg.h = 3;
        cfg.c_in = c_in;
        cfg.c_out = c_out;
        cfg.modes = modes;
        cfg.samples = trials;
        cfg.seed = seed;
        auto est = mc_expected_distinct(cfg, level);
        if (est.exact_distinct)
          rows.push_back({c_in, c_out, 3, 3, modes, to_string(prior.kind), level, *est.exact_distinct,
                          1.0 - *est.exact_distinct / static_cast<double>(c_out), 0.0,
                          EstimateMethod::exact_linearity});
        rows.push_back({c_in, c_out, 3, 3, modes, to_string(prior.kind), level, est.expected_distinct,
                        est.pruning_ratio, est.stderr_, EstimateMethod::monte_carlo});
      }
    }
  }
  return rows;
}

inline std::vector<std::size_t> default_fig5_c_in() {
  std::vector<std::size_t> v;
  for (std::size_t c = 2; c <= 128; c += 2) v.push_back(c);
  return v;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(12);
  os << "c_in,c_out,w,h,modes,prior,level,expected_distinct,ratio,stderr,method\n";
  for (const auto& r : rows)
    os << r.c_in << ',' << r.c_out << ',' << r.w << ',' << r.h << ',' << r.modes << ',' << r.prior << ','
       << to_string(r.level) << ',' << r.expected_distinct << ',' << r.ratio << ',' << r.stderr_ << ','
       << to_string(r.method) << '\n';
  return os.str();
}

}  // namespace redline
