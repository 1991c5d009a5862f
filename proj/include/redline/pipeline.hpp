#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "redline/accounting.hpp"
#include "redline/bounds.hpp"
#include "redline/hashing.hpp"
#include "redline/merge.hpp"
#include "redline/model.hpp"
#include "redline/split.hpp"

namespace redline {

using Json = nlohmann::ordered_json;

// Size metrics of a network at one point of the pipeline.
struct Footprint {
  std::size_t params = 0;
  std::size_t distinct = 0;
  std::size_t flops = 0;
};

inline Footprint footprint(const NetworkGraph& net) {
  return {count_params(net).total(), count_distinct(net).total, count_flops(net).total};
}

inline double removed_pct(std::size_t before, std::size_t after) {
  if (before == 0) return 0.0;
  return 100.0 * (1.0 - static_cast<double>(after) / static_cast<double>(before));
}

struct PipelineConfig {
  HashConfig hash;
  MergeConfig merge;
  bool run_hash = true;
  bool run_merge = true;
  bool run_split = true;
  double criterion_threshold = kDefaultCriterionThreshold;
};

struct StageRecord {
  std::string stage;
  Footprint after;
};

struct PipelineResult {
  NetworkGraph network;
  Footprint original;
  std::vector<StageRecord> stages;
  std::vector<std::optional<HashResult>> hash_results;
  std::vector<MergePlan> merge_plans;
  std::vector<SplitReport> split_reports;
  std::optional<NetworkBound> bound;
  std::optional<std::string> bound_unavailable;
};

// Raised by run_pipeline so callers can name the failing stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& e) : Error(e), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// Hash, then merge, then split.
inline PipelineResult run_pipeline(const NetworkGraph& net, const PipelineConfig& config) {
  PipelineResult r;
  r.original = footprint(net);
  NetworkGraph cur = net;
  if (config.run_hash) {
    try {
      auto [hashed, results] = hash_network(cur, config.hash);
      try {
        r.bound = assess_network(cur, results, config.criterion_threshold);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::unavailable) throw;
        r.bound_unavailable = e.what();
      }
      cur = std::move(hashed);
      r.hash_results = std::move(results);
    } catch (const Error& e) {
      throw StageError("hash", e);
    }
    r.stages.push_back({"hash", footprint(cur)});
  }
  if (config.run_merge) {
    try {
      auto [merged, plans] = merge_network(cur, config.merge);
      cur = std::move(merged);
      r.merge_plans = std::move(plans);
    } catch (const Error& e) {
      throw StageError("merge", e);
    }
    r.stages.push_back({"merge", footprint(cur)});
  }
  if (config.run_split) {
    try {
      auto [split, reports] = split_network(cur);
      cur = std::move(split);
      r.split_reports = std::move(reports);
    } catch (const Error& e) {
      throw StageError("split", e);
    }
    r.stages.push_back({"split", footprint(cur)});
  }
  r.network = std::move(cur);
  return r;
}

struct RatioRecord {
  std::size_t layer = 0;
  std::size_t c_in = 0;
  double merge_ratio = 0.0;
  double split_ratio = 0.0;
  bool pruned = false;
};

// Per-layer merge and split ratios (scatter data against input width).
// Layers absent from a report, or skipped by it, contribute 0.
inline std::vector<RatioRecord> empirical_ratio_curves(const NetworkGraph& net, const std::vector<MergePlan>& plans,
                                                       const std::vector<SplitReport>& reports) {
  std::vector<RatioRecord> out(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    out[l].layer = l;
    out[l].c_in = net.layers[l].in_channels();
  }
  for (const auto& p : plans) {
    if (p.layer_index >= out.size() || p.skipped || p.neurons_before == 0) continue;
    out[p.layer_index].merge_ratio =
        1.0 - static_cast<double>(p.merged_count) / static_cast<double>(p.neurons_before);
    out[p.layer_index].pruned = true;
  }
  for (const auto& s : reports) {
    if (s.layer_index >= out.size()) continue;
    out[s.layer_index].c_in = s.c_in;
    if (s.skipped) continue;
    out[s.layer_index].split_ratio = s.ops.ratio;
    out[s.layer_index].pruned = true;
  }
  return out;
}

// ---- JSON views ----

inline Json to_json(const Footprint& f) {
  return Json{{"params", f.params}, {"distinct_values", f.distinct}, {"flops", f.flops}};
}

inline Json to_json(const HashConfig& c) {
  Json j;
  j["grid_size"] = c.grid_size;
  j["tau"] = c.tau;
  if (!c.tau_schedule.empty()) j["tau_schedule"] = c.tau_schedule;
  j["bandwidth"] = c.bandwidth ? Json(*c.bandwidth) : Json("median_gap");
  j["subsample_threshold"] = c.subsample_threshold;
  j["subsample_size"] = c.subsample_size;
  j["seed"] = c.seed;
  return j;
}

inline Json to_json(const MergeConfig& c) {
  return Json{{"alpha", c.alpha},
              {"strategy", to_string(c.strategy)},
              {"signature", c.signature == Signature::full ? "full" : "weights_only"}};
}

inline Json to_json(const std::vector<std::optional<HashResult>>& results) {
  Json arr = Json::array();
  for (std::size_t l = 0; l < results.size(); ++l) {
    if (!results[l]) continue;
    const auto& r = *results[l];
    Json j;
    j["layer"] = l;
    j["bandwidth"] = r.bandwidth;
    j["n_modes"] = r.n_modes();
    j["distinct_before"] = r.distinct_before;
    j["distinct_after"] = r.distinct_after;
    j["degenerate"] = r.degenerate;
    j["tau"] = r.tau;
    arr.push_back(j);
  }
  return arr;
}

inline Json to_json(const std::vector<MergePlan>& plans) {
  Json arr = Json::array();
  for (const auto& p : plans) {
    Json j;
    j["layer"] = p.layer_index;
    j["alpha_l"] = p.alpha;
    j["threshold"] = p.threshold;
    j["clusters_count"] = p.merged_count;
    j["neurons_before"] = p.neurons_before;
    j["neurons_after"] = p.merged_count;
    if (p.skipped) j["skipped"] = *p.skipped;
    arr.push_back(j);
  }
  return arr;
}

inline Json to_json(const std::vector<SplitReport>& reports) {
  Json arr = Json::array();
  for (const auto& s : reports) {
    Json j;
    j["layer"] = s.layer_index;
    j["c_in"] = s.c_in;
    j["remaining_ops"] = s.ops.remaining;
    j["original_ops"] = s.ops.original;
    j["pruning_ratio"] = s.ops.ratio;
    j["remaining_flops"] = s.ops.remaining_flops;
    j["original_flops"] = s.ops.original_flops;
    if (s.skipped) j["skipped"] = *s.skipped;
    arr.push_back(j);
  }
  return arr;
}

inline Json to_json(const NetworkBound& b) {
  Json j;
  Json layers = Json::array();
  for (std::size_t l = 0; l < b.per_layer.size(); ++l) {
    const auto& lb = b.per_layer[l];
    layers.push_back(Json{{"layer", l},
                          {"A", lb.A},
                          {"B", lb.B},
                          {"u", lb.u},
                          {"layer_bound", lb.layer_bound},
                          {"neg_fraction_term", lb.neg_fraction_term}});
  }
  j["per_layer"] = layers;
  j["U"] = b.U;
  j["E_norm"] = b.E_norm ? Json(*b.E_norm) : Json(nullptr);
  j["V_norm"] = b.V_norm ? Json(*b.V_norm) : Json(nullptr);
  j["criterion_ratio"] = b.criterion_ratio;
  j["verdict"] = to_string(b.verdict);
  return j;
}

inline Json to_json(const std::vector<RatioRecord>& records) {
  Json arr = Json::array();
  for (const auto& r : records)
    arr.push_back(Json{{"layer", r.layer},
                       {"c_in", r.c_in},
                       {"merge_ratio", r.merge_ratio},
                       {"split_ratio", r.split_ratio},
                       {"pruned", r.pruned}});
  return arr;
}

inline Json stage_metrics(const Footprint& original, const Footprint& after) {
  return Json{{"params_removed_pct", removed_pct(original.params, after.params)},
              {"distinct_removed_pct", removed_pct(original.distinct, after.distinct)},
              {"flops_removed_pct", removed_pct(original.flops, after.flops)},
              {"after", to_json(after)}};
}

inline Json pipeline_report(const PipelineResult& r, const PipelineConfig& config) {
  Json j;
  j["config"] = Json{{"hash", to_json(config.hash)},
                     {"merge", to_json(config.merge)},
                     {"stages", Json{{"hash", config.run_hash}, {"merge", config.run_merge}, {"split", config.run_split}}},
                     {"criterion_threshold", config.criterion_threshold}};
  j["original"] = to_json(r.original);
  Json stages = Json::array();
  for (const auto& s : r.stages) {
    Json e = stage_metrics(r.original, s.after);
    e["stage"] = s.stage;
    stages.push_back(e);
  }
  j["stages"] = stages;
  j["total"] = stage_metrics(r.original, r.stages.empty() ? r.original : r.stages.back().after);
  if (config.run_hash) j["hash"] = to_json(r.hash_results);
  if (config.run_merge) j["merge"] = to_json(r.merge_plans);
  if (config.run_split) j["split"] = to_json(r.split_reports);
  if (r.bound) j["bound"] = to_json(*r.bound);
  if (r.bound_unavailable) j["bound"] = Json{{"unavailable", *r.bound_unavailable}};
  j["ratio_curves"] = to_json(empirical_ratio_curves(r.network, r.merge_plans, r.split_reports));
  return j;
}

}  // namespace redline
