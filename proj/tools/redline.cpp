// redline: command-line front end for hashing, merging, splitting, bounds and
// expected-pruning analysis of network bundles.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "redline/redline.hpp"

namespace fs = std::filesystem;
using redline::Json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInconclusive = 2;

struct Options {
  std::string input, output, report, dataset, reference;
  std::vector<std::string> inputs;
  std::size_t grid_size = 2048;
  double tau = 0.0;
  std::optional<double> bandwidth;
  double alpha = 0.0;
  std::string strategy = "block";
  bool weights_only = false;
  std::uint64_t seed = 0;
  std::vector<std::size_t> input_shape;
  bool no_hash = false, no_merge = false, no_split = false;
  bool int8 = false;
  double threshold = redline::kDefaultCriterionThreshold;
  double tolerance = 0.0;
  // birthday
  bool fig4 = false, fig5 = false;
  std::size_t w = 3, h = 3, c_in = 64, c_out = 64, modes = 100;
  std::size_t samples = 10'000;
  std::string prior = "uniform";
  std::string model = "alphabet";
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw redline::Error(redline::ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) throw redline::Error(redline::ErrorKind::io, "write failed on " + path.string());
}

void emit_json(const Options& o, const Json& j) {
  std::string text = j.dump(2) + "\n";
  if (o.report.empty()) std::cout << text;
  else write_text(o.report, text);
}

redline::NetworkGraph load_input(const Options& o) {
  if (o.input.empty()) throw redline::Error(redline::ErrorKind::io, "--input is required");
  auto net = redline::load_bundle(o.input);
  if (!o.input_shape.empty()) {
    if (o.input_shape.size() != 3) throw redline::Error(redline::ErrorKind::shape, "--input-shape needs H,W,C");
    net.input_shape = std::array<std::size_t, 3>{o.input_shape[0], o.input_shape[1], o.input_shape[2]};
  }
  return net;
}

redline::HashConfig hash_config(const Options& o) {
  redline::HashConfig c;
  c.grid_size = o.grid_size;
  c.tau = o.tau;
  c.bandwidth = o.bandwidth;
  c.seed = o.seed;
  return c;
}

redline::MergeConfig merge_config(const Options& o) {
  return {o.alpha, redline::parse_strategy(o.strategy),
          o.weights_only ? redline::Signature::weights_only : redline::Signature::full};
}

redline::Dataset require_dataset(const Options& o) {
  if (o.dataset.empty())
    throw redline::Error(redline::ErrorKind::unavailable, "this command is data-driven and needs --dataset");
  return redline::load_dataset(o.dataset);
}

Json footprint_json(const redline::NetworkGraph& net) { return redline::to_json(redline::footprint(net)); }

// Removes outputs created by a failed run.
struct OutputGuard {
  std::vector<fs::path> created;
  bool committed = false;
  void track(const std::string& p) {
    if (!p.empty() && !fs::exists(p)) created.emplace_back(p);
  }
  ~OutputGuard() {
    if (committed) return;
    std::error_code ec;
    for (const auto& p : created) fs::remove_all(p, ec);
  }
};

int cmd_pipeline(const Options& o) {
  OutputGuard guard;
  guard.track(o.output);
  guard.track(o.report);
  auto net = load_input(o);
  redline::PipelineConfig cfg;
  cfg.hash = hash_config(o);
  cfg.merge = merge_config(o);
  cfg.run_hash = !o.no_hash;
  cfg.run_merge = !o.no_merge;
  cfg.run_split = !o.no_split;
  cfg.criterion_threshold = o.threshold;
  redline::PipelineResult result;
  try {
    result = redline::run_pipeline(net, cfg);
  } catch (const redline::StageError& e) {
    std::cerr << "redline: stage " << e.stage() << ": " << e.what() << "\n";
    return kExitError;
  }
  Json report = redline::pipeline_report(result, cfg);
  report["config"]["input"] = o.input;
  if (!o.dataset.empty()) {
    auto ds = require_dataset(o);
    double before = redline::accuracy(net, ds);
    double after = redline::accuracy(result.network, ds);
    double div = redline::measure_divergence(net, result.network, ds.samples);
    report["data_driven"] = Json{{"accuracy_before", before}, {"accuracy_after", after}, {"divergence", div}};
  }
  if (!o.output.empty()) redline::save_bundle(result.network, o.output);
  emit_json(o, report);
  guard.committed = true;
  return kExitOk;
}

int cmd_hash(const Options& o) {
  auto net = load_input(o);
  Json report;
  redline::NetworkGraph out = net;
  if (o.int8) {
    Json layers = Json::array();
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      if (!net.layers[l].prunable) continue;
      out.layers[l].weights = redline::uniform_quantize_int8(net.layers[l].weights);
      out.layers[l].split.reset();
      auto before = redline::count_distinct_values(net.layers[l].weights.data);
      auto after = redline::count_distinct_values(out.layers[l].weights.data);
      layers.push_back(Json{{"layer", l},
                            {"distinct_before", before},
                            {"distinct_after", after},
                            {"compression_ratio", redline::compression_ratio(before, after)}});
    }
    report["config"] = Json{{"input", o.input}, {"method", "uniform_int8"}};
    report["layers"] = layers;
  } else {
    auto cfg = hash_config(o);
    auto [hashed, results] = redline::hash_network(net, cfg);
    out = std::move(hashed);
    report["config"] = redline::to_json(cfg);
    report["config"]["input"] = o.input;
    report["layers"] = redline::to_json(results);
  }
  auto before = redline::count_distinct(net).total, after = redline::count_distinct(out).total;
  report["distinct_before"] = before;
  report["distinct_after"] = after;
  report["compression_ratio"] = before ? redline::compression_ratio(before, after) : 0.0;
  if (!o.output.empty()) redline::save_bundle(out, o.output);
  emit_json(o, report);
  return kExitOk;
}

int cmd_merge(const Options& o) {
  auto net = load_input(o);
  auto cfg = merge_config(o);
  auto [merged, plans] = redline::merge_network(net, cfg);
  Json report;
  report["config"] = redline::to_json(cfg);
  report["config"]["input"] = o.input;
  report["layers"] = redline::to_json(plans);
  report["before"] = footprint_json(net);
  report["after"] = footprint_json(merged);
  if (!o.output.empty()) redline::save_bundle(merged, o.output);
  emit_json(o, report);
  return kExitOk;
}

int cmd_split(const Options& o) {
  auto net = load_input(o);
  auto [split, reports] = redline::split_network(net);
  Json report;
  report["config"] = Json{{"input", o.input}};
  report["layers"] = redline::to_json(reports);
  report["before"] = footprint_json(net);
  report["after"] = footprint_json(split);
  if (!o.output.empty()) redline::save_bundle(split, o.output);
  emit_json(o, report);
  return kExitOk;
}

int cmd_bound(const Options& o) {
  auto net = load_input(o);
  auto cfg = hash_config(o);
  auto results = redline::hash_network(net, cfg).second;
  auto bound = redline::assess_network(net, results, o.threshold);
  Json report = redline::to_json(bound);
  report["config"] = redline::to_json(cfg);
  report["config"]["input"] = o.input;
  report["config"]["threshold"] = o.threshold;
  emit_json(o, report);
  return bound.verdict == redline::Verdict::safe ? kExitOk : kExitInconclusive;
}

redline::Prior parse_prior(const std::string& s) {
  if (s == "uniform") return redline::Prior::uniform();
  if (s == "gaussian") return redline::Prior::gaussian();
  if (s == "exponential") return redline::Prior::exponential();
  throw redline::Error(redline::ErrorKind::domain, "unknown prior '" + s + "'");
}

int cmd_birthday(const Options& o) {
  std::vector<redline::SweepRow> rows;
  if (o.fig4) {
    rows = redline::sweep_fig4(redline::default_fig4_modes());
  } else if (o.fig5) {
    rows = redline::sweep_fig5(redline::default_fig5_c_in(),
                               {redline::Prior::uniform(), redline::Prior::gaussian(), redline::Prior::exponential()},
                               o.modes, o.samples, o.seed);
  } else {
    redline::BirthdayConfig cfg;
    cfg.prior = parse_prior(o.prior);
    cfg.w = o.w;
    cfg.h = o.h;
    cfg.c_in = o.c_in;
    cfg.c_out = o.c_out;
    cfg.modes = o.modes;
    cfg.samples = o.samples;
    cfg.seed = o.seed;
    cfg.model = o.model == "product" ? redline::SymbolModel::product : redline::SymbolModel::alphabet;
    if (o.model != "product" && o.model != "alphabet")
      throw redline::Error(redline::ErrorKind::domain, "unknown symbol model '" + o.model + "'");
    for (auto level : {redline::Level::merge, redline::Level::split}) {
      if (cfg.prior.kind == redline::PriorKind::uniform)
        rows.push_back(redline::closed_form_row(cfg.w, cfg.h, cfg.c_in, cfg.c_out, cfg.modes, level));
      auto est = redline::mc_expected_distinct(cfg, level);
      if (est.exact_distinct)
        rows.push_back({cfg.c_in, cfg.c_out, cfg.w, cfg.h, cfg.modes, o.prior, level, *est.exact_distinct,
                        1.0 - *est.exact_distinct / static_cast<double>(cfg.c_out), 0.0,
                        redline::EstimateMethod::exact_linearity});
      rows.push_back({cfg.c_in, cfg.c_out, cfg.w, cfg.h, cfg.modes, o.prior, level, est.expected_distinct,
                      est.pruning_ratio, est.stderr_, redline::EstimateMethod::monte_carlo});
    }
  }
  auto csv = redline::sweep_csv(rows);
  if (o.output.empty()) std::cout << csv;
  else write_text(o.output, csv);
  return kExitOk;
}

int cmd_report(const Options& o) {
  Json summary;
  Json parts = Json::object();
  for (const auto& path : o.inputs) {
    auto j = redline::io::read_json(path);
    parts[fs::path(path).stem().string()] = j;
  }
  summary["reports"] = parts;
  if (!o.input.empty()) {
    auto net = load_input(o);
    summary["bundle"] = Json{{"path", o.input}, {"footprint", footprint_json(net)}};
    auto params = redline::count_params(net);
    auto flops = redline::count_flops(net);
    auto distinct = redline::count_distinct(net);
    Json layers = Json::array();
    for (std::size_t l = 0; l < net.layers.size(); ++l)
      layers.push_back(Json{{"layer", l},
                            {"kind", redline::to_string(net.layers[l].kind)},
                            {"params", params.per_layer[l].total()},
                            {"distinct_values", distinct.per_layer[l]},
                            {"flops", flops.per_layer[l]},
                            {"split", net.layers[l].split.has_value()}});
    summary["bundle"]["layers"] = layers;
  }
  emit_json(o, summary);
  return kExitOk;
}

int cmd_eval(const Options& o) {
  auto net = load_input(o);
  auto ds = require_dataset(o);
  Json report;
  report["config"] = Json{{"input", o.input}, {"dataset", o.dataset}};
  report["count"] = ds.size();
  report["accuracy"] = redline::accuracy(net, ds);
  if (!o.reference.empty()) {
    auto ref = redline::load_bundle(o.reference);
    report["config"]["reference"] = o.reference;
    report["reference_accuracy"] = redline::accuracy(ref, ds);
    report["divergence"] = redline::measure_divergence(ref, net, ds.samples);
  }
  emit_json(o, report);
  return kExitOk;
}

int cmd_calibrate(const Options& o) {
  auto net = load_input(o);
  auto ds = require_dataset(o);
  auto cal = redline::calibrate_alpha(net, ds, o.tolerance, redline::parse_strategy(o.strategy),
                                      o.weights_only ? redline::Signature::weights_only : redline::Signature::full);
  Json report;
  report["config"] = Json{{"input", o.input}, {"dataset", o.dataset}, {"tolerance", o.tolerance}, {"strategy", o.strategy}};
  report["alpha"] = cal.alpha;
  report["accuracy"] = cal.accuracy;
  report["baseline_accuracy"] = cal.baseline;
  report["accepted"] = cal.accepted;
  emit_json(o, report);
  return kExitOk;
}

void add_io(CLI::App* c, Options& o, bool output = true) {
  c->add_option("--input", o.input, "input bundle directory");
  if (output) c->add_option("--output", o.output, "output bundle directory");
  c->add_option("--report", o.report, "report path (stdout when omitted)");
  c->add_option("--input-shape", o.input_shape, "nominal input H W C for FLOP accounting")->expected(3)->delimiter(',');
}

void add_hash_flags(CLI::App* c, Options& o) {
  c->add_option("--grid-size", o.grid_size, "density grid size")->check(CLI::Range(16, 1 << 24));
  c->add_option("--tau", o.tau, "mode suppression radius")->check(CLI::NonNegativeNumber);
  c->add_option("--bandwidth", o.bandwidth, "fixed kernel bandwidth (default: median gap)")
      ->check(CLI::PositiveNumber);
  c->add_option("--seed", o.seed, "seed for subsampling");
}

void add_merge_flags(CLI::App* c, Options& o) {
  c->add_option("--alpha", o.alpha, "merge percentile")->check(CLI::Range(0.0, 1.0));
  c->add_option("--strategy", o.strategy, "alpha schedule")
      ->check(CLI::IsMember({"constant", "asc", "desc", "block"}));
  c->add_flag("--weights-only", o.weights_only, "compare neurons on weights only");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"redline: data-free hashing, merging and splitting of network bundles"};
  app.require_subcommand(1);
  Options o;

  auto* pipeline = app.add_subcommand("pipeline", "hash, merge and split a bundle");
  add_io(pipeline, o);
  add_hash_flags(pipeline, o);
  add_merge_flags(pipeline, o);
  pipeline->add_flag("--no-hash", o.no_hash);
  pipeline->add_flag("--no-merge", o.no_merge);
  pipeline->add_flag("--no-split", o.no_split);
  pipeline->add_option("--threshold", o.threshold, "criterion threshold");
  pipeline->add_option("--dataset", o.dataset, "optional dataset for data-driven extras");

  auto* hash = app.add_subcommand("hash", "hash the weights of every prunable layer");
  add_io(hash, o);
  add_hash_flags(hash, o);
  hash->add_flag("--int8", o.int8, "uniform 256-level baseline instead of density modes");

  auto* merge = app.add_subcommand("merge", "merge similar output neurons");
  add_io(merge, o);
  add_merge_flags(merge, o);

  auto* split = app.add_subcommand("split", "deduplicate per-input kernels");
  add_io(split, o);

  auto* bound = app.add_subcommand("bound", "hashing error bound and accuracy criterion");
  add_io(bound, o, false);
  add_hash_flags(bound, o);
  bound->add_option("--threshold", o.threshold, "criterion threshold");

  auto* birthday = app.add_subcommand("birthday", "expected pruning under weight priors (CSV)");
  birthday->add_option("--output", o.output, "CSV path (stdout when omitted)");
  birthday->add_flag("--fig4", o.fig4, "closed forms for a 3x3x32x128 layer across mode counts");
  birthday->add_flag("--fig5", o.fig5, "input-width sweep at fixed c_in*c_out");
  birthday->add_option("--kernel-w", o.w, "kernel width");
  birthday->add_option("--kernel-h", o.h, "kernel height");
  birthday->add_option("--c-in", o.c_in);
  birthday->add_option("--c-out", o.c_out);
  birthday->add_option("--modes", o.modes);
  birthday->add_option("--samples", o.samples, "Monte-Carlo trials")->check(CLI::Range(2, 100'000'000));
  birthday->add_option("--prior", o.prior)->check(CLI::IsMember({"uniform", "gaussian", "exponential"}));
  birthday->add_option("--model", o.model)->check(CLI::IsMember({"alphabet", "product"}));
  birthday->add_option("--seed", o.seed);

  auto* report = app.add_subcommand("report", "combine stage reports and summarise a bundle");
  report->add_option("--inputs", o.inputs, "stage report JSON files");
  add_io(report, o, false);

  auto* eval = app.add_subcommand("eval", "accuracy and output divergence on a dataset");
  add_io(eval, o, false);
  eval->add_option("--dataset", o.dataset, "dataset directory")->required();
  eval->add_option("--reference", o.reference, "reference bundle for divergence");

  auto* calibrate = app.add_subcommand("calibrate-alpha", "largest merge alpha keeping accuracy");
  add_io(calibrate, o, false);
  add_merge_flags(calibrate, o);
  calibrate->add_option("--dataset", o.dataset, "dataset directory")->required();
  calibrate->add_option("--tolerance", o.tolerance, "allowed accuracy drop (fraction)")
      ->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    if (*pipeline) return cmd_pipeline(o);
    if (*hash) return cmd_hash(o);
    if (*merge) return cmd_merge(o);
    if (*split) return cmd_split(o);
    if (*bound) return cmd_bound(o);
    if (*birthday) return cmd_birthday(o);
    if (*report) return cmd_report(o);
    if (*eval) return cmd_eval(o);
    if (*calibrate) return cmd_calibrate(o);
  } catch (const redline::Error& e) {
    std::cerr << "redline: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "redline: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
