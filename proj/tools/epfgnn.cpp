#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "epfgnn/epfgnn.hpp"

namespace fs = std::filesystem;
using namespace epfgnn;

namespace {

enum Exit : int { ok = 0, config_error = 1, runtime_failure = 2, check_failure = 3 };

struct Overrides {
  std::string config;
  std::optional<std::string> dataset, split, split_file, seeds, out, coeff, redist;
  std::optional<std::size_t> em_rounds;
  std::vector<std::string> sets;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--dataset", o.dataset, "dataset directory");
  cmd->add_option("--split", o.split, "planetoid, ratio or file");
  cmd->add_option("--split-file", o.split_file, "node<TAB>role file for --split file");
  cmd->add_option("--seeds", o.seeds, "comma-separated seed list");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--coeff", o.coeff, "none, layer or edge");
  cmd->add_option("--redist", o.redist, "average or center");
  cmd->add_option("--em-rounds", o.em_rounds, "EM rounds after the warm start (0 = plain GCN)");
  cmd->add_option("--set", o.sets, "extra key=value override, repeatable");
  cmd->add_flag("--quiet", o.quiet, "suppress per-seed output");
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.dataset) cfg.dataset = *o.dataset;
  if (o.split) set_config_value(cfg, "split", *o.split);
  if (o.split_file) cfg.split_file = *o.split_file;
  if (o.seeds) set_config_value(cfg, "seeds", *o.seeds);
  if (o.out) cfg.out = *o.out;
  if (o.coeff) set_config_value(cfg, "coefficient", *o.coeff);
  if (o.redist) set_config_value(cfg, "redistribution", *o.redist);
  if (o.em_rounds) cfg.train.em_rounds = *o.em_rounds;
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, detail::trim(std::string_view(kv).substr(0, eq)),
                     std::string_view(kv).substr(eq + 1));
  }
  validate_run_config(cfg);
  return cfg;
}

Dataset load_for_run(const RunConfig& cfg) {
  Dataset ds = load_dataset(cfg.dataset);
  return cfg.normalize_features ? row_normalize_features(std::move(ds)) : ds;
}

Split make_split(const RunConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  const std::uint64_t split_seed = cfg.resample_split ? seed : cfg.seeds.front();
  switch (cfg.split) {
    case SplitKind::planetoid:
      return planetoid_split(ds, cfg.per_class, cfg.num_validation, cfg.num_test, split_seed);
    case SplitKind::ratio:
      return ratio_split(ds, cfg.train_ratio, cfg.validation_ratio, cfg.test_ratio, split_seed);
    case SplitKind::file: return load_split_file(cfg.split_file, ds.num_nodes());
  }
  throw ConfigError("split: unknown kind");
}

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
};

Summary summarize(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

struct SeedResult {
  std::uint64_t seed;
  double validation_accuracy;
  double test_accuracy;
  double seconds;
};

/// Trains every seed of `cfg`, writing per-seed artifacts under `dir`.
std::vector<SeedResult> run_seeds(const RunConfig& cfg, const Dataset& ds, const fs::path& dir,
                                  bool quiet) {
  fs::create_directories(dir);
  {
    std::ostringstream eff;
    write_run_config(eff, cfg);
    write_text(dir / "config.txt", eff.str());
  }
  const SparseAdjacency adj(ds.graph);
  std::vector<SeedResult> results;
  for (std::uint64_t seed : cfg.seeds) {
    const Split split = make_split(cfg, ds, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res = train(ds, split, tc, adj);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path seed_dir = dir / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir);
    {
      std::ofstream rep(seed_dir / "report.jsonl");
      write_report(rep, res.report);
    }
    save_checkpoint(seed_dir / "checkpoint.bin", res.params, &res.pairwise);
    results.push_back({seed, res.report.validation_accuracy, res.report.test_accuracy, secs});
    if (!quiet) {
      std::printf("seed %llu  val %.4f  test %.4f  (%.1fs)\n", static_cast<unsigned long long>(seed),
                  res.report.validation_accuracy, res.report.test_accuracy, secs);
    }
  }
  return results;
}

nlohmann::json aggregate_json(const std::vector<SeedResult>& rs) {
  std::vector<double> val, test;
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& r : rs) {
    val.push_back(r.validation_accuracy);
    test.push_back(r.test_accuracy);
    per_seed.push_back({{"seed", r.seed},
                        {"validation_accuracy", r.validation_accuracy},
                        {"test_accuracy", r.test_accuracy},
                        {"seconds", r.seconds}});
  }
  const Summary v = summarize(val), t = summarize(test);
  return {{"runs", rs.size()},
          {"validation_accuracy", {{"mean", v.mean}, {"stddev", v.stddev}}},
          {"test_accuracy", {{"mean", t.mean}, {"stddev", t.stddev}}},
          {"per_seed", per_seed}};
}

int cmd_train(const Overrides& o) {
  const RunConfig cfg = resolve(o);
  const Dataset ds = load_for_run(cfg);
  const auto results = run_seeds(cfg, ds, cfg.out, o.quiet);
  const auto agg = aggregate_json(results);
  write_text(fs::path(cfg.out) / "aggregate.json", agg.dump(2) + "\n");
  std::printf("test accuracy %.2f +- %.2f over %zu seed(s)\n",
              100.0 * agg["test_accuracy"]["mean"].get<double>(),
              100.0 * agg["test_accuracy"]["stddev"].get<double>(), results.size());
  return ok;
}

int cmd_evaluate(const Overrides& o, const std::string& checkpoint) {
  const RunConfig cfg = resolve(o);
  const Dataset ds = load_for_run(cfg);
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.backbone.num_features() != ds.features.cols() ||
      ck.backbone.num_classes() != ds.num_classes)
    throw ConfigError("checkpoint: shapes do not match the dataset");
  const PairwiseParams pp =
      ck.pairwise ? *ck.pairwise : PairwiseParams(ds.num_classes, ds.graph.num_edges(),
                                                  CoefficientMode::none);
  if (pp.num_edges() != ds.graph.num_edges())
    throw ConfigError("checkpoint: edge count does not match the dataset");
  const SparseAdjacency adj(ds.graph);
  const DenseMatrix scores = unary_log_factors(ck.backbone, ds.features, adj);
  for (std::uint64_t seed : cfg.seeds) {
    const Split split = make_split(cfg, ds, seed);
    const auto observed = ObservedLabels::from(ds.labels, split.train);
    const auto pred = predict(scores, pp, Proposal::from_scores(scores, observed), observed,
                              ds.graph, cfg.train.predict_sweeps, cfg.train.e_tolerance);
    std::printf("seed %llu  val %.4f  test %.4f\n", static_cast<unsigned long long>(seed),
                split.validation.empty() ? 0.0 : evaluate(pred, ds.labels, split.validation),
                split.test.empty() ? 0.0 : evaluate(pred, ds.labels, split.test));
  }
  return ok;
}

int cmd_homophily(const std::string& dataset) {
  LoadStats stats;
  const Dataset ds = load_dataset(dataset, &stats);
  std::printf("beta           %.4f\n", homophily_beta(ds.graph, ds.labels));
  std::printf("nodes          %zu\n", ds.num_nodes());
  if (stats.link_rows > 0) {
    std::printf("link rows      %zu\n", stats.link_rows);
    std::printf("skipped links  %zu\n", stats.skipped_links);
  }
  std::printf("unique edges   %zu\n", ds.graph.num_edges());
  std::printf("features       %zu\n", ds.features.cols());
  std::printf("classes        %zu\n", ds.num_classes);
  return ok;
}

struct SynthArgs {
  SyntheticSpec spec;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const Dataset ds = generate_synthetic(a.spec);
  write_generic(ds, a.out);
  std::printf("wrote %s: %zu nodes, %zu edges, beta %.4f\n", a.out.c_str(), ds.num_nodes(),
              ds.graph.num_edges(), homophily_beta(ds.graph, ds.labels));
  return ok;
}

int cmd_oracle_check(check::Options opt) {
  if (opt.max_classes < 2 || opt.max_nodes < 2)
    throw ConfigError("oracle-check: --max-classes and --max-nodes must be at least 2");
  oracle::configuration_count(opt.max_classes, opt.max_nodes, oracle::OracleLimit{});
  const auto results = check::run_all(opt);
  bool all = true;
  std::printf("%-64s %-6s %12s %10s %7s\n", "check", "result", "worst", "tolerance", "trials");
  for (const auto& r : results) {
    all = all && r.passed;
    std::printf("%-64s %-6s %12.3e %10.1e %7zu", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.worst, r.tolerance, r.trials);
    if (r.skipped) std::printf("  (%zu skipped)", r.skipped);
    std::printf("\n");
  }
  return all ? ok : check_failure;
}

int cmd_ablate(const Overrides& o) {
  const RunConfig base = resolve(o);
  const Dataset ds = load_for_run(base);
  nlohmann::json table = nlohmann::json::array();
  std::printf("%-8s %-8s %10s %8s\n", "coeff", "redist", "test mean", "stddev");
  for (auto mode : {CoefficientMode::none, CoefficientMode::layer, CoefficientMode::edge}) {
    for (auto scheme : {RedistributionScheme::average, RedistributionScheme::center}) {
      RunConfig cfg = base;
      cfg.train.coefficient = mode;
      cfg.train.redistribution = scheme;
      const std::string name = std::string(to_string(mode)) + "_" + std::string(to_string(scheme));
      const auto results = run_seeds(cfg, ds, fs::path(base.out) / name, true);
      auto agg = aggregate_json(results);
      agg["coefficient"] = to_string(mode);
      agg["redistribution"] = to_string(scheme);
      std::printf("%-8s %-8s %10.2f %8.2f\n", std::string(to_string(mode)).c_str(),
                  std::string(to_string(scheme)).c_str(),
                  100.0 * agg["test_accuracy"]["mean"].get<double>(),
                  100.0 * agg["test_accuracy"]["stddev"].get<double>());
      std::fflush(stdout);
      table.push_back(std::move(agg));
    }
  }
  fs::create_directories(base.out);
  write_text(fs::path(base.out) / "ablation.json", table.dump(2) + "\n");
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Piecewise-trained GCN + pairwise MRF node classifier"};
  app.require_subcommand(1);

  Overrides train_o, eval_o, ablate_o;
  std::string checkpoint, homophily_dataset;
  SynthArgs synth;
  synth.out = "synthetic";
  check::Options check_opt;

  add_run_flags(app.add_subcommand("train", "train over a seed list"), train_o);

  auto* eval = app.add_subcommand("evaluate", "score a saved checkpoint");
  add_run_flags(eval, eval_o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  auto* hom = app.add_subcommand("homophily", "print beta and dataset statistics");
  hom->add_option("--dataset", homophily_dataset, "dataset directory")->required();

  auto* oc = app.add_subcommand("oracle-check", "compare fast paths with exhaustive oracles");
  oc->add_option("--seed", check_opt.seed);
  oc->add_option("--trials", check_opt.piece_trials, "piece oracle trials");
  oc->add_option("--gradient-trials", check_opt.gradient_trials);
  oc->add_option("--identity-trials", check_opt.identity_trials);
  oc->add_option("--shift-trials", check_opt.shift_trials);
  oc->add_option("--elbo-trials", check_opt.elbo_trials);
  oc->add_option("--max-nodes", check_opt.max_nodes, "largest graph for the exact ELBO check");
  oc->add_option("--max-classes", check_opt.max_classes, "most classes for the exact ELBO check");
  oc->add_flag("--corrupt-gradient", check_opt.corrupt_gradient, "negative control");

  add_run_flags(app.add_subcommand("ablate", "coefficient mode x redistribution grid"), ablate_o);

  auto* syn = app.add_subcommand("synth", "write a synthetic dataset");
  syn->add_option("--out", synth.out, "output directory");
  syn->add_option("--nodes", synth.spec.num_nodes);
  syn->add_option("--classes", synth.spec.num_classes);
  syn->add_option("--edges-per-node", synth.spec.edges_per_node);
  syn->add_option("--homophily", synth.spec.homophily_target);
  syn->add_option("--features", synth.spec.feature_dim);
  syn->add_option("--noise", synth.spec.feature_noise);
  syn->add_option("--seed", synth.spec.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return config_error;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "train") return cmd_train(train_o);
    if (name == "evaluate") return cmd_evaluate(eval_o, checkpoint);
    if (name == "homophily") return cmd_homophily(homophily_dataset);
    if (name == "oracle-check") return cmd_oracle_check(check_opt);
    if (name == "ablate") return cmd_ablate(ablate_o);
    if (name == "synth") return cmd_synth(synth);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return config_error;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return config_error;
  } catch (const OracleLimitError& e) {
    std::fprintf(stderr, "refused: %s\n", e.what());
    return config_error;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return runtime_failure;
  }
  return runtime_failure;
}
