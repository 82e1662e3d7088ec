#pragma once

// Command-line front end. Settings come from, lowest to highest precedence: built-in
// defaults, the --config JSON file, the BAYESWORK_OUTPUT_DIR environment variable (output
// directory only), and explicit flags.

#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "bayeswork/workflow.hpp"

namespace bayeswork {

namespace detail {

inline std::pair<std::string, std::string> split_pair(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos || comma == 0 || comma + 1 == s.size() || s.find(',', comma + 1) != std::string::npos)
    throw UsageError("expected two comma-separated names, got '" + s + "'");
  return {s.substr(0, comma), s.substr(comma + 1)};
}

inline std::vector<double> parse_quantiles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("not a quantile: '" + item + "'");
    }
    if (!(out.back() >= 0.0 && out.back() <= 1.0)) throw UsageError("quantile outside [0, 1]: " + item);
  }
  return out;
}

}  // namespace detail

/// Parses and runs one invocation; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian workflow for hierarchical negative-binomial defect models", "bayeswork"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path, data_path, out_dir, models;
  std::uint64_t seed = 0;
  int threads = 0, chains = 0, warmup = 0, draws = 0, max_depth = 0;
  double target_accept = 0.0;
  bool force = false, log_offset = false, center = false, sample_counts = false, reuse_project = false;

  auto* o_config = app.add_option("--config", config_path, "JSON config file");
  auto* o_data = app.add_option("--data", data_path, "dataset CSV");
  auto* o_out = app.add_option("--out", out_dir, "output directory");
  auto* o_models = app.add_option("--models", models, "comma-separated models: M1,M2,M3 (toy for sbc)");
  auto* o_seed = app.add_option("--seed", seed, "random seed");
  auto* o_threads = app.add_option("--threads", threads, "worker thread cap (0: hardware)")->check(CLI::NonNegativeNumber);
  auto* o_chains = app.add_option("--chains", chains)->check(CLI::PositiveNumber);
  auto* o_warmup = app.add_option("--warmup", warmup)->check(CLI::NonNegativeNumber);
  auto* o_draws = app.add_option("--draws", draws)->check(CLI::PositiveNumber);
  auto* o_accept = app.add_option("--target-accept", target_accept);
  auto* o_depth = app.add_option("--max-depth", max_depth)->check(CLI::PositiveNumber);
  auto* f_force = app.add_flag("--force", force, "replace archives; analyse fail-marked archives");
  auto* f_offset = app.add_flag("--log-offset", log_offset, "map predictors x to ln(x + 0.5) instead of rejecting zeros");
  auto* f_center = app.add_flag("--center", center, "center log predictors");
  auto* f_counts = app.add_flag("--pairwise-sample-counts", sample_counts, "pairwise effects on sampled counts");
  auto* f_reuse = app.add_flag("--reuse-project", reuse_project, "pairwise effects reuse observed project intercepts");

  std::string archive;
  std::vector<std::string> archives;

  auto* c_summary = app.add_subcommand("summary", "dataset summary");
  auto* c_prior = app.add_subcommand("prior-check", "prior predictive check");
  auto* c_fit = app.add_subcommand("fit", "fit models and write archives");
  auto* c_diag = app.add_subcommand("diagnose", "convergence diagnostics of an archive");
  c_diag->add_option("archive", archive)->required();
  auto* c_post = app.add_subcommand("posterior-check", "posterior predictive check");
  c_post->add_option("archive", archive)->required();

  auto* c_sbc = app.add_subcommand("sbc", "simulation-based calibration");
  int sbc_iterations = 0, sbc_posterior = 0;
  bool sbc_fault = false;
  auto* o_sbc_it = c_sbc->add_option("--iterations", sbc_iterations)->check(CLI::PositiveNumber);
  auto* o_sbc_m = c_sbc->add_option("--posterior-draws", sbc_posterior)->check(CLI::PositiveNumber);
  c_sbc->add_flag("--fault-injection", sbc_fault, "simulate data from a deliberately wrong likelihood");

  auto* c_compare = app.add_subcommand("compare", "PSIS-LOO comparison of archives");
  c_compare->add_option("archives", archives)->required();

  auto* c_workflow = app.add_subcommand("workflow", "full check pipeline and comparison");
  bool workflow_sbc = false;
  c_workflow->add_flag("--sbc", workflow_sbc, "also run simulation-based calibration");

  auto* c_rank = app.add_subcommand("rank", "rank languages at quantile scenarios");
  std::string quantiles = "0,0.25,0.5,0.75,1";
  c_rank->add_option("archive", archive)->required();
  c_rank->add_option("--quantiles", quantiles, "comma-separated predictor quantiles")->capture_default_str();

  auto* c_scenario = app.add_subcommand("scenario", "predict bugs for a hypothetical project");
  Scenario scenario;
  std::string scenario_language;
  c_scenario->add_option("archive", archive)->required();
  c_scenario->add_option("--commits", scenario.commits)->required();
  c_scenario->add_option("--insertions", scenario.insertions)->required();
  c_scenario->add_option("--age", scenario.age, "days")->required();
  c_scenario->add_option("--devs", scenario.devs)->required();
  c_scenario->add_option("--language", scenario_language);
  c_scenario->add_option("--label", scenario.label);

  auto* c_effect = app.add_subcommand("effect", "language effects, intervals and conditional effects");
  EffectRequest effect;
  std::vector<std::string> pair_args;
  c_effect->add_option("archive", archive)->required();
  c_effect->add_option("--pair", pair_args, "A,B: distribution of A minus B (repeatable)");
  c_effect->add_option("--interval", effect.parameters, "parameter name (repeatable)");
  c_effect->add_option("--probability", effect.probability)->check(CLI::Range(0.0, 1.0));
  std::string conditional;
  c_effect->add_option("--conditional", conditional, "predictor: commits, insertions, age or devs");
  c_effect->add_option("--projects", effect.projects, "simulate this many new projects (M3)")->check(CLI::NonNegativeNumber);

  auto* c_plot = app.add_subcommand("plot", "render an SVG from a table written by this tool");
  std::string plot_kind, plot_input, plot_output;
  c_plot->add_option("kind", plot_kind)->required()->check(CLI::IsMember({"density-overlay", "violin", "interval", "trace"}));
  c_plot->add_option("input", plot_input)->required();
  c_plot->add_option("output", plot_output)->required();

  auto* c_sim = app.add_subcommand("simulate", "write a synthetic dataset from an M3-style process");
  SimulationConfig sim;
  std::string sim_output;
  c_sim->add_option("output", sim_output)->required();
  c_sim->add_option("--languages", sim.languages);
  c_sim->add_option("--projects", sim.projects);
  c_sim->add_option("--rows", sim.rows);
  c_sim->add_option("--sim-seed", sim.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    RunConfig cfg;
    if (*o_config) cfg = load_run_config(config_path, cfg);
    if (auto env = output_dir_from_env()) cfg.output_dir = *env;
    if (*o_data) cfg.data_path = data_path;
    if (*o_out) cfg.output_dir = out_dir;
    if (*o_models) cfg.models = parse_models(models);
    if (*o_seed) cfg.sampler.seed = seed;
    if (*o_threads) cfg.sampler.threads = threads;
    if (*o_chains) cfg.sampler.n_chains = chains;
    if (*o_warmup) cfg.sampler.n_warmup = warmup;
    if (*o_draws) cfg.sampler.n_draws = draws;
    if (*o_accept) cfg.sampler.target_accept = target_accept;
    if (*o_depth) cfg.sampler.max_tree_depth = max_depth;
    if (*f_force) cfg.force = force;
    if (*f_offset) cfg.prepare.zero_policy = ZeroPolicy::Offset;
    if (*f_center) cfg.prepare.center = center;
    if (*f_counts) cfg.pairwise.sample_counts = sample_counts;
    if (*f_reuse) cfg.pairwise.reuse_project = reuse_project;
    try {
      cfg.sampler.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }

    if (*c_summary) return cmd_summary(cfg, out);
    if (*c_prior) return cmd_prior_check(cfg, out);
    if (*c_fit) return cmd_fit(cfg, out);
    if (*c_diag) return cmd_diagnose(archive, cfg, out);
    if (*c_post) return cmd_posterior_check(archive, cfg, out);
    if (*c_sbc) {
      if (*o_sbc_it) cfg.sbc.n_iterations = sbc_iterations;
      if (*o_sbc_m) cfg.sbc.n_posterior = sbc_posterior;
      cfg.sbc.fault_injection = sbc_fault;
      return cmd_sbc(cfg, out);
    }
    if (*c_compare) {
      std::vector<std::filesystem::path> dirs(archives.begin(), archives.end());
      return cmd_compare(dirs, cfg, out);
    }
    if (*c_workflow) {
      cfg.run_sbc = cfg.run_sbc || workflow_sbc;
      return cmd_workflow(cfg, out);
    }
    if (*c_rank) return cmd_rank(archive, detail::parse_quantiles(quantiles), cfg, out);
    if (*c_scenario) {
      scenario.validate();
      if (!scenario_language.empty()) {
        const Dataset ds = load_dataset(cfg);
        scenario.language = ds.language_index(scenario_language);
      }
      return cmd_scenario(archive, scenario, cfg, out);
    }
    if (*c_effect) {
      for (const auto& p : pair_args) effect.pairs.push_back(detail::split_pair(p));
      if (!conditional.empty()) effect.conditional = conditional;
      return cmd_effect(archive, effect, cfg, out);
    }
    if (*c_plot) return cmd_plot(plot_kind, plot_input, plot_output, out);
    if (*c_sim) return cmd_simulate(sim, sim_output, out);
    throw UsageError("no subcommand");
  } catch (const VerdictError& e) {
    err << "error: " << e.what() << '\n';
    return kExitVerdict;
  } catch (const SamplerError& e) {
    err << "sampler error: " << e.what() << '\n';
    return kExitVerdict;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitInput;
  } catch (const IoError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const Json::exception& e) {
    err << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {  // usage errors and empty plot input
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

}  // namespace bayeswork
