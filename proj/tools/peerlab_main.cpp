// peerlab command-line driver.
//
// Orchestrates the pipeline stages: synth -> train -> predict -> estimate ->
// assign -> report.  All options can also come from a TOML-style config file
// (--config); command-line flags override file values.
//
// Exit codes: 0 success, 2 validation/config error, 3 numeric or estimation
// failure, 4 I/O error.

#include "CLI11.hpp"
#include "peerlab/pipeline.hpp"

#include <iostream>
#include <string>
#include <vector>

namespace {

void add_stage_options(CLI::App& app, peerlab::PipelineConfig& cfg) {
  app.add_option("--synth.num_schools", cfg.synth.num_schools,
                 "number of schools in the synthetic cohort");
  app.add_option("--synth.classes_per_school", cfg.synth.classes_per_school,
                 "classrooms per school");
  app.add_option("--synth.class_size_min", cfg.synth.class_size_min,
                 "smallest classroom size");
  app.add_option("--synth.class_size_max", cfg.synth.class_size_max,
                 "largest classroom size");
  app.add_option("--synth.feature_dim", cfg.synth.feature_dim,
                 "feature vector length (>= 2; x1 gender, x2 quantile)");
  app.add_option("--synth.beta_true", cfg.synth.beta_true,
                 "ground-truth peer-effect coefficient");
  app.add_option("--synth.confounder_strength", cfg.synth.confounder_strength,
                 "loading of latent ability on the outcome");
  app.add_option("--synth.homophily_gender", cfg.synth.homophily_gender,
                 "same-gender friendship utility bonus");
  app.add_option("--synth.homophily_ability", cfg.synth.homophily_ability,
                 "penalty per unit ability distance in friendship utility");
  app.add_option("--synth.popularity_scale", cfg.synth.popularity_scale,
                 "scale of the popularity utility term");
  app.add_option("--synth.sigma_eps", cfg.synth.sigma_eps,
                 "outcome noise standard deviation");
  app.add_option("--synth.sigma_mu", cfg.synth.sigma_mu,
                 "classroom random-effect standard deviation");
  app.add_option("--synth.school_effect_scale", cfg.synth.school_effect_scale,
                 "school fixed-effect standard deviation");
  app.add_option("--synth.test_fraction", cfg.synth.test_fraction,
                 "fraction of schools held out as the test split");
  app.add_option("--synth.seed", cfg.synth.seed,
                 "synthesis seed (0: derive from the master seed)");
  app.add_option("--train.mu", cfg.hyper.mu, "variance-term weight");
  app.add_option("--train.kappa", cfg.hyper.kappa, "homophily-penalty weight");
  app.add_option("--train.lambda", cfg.hyper.lambda,
                 "transitivity-penalty weight");
  app.add_option("--train.step", cfg.opt.step, "gradient-descent step size");
  app.add_option("--train.epochs", cfg.opt.epochs, "training epochs");
  app.add_option("--train.init_scale", cfg.opt.init_scale,
                 "uniform weight-initialization half-width");
  app.add_option("--train.seed", cfg.opt.seed,
                 "training seed (0: derive from the master seed)");
  app.add_option("--predict.replicates", cfg.predict.replicates,
                 "prediction-error replicates per trait");
  app.add_option("--predict.heatmap_scale", cfg.predict.heatmap_scale,
                 "integer upscaling factor for PGM heatmaps");
  app.add_option("--predict.seed", cfg.predict.seed,
                 "prediction seed (0: derive from the master seed)");
  app.add_option("--assign.iters", cfg.ga.iters, "GA iterations");
  app.add_option("--assign.swaps", cfg.ga.swaps,
                 "crossover candidates per iteration");
  app.add_option("--assign.mut_prob", cfg.ga.mut_prob, "mutation probability");
  app.add_option("--assign.phi", cfg.ga.phi,
                 "within-classroom dispersion penalty weight");
  app.add_option("--assign.rho", cfg.ga.rho,
                 "across-cohort dispersion penalty weight");
  app.add_option("--assign.seed", cfg.ga.seed,
                 "assignment seed (0: derive from the master seed)");
  app.add_option("--assign.fitness", cfg.assign_fitness,
                 "policies the assign stage optimizes: ga, afga, or both")
      ->check(CLI::IsMember({"ga", "afga", "both"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "peerlab: friendship-formation modeling, peer-effect estimation, and "
      "classroom assignment on synthetic cohorts"};
  app.require_subcommand(1);
  app.fallthrough();

  peerlab::PipelineConfig cfg;
  app.set_config("--config", "", "read options from a TOML-style config file");
  // Dotted option names collide with the stage subcommands when written as
  // TOML sections, and CLI11 would drop such entries silently.  Erroring out
  // keeps a misspelled config from running with defaults; stage options go in
  // the file as quoted literal keys, e.g. "synth.num_schools"=4.
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", cfg.seed, "master seed for all stages")
      ->capture_default_str();
  app.add_option("--out-dir", cfg.out_dir, "artifact output directory")
      ->capture_default_str();
  app.add_option("--cohort", cfg.cohort_path,
                 "cohort CSV path (default: <out-dir>/cohort.csv)");
  add_stage_options(app, cfg);

  CLI::App* sub_synth =
      app.add_subcommand("synth", "generate a synthetic cohort");
  CLI::App* sub_train =
      app.add_subcommand("train", "fit the friendship-formation model");
  CLI::App* sub_predict = app.add_subcommand(
      "predict", "predict test-classroom networks and trait errors");
  CLI::App* sub_estimate =
      app.add_subcommand("estimate", "estimate peer effects (OLS/2SLS/RE)");
  CLI::App* sub_assign =
      app.add_subcommand("assign", "optimize classroom assignments");
  CLI::App* sub_report =
      app.add_subcommand("report", "consolidate artifacts into a run summary");
  CLI::App* sub_run =
      app.add_subcommand("run", "run every stage in order");
  sub_assign->add_option("--fitness", cfg.assign_fitness,
                         "fitness to optimize: ga, afga, or both")
      ->check(CLI::IsMember({"ga", "afga", "both"}));
  sub_assign->add_option("--phi", cfg.ga.phi,
                         "within-classroom dispersion penalty weight");
  sub_assign->add_option("--rho", cfg.ga.rho,
                         "across-cohort dispersion penalty weight");
  sub_assign->add_option("--iters", cfg.ga.iters, "GA iterations");
  sub_assign->add_option("--swaps", cfg.ga.swaps,
                         "crossover candidates per iteration");
  sub_assign->add_option("--mut-prob", cfg.ga.mut_prob, "mutation probability");
  sub_assign->add_option("--seed", cfg.ga.seed,
                         "assignment seed (0: derive from the master seed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cfg.resolve_seeds();
    cfg.validate();
    if (sub_synth->parsed() || sub_run->parsed()) peerlab::cmd_synth(cfg);
    if (sub_train->parsed() || sub_run->parsed()) peerlab::cmd_train(cfg);
    if (sub_predict->parsed() || sub_run->parsed()) peerlab::cmd_predict(cfg);
    if (sub_estimate->parsed() || sub_run->parsed()) peerlab::cmd_estimate(cfg);
    if (sub_assign->parsed() || sub_run->parsed()) peerlab::cmd_assign(cfg);
    if (sub_report->parsed() || sub_run->parsed()) peerlab::cmd_report(cfg);
    return 0;
  } catch (const peerlab::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const peerlab::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const peerlab::estimation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const peerlab::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
