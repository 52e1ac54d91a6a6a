#pragma once

// End-to-end orchestration: one configuration object drives synth -> train ->
// predict -> estimate -> assign -> report.  Every stage is a pure function of
// its declared inputs plus seeds; artifacts embed the configuration hash so
// downstream stages can warn about stale inputs.

#include "peerlab/artifacts.hpp"
#include "peerlab/assign.hpp"
#include "peerlab/cohort.hpp"
#include "peerlab/common.hpp"
#include "peerlab/evalharness.hpp"
#include "peerlab/peereffect.hpp"
#include "peerlab/peernn.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace peerlab {

struct PredictConfig {
  int replicates = 1000;
  int heatmap_scale = 8;
  std::uint64_t seed = 0;  // 0: derive from the master seed
};

struct PipelineConfig {
  std::string cohort_path;  // empty: <out_dir>/cohort.csv
  std::string out_dir = "out";
  std::uint64_t seed = 1;  // master seed
  SynthConfig synth;
  Hyper hyper;
  OptConfig opt;
  PredictConfig predict;
  GAConfig ga;  // ga.seed == 0: derive from the master seed
  // Which optimized policies the assign stage produces ("ga", "afga", "both").
  // The raw random baseline is always included for comparison.
  std::string assign_fitness = "both";

  // Fills any stage seed left at 0 from the master seed so that every
  // stochastic stage has an explicit, recorded seed.
  void resolve_seeds() {
    if (synth.seed == 0) synth.seed = derive_seed(seed, 1);
    if (opt.seed == 0) opt.seed = derive_seed(seed, 2);
    if (predict.seed == 0) predict.seed = derive_seed(seed, 3);
    if (ga.seed == 0) ga.seed = derive_seed(seed, 4);
  }

  void validate() const {
    synth.validate();
    opt.validate();
    ga.validate();
    if (predict.replicates < 1)
      throw validation_error("config: predict.replicates must be >= 1");
    if (predict.heatmap_scale < 1)
      throw validation_error("config: predict.heatmap_scale must be >= 1");
    if (out_dir.empty()) throw validation_error("config: empty out_dir");
    if (assign_fitness != "ga" && assign_fitness != "afga" &&
        assign_fitness != "both")
      throw validation_error("config: assign_fitness must be ga, afga, or both");
  }

  std::string resolved_cohort_path() const {
    return cohort_path.empty() ? out_dir + "/cohort.csv" : cohort_path;
  }
};

// Canonical one-line-per-field rendering of everything that affects results
// (paths excluded: moving artifacts elsewhere does not make them stale).
inline std::string canonical_config_text(const PipelineConfig& c) {
  std::string t;
  auto put = [&t](const std::string& k, const std::string& v) {
    t += k + "=" + v + "\n";
  };
  auto putd = [&](const std::string& k, double v) { put(k, format_double(v)); };
  auto puti = [&](const std::string& k, long long v) { put(k, std::to_string(v)); };
  auto putu = [&](const std::string& k, std::uint64_t v) { put(k, std::to_string(v)); };
  putu("seed", c.seed);
  puti("synth.num_schools", c.synth.num_schools);
  puti("synth.classes_per_school", c.synth.classes_per_school);
  puti("synth.class_size_min", c.synth.class_size_min);
  puti("synth.class_size_max", c.synth.class_size_max);
  puti("synth.feature_dim", c.synth.feature_dim);
  putd("synth.beta_true", c.synth.beta_true);
  putd("synth.confounder_strength", c.synth.confounder_strength);
  putd("synth.homophily_gender", c.synth.homophily_gender);
  putd("synth.homophily_ability", c.synth.homophily_ability);
  putd("synth.popularity_scale", c.synth.popularity_scale);
  putd("synth.sigma_eps", c.synth.sigma_eps);
  putd("synth.sigma_mu", c.synth.sigma_mu);
  putd("synth.school_effect_scale", c.synth.school_effect_scale);
  putd("synth.test_fraction", c.synth.test_fraction);
  putu("synth.seed", c.synth.seed);
  putd("train.mu", c.hyper.mu);
  putd("train.kappa", c.hyper.kappa);
  putd("train.lambda", c.hyper.lambda);
  putd("train.step", c.opt.step);
  puti("train.epochs", c.opt.epochs);
  putd("train.init_scale", c.opt.init_scale);
  putu("train.seed", c.opt.seed);
  puti("predict.replicates", c.predict.replicates);
  puti("predict.heatmap_scale", c.predict.heatmap_scale);
  putu("predict.seed", c.predict.seed);
  puti("assign.iters", c.ga.iters);
  puti("assign.swaps", c.ga.swaps);
  putd("assign.mut_prob", c.ga.mut_prob);
  putd("assign.phi", c.ga.phi);
  putd("assign.rho", c.ga.rho);
  putu("assign.seed", c.ga.seed);
  return t;
}

inline std::string config_hash_hex(const PipelineConfig& c) {
  return hex64(fnv1a64(canonical_config_text(c)));
}

inline ArtifactMeta artifact_meta(const PipelineConfig& c) {
  return ArtifactMeta{config_hash_hex(c), c.seed};
}

namespace detail {

inline void ensure_out_dir(const PipelineConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec)
    throw io_error("cannot create output directory '" + cfg.out_dir +
                   "': " + ec.message());
}

inline void require_artifact(const std::string& stage, const std::string& path) {
  if (!std::filesystem::exists(path))
    throw io_error(stage + ": missing upstream artifact: " + path);
}

inline void warn_if_stale(const std::string& path, const ArtifactMeta& meta) {
  const auto hash = read_artifact_hash(path);
  if (hash && *hash != meta.config_hash)
    std::cerr << "warning: " << path
              << " was produced under a different configuration (hash " << *hash
              << ", current " << meta.config_hash << ")\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void cmd_synth(const PipelineConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const ArtifactMeta meta = artifact_meta(cfg);
  const auto [cohort, gt] = synth_cohort(cfg.synth);
  save_cohort(cohort, cfg.resolved_cohort_path(), meta.comment());
  save_groundtruth_json(cfg.out_dir + "/groundtruth.json", gt, meta);
  std::cout << "synth: " << cohort.students.size() << " students in "
            << cohort.classrooms.size() << " classrooms ("
            << cohort.classrooms_of(Split::train).size() << " train) -> "
            << cfg.resolved_cohort_path() << "\n";
}

inline void cmd_train(const PipelineConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const ArtifactMeta meta = artifact_meta(cfg);
  const std::string cpath = cfg.resolved_cohort_path();
  detail::require_artifact("train", cpath);
  detail::warn_if_stale(cpath, meta);
  const Cohort cohort = load_cohort(cpath);
  const TrainResult result = train(cohort, cfg.hyper, cfg.opt);
  save_params_json(cfg.out_dir + "/params.json", result.params, cfg.hyper,
                   cfg.opt.seed, meta);
  save_loss_history_csv(cfg.out_dir + "/loss_history.csv", result.history, meta);
  std::cout << "train: total loss " << format_double(result.history.front().total)
            << " -> " << format_double(result.history.back().total) << " over "
            << cfg.opt.epochs << " epochs\n";
}

inline void cmd_predict(const PipelineConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const ArtifactMeta meta = artifact_meta(cfg);
  const std::string cpath = cfg.resolved_cohort_path();
  const std::string ppath = cfg.out_dir + "/params.json";
  detail::require_artifact("predict", cpath);
  detail::require_artifact("predict", ppath);
  detail::warn_if_stale(cpath, meta);
  detail::warn_if_stale(ppath, meta);
  const Cohort cohort = load_cohort(cpath);
  const ParamsArtifact art = load_params_json(ppath);

  const auto test_classes = split_data(cohort, Split::test);
  if (test_classes.empty())
    throw validation_error("predict: cohort has no test classrooms");
  const int reps = cfg.predict.replicates;
  // Per-replicate totals accumulated across test classrooms.
  std::vector<std::vector<double>> pe_model(kNumTraits,
                                            std::vector<double>(reps, 0.0));
  std::vector<std::vector<double>> pe_unif(kNumTraits,
                                           std::vector<double>(reps, 0.0));
  ojson class_diags = ojson::array();
  for (const auto& cd : test_classes) {
    const OmegaMatrix omega = predict_omega(art.params, cd);
    save_omega_csv(cfg.out_dir + "/omega_class" + std::to_string(cd.class_id) +
                       ".csv",
                   omega, cd.student_ids, meta);
    detail::write_pgm(omega.p,
                      cfg.out_dir + "/omega_class" + std::to_string(cd.class_id) +
                          ".pgm",
                      cfg.predict.heatmap_scale, meta.comment());
    const OmegaMatrix baseline = uniform_baseline_omega(cd.n());
    for (int q = 0; q < kNumTraits; ++q) {
      const auto pm = prediction_error(omega, cd, q, reps, cfg.predict.seed);
      const auto pu = prediction_error(baseline, cd, q, reps, cfg.predict.seed);
      for (int r = 0; r < reps; ++r) {
        pe_model[q][r] += pm[r];
        pe_unif[q][r] += pu[r];
      }
    }
    const OmegaDiagnostics diag = omega_diagnostics(omega, cd.genders);
    ojson jd;
    jd["class_id"] = cd.class_id;
    jd["n"] = cd.n();
    if (diag.homophily)
      jd["homophily"] = *diag.homophily;
    else
      jd["homophily"] = nullptr;
    jd["centrality"] = diag.centrality;
    jd["dispersion"] = diag.dispersion;
    jd["max_row_entry_max"] = diag.max_row_entries.maxCoeff();
    jd["max_row_entry_mean"] = diag.max_row_entries.mean();
    class_diags.push_back(std::move(jd));
  }

  std::vector<TraitErrorRow> rows;
  rows.reserve(2 * kNumTraits * reps);
  ojson trait_summary = ojson::array();
  for (int q = 0; q < kNumTraits; ++q) {
    for (int r = 0; r < reps; ++r)
      rows.push_back(TraitErrorRow{q + 1, r, "peernn", pe_model[q][r]});
    for (int r = 0; r < reps; ++r)
      rows.push_back(TraitErrorRow{q + 1, r, "uniform", pe_unif[q][r]});
    int wins = 0;
    for (int r = 0; r < reps; ++r)
      if (pe_model[q][r] < pe_unif[q][r]) ++wins;
    auto mean_of = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / double(v.size());
    };
    ojson ts;
    ts["trait"] = q + 1;
    ts["median_pe_peernn"] = quantile_type7(pe_model[q], 0.5);
    ts["median_pe_uniform"] = quantile_type7(pe_unif[q], 0.5);
    ts["mean_pe_peernn"] = mean_of(pe_model[q]);
    ts["mean_pe_uniform"] = mean_of(pe_unif[q]);
    ts["win_rate_peernn"] = double(wins) / reps;
    trait_summary.push_back(std::move(ts));
  }
  save_trait_errors_csv(cfg.out_dir + "/trait_errors.csv", rows, meta);
  ojson jd;
  meta.apply(jd);
  jd["replicates"] = reps;
  jd["classes"] = std::move(class_diags);
  jd["traits"] = std::move(trait_summary);
  write_json(cfg.out_dir + "/diagnostics.json", jd);
  std::cout << "predict: " << test_classes.size() << " test classrooms, " << reps
            << " replicates per trait\n";
}

inline void cmd_estimate(const PipelineConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const ArtifactMeta meta = artifact_meta(cfg);
  const std::string cpath = cfg.resolved_cohort_path();
  const std::string ppath = cfg.out_dir + "/params.json";
  detail::require_artifact("estimate", cpath);
  detail::require_artifact("estimate", ppath);
  detail::warn_if_stale(cpath, meta);
  detail::warn_if_stale(ppath, meta);
  const Cohort cohort = load_cohort(cpath);
  const ParamsArtifact art = load_params_json(ppath);
  std::map<int, Matrix> omegas;
  for (const auto& cd : split_data(cohort, Split::train))
    omegas[cd.class_id] = predict_omega(art.params, cd).p;
  const RegressionDesign design = build_design(cohort, omegas, Split::train);
  EstimateSet set;
  set.n = design.n();
  set.lim = linear_in_means(design, false);
  set.lim_re = linear_in_means(design, true);
  set.iv = two_stage_iv(design, false);
  set.iv_re = two_stage_iv(design, true);
  set.naive = direct_ols(design);
  save_estimates_json(cfg.out_dir + "/estimate.json", set, meta);
  {
    std::ofstream txt(cfg.out_dir + "/estimate.txt");
    if (!txt) throw io_error("estimate: cannot open estimate.txt");
    txt << "# " << meta.comment() << "\n";
    txt << format_estimate_table(set);
  }
  std::cout << "estimate: beta 2SLS " << format_double(set.iv.beta) << " (se "
            << format_double(set.iv.se_beta) << "), first-stage F "
            << format_double(set.iv.first_stage_f) << "\n";
}

inline void cmd_assign(const PipelineConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const ArtifactMeta meta = artifact_meta(cfg);
  const std::string cpath = cfg.resolved_cohort_path();
  const std::string ppath = cfg.out_dir + "/params.json";
  const std::string epath = cfg.out_dir + "/estimate.json";
  detail::require_artifact("assign", cpath);
  detail::require_artifact("assign", ppath);
  detail::require_artifact("assign", epath);
  detail::warn_if_stale(cpath, meta);
  detail::warn_if_stale(ppath, meta);
  detail::warn_if_stale(epath, meta);
  const Cohort cohort = load_cohort(cpath);
  const ParamsArtifact art = load_params_json(ppath);
  const double beta = load_estimate_beta(epath);

  const bool want_ga = cfg.assign_fitness != "afga";
  const bool want_afga = cfg.assign_fitness != "ga";
  ojson summary_schools = ojson::array();
  for (const auto& school : cohort.schools) {
    const SchoolPool pool = school_pool(cohort, school.school_id);
    const std::uint64_t school_tag = static_cast<std::uint64_t>(school.school_id);
    const std::string sid = std::to_string(school.school_id);

    const Assignment raw =
        random_assignment(pool, derive_seed(cfg.ga.seed, school_tag, 0));
    std::map<std::string, Assignment> policies = {{"raw", raw}};
    std::map<std::string, GARun> runs;
    if (want_ga) {
      GAConfig ga_cfg = cfg.ga;
      ga_cfg.kind = FitnessKind::ga;
      ga_cfg.seed = derive_seed(cfg.ga.seed, school_tag, 1);
      runs.emplace("ga", run_ga(pool, art.params, beta, ga_cfg));
    }
    if (want_afga) {
      GAConfig afga_cfg = cfg.ga;
      afga_cfg.kind = FitnessKind::afga;
      afga_cfg.seed = derive_seed(cfg.ga.seed, school_tag, 2);
      runs.emplace("afga", run_ga(pool, art.params, beta, afga_cfg));
    }
    for (const auto& [policy, run] : runs) {
      save_garun_json(cfg.out_dir + "/garun_school" + sid + "_" + policy +
                          ".json",
                      run, school.school_id, beta, meta);
      policies.emplace(policy, run.best);
    }
    for (const auto& [policy, assignment] : policies) {
      int side_no = 1;
      for (const auto* side : {&assignment.c1, &assignment.c2}) {
        const auto pos = detail::pool_positions(pool, *side);
        Matrix x(pos.size(), pool.x.cols());
        Vector z(pos.size());
        for (std::size_t i = 0; i < pos.size(); ++i) {
          x.row(i) = pool.x.row(pos[i]);
          z[i] = pool.z[pos[i]];
        }
        const OmegaMatrix omega = predict_omega(art.params, x);
        export_heatmap(q_matrix(omega, z).q,
                       cfg.out_dir + "/qmatrix_school" + sid + "_" + policy +
                           "_class" + std::to_string(side_no),
                       cfg.predict.heatmap_scale, meta.comment());
        ++side_no;
      }
    }
    save_distribution_csv(cfg.out_dir + "/distribution_school" + sid + ".csv",
                          peer_effect_distribution(policies, pool, art.params, beta),
                          meta);

    ojson js;
    js["school_id"] = school.school_id;
    js["n"] = pool.n();
    auto parts_json = [&](const Assignment& a) {
      const FitnessParts p = fitness_parts(pool, a.c1, a.c2, art.params, beta);
      return ojson{{"mean_term", p.mean_term},
                   {"within_sd", p.within_sd},
                   {"across_sd", p.across_sd}};
    };
    js["raw"] = parts_json(raw);
    for (const auto& [policy, run] : runs) {
      js[policy] = parts_json(run.best);
      js[policy]["fitness"] = run.best_fitness;
      js[policy]["best_iteration"] = run.best_iteration;
    }
    summary_schools.push_back(std::move(js));
  }
  ojson j;
  meta.apply(j);
  j["beta"] = beta;
  j["schools"] = std::move(summary_schools);
  write_json(cfg.out_dir + "/assign_summary.json", j);
  std::cout << "assign: " << cohort.schools.size()
            << " schools reassigned (GA and AFGA), beta " << format_double(beta)
            << "\n";
}

inline void cmd_report(const PipelineConfig& cfg) {
  detail::ensure_out_dir(cfg);
  const ArtifactMeta meta = artifact_meta(cfg);
  ojson j;
  meta.apply(j);
  std::string txt = "pipeline report (config " + meta.config_hash + ", seed " +
                    std::to_string(meta.seed) + ", version " + kVersion + ")\n";
  bool any = false;

  const std::string cpath = cfg.resolved_cohort_path();
  if (std::filesystem::exists(cpath)) {
    any = true;
    detail::warn_if_stale(cpath, meta);
    const Cohort cohort = load_cohort(cpath);
    j["cohort"] = {{"path", cpath},
                   {"students", cohort.students.size()},
                   {"classrooms", cohort.classrooms.size()},
                   {"schools", cohort.schools.size()},
                   {"train_classrooms", cohort.classrooms_of(Split::train).size()},
                   {"test_classrooms", cohort.classrooms_of(Split::test).size()}};
    txt += "cohort: " + std::to_string(cohort.students.size()) + " students, " +
           std::to_string(cohort.classrooms.size()) + " classrooms, " +
           std::to_string(cohort.schools.size()) + " schools\n";
  } else {
    j["cohort"] = nullptr;
    txt += "cohort: absent\n";
  }

  const std::string lpath = cfg.out_dir + "/loss_history.csv";
  if (std::filesystem::exists(lpath)) {
    any = true;
    detail::warn_if_stale(lpath, meta);
    std::ifstream in(lpath);
    std::string line, last, first;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("epoch", 0) == 0) continue;
      if (first.empty()) first = line;
      last = line;
    }
    j["train"] = {{"first_epoch", first}, {"last_epoch", last}};
    txt += "train: loss row first [" + first + "] last [" + last + "]\n";
  } else {
    j["train"] = nullptr;
    txt += "train: absent\n";
  }

  const std::string dpath = cfg.out_dir + "/diagnostics.json";
  if (std::filesystem::exists(dpath)) {
    any = true;
    detail::warn_if_stale(dpath, meta);
    const ojson diag = read_json(dpath);
    const ojson traits = diag.value("traits", ojson::array());
    j["predict"] = {{"replicates", diag.value("replicates", 0)},
                    {"traits", traits}};
    int better = 0, total = 0;
    for (const auto& t : traits) {
      ++total;
      if (t.value("median_pe_peernn", 0.0) < t.value("median_pe_uniform", 0.0))
        ++better;
    }
    txt += "predict: model beats uniform baseline on median error in " +
           std::to_string(better) + "/" + std::to_string(total) + " traits\n";
  } else {
    j["predict"] = nullptr;
    txt += "predict: absent\n";
  }

  const std::string epath = cfg.out_dir + "/estimate.json";
  if (std::filesystem::exists(epath)) {
    any = true;
    detail::warn_if_stale(epath, meta);
    const ojson est = read_json(epath);
    const ojson specs = est.value("specs", ojson::object());
    ojson betas = ojson::object();
    txt += "estimate: ";
    for (const auto& [name, spec] : specs.items()) {
      betas[name] = {{"beta", spec.value("beta", 0.0)},
                     {"se", spec.value("se_beta", 0.0)}};
      txt += name + " " + format_double(spec.value("beta", 0.0)) + "  ";
    }
    j["estimate"] = std::move(betas);
    txt += "\n";
  } else {
    j["estimate"] = nullptr;
    txt += "estimate: absent\n";
  }

  const std::string apath = cfg.out_dir + "/assign_summary.json";
  if (std::filesystem::exists(apath)) {
    any = true;
    detail::warn_if_stale(apath, meta);
    const ojson as = read_json(apath);
    const ojson schools = as.value("schools", ojson::array());
    j["assign"] = schools;
    std::map<std::string, double> gain;
    int count = 0;
    for (const auto& s : schools) {
      for (const auto& policy : {"ga", "afga"})
        if (s.contains(policy))
          gain[policy] +=
              s[policy].value("mean_term", 0.0) - s["raw"].value("mean_term", 0.0);
      ++count;
    }
    if (count > 0) {
      txt += "assign: mean-peer-effect gain over raw, averaged over " +
             std::to_string(count) + " schools:";
      for (const auto& [policy, g] : gain)
        txt += " " + policy + " " + format_double(g / count);
      txt += "\n";
    }
  } else {
    j["assign"] = nullptr;
    txt += "assign: absent\n";
  }

  if (!any)
    throw io_error("report: no artifacts found under '" + cfg.out_dir + "'");
  write_json(cfg.out_dir + "/report.json", j);
  {
    std::ofstream out(cfg.out_dir + "/report.txt");
    if (!out) throw io_error("report: cannot open report.txt");
    out << "# " << meta.comment() << "\n" << txt;
  }
  std::cout << txt;
}

}  // namespace peerlab
