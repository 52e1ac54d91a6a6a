#pragma once

// Artifact persistence.  Every file written here self-describes with the
// configuration hash, the seed, and the library version: JSON artifacts carry
// them as top-level keys, CSV artifacts as one leading '#' comment line.

#include "peerlab/assign.hpp"
#include "peerlab/cohort.hpp"
#include "peerlab/common.hpp"
#include "peerlab/evalharness.hpp"
#include "peerlab/peereffect.hpp"
#include "peerlab/peernn.hpp"

#include "json.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace peerlab {

using ojson = nlohmann::ordered_json;

struct ArtifactMeta {
  std::string config_hash;  // 16 hex digits
  std::uint64_t seed = 0;

  std::string comment() const {
    return "config_hash=" + config_hash + " seed=" + std::to_string(seed) +
           " version=" + kVersion;
  }
  void apply(ojson& j) const {
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["version"] = kVersion;
  }
};

inline void write_json(const std::string& path, const ojson& j) {
  std::ofstream out(path);
  if (!out) throw io_error("write_json: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw io_error("write_json: write failed for '" + path + "'");
}

inline ojson read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("read_json: cannot open '" + path + "'");
  ojson j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw parse_error("read_json: '" + path + "': " + e.what());
  }
  return j;
}

inline ojson matrix_to_json(const Matrix& m) {
  ojson rows = ojson::array();
  for (int i = 0; i < m.rows(); ++i) {
    ojson row = ojson::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix json_to_matrix(const ojson& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw parse_error("json matrix '" + what + "': expected array of arrays");
  Matrix m(j.size(), j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != j[0].size())
      throw parse_error("json matrix '" + what + "': ragged rows");
    for (std::size_t k = 0; k < j[i].size(); ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Model parameters
// ---------------------------------------------------------------------------

inline void save_params_json(const std::string& path, const PeerNNParams& params,
                             const Hyper& hyper, std::uint64_t train_seed,
                             const ArtifactMeta& meta) {
  ojson j;
  meta.apply(j);
  j["D"] = params.feature_dim();
  j["K"] = kLatentDim;
  j["H"] = kHiddenDim;
  j["W0"] = matrix_to_json(params.w0);
  j["W1"] = matrix_to_json(params.w1);
  j["W2"] = matrix_to_json(params.w2);
  j["hyper"] = {{"mu", hyper.mu}, {"kappa", hyper.kappa}, {"lambda", hyper.lambda}};
  j["train_seed"] = train_seed;
  write_json(path, j);
}

struct ParamsArtifact {
  PeerNNParams params;
  Hyper hyper;
  std::uint64_t train_seed = 0;
  std::string config_hash;
};

inline ParamsArtifact load_params_json(const std::string& path) {
  const ojson j = read_json(path);
  ParamsArtifact art;
  try {
    art.params.w0 = json_to_matrix(j.at("W0"), "W0");
    art.params.w1 = json_to_matrix(j.at("W1"), "W1");
    art.params.w2 = json_to_matrix(j.at("W2"), "W2");
    art.hyper.mu = j.at("hyper").at("mu").get<double>();
    art.hyper.kappa = j.at("hyper").at("kappa").get<double>();
    art.hyper.lambda = j.at("hyper").at("lambda").get<double>();
    art.train_seed = j.value("train_seed", std::uint64_t{0});
    art.config_hash = j.value("config_hash", std::string{});
    if (j.at("D").get<int>() != art.params.feature_dim())
      throw parse_error("params json: D disagrees with W0 rows");
  } catch (const ojson::exception& e) {
    throw parse_error("params json '" + path + "': " + e.what());
  }
  art.params.validate();
  return art;
}

// ---------------------------------------------------------------------------
// Ground truth sidecar
// ---------------------------------------------------------------------------

inline void save_groundtruth_json(const std::string& path, const GroundTruth& gt,
                                  const ArtifactMeta& meta) {
  ojson j;
  meta.apply(j);
  j["beta_true"] = gt.beta_true;
  ojson gamma;
  const char* names[] = {"age", "f_edu", "m_edu", "ethnic"};
  for (int i = 0; i < gt.control_coeffs.size(); ++i)
    gamma[names[i]] = gt.control_coeffs[i];
  j["control_coeffs"] = gamma;
  const auto& c = gt.config;
  j["dgp"] = {{"num_schools", c.num_schools},
              {"classes_per_school", c.classes_per_school},
              {"class_size_min", c.class_size_min},
              {"class_size_max", c.class_size_max},
              {"feature_dim", c.feature_dim},
              {"beta_true", c.beta_true},
              {"confounder_strength", c.confounder_strength},
              {"homophily_gender", c.homophily_gender},
              {"homophily_ability", c.homophily_ability},
              {"popularity_scale", c.popularity_scale},
              {"sigma_eps", c.sigma_eps},
              {"sigma_mu", c.sigma_mu},
              {"school_effect_scale", c.school_effect_scale},
              {"test_fraction", c.test_fraction},
              {"seed", c.seed}};
  auto int_map = [](const std::map<int, double>& m) {
    ojson o;
    for (const auto& [k, v] : m) o[std::to_string(k)] = v;
    return o;
  };
  ojson friends;
  for (const auto& [id, f] : gt.true_friends) friends[std::to_string(id)] = f;
  j["true_friends"] = std::move(friends);
  j["ability"] = int_map(gt.ability);
  j["popularity"] = int_map(gt.popularity);
  j["school_effects"] = int_map(gt.school_effects);
  j["class_effects"] = int_map(gt.class_effects);
  write_json(path, j);
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

inline void save_loss_history_csv(const std::string& path,
                                  const std::vector<LossReport>& history,
                                  const ArtifactMeta& meta) {
  std::ofstream out(path);
  if (!out) throw io_error("save_loss_history: cannot open '" + path + "'");
  out << "# " << meta.comment() << "\n";
  out << "epoch,bias_sq,var,homophily,transitivity,total\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    out << e << ',' << format_double(h.bias_sq) << ',' << format_double(h.var)
        << ',' << format_double(h.homophily) << ','
        << format_double(h.transitivity) << ',' << format_double(h.total)
        << "\n";
  }
  if (!out) throw io_error("save_loss_history: write failed for '" + path + "'");
}

// Omega as CSV with a student-id header; first column repeats the row ids so
// rows and columns stay identifiable after slicing.
inline void save_omega_csv(const std::string& path, const OmegaMatrix& omega,
                           const std::vector<int>& ids, const ArtifactMeta& meta) {
  const int n = omega.n();
  if (static_cast<int>(ids.size()) != n)
    throw validation_error("save_omega_csv: id count mismatch");
  std::ofstream out(path);
  if (!out) throw io_error("save_omega_csv: cannot open '" + path + "'");
  out << "# " << meta.comment() << "\n";
  out << "id";
  for (int id : ids) out << ',' << id;
  out << "\n";
  for (int i = 0; i < n; ++i) {
    out << ids[i];
    for (int j = 0; j < n; ++j) out << ',' << format_double(omega.p(i, j));
    out << "\n";
  }
  if (!out) throw io_error("save_omega_csv: write failed for '" + path + "'");
}

struct TraitErrorRow {
  int trait = 0;  // 1-based for reporting
  int replicate = 0;
  std::string model;  // "peernn" | "uniform"
  double pe = 0.0;
};

inline void save_trait_errors_csv(const std::string& path,
                                  const std::vector<TraitErrorRow>& rows,
                                  const ArtifactMeta& meta) {
  std::ofstream out(path);
  if (!out) throw io_error("save_trait_errors: cannot open '" + path + "'");
  out << "# " << meta.comment() << "\n";
  out << "trait,replicate,model,pe\n";
  for (const auto& r : rows)
    out << r.trait << ',' << r.replicate << ',' << r.model << ','
        << format_double(r.pe) << "\n";
  if (!out) throw io_error("save_trait_errors: write failed for '" + path + "'");
}

inline void save_distribution_csv(
    const std::string& path,
    const std::map<std::string, PolicyDistribution>& dists,
    const ArtifactMeta& meta) {
  std::ofstream out(path);
  if (!out) throw io_error("save_distribution: cannot open '" + path + "'");
  out << "# " << meta.comment() << "\n";
  out << "policy,item,value\n";
  for (const auto& [policy, d] : dists) {
    for (std::size_t i = 0; i < d.values.size(); ++i)
      out << policy << ",s" << i << ',' << format_double(d.values[i]) << "\n";
    out << policy << ",q25," << format_double(d.q25) << "\n";
    out << policy << ",q50," << format_double(d.q50) << "\n";
    out << policy << ",q75," << format_double(d.q75) << "\n";
    out << policy << ",mean," << format_double(d.mean) << "\n";
  }
  if (!out) throw io_error("save_distribution: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Estimation report
// ---------------------------------------------------------------------------

struct EstimateSet {
  IVEstimate lim, lim_re, iv, iv_re, naive;
  int n = 0;
};

namespace detail {

inline ojson estimate_to_json(const IVEstimate& e) {
  ojson j;
  j["method"] = e.method;
  j["beta"] = e.beta;
  j["se_beta"] = e.se_beta;
  ojson coefs;
  for (std::size_t i = 0; i < e.names.size(); ++i) {
    coefs[e.names[i]] = {{"coef", e.coef[i]}, {"se", e.se[i]}};
  }
  j["coefficients"] = std::move(coefs);
  auto put_opt = [&j](const char* key, double v) {
    if (std::isfinite(v)) j[key] = v;
  };
  put_opt("first_stage_pi1", e.first_stage_pi1);
  put_opt("first_stage_se", e.first_stage_se);
  put_opt("first_stage_f", e.first_stage_f);
  j["sigma2_mu"] = e.sigma2_mu;
  j["sigma2_eps"] = e.sigma2_eps;
  put_opt("loglik", e.loglik);
  put_opt("adj_r2", e.adj_r2);
  return j;
}

}  // namespace detail

inline void save_estimates_json(const std::string& path, const EstimateSet& set,
                                const ArtifactMeta& meta) {
  ojson j;
  meta.apply(j);
  j["n"] = set.n;
  j["specs"] = {{"LIM", detail::estimate_to_json(set.lim)},
                {"LIM+RE", detail::estimate_to_json(set.lim_re)},
                {"2SLS", detail::estimate_to_json(set.iv)},
                {"2SLS+RE", detail::estimate_to_json(set.iv_re)}};
  j["naive_ols"] = detail::estimate_to_json(set.naive);
  write_json(path, j);
}

inline double load_estimate_beta(const std::string& path) {
  const ojson j = read_json(path);
  try {
    return j.at("specs").at("2SLS").at("beta").get<double>();
  } catch (const ojson::exception& e) {
    throw parse_error("estimate json '" + path + "': " + e.what());
  }
}

// Plain-text table mirroring the four-column results layout; school fixed
// effects are summarized in one row rather than printed per dummy.
inline std::string format_estimate_table(const EstimateSet& set) {
  const IVEstimate* cols[] = {&set.lim, &set.lim_re, &set.iv, &set.iv_re};
  const char* headers[] = {"LIM", "LIM+RE", "IV", "IV+RE"};
  char buf[128];
  std::string out;
  auto cell = [&](const std::string& text) {
    std::snprintf(buf, sizeof(buf), "%12s", text.c_str());
    out += buf;
  };
  auto num = [&](double v, bool parens = false) {
    if (!std::isfinite(v)) {
      cell("");
      return;
    }
    char nbuf[64];
    std::snprintf(nbuf, sizeof(nbuf), parens ? "(%.4f)" : "%.4f", v);
    cell(nbuf);
  };
  auto label = [&](const std::string& text) {
    std::snprintf(buf, sizeof(buf), "%-22s", text.c_str());
    out += buf;
  };

  label("");
  for (const char* h : headers) cell(h);
  out += "\n";

  // Peer-effect row first, then the shared exogenous rows by name.
  label("peer effect");
  for (const auto* c : cols) num(c->beta);
  out += "\n";
  label("");
  for (const auto* c : cols) num(c->se_beta, true);
  out += "\n";
  const std::vector<std::string> shared = {"own_z", "age",   "sex",
                                           "f_edu", "m_edu", "ethnic",
                                           "intercept"};
  for (const auto& name : shared) {
    label(name);
    for (const auto* c : cols) {
      const auto it = std::find(c->names.begin(), c->names.end(), name);
      if (it == c->names.end()) {
        cell("");
        continue;
      }
      num(c->coef[it - c->names.begin()]);
    }
    out += "\n";
    label("");
    for (const auto* c : cols) {
      const auto it = std::find(c->names.begin(), c->names.end(), name);
      if (it == c->names.end()) {
        cell("");
        continue;
      }
      num(c->se[it - c->names.begin()], true);
    }
    out += "\n";
  }
  label("school FE");
  for (int i = 0; i < 4; ++i) cell("yes");
  out += "\n";
  label("first-stage pi1");
  for (const auto* c : cols) num(c->first_stage_pi1);
  out += "\n";
  label("first-stage F");
  for (const auto* c : cols) num(c->first_stage_f);
  out += "\n";
  label("sigma2_mu");
  for (const auto* c : cols)
    num(c->method.find("+RE") != std::string::npos
            ? c->sigma2_mu
            : std::numeric_limits<double>::quiet_NaN());
  out += "\n";
  label("sigma2_eps");
  for (const auto* c : cols) num(c->sigma2_eps);
  out += "\n";
  label("loglik");
  for (const auto* c : cols) num(c->loglik);
  out += "\n";
  label("adj R2");
  for (const auto* c : cols) num(c->adj_r2);
  out += "\n";
  label("N");
  for (int i = 0; i < 4; ++i) cell(std::to_string(set.n));
  out += "\n";
  return out;
}

// ---------------------------------------------------------------------------
// GA run
// ---------------------------------------------------------------------------

inline void save_garun_json(const std::string& path, const GARun& run,
                            int school_id, double beta, const ArtifactMeta& meta) {
  ojson j;
  meta.apply(j);
  j["school_id"] = school_id;
  j["beta"] = beta;
  j["fitness_kind"] = run.config.kind == FitnessKind::ga ? "ga" : "afga";
  j["ga_config"] = {{"iters", run.config.iters},
                    {"swaps", run.config.swaps},
                    {"mut_prob", run.config.mut_prob},
                    {"phi", run.config.phi},
                    {"rho", run.config.rho},
                    {"seed", run.config.seed}};
  j["initial"] = {{"c1", run.initial.c1},
                  {"c2", run.initial.c2},
                  {"fitness", run.initial_fitness}};
  j["fitness_history"] = run.fitness_history;
  j["best"] = {{"iteration", run.best_iteration},
               {"fitness", run.best_fitness},
               {"c1", run.best.c1},
               {"c2", run.best.c2}};
  write_json(path, j);
}

// ---------------------------------------------------------------------------
// Staleness detection
// ---------------------------------------------------------------------------

// Extracts the config hash an artifact was written with, for staleness
// warnings; returns nullopt when the file carries none.
inline std::optional<std::string> read_artifact_hash(const std::string& path) {
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    try {
      const ojson j = read_json(path);
      if (j.contains("config_hash")) return j["config_hash"].get<std::string>();
    } catch (const std::exception&) {
      return std::nullopt;
    }
    return std::nullopt;
  }
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] != '#') break;
    const auto pos = line.find("config_hash=");
    if (pos != std::string::npos) {
      const auto end = line.find(' ', pos);
      return line.substr(pos + 12, end == std::string::npos
                                       ? std::string::npos
                                       : end - pos - 12);
    }
  }
  return std::nullopt;
}

}  // namespace peerlab
