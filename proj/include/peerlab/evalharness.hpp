#pragma once

// Out-of-sample evaluation: replicated ARD prediction error for a friendship
// model vs. the uniform baseline, interpretability diagnostics of Omega,
// the pairwise demeaned peer-effect matrix, heatmap/CSV artifact export, and
// per-policy peer-effect distributions.

#include "peerlab/assign.hpp"
#include "peerlab/cohort.hpp"
#include "peerlab/common.hpp"
#include "peerlab/omega.hpp"
#include "peerlab/peernn.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace peerlab {

// Draws B distinct friends from a probability row by sequential
// renormalization (zero the drawn mass, rescale the rest); returns the 0/1
// indicator vector V.
inline IntVector sample_without_replacement(const Vector& omega_row, int B,
                                            std::mt19937_64& rng) {
  if (B < 1)
    throw validation_error("sample_without_replacement: B must be >= 1");
  const auto picks = detail::draw_without_replacement(omega_row, B, rng);
  IntVector v = IntVector::Zero(omega_row.size());
  for (int p : picks) v[p] = 1;
  return v;
}

// Exact ARD correspondence value; ambiguous cells (a count of one or two
// that is also a majority) average their two admissible responses to 2.5.
inline double correspondence_G(int count, int B) {
  if (B < 1 || B > 5)
    throw validation_error("correspondence_G: B must be in 1..5, got " +
                           std::to_string(B));
  if (count < 0 || count > B)
    throw validation_error("correspondence_G: count " + std::to_string(count) +
                           " outside 0.." + std::to_string(B));
  if (count == 0) return 1.0;
  if (count >= 3) return 3.0;
  return 2 * count > B ? 2.5 : 2.0;
}

// Replicated squared prediction error for one trait in one classroom.  Each
// replicate redraws every student's friends from omega (reset per replicate)
// and accumulates the squared gap between the correspondence value at the
// drawn trait count and the recorded ARD response.  Per-(replicate, student)
// seeds make the totals invariant to student order.
inline std::vector<double> prediction_error(const OmegaMatrix& omega,
                                            const ClassData& cls, int trait,
                                            int replicates, std::uint64_t seed) {
  omega.validate();
  const int n = omega.n();
  if (cls.n() != n)
    throw validation_error("prediction_error: classroom size mismatch");
  if (trait < 0 || trait >= kNumTraits)
    throw validation_error("prediction_error: trait index outside 0..9");
  if (replicates < 1)
    throw validation_error("prediction_error: need at least 1 replicate");
  std::vector<double> totals(replicates, 0.0);
  for (int r = 0; r < replicates; ++r) {
    double pe = 0.0;
    for (int i = 0; i < n; ++i) {
      std::mt19937_64 rng(
          derive_seed(seed, static_cast<std::uint64_t>(r),
                      static_cast<std::uint64_t>(cls.student_ids[i])));
      const int b = cls.num_friends[i];
      const IntVector v =
          sample_without_replacement(omega.p.row(i).transpose(), b, rng);
      int count = 0;
      for (int j = 0; j < n; ++j)
        if (v[j]) count += static_cast<int>(cls.traits(j, trait));
      const double d = correspondence_G(count, b) - cls.ard(i, trait);
      pe += d * d;
    }
    totals[r] = pe;
  }
  return totals;
}

// The linear-in-means network: every classmate equally likely.
inline OmegaMatrix uniform_baseline_omega(int n) {
  if (n < 2) throw validation_error("uniform_baseline_omega: need N >= 2");
  OmegaMatrix omega;
  omega.p = Matrix::Constant(n, n, 1.0 / double(n - 1));
  omega.p.diagonal().setZero();
  return omega;
}

struct OmegaDiagnostics {
  std::optional<double> homophily;  // mean same-gender row mass; absent if
                                    // the classroom has a single gender
  double centrality = 0.0;          // max column sum / mean column sum
  double dispersion = 0.0;          // coefficient of variation of column sums
  Vector max_row_entries;           // per-student largest friendship mass
};

inline OmegaDiagnostics omega_diagnostics(const OmegaMatrix& omega,
                                          const std::vector<int>& genders) {
  omega.validate();
  const int n = omega.n();
  if (static_cast<int>(genders.size()) != n)
    throw validation_error("omega_diagnostics: gender label count mismatch");
  OmegaDiagnostics diag;
  const bool mixed =
      std::any_of(genders.begin(), genders.end(),
                  [&genders](int g) { return g != genders.front(); });
  if (mixed) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double same = 0.0;
      for (int j = 0; j < n; ++j)
        if (j != i && genders[j] == genders[i]) same += omega.p(i, j);
      acc += same;
    }
    diag.homophily = acc / n;
  }
  const Vector colsum = omega.p.colwise().sum();
  const double mean = colsum.mean();
  diag.centrality = colsum.maxCoeff() / mean;
  diag.dispersion = sample_sd(colsum) / mean;
  diag.max_row_entries = omega.p.rowwise().maxCoeff();
  return diag;
}

struct QMatrix {
  int class_id = -1;
  Matrix q;  // symmetric, zero diagonal
};

// Pairwise demeaned peer-effect contributions q_ij = Ω_ij z̃_j + Ω_ji z̃_i.
inline QMatrix q_matrix(const OmegaMatrix& omega, const Vector& z) {
  const int n = omega.n();
  if (z.size() != n) throw validation_error("q_matrix: z length mismatch");
  const Vector zt = z.array() - z.mean();
  QMatrix qm;
  qm.class_id = omega.class_id;
  qm.q = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      qm.q(i, j) = omega.p(i, j) * zt[j] + omega.p(j, i) * zt[i];
  return qm;
}

// Linear-interpolation quantile between order statistics (the common type-7
// convention); values need not be pre-sorted.
inline double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) throw validation_error("quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw validation_error("quantile: p outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = (values.size() - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

namespace detail {

// Plain-text PGM (P2), min-max scaled with darker pixels for larger entries;
// a constant matrix maps to uniform mid-gray.  scale repeats each cell as a
// scale x scale pixel block so small matrices stay visible.
inline void write_pgm(const Matrix& m, const std::string& path, int scale,
                      const std::string& meta) {
  std::ofstream pgm(path);
  if (!pgm) throw io_error("write_pgm: cannot open '" + path + "'");
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  pgm << "P2\n";
  pgm << "# min-max scaled, darker = larger: pixel = 255 - round(255*(v-min)/(max-min))";
  pgm << (meta.empty() ? "" : "; " + meta) << "\n";
  pgm << m.cols() * scale << " " << m.rows() * scale << "\n255\n";
  for (int i = 0; i < m.rows(); ++i) {
    for (int rep = 0; rep < scale; ++rep) {
      for (int j = 0; j < m.cols(); ++j) {
        int pixel = 128;
        if (hi > lo)
          pixel = 255 - static_cast<int>(
                            std::lround(255.0 * (m(i, j) - lo) / (hi - lo)));
        for (int rep2 = 0; rep2 < scale; ++rep2)
          pgm << pixel << (j + 1 == m.cols() && rep2 + 1 == scale ? "" : " ");
      }
      pgm << "\n";
    }
  }
  if (!pgm) throw io_error("write_pgm: write failed for '" + path + "'");
}

}  // namespace detail

// Writes <path>.csv (raw values, exact round-trip) and <path>.pgm.
inline void export_heatmap(const Matrix& m, const std::string& path_base,
                           int scale = 1, const std::string& meta = "") {
  if (m.size() == 0) throw validation_error("export_heatmap: empty matrix");
  if (scale < 1) throw validation_error("export_heatmap: scale must be >= 1");
  {
    std::ofstream csv(path_base + ".csv");
    if (!csv) throw io_error("export_heatmap: cannot open '" + path_base + ".csv'");
    if (!meta.empty()) csv << "# " << meta << "\n";
    for (int i = 0; i < m.rows(); ++i) {
      for (int j = 0; j < m.cols(); ++j)
        csv << (j ? "," : "") << format_double(m(i, j));
      csv << "\n";
    }
    if (!csv) throw io_error("export_heatmap: write failed for '" + path_base + ".csv'");
  }
  detail::write_pgm(m, path_base + ".pgm", scale, meta);
}

// Reads a matrix written by export_heatmap's CSV (comment lines skipped).
inline Matrix load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_matrix_csv: cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::string tok;
    std::istringstream ss(line);
    while (std::getline(ss, tok, ','))
      row.push_back(detail::parse_double(tok, lineno, "value"));
    if (!rows.empty() && row.size() != rows.front().size())
      throw parse_error("load_matrix_csv: ragged row " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw parse_error("load_matrix_csv: no records in '" + path + "'");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

struct PolicyDistribution {
  std::vector<double> values;  // beta * Omega z, classroom 1 then classroom 2
  double q25 = 0.0, q50 = 0.0, q75 = 0.0;
  double mean = 0.0;
};

// Predicted per-student peer-effect distribution under each named policy
// (e.g. raw / GA / AFGA) for one school.
inline std::map<std::string, PolicyDistribution> peer_effect_distribution(
    const std::map<std::string, Assignment>& assignments, const SchoolPool& pool,
    const PeerNNParams& params, double beta) {
  std::map<std::string, PolicyDistribution> out;
  for (const auto& [name, assignment] : assignments) {
    PolicyDistribution dist;
    for (const auto* side : {&assignment.c1, &assignment.c2}) {
      const Vector e = detail::side_peer_effects(
          pool, detail::pool_positions(pool, *side), params, beta);
      for (int i = 0; i < e.size(); ++i) dist.values.push_back(e[i]);
    }
    dist.q25 = quantile_type7(dist.values, 0.25);
    dist.q50 = quantile_type7(dist.values, 0.50);
    dist.q75 = quantile_type7(dist.values, 0.75);
    double acc = 0.0;
    for (double v : dist.values) acc += v;
    dist.mean = acc / dist.values.size();
    out[name] = std::move(dist);
  }
  return out;
}

}  // namespace peerlab
