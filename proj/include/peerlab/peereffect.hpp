#pragma once

// Peer-effect estimation: the friendship-weighted regressor and its
// leave-one-out instrument, OLS with rank diagnostics, the two-stage IV
// procedure, a linear-in-means baseline, and a classroom random-effects MLE
// via a profiled one-dimensional likelihood search.

#include "peerlab/cohort.hpp"
#include "peerlab/common.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace peerlab {

struct RegressionDesign {
  Vector y;
  Vector endogenous;   // friendship-weighted peer rank, row i of Omega dotted with z
  Vector instrument;   // leave-one-out classmate mean of z
  Matrix controls;     // own z, age, sex, father's/mother's education, ethnicity
  std::vector<std::string> control_names;
  Matrix school_dummies;  // first school dropped as baseline
  std::vector<std::string> school_names;
  std::vector<int> class_index;  // compact 0-based classroom group per row
  std::vector<int> class_ids;    // group -> original class id
  std::vector<int> student_ids;

  int n() const { return static_cast<int>(y.size()); }

  // Stacks [peer column | controls | intercept | school dummies].
  Matrix regressors(const Vector& peer) const {
    if (peer.size() != y.size())
      throw validation_error("design: peer column length mismatch");
    Matrix x(n(), 1 + controls.cols() + 1 + school_dummies.cols());
    x.col(0) = peer;
    x.middleCols(1, controls.cols()) = controls;
    x.col(1 + controls.cols()) = Vector::Ones(n());
    x.rightCols(school_dummies.cols()) = school_dummies;
    return x;
  }

  std::vector<std::string> regressor_names(const std::string& peer_name) const {
    std::vector<std::string> names{peer_name};
    names.insert(names.end(), control_names.begin(), control_names.end());
    names.push_back("intercept");
    names.insert(names.end(), school_names.begin(), school_names.end());
    return names;
  }
};

// Assembles the estimation design from the chosen split's classrooms and one
// row-stochastic friendship matrix per classroom (keyed by class id, rows in
// roster order).
inline RegressionDesign build_design(const Cohort& cohort,
                                     const std::map<int, Matrix>& omegas,
                                     Split split = Split::train) {
  RegressionDesign d;
  d.control_names = {"own_z", "age", "sex", "f_edu", "m_edu", "ethnic"};
  std::vector<const Classroom*> classes = cohort.classrooms_of(split);
  if (classes.empty()) throw validation_error("build_design: no classrooms in split");
  int total = 0;
  for (const auto* cls : classes) total += cls->n();
  d.y = Vector::Zero(total);
  d.endogenous = Vector::Zero(total);
  d.instrument = Vector::Zero(total);
  d.controls = Matrix::Zero(total, 6);
  d.class_index.resize(total);
  d.student_ids.resize(total);
  std::vector<int> school_of_row(total);
  std::vector<int> school_order;
  int row = 0;
  int group = 0;
  for (const auto* cls : classes) {
    auto oit = omegas.find(cls->class_id);
    if (oit == omegas.end())
      throw validation_error("build_design: missing omega for classroom " +
                             std::to_string(cls->class_id));
    const Matrix& om = oit->second;
    const int n = cls->n();
    if (om.rows() != n || om.cols() != n)
      throw validation_error("build_design: omega shape mismatch for classroom " +
                             std::to_string(cls->class_id));
    const auto roster = detail::roster_students(cohort, *cls);
    Vector z(n);
    for (int i = 0; i < n; ++i) z[i] = roster[i]->z;
    const double zsum = z.sum();
    for (int i = 0; i < n; ++i) {
      const Student& s = *roster[i];
      d.y[row] = s.outcome;
      d.endogenous[row] = om.row(i).dot(z);
      d.instrument[row] = (zsum - z[i]) / double(n - 1);
      d.controls(row, 0) = s.z;
      d.controls(row, 1) = s.age;
      d.controls(row, 2) = s.gender;
      d.controls(row, 3) = s.father_edu;
      d.controls(row, 4) = s.mother_edu;
      d.controls(row, 5) = s.ethnic;
      d.class_index[row] = group;
      d.student_ids[row] = s.id;
      school_of_row[row] = cls->school_id;
      ++row;
    }
    d.class_ids.push_back(cls->class_id);
    ++group;
  }
  for (int sid : school_of_row)
    if (std::find(school_order.begin(), school_order.end(), sid) == school_order.end())
      school_order.push_back(sid);
  d.school_dummies = Matrix::Zero(total, std::max<std::size_t>(school_order.size(), 1) - 1);
  for (std::size_t s = 1; s < school_order.size(); ++s) {
    d.school_names.push_back("school_" + std::to_string(school_order[s]));
    for (int r = 0; r < total; ++r)
      if (school_of_row[r] == school_order[s]) d.school_dummies(r, s - 1) = 1.0;
  }
  return d;
}

struct OlsFit {
  Vector coef;
  Vector se;
  Matrix cov;
  Vector fitted;
  Vector resid;
  double sigma2 = 0.0;  // rss / (n - p)
  double rss = 0.0;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  std::vector<std::string> names;
};

// Least squares via column-pivoted QR; throws estimation_error naming the
// collinear columns on rank deficiency.  Classical homoskedastic SEs.
inline OlsFit ols(const Vector& y, const Matrix& x,
                  const std::vector<std::string>& names) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (y.size() != n) throw validation_error("ols: y length mismatch");
  if (static_cast<int>(names.size()) != p)
    throw validation_error("ols: name count mismatch");
  if (n < p) throw estimation_error("ols: fewer rows than columns");
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    const auto perm = qr.colsPermutation().indices();
    std::string cols;
    for (int k = qr.rank(); k < p; ++k)
      cols += (cols.empty() ? "" : ", ") + names[perm[k]];
    throw estimation_error("ols: rank deficient design; collinear columns: " + cols);
  }
  OlsFit fit;
  fit.names = names;
  fit.coef = qr.solve(y);
  fit.fitted = x * fit.coef;
  fit.resid = y - fit.fitted;
  fit.rss = fit.resid.squaredNorm();
  const int dof = n - p;
  fit.sigma2 = dof > 0 ? fit.rss / dof : 0.0;
  fit.cov = fit.sigma2 *
            (x.transpose() * x).ldlt().solve(Matrix::Identity(p, p));
  fit.se = fit.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  const double tss = (y.array() - y.mean()).square().sum();
  fit.r2 = tss > 0.0 ? 1.0 - fit.rss / tss : 1.0;
  fit.adj_r2 = dof > 0 ? 1.0 - (1.0 - fit.r2) * double(n - 1) / dof : fit.r2;
  return fit;
}

struct FirstStage {
  OlsFit fit;
  Vector fitted;
  double pi1 = 0.0;    // coefficient on the excluded instrument
  double se_pi1 = 0.0;
  double f_stat = 0.0; // single-instrument first-stage F
};

// OLS of the endogenous peer regressor on the instrument plus all exogenous
// columns; the F statistic guards instrument relevance.
inline FirstStage first_stage(const RegressionDesign& design) {
  FirstStage fs;
  fs.fit = ols(design.endogenous, design.regressors(design.instrument),
               design.regressor_names("classmates_mean_z"));
  fs.fitted = fs.fit.fitted;
  fs.pi1 = fs.fit.coef[0];
  fs.se_pi1 = fs.fit.se[0];
  if (fs.se_pi1 > 0.0) {
    const double t = fs.pi1 / fs.se_pi1;
    fs.f_stat = t * t;
  } else {
    fs.f_stat = std::numeric_limits<double>::infinity();
  }
  return fs;
}

struct IVEstimate {
  std::string method;  // OLS | LIM | LIM+RE | 2SLS | 2SLS+RE
  double beta = 0.0;
  double se_beta = 0.0;
  Vector coef;  // full coefficient vector, peer column first
  Vector se;
  std::vector<std::string> names;
  double first_stage_pi1 = std::numeric_limits<double>::quiet_NaN();
  double first_stage_se = std::numeric_limits<double>::quiet_NaN();
  double first_stage_f = std::numeric_limits<double>::quiet_NaN();
  double sigma2_mu = 0.0;
  double sigma2_eps = 0.0;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  double adj_r2 = std::numeric_limits<double>::quiet_NaN();
};

struct ReFit {
  Vector coef;
  Vector se;
  double sigma2_mu = 0.0;
  double sigma2_eps = 0.0;
  double psi = 0.0;  // sigma2_mu / sigma2_eps
  double loglik = 0.0;
};

// Gaussian MLE for y = X b + group intercept + noise, profiling everything
// but the variance ratio psi = sigma2_mu/sigma2_eps; psi is found by a grid
// plus golden-section search on log psi in [-12, 12].
inline ReFit random_effects_mle(const Vector& y, const Matrix& x,
                                const std::vector<int>& groups) {
  const int n = static_cast<int>(y.size());
  const int p = static_cast<int>(x.cols());
  if (x.rows() != n || static_cast<int>(groups.size()) != n)
    throw validation_error("random_effects_mle: shape mismatch");
  if (n <= p) throw estimation_error("random_effects_mle: too few rows");

  // Per-group sufficient statistics.
  std::map<int, int> gindex;
  for (int g : groups)
    if (!gindex.count(g)) {
      const int next = static_cast<int>(gindex.size());
      gindex[g] = next;
    }
  const int ng = static_cast<int>(gindex.size());
  std::vector<int> counts(ng, 0);
  Matrix gsum_x = Matrix::Zero(ng, p);
  Vector gsum_y = Vector::Zero(ng);
  for (int i = 0; i < n; ++i) {
    const int g = gindex[groups[i]];
    counts[g] += 1;
    gsum_x.row(g) += x.row(i);
    gsum_y[g] += y[i];
  }
  const Matrix xtx = x.transpose() * x;
  const Vector xty = x.transpose() * y;
  const double yty = y.squaredNorm();

  struct Profile {
    Vector coef;
    Matrix xtx_w;
    double sigma2_eps;
    double loglik;
  };
  auto profile = [&](double log_psi) {
    const double psi = std::exp(log_psi);
    Matrix xtx_w = xtx;
    Vector xty_w = xty;
    double logdet = 0.0;
    for (int g = 0; g < ng; ++g) {
      const double c = psi / (1.0 + counts[g] * psi);
      xtx_w -= c * gsum_x.row(g).transpose() * gsum_x.row(g);
      xty_w -= c * gsum_x.row(g).transpose() * gsum_y[g];
      logdet += std::log1p(counts[g] * psi);
    }
    Profile pr;
    pr.xtx_w = xtx_w;
    pr.coef = xtx_w.ldlt().solve(xty_w);
    double rss = yty - 2.0 * pr.coef.dot(xty) + pr.coef.dot(xtx * pr.coef);
    for (int g = 0; g < ng; ++g) {
      const double c = psi / (1.0 + counts[g] * psi);
      const double gr = gsum_y[g] - gsum_x.row(g).dot(pr.coef);
      rss -= c * gr * gr;
    }
    pr.sigma2_eps = std::max(rss, 0.0) / n;
    if (pr.sigma2_eps <= 0.0)
      throw estimation_error("random_effects_mle: degenerate residual variance");
    pr.loglik = -0.5 * n * (std::log(2.0 * std::numbers::pi) + 1.0) -
                0.5 * n * std::log(pr.sigma2_eps) - 0.5 * logdet;
    return pr;
  };

  // Coarse grid, then golden-section refinement of the bracketing interval.
  constexpr double kLo = -12.0, kHi = 12.0;
  constexpr int kGrid = 25;
  double best_t = kLo;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kGrid; ++k) {
    const double t = kLo + (kHi - kLo) * k / (kGrid - 1);
    const double ll = profile(t).loglik;
    if (ll > best_ll) {
      best_ll = ll;
      best_t = t;
    }
  }
  const double span = (kHi - kLo) / (kGrid - 1);
  double a = std::max(kLo, best_t - span);
  double b = std::min(kHi, best_t + span);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c1 = b - gr * (b - a), c2 = a + gr * (b - a);
  double f1 = profile(c1).loglik, f2 = profile(c2).loglik;
  bool converged = false;
  for (int it = 0; it < 300; ++it) {
    if (f1 < f2) {
      a = c1;
      c1 = c2;
      f1 = f2;
      c2 = a + gr * (b - a);
      f2 = profile(c2).loglik;
    } else {
      b = c2;
      c2 = c1;
      f2 = f1;
      c1 = b - gr * (b - a);
      f1 = profile(c1).loglik;
    }
    if (std::abs(f1 - f2) < 1e-8 && (b - a) < 1e-7) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw estimation_error(
        "random_effects_mle: likelihood search did not converge to 1e-8");
  const double t_hat = (f1 > f2 ? c1 : c2);
  const Profile opt = (best_ll > std::max(f1, f2)) ? profile(best_t)
                                                   : profile(t_hat);
  const double psi_hat = (best_ll > std::max(f1, f2)) ? std::exp(best_t)
                                                      : std::exp(t_hat);
  ReFit fit;
  fit.coef = opt.coef;
  fit.psi = psi_hat;
  fit.sigma2_eps = opt.sigma2_eps;
  fit.sigma2_mu = psi_hat * opt.sigma2_eps;
  fit.loglik = opt.loglik;
  const Matrix cov =
      opt.sigma2_eps * opt.xtx_w.ldlt().solve(Matrix::Identity(p, p));
  fit.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

namespace detail {

inline IVEstimate from_re(const ReFit& re, const RegressionDesign& design,
                          const std::string& peer_name, const std::string& method) {
  IVEstimate est;
  est.method = method;
  est.names = design.regressor_names(peer_name);
  est.coef = re.coef;
  est.se = re.se;
  est.beta = re.coef[0];
  est.se_beta = re.se[0];
  est.sigma2_mu = re.sigma2_mu;
  est.sigma2_eps = re.sigma2_eps;
  est.loglik = re.loglik;
  return est;
}

}  // namespace detail

// Naive OLS of the outcome directly on the endogenous peer regressor; the
// biased benchmark the IV procedure corrects.
inline IVEstimate direct_ols(const RegressionDesign& design) {
  const Matrix x = design.regressors(design.endogenous);
  const auto names = design.regressor_names("peer_rank");
  const OlsFit fit = ols(design.y, x, names);
  IVEstimate est;
  est.method = "OLS";
  est.names = names;
  est.coef = fit.coef;
  est.se = fit.se;
  est.beta = fit.coef[0];
  est.se_beta = fit.se[0];
  est.sigma2_eps = fit.sigma2;
  est.adj_r2 = fit.adj_r2;
  return est;
}

// Two-stage IV: regress the peer regressor on the instrument, then the
// outcome on the fitted values.  Without RE, SEs use the standard 2SLS
// covariance with residuals from the original (not fitted) regressor.  With
// RE, a classroom random intercept enters the second stage via MLE; its SEs
// are conditional on the first stage.
inline IVEstimate two_stage_iv(const RegressionDesign& design,
                               bool with_random_effect) {
  const FirstStage fs = first_stage(design);
  if (fs.f_stat < 1.0)
    throw estimation_error("two_stage_iv: weak instrument (first-stage F = " +
                           format_double(fs.f_stat) + " < 1)");
  const auto names = design.regressor_names("peer_rank");
  const Matrix x2 = design.regressors(fs.fitted);
  IVEstimate est;
  if (with_random_effect) {
    const ReFit re = random_effects_mle(design.y, x2, design.class_index);
    est = detail::from_re(re, design, "peer_rank", "2SLS+RE");
  } else {
    const OlsFit fit2 = ols(design.y, x2, names);
    const Matrix x_orig = design.regressors(design.endogenous);
    const Vector resid = design.y - x_orig * fit2.coef;
    const int n = design.n();
    const int p = static_cast<int>(x2.cols());
    const double sigma2 = resid.squaredNorm() / double(n - p);
    const Matrix cov =
        sigma2 * (x2.transpose() * x2).ldlt().solve(Matrix::Identity(p, p));
    est.method = "2SLS";
    est.names = names;
    est.coef = fit2.coef;
    est.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    est.beta = fit2.coef[0];
    est.se_beta = est.se[0];
    est.sigma2_eps = sigma2;
    const double tss = (design.y.array() - design.y.mean()).square().sum();
    const double r2 = tss > 0.0 ? 1.0 - resid.squaredNorm() / tss : 1.0;
    est.adj_r2 = 1.0 - (1.0 - r2) * double(n - 1) / double(n - p);
  }
  est.first_stage_pi1 = fs.pi1;
  est.first_stage_se = fs.se_pi1;
  est.first_stage_f = fs.f_stat;
  return est;
}

// Linear-in-means baseline: the exogenous classmate mean is the peer
// regressor; no instrumenting needed.
inline IVEstimate linear_in_means(const RegressionDesign& design,
                                  bool with_random_effect) {
  const auto names = design.regressor_names("classmates_mean_z");
  const Matrix x = design.regressors(design.instrument);
  if (with_random_effect) {
    const ReFit re = random_effects_mle(design.y, x, design.class_index);
    return detail::from_re(re, design, "classmates_mean_z", "LIM+RE");
  }
  const OlsFit fit = ols(design.y, x, names);
  IVEstimate est;
  est.method = "LIM";
  est.names = names;
  est.coef = fit.coef;
  est.se = fit.se;
  est.beta = fit.coef[0];
  est.se_beta = fit.se[0];
  est.sigma2_eps = fit.sigma2;
  est.adj_r2 = fit.adj_r2;
  return est;
}

}  // namespace peerlab
