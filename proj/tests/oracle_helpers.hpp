// Hand-built instances and independent reference computations shared by the
// unit and acceptance suites.  Everything here is derived on paper or by
// brute force, never by calling the code under test.
#pragma once

#include "peerlab/assign.hpp"
#include "peerlab/cohort.hpp"
#include "peerlab/peernn.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace oracles {

using namespace peerlab;

// Identity embedding: W0 = [I_d | 0], W1 = W2 = I.  For entrywise
// non-negative features with d <= 10 every relu is inactive and
// Upsilon = X X^T, so pairwise affinities can be scripted as dot products.
inline PeerNNParams embed_params(int d) {
  PeerNNParams p;
  p.w0 = Matrix::Zero(d, kLatentDim);
  for (int i = 0; i < d; ++i) p.w0(i, i) = 1.0;
  p.w1 = Matrix::Identity(kLatentDim, kHiddenDim);
  p.w2 = Matrix::Identity(kHiddenDim, kLatentDim);
  return p;
}

// Ten-student school with one disruptive boy (id 1, low z), a star girl
// (id 6, high z), a susceptible girl (id 7) attached to both, a four-boy
// clique (ids 2-5) the star also likes, and three unattached girls.
// Affinities via embed_params(4):  <7,1> = <7,6> = 8, <6,clique> = 6,
// <clique,clique> = 4, everything else 0.  Mean-only search seats the
// susceptible girl with the disruptive boy (her strongest ties drag her to
// a low-z friend); the dispersion-penalized search splits them.
inline SchoolPool disruptive_pool() {
  SchoolPool pool;
  pool.school_id = 1;
  pool.ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  pool.x = Matrix::Zero(10, 4);
  pool.x(0, 0) = 4.0;  // disruptive boy
  for (int i = 1; i <= 4; ++i) {  // boy clique
    pool.x(i, 2) = 1.0;
    pool.x(i, 3) = std::sqrt(3.0);
  }
  pool.x(5, 1) = 4.0;  // star girl
  pool.x(5, 2) = 6.0;
  pool.x(6, 0) = 2.0;  // susceptible boy
  pool.x(6, 1) = 2.0;
  pool.z = Vector::Zero(10);
  pool.z << 0.1, 0.6, 0.6, 0.6, 0.6, 0.95, 0.6, 0.55, 0.55, 0.55;
  pool.gender = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  pool.n_boys = 5;
  pool.n_girls = 5;
  pool.minority_gender = 0;  // tie goes to girls
  return pool;
}

// Six students, one feature: a magnet boy (id 1, x = 6, z = 0.1) that two
// susceptible girls (ids 3-4, x = 1) are drawn to; everyone else neutral.
// Exactly one boy fits the gender band per side, so the only choice is
// which two girls share a room with the magnet.  Isolating him with the
// unattached girls (ids 5-6) is optimal:
//   {1,5,6}: uniform rooms, effects 0.6, 0.35, 0.35
//   {2,3,4}: every peer has z = 0.6, effects 0.6 each
// for a mean of 3.1/6.  Any seat shared with a susceptible girl pulls her
// predicted effect to ~0.1.
inline SchoolPool magnet_pool() {
  SchoolPool pool;
  pool.school_id = 1;
  pool.ids = {1, 2, 3, 4, 5, 6};
  pool.x = Matrix::Zero(6, 1);
  pool.x(0, 0) = 6.0;
  pool.x(2, 0) = 1.0;
  pool.x(3, 0) = 1.0;
  pool.z = Vector::Zero(6);
  pool.z << 0.1, 0.6, 0.6, 0.6, 0.6, 0.6;
  pool.gender = {1, 1, 0, 0, 0, 0};
  pool.n_boys = 2;
  pool.n_girls = 4;
  pool.minority_gender = 1;
  return pool;
}

// Hand-assembled classroom with every field a unit test needs.
inline ClassData make_class(const Matrix& x, const Vector& z,
                            const std::vector<int>& genders,
                            const IntVector& num_friends, const Matrix& traits,
                            const Matrix& ard, int first_id = 1) {
  ClassData cd;
  cd.class_id = 1;
  cd.x = x;
  cd.z = z;
  cd.genders = genders;
  cd.num_friends = num_friends;
  cd.traits = traits;
  cd.ard = ard;
  for (int i = 0; i < x.rows(); ++i) cd.student_ids.push_back(first_id + i);
  return cd;
}

// Random classroom for loss/gradient checks: binary gender in column 0,
// uniform extra features, binary traits, survey responses in {1, 1.5, 2, 2.5}.
inline ClassData random_class(int n, int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> bdist(1, 5);
  std::uniform_int_distribution<int> bit(0, 1);
  ClassData cd;
  cd.class_id = 1;
  cd.x = Matrix::Zero(n, d);
  cd.traits = Matrix::Zero(n, kNumTraits);
  cd.ard = Matrix::Zero(n, kNumTraits);
  cd.num_friends = IntVector::Zero(n);
  cd.z = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    cd.x(i, 0) = bit(rng);
    for (int f = 1; f < d; ++f) cd.x(i, f) = u01(rng);
    cd.num_friends[i] = std::max(1, std::min(bdist(rng), n - 1));
    for (int q = 0; q < kNumTraits; ++q) {
      cd.traits(i, q) = bit(rng);
      cd.ard(i, q) = 1 + bit(rng) + bit(rng) * 0.5;
    }
    cd.z[i] = u01(rng);
    cd.student_ids.push_back(i + 1);
    cd.genders.push_back(int(cd.x(i, 0)));
  }
  return cd;
}

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;
};

// Monte-Carlo estimate of E[(g(V.A_s, 1) - A_f)^2] / (N Q) summed over
// students, with every B_i = 1: each draw picks one friend per student from
// the student's probability row.  At B = 1 the closed Bias^2 + Var equals
// this expectation exactly.
inline McEstimate mc_loss_b1(const Matrix& omega, const Matrix& a_s,
                             const Matrix& a_f, int draws,
                             std::mt19937_64& rng) {
  const int n = static_cast<int>(omega.rows());
  const int q_count = static_cast<int>(a_s.cols());
  Matrix cost(n, n);  // cost(i, j): penalty when student i draws friend j
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int q = 0; q < q_count; ++q) {
        const double g = g_approx(a_s(j, q), 1);
        acc += (g - a_f(i, q)) * (g - a_f(i, q));
      }
      cost(i, j) = acc / (double(n) * q_count);
    }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double sum = 0.0, sumsq = 0.0;
  for (int d = 0; d < draws; ++d) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double u = u01(rng);
      double acc = 0.0;
      int pick = n - 1;
      for (int j = 0; j < n; ++j) {
        acc += omega(i, j);
        if (u < acc) {
          pick = j;
          break;
        }
      }
      total += cost(i, pick);
    }
    sum += total;
    sumsq += total * total;
  }
  McEstimate est;
  est.mean = sum / draws;
  const double var = (sumsq - sum * sum / draws) / (draws - 1);
  est.se = std::sqrt(std::max(var, 0.0) / draws);
  return est;
}

struct LsFit {
  double intercept = 0.0;
  double slope = 0.0;
};

// Reference derivation of the linear correspondence constants: least squares
// through every (count, admissible response) point, where a count of one or
// two that is also a majority admits both 2 and 3.
inline LsFit correspondence_ls_fit(int B) {
  std::vector<double> xs, ys;
  auto add = [&xs, &ys](double x, double y) {
    xs.push_back(x);
    ys.push_back(y);
  };
  for (int count = 0; count <= B; ++count) {
    if (count == 0) {
      add(count, 1.0);
    } else if (count >= 3) {
      add(count, 3.0);
    } else if (2 * count <= B) {
      add(count, 2.0);
    } else {
      add(count, 2.0);
      add(count, 3.0);
    }
  }
  const int m = static_cast<int>(xs.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < m; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= m;
  my /= m;
  double sxy = 0.0, sxx = 0.0;
  for (int i = 0; i < m; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  LsFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

// Central finite differences against the analytic gradient; returns the
// largest relative error over all weight entries whose analytic gradient is
// meaningfully nonzero.
inline double fd_max_rel_err(PeerNNParams p, const std::vector<ClassData>& classes,
                             const Hyper& hyper, double h) {
  const ParamGradients g = gradient(p, classes, hyper);
  double max_rel = 0.0;
  auto check = [&](Matrix& m, const Matrix& gm) {
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) {
        const double save = m(i, j);
        m(i, j) = save + h;
        const double up = total_loss(p, classes, hyper).total;
        m(i, j) = save - h;
        const double dn = total_loss(p, classes, hyper).total;
        m(i, j) = save;
        const double fd = (up - dn) / (2 * h);
        const double an = gm(i, j);
        if (std::abs(an) > 1e-8)
          max_rel = std::max(max_rel,
                             std::abs(fd - an) / std::max(std::abs(an), 1e-12));
      }
  };
  check(p.w0, g.w0);
  check(p.w1, g.w1);
  check(p.w2, g.w2);
  return max_rel;
}

// Smallest |pre-activation| across all three relu stages; finite differences
// are only trusted away from the kink.
inline double relu_kink_margin(const PeerNNParams& p, const ClassData& cd) {
  const ForwardPass f = forward(p, cd.x);
  return std::min((cd.x * p.w0).array().abs().minCoeff(),
                  std::min(f.hidden_pre.array().abs().minCoeff(),
                           f.delta_pre.array().abs().minCoeff()));
}

// Minimal valid cohort: one school, two classrooms of three.  Gender mix
// 2/4, z spread out, B = 2, traits arbitrary but consistent with the survey
// responses being in range.
inline Cohort tiny_cohort() {
  Cohort cohort;
  const int genders[6] = {1, 0, 0, 1, 0, 0};
  const double zs[6] = {0.25, 0.5, 0.75, 0.2, 0.55, 0.9};
  for (int i = 0; i < 6; ++i) {
    Student s;
    s.id = i + 1;
    s.school_id = 1;
    s.class_id = i < 3 ? 1 : 2;
    s.gender = genders[i];
    s.z = zs[i];
    s.features = Vector::Zero(2);
    s.features[0] = s.gender;
    s.features[1] = s.z;
    s.num_friends = 2;
    for (int q = 0; q < kNumTraits; ++q) {
      s.traits[q] = (q == 0) ? s.gender : (i + q) % 2;
      s.ard[q] = 1 + (i + q) % 3;
    }
    s.age = 13.0;
    s.father_edu = 3;
    s.mother_edu = 4;
    s.ethnic = 0;
    s.outcome = 0.5 + 0.1 * i;
    cohort.students.push_back(std::move(s));
  }
  Classroom c1;
  c1.class_id = 1;
  c1.school_id = 1;
  c1.split = Split::train;
  c1.student_ids = {1, 2, 3};
  Classroom c2;
  c2.class_id = 2;
  c2.school_id = 1;
  c2.split = Split::train;
  c2.student_ids = {4, 5, 6};
  cohort.classrooms = {c1, c2};
  School sch;
  sch.school_id = 1;
  sch.class_ids = {1, 2};
  cohort.schools = {sch};
  return cohort;
}

// Dense-algebra profile log-likelihood for y = X b + group intercept + noise
// at a fixed variance ratio psi: V = I + psi Z Z', b = GLS, sigma2 profiled.
inline double re_profile_loglik(const Vector& y, const Matrix& x,
                                const std::vector<int>& groups, double psi) {
  const int n = static_cast<int>(y.size());
  Matrix v = Matrix::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (groups[i] == groups[j]) v(i, j) += psi;
  const Eigen::LLT<Matrix> llt(v);
  const Matrix vi_x = llt.solve(x);
  const Vector vi_y = llt.solve(y);
  const Vector coef = (x.transpose() * vi_x).ldlt().solve(x.transpose() * vi_y);
  const Vector r = y - x * coef;
  const double sigma2 = r.dot(llt.solve(r)) / n;
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) - 0.5 * logdet -
         0.5 * n;
}

}  // namespace oracles
