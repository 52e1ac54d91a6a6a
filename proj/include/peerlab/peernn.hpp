#pragma once

// Friendship-formation model.  A small feedforward network maps student
// features to latent profiles (sigma) and preference profiles (delta); their
// outer product is a linearized propensity score whose masked row-softmax is
// the adjacency-probability matrix Omega.  The loss combines the closed-form
// ARD fit (Bias^2 + mu*Var) with homophily and transitivity penalties, and is
// minimized by full-batch gradient descent with analytic gradients.

#include "peerlab/cohort.hpp"
#include "peerlab/common.hpp"
#include "peerlab/omega.hpp"

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace peerlab {

inline constexpr int kLatentDim = 10;  // K: latent features per student
inline constexpr int kHiddenDim = 10;  // H: hidden units in the preference MLP

// Intercept/slope pairs of the five linear approximations to the ARD
// correspondence, indexed by B in {1..5}.
struct GCoefficients {
  static constexpr std::array<double, 5> intercepts{1.0, 1.090, 1.154, 1.2, 1.333};
  static constexpr std::array<double, 5> slopes{1.5, 0.727, 0.654, 0.5, 0.4};
};

// Linear stand-in for the ARD correspondence: expected survey response when
// the (real-valued) trait count among B friends is vdota.
inline double g_approx(double vdota, int B) {
  if (B < 1 || B > 5)
    throw validation_error("g_approx: B must be in 1..5, got " + std::to_string(B));
  return GCoefficients::intercepts[B - 1] + GCoefficients::slopes[B - 1] * vdota;
}

struct PeerNNParams {
  Matrix w0;  // D x K
  Matrix w1;  // K x H
  Matrix w2;  // H x K

  int feature_dim() const { return static_cast<int>(w0.rows()); }

  void validate() const {
    if (w0.cols() != kLatentDim || w1.rows() != kLatentDim ||
        w1.cols() != kHiddenDim || w2.rows() != kHiddenDim ||
        w2.cols() != kLatentDim)
      throw validation_error("peernn params: weight shapes must be DxK, KxH, HxK");
    if (!w0.allFinite() || !w1.allFinite() || !w2.allFinite())
      throw validation_error("peernn params: non-finite weight entries");
  }
};

struct Hyper {
  double mu = 0.2;      // weight on Var
  double kappa = 0.3;   // weight on the homophily penalty
  double lambda = 0.3;  // weight on the transitivity penalty
};

struct LossReport {
  double bias_sq = 0.0;
  double var = 0.0;
  double homophily = 0.0;
  double transitivity = 0.0;
  double total = 0.0;
  Hyper hyper;
};

// One classroom's training matrices in roster order.
struct ClassData {
  int class_id = -1;
  Matrix x;       // N x D features
  Matrix traits;  // N x Q own-trait matrix A_s
  Matrix ard;     // N x Q survey responses A_f
  IntVector num_friends;  // B per student
  Vector z;
  std::vector<int> student_ids;
  std::vector<int> genders;

  int n() const { return static_cast<int>(x.rows()); }
};

inline ClassData class_data(const Cohort& cohort, const Classroom& cls) {
  const auto roster = detail::roster_students(cohort, cls);
  const int n = cls.n();
  const int d = cohort.feature_dim();
  ClassData out;
  out.class_id = cls.class_id;
  out.x = Matrix::Zero(n, d);
  out.traits = Matrix::Zero(n, kNumTraits);
  out.ard = Matrix::Zero(n, kNumTraits);
  out.num_friends = IntVector::Zero(n);
  out.z = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    const Student& s = *roster[i];
    out.x.row(i) = s.features.transpose();
    for (int q = 0; q < kNumTraits; ++q) {
      out.traits(i, q) = s.traits[q];
      out.ard(i, q) = s.ard[q];
    }
    out.num_friends[i] = s.num_friends;
    out.z[i] = s.z;
    out.student_ids.push_back(s.id);
    out.genders.push_back(s.gender);
  }
  return out;
}

inline std::vector<ClassData> split_data(const Cohort& cohort, Split split) {
  std::vector<ClassData> out;
  for (const auto* cls : cohort.classrooms_of(split)) out.push_back(class_data(cohort, *cls));
  return out;
}

// Row softmax with the diagonal excluded from both max and sum, so the
// self-choice probability is exactly zero without materializing -inf.
inline OmegaMatrix masked_row_softmax(const Matrix& upsilon) {
  const int n = static_cast<int>(upsilon.rows());
  if (n != upsilon.cols() || n < 2)
    throw validation_error("masked_row_softmax: need square input with N >= 2");
  OmegaMatrix omega;
  omega.p = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (!std::isfinite(upsilon(i, j)))
        throw numeric_error("masked_row_softmax: non-finite utility at (" +
                            std::to_string(i) + "," + std::to_string(j) + ")");
      m = std::max(m, upsilon(i, j));
    }
    double denom = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) denom += std::exp(upsilon(i, j) - m);
    for (int j = 0; j < n; ++j)
      if (j != i) omega.p(i, j) = std::exp(upsilon(i, j) - m) / denom;
  }
  return omega;
}

// All intermediate stages of one forward pass (kept for backpropagation).
struct ForwardPass {
  Matrix sigma;      // N x K latent profiles, relu(X W0)
  Matrix hidden_pre; // N x H before relu
  Matrix hidden;     // N x H
  Matrix delta_pre;  // N x K before relu
  Matrix delta;      // N x K preference profiles
  Matrix upsilon;    // N x N linearized propensity scores
  OmegaMatrix omega;
};

namespace detail {

inline ForwardPass forward_stages(const PeerNNParams& params, const Matrix& x,
                                  int min_n) {
  params.validate();
  if (x.cols() != params.feature_dim())
    throw validation_error("forward: feature dimension " + std::to_string(x.cols()) +
                           " does not match params D " +
                           std::to_string(params.feature_dim()));
  if (x.rows() < min_n)
    throw validation_error("forward: classroom size " + std::to_string(x.rows()) +
                           " below required " + std::to_string(min_n));
  if (!x.allFinite()) throw numeric_error("forward: non-finite feature input");
  ForwardPass f;
  f.sigma = (x * params.w0).cwiseMax(0.0);
  f.hidden_pre = f.sigma * params.w1;
  f.hidden = f.hidden_pre.cwiseMax(0.0);
  f.delta_pre = f.hidden * params.w2;
  f.delta = f.delta_pre.cwiseMax(0.0);
  f.upsilon = f.delta * f.sigma.transpose();
  if (!f.upsilon.allFinite())
    throw numeric_error("forward: non-finite propensity score (outer-product stage)");
  f.omega = masked_row_softmax(f.upsilon);
  return f;
}

}  // namespace detail

// Training-time forward pass; transitivity downstream requires N >= 3.
inline ForwardPass forward(const PeerNNParams& params, const Matrix& x) {
  return detail::forward_stages(params, x, 3);
}

// Prediction-only pass (counterfactual classrooms may have N = 2).
inline OmegaMatrix predict_omega(const PeerNNParams& params, const Matrix& x,
                                 int class_id = -1) {
  OmegaMatrix omega = detail::forward_stages(params, x, 2).omega;
  omega.class_id = class_id;
  return omega;
}

inline OmegaMatrix predict_omega(const PeerNNParams& params, const ClassData& cls) {
  return predict_omega(params, cls.x, cls.class_id);
}

// Covariance of the with-replacement friend-count vector V_i under B draws
// from omega_row: diag B p (1-p), off-diagonal -B p_j p_k.
inline Matrix multinomial_covariance(const Vector& omega_row, int B) {
  const int n = static_cast<int>(omega_row.size());
  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    const double p = omega_row[j];
    if (!(p >= 0.0 && p <= 1.0))
      throw validation_error("multinomial_covariance: entry outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw validation_error("multinomial_covariance: probabilities sum to " +
                           format_double(sum));
  if (B < 0) throw validation_error("multinomial_covariance: negative B");
  return double(B) *
         (Matrix(omega_row.asDiagonal()) - omega_row * omega_row.transpose());
}

namespace detail {

inline void require_class_shapes(const OmegaMatrix& omega, const Matrix& a_s,
                                 const Matrix* a_f, const IntVector& b,
                                 const char* who) {
  const int n = omega.n();
  if (omega.p.cols() != n)
    throw validation_error(std::string(who) + ": omega not square");
  if (a_s.rows() != n || a_s.cols() != kNumTraits)
    throw validation_error(std::string(who) + ": A_s must be Nx" +
                           std::to_string(kNumTraits));
  if (a_f && (a_f->rows() != n || a_f->cols() != kNumTraits))
    throw validation_error(std::string(who) + ": A_f must be Nx" +
                           std::to_string(kNumTraits));
  if (b.size() != n)
    throw validation_error(std::string(who) + ": B vector length mismatch");
}

}  // namespace detail

// Mean squared deviation of the linearized expected response from the
// observed ARD response, averaged over (student, question) cells.
inline double loss_bias_sq(const OmegaMatrix& omega, const Matrix& a_s,
                           const Matrix& a_f, const IntVector& b) {
  detail::require_class_shapes(omega, a_s, &a_f, b, "loss_bias_sq");
  const int n = omega.n();
  const Matrix p = omega.p * a_s;  // expected trait counts
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const int bi = b[i];
    if (bi < 1 || bi > 5)
      throw validation_error("loss_bias_sq: B outside 1..5");
    const double a = GCoefficients::slopes[bi - 1];
    const double c = GCoefficients::intercepts[bi - 1];
    acc += (a * p.row(i).array() + c - a_f.row(i).array()).square().sum();
  }
  return acc / (double(n) * kNumTraits);
}

// Sampling variance of the linearized response under with-replacement draws,
// averaged over (student, question) cells.
inline double loss_variance(const OmegaMatrix& omega, const Matrix& a_s,
                            const IntVector& b) {
  detail::require_class_shapes(omega, a_s, nullptr, b, "loss_variance");
  const int n = omega.n();
  const Matrix p = omega.p * a_s;
  const Matrix s2 = omega.p * a_s.cwiseProduct(a_s);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const int bi = b[i];
    if (bi < 1 || bi > 5)
      throw validation_error("loss_variance: B outside 1..5");
    const double a = GCoefficients::slopes[bi - 1];
    acc += a * a * bi * (s2.row(i).array() - p.row(i).array().square()).sum();
  }
  return acc / (double(n) * kNumTraits);
}

// || Omega sigma - sigma ||_F^2: friends' mean latent profile should resemble
// one's own.
inline double homophily_penalty(const OmegaMatrix& omega, const Matrix& sigma) {
  if (sigma.rows() != omega.n())
    throw validation_error("homophily_penalty: sigma row count mismatch");
  return (omega.p * sigma - sigma).squaredNorm();
}

// || Omega - renormalized two-step reachability ||_F^2.  The inner inverse is
// of a diagonal matrix, so it is an elementwise reciprocal of 1 - diag(ΩΩ).
inline double transitivity_penalty(const OmegaMatrix& omega) {
  const int n = omega.n();
  if (n < 3) throw validation_error("transitivity_penalty: need N >= 3");
  const Matrix m = omega.p * omega.p;
  Matrix r = m;
  for (int i = 0; i < n; ++i) {
    const double d = m(i, i);
    if (d >= 1.0 - 1e-9)
      throw numeric_error("transitivity_penalty: diag(OmegaOmega) entry " +
                          format_double(d) + " too close to 1 at row " +
                          std::to_string(i));
    r.row(i) /= (1.0 - d);
    r(i, i) = 0.0;
  }
  return (omega.p - r).squaredNorm();
}

// Loss summed over classrooms; total respects the LossReport identity.
inline LossReport total_loss(const PeerNNParams& params,
                             const std::vector<ClassData>& classes,
                             const Hyper& hyper) {
  LossReport rep;
  rep.hyper = hyper;
  for (const auto& cls : classes) {
    const ForwardPass f = forward(params, cls.x);
    rep.bias_sq += loss_bias_sq(f.omega, cls.traits, cls.ard, cls.num_friends);
    rep.var += loss_variance(f.omega, cls.traits, cls.num_friends);
    rep.homophily += homophily_penalty(f.omega, f.sigma);
    rep.transitivity += transitivity_penalty(f.omega);
  }
  rep.total = rep.bias_sq + hyper.mu * rep.var + hyper.kappa * rep.homophily +
              hyper.lambda * rep.transitivity;
  return rep;
}

struct ParamGradients {
  Matrix w0, w1, w2;
};

// Reverse-mode gradient of total_loss through all four terms, the masked
// softmax, the outer product, and the relu MLP (relu subgradient at 0 is 0).
inline ParamGradients gradient(const PeerNNParams& params,
                               const std::vector<ClassData>& classes,
                               const Hyper& hyper) {
  ParamGradients g{Matrix::Zero(params.w0.rows(), params.w0.cols()),
                   Matrix::Zero(params.w1.rows(), params.w1.cols()),
                   Matrix::Zero(params.w2.rows(), params.w2.cols())};
  for (const auto& cls : classes) {
    const ForwardPass f = forward(params, cls.x);
    const int n = f.omega.n();
    const Matrix& om = f.omega.p;
    const double nq = double(n) * kNumTraits;

    // ARD terms.
    const Matrix p = om * cls.traits;
    const Matrix u = cls.traits.cwiseProduct(cls.traits);  // squared traits
    Vector slope(n), inter(n);
    for (int i = 0; i < n; ++i) {
      const int bi = cls.num_friends[i];
      if (bi < 1 || bi > 5) throw validation_error("gradient: B outside 1..5");
      slope[i] = GCoefficients::slopes[bi - 1];
      inter[i] = GCoefficients::intercepts[bi - 1];
    }

    Matrix g_omega = Matrix::Zero(n, n);

    // Bias^2: residual R_iq = slope_i P_iq + inter_i - A_f_iq.
    {
      Matrix res = (p.array().colwise() * slope.array()).matrix();
      res.array().colwise() += inter.array();
      res -= cls.ard;
      const Matrix gp =
          (2.0 / nq) * (res.array().colwise() * slope.array()).matrix();
      g_omega += gp * cls.traits.transpose();
    }

    // Var: (1/NQ) sum_i c_i sum_q (S2_iq - P_iq^2), c_i = slope_i^2 B_i.
    {
      Vector c(n);
      for (int i = 0; i < n; ++i)
        c[i] = slope[i] * slope[i] * double(cls.num_friends[i]);
      const Vector usum = u.rowwise().sum();  // u_j = sum_q A_sjq^2
      Matrix gv = (-2.0) * (p * cls.traits.transpose());
      gv.rowwise() += usum.transpose();
      gv.array().colwise() *= c.array() / nq;
      g_omega += hyper.mu * gv;
    }

    // Homophily: E_H = Omega sigma - sigma.
    Matrix g_sigma = Matrix::Zero(n, f.sigma.cols());
    {
      const Matrix eh = om * f.sigma - f.sigma;
      g_omega += hyper.kappa * 2.0 * eh * f.sigma.transpose();
      g_sigma += hyper.kappa * (2.0 * om.transpose() * eh - 2.0 * eh);
    }

    // Transitivity: E = Omega - R with R the renormalized ΩΩ.
    {
      const Matrix m = om * om;
      Vector q(n);
      Matrix r = m;
      for (int i = 0; i < n; ++i) {
        const double d = m(i, i);
        if (d >= 1.0 - 1e-9)
          throw numeric_error("gradient: transitivity denominator vanished at row " +
                              std::to_string(i));
        q[i] = 1.0 / (1.0 - d);
        r.row(i) *= q[i];
        r(i, i) = 0.0;
      }
      const Matrix e = om - r;
      Matrix gm = Matrix::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        double diag = 0.0;
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          gm(i, j) = -2.0 * e(i, j) * q[i];
          diag += -2.0 * e(i, j) * m(i, j);
        }
        gm(i, i) = diag * q[i] * q[i];
      }
      g_omega += hyper.lambda *
                 (2.0 * e + gm * om.transpose() + om.transpose() * gm);
    }

    // Softmax backward (diagonal is structural, not a variable).
    Matrix g_ups(n, n);
    for (int i = 0; i < n; ++i) {
      const double dot = g_omega.row(i).dot(om.row(i));
      for (int j = 0; j < n; ++j)
        g_ups(i, j) = om(i, j) * (g_omega(i, j) - dot);
    }

    // Outer product and MLP backward.
    Matrix g_delta = g_ups * f.sigma;
    g_sigma += g_ups.transpose() * f.delta;

    const Matrix g_delta_pre =
        g_delta.cwiseProduct((f.delta_pre.array() > 0.0).cast<double>().matrix());
    g.w2 += f.hidden.transpose() * g_delta_pre;
    const Matrix g_hidden = g_delta_pre * params.w2.transpose();
    const Matrix g_hidden_pre =
        g_hidden.cwiseProduct((f.hidden_pre.array() > 0.0).cast<double>().matrix());
    g.w1 += f.sigma.transpose() * g_hidden_pre;
    g_sigma += g_hidden_pre * params.w1.transpose();
    const Matrix sigma_pre = cls.x * params.w0;
    const Matrix g_sigma_pre =
        g_sigma.cwiseProduct((sigma_pre.array() > 0.0).cast<double>().matrix());
    g.w0 += cls.x.transpose() * g_sigma_pre;

    if (!g.w0.allFinite() || !g.w1.allFinite() || !g.w2.allFinite())
      throw numeric_error("gradient: non-finite accumulation at classroom " +
                          std::to_string(cls.class_id));
  }
  return g;
}

struct OptConfig {
  double step = 1e-4;
  int epochs = 3000;
  std::uint64_t seed = 7;
  double init_scale = 1.2;  // base half-width of the uniform weight init

  void validate() const {
    if (!(step > 0.0)) throw validation_error("opt: step must be positive");
    if (epochs < 0) throw validation_error("opt: negative epoch count");
    if (!(init_scale >= 0.0)) throw validation_error("opt: negative init scale");
  }
};

struct TrainResult {
  PeerNNParams params;
  std::vector<LossReport> history;  // entry 0 is the initialization loss
};

// The first feature column is the binary group indicator by schema (x1 =
// gender), and its weight row is drawn wider than the rest.
constexpr double kLeadFeatureInitBoost = 4.0;

// Initialization is the one real degree of freedom in fixed-step descent, and
// it decides which basin training finds.  Two choices matter here:
//  - W0's lead row is boosted so the latent vectors start group-separated;
//  - the square hidden layers start at identity plus noise, so delta ~ sigma
//    and the initial propensities form a similarity kernel sigma sigma^T.
// Together these make the homophily penalty contract rows of Omega toward
// same-group classmates instead of flattening sigma into the degenerate
// uniform-Omega solution (all-ReLU stacks with nonnegative inputs reach that
// collapse from generic small inits, and fixed-step descent cannot escape it).
inline PeerNNParams init_params(int feature_dim, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  PeerNNParams p;
  p.w0 = Matrix::Zero(feature_dim, kLatentDim);
  p.w1 = Matrix::Zero(kLatentDim, kHiddenDim);
  p.w2 = Matrix::Zero(kHiddenDim, kLatentDim);
  for (int i = 0; i < p.w0.rows(); ++i) {
    const double half = (i == 0 ? kLeadFeatureInitBoost : 1.0) * scale;
    for (int j = 0; j < p.w0.cols(); ++j) p.w0(i, j) = half * unif(rng);
  }
  for (int i = 0; i < p.w1.rows(); ++i)
    for (int j = 0; j < p.w1.cols(); ++j)
      p.w1(i, j) = (i == j ? 1.0 : 0.0) + scale / 10.0 * unif(rng);
  for (int i = 0; i < p.w2.rows(); ++i)
    for (int j = 0; j < p.w2.cols(); ++j)
      p.w2(i, j) = (i == j ? 1.0 : 0.0) + scale / 10.0 * unif(rng);
  return p;
}

// Full-batch fixed-step gradient descent; deterministic given the seed.
inline TrainResult train(const std::vector<ClassData>& classes, const Hyper& hyper,
                         const OptConfig& opt) {
  opt.validate();
  if (classes.empty()) throw validation_error("train: no classrooms");
  const int d = static_cast<int>(classes.front().x.cols());
  TrainResult result;
  result.params = init_params(d, opt.init_scale, opt.seed);
  result.history.push_back(total_loss(result.params, classes, hyper));
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    const ParamGradients g = gradient(result.params, classes, hyper);
    result.params.w0 -= opt.step * g.w0;
    result.params.w1 -= opt.step * g.w1;
    result.params.w2 -= opt.step * g.w2;
    const LossReport rep = total_loss(result.params, classes, hyper);
    if (!std::isfinite(rep.total))
      throw numeric_error("train: loss diverged at epoch " + std::to_string(epoch));
    result.history.push_back(rep);
  }
  return result;
}

// Convenience overload: trains on the cohort's train-split classrooms.
inline TrainResult train(const Cohort& cohort, const Hyper& hyper,
                         const OptConfig& opt) {
  return train(split_data(cohort, Split::train), hyper, opt);
}

}  // namespace peerlab
