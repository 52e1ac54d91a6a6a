#include "peerlab/peereffect.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracle_helpers.hpp"

using namespace peerlab;
using Catch::Matchers::WithinAbs;

namespace {

std::map<int, Matrix> realized_omegas(const Cohort& cohort, const GroundTruth& gt,
                                      Split split) {
  std::map<int, Matrix> m;
  for (const auto* cls : cohort.classrooms_of(split))
    m[cls->class_id] = realized_friendship_matrix(gt, *cls);
  return m;
}

std::map<int, Matrix> uniform_omegas(const Cohort& cohort, Split split) {
  std::map<int, Matrix> m;
  for (const auto* cls : cohort.classrooms_of(split)) {
    const int n = cls->n();
    Matrix u = Matrix::Constant(n, n, 1.0 / (n - 1));
    u.diagonal().setZero();
    m[cls->class_id] = u;
  }
  return m;
}

SynthConfig estimation_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_schools = 12;
  cfg.class_size_min = 12;
  cfg.class_size_max = 16;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("design construction on a hand-built cohort") {
  const Cohort cohort = oracles::tiny_cohort();
  std::map<int, Matrix> omegas;
  Matrix om1(3, 3);
  om1 << 0, 0.7, 0.3, 0.2, 0, 0.8, 0.5, 0.5, 0;
  Matrix om2 = Matrix::Constant(3, 3, 0.5);
  om2.diagonal().setZero();
  omegas[1] = om1;
  omegas[2] = om2;
  const RegressionDesign d = build_design(cohort, omegas, Split::train);

  REQUIRE(d.n() == 6);
  REQUIRE(d.student_ids == std::vector<int>{1, 2, 3, 4, 5, 6});
  // class 1: z = (0.25, 0.5, 0.75)
  CHECK_THAT(d.endogenous[0], WithinAbs(0.7 * 0.5 + 0.3 * 0.75, 1e-15));
  CHECK_THAT(d.endogenous[1], WithinAbs(0.2 * 0.25 + 0.8 * 0.75, 1e-15));
  CHECK_THAT(d.endogenous[2], WithinAbs(0.5 * 0.25 + 0.5 * 0.5, 1e-15));
  CHECK_THAT(d.instrument[0], WithinAbs(0.625, 1e-15));
  CHECK_THAT(d.instrument[1], WithinAbs(0.5, 1e-15));
  CHECK_THAT(d.instrument[2], WithinAbs(0.375, 1e-15));
  // class 2 is uniform, so both peer columns coincide
  for (int r = 3; r < 6; ++r)
    CHECK_THAT(d.endogenous[r], WithinAbs(d.instrument[r], 1e-15));
  // single school: no dummies, eight regressors total
  REQUIRE(d.school_dummies.cols() == 0);
  const Matrix x = d.regressors(d.endogenous);
  REQUIRE(x.cols() == 8);
  REQUIRE(d.regressor_names("peer_rank") ==
          std::vector<std::string>{"peer_rank", "own_z", "age", "sex", "f_edu",
                                   "m_edu", "ethnic", "intercept"});
  REQUIRE(d.class_index == std::vector<int>{0, 0, 0, 1, 1, 1});

  SECTION("missing or misshapen omegas are rejected") {
    std::map<int, Matrix> missing{{1, om1}};
    REQUIRE_THROWS_WITH(build_design(cohort, missing, Split::train),
                        Catch::Matchers::ContainsSubstring("classroom 2"));
    std::map<int, Matrix> wrong{{1, om1}, {2, Matrix::Zero(4, 4)}};
    REQUIRE_THROWS_WITH(build_design(cohort, wrong, Split::train),
                        Catch::Matchers::ContainsSubstring("shape"));
    REQUIRE_THROWS_AS(build_design(cohort, omegas, Split::test),
                      validation_error);
  }
}

TEST_CASE("least squares basics") {
  std::mt19937_64 rng(201);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int n = 24;
  Matrix x(n, 3);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = nd(rng);
    x(i, 1) = nd(rng);
    x(i, 2) = 1.0;
  }
  const std::vector<std::string> names{"a", "b", "intercept"};

  SECTION("exact coefficients on a noiseless target") {
    const Vector y = 2.0 * x.col(0) - 1.5 * x.col(1) + 0.25 * x.col(2);
    const OlsFit fit = ols(y, x, names);
    CHECK_THAT(fit.coef[0], WithinAbs(2.0, 1e-10));
    CHECK_THAT(fit.coef[1], WithinAbs(-1.5, 1e-10));
    CHECK_THAT(fit.coef[2], WithinAbs(0.25, 1e-10));
    REQUIRE(fit.rss < 1e-20);
    REQUIRE_THAT(fit.r2, WithinAbs(1.0, 1e-12));
  }
  SECTION("residuals are orthogonal to the regressors") {
    Vector y(n);
    for (int i = 0; i < n; ++i) y[i] = nd(rng);
    const OlsFit fit = ols(y, x, names);
    REQUIRE((x.transpose() * fit.resid).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE(fit.sigma2 > 0.0);
    REQUIRE(fit.se.minCoeff() > 0.0);
  }
  SECTION("rank deficiency names the collinear column") {
    Matrix xx(n, 4);
    xx << x, x.col(0);
    try {
      ols(x.col(0), xx, {"a", "b", "intercept", "a_again"});
      FAIL("expected a rank-deficiency error");
    } catch (const estimation_error& e) {
      REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("collinear"));
    }
  }
  SECTION("more columns than rows is rejected") {
    REQUIRE_THROWS_AS(ols(Vector::Zero(2), Matrix::Zero(2, 3), names),
                      estimation_error);
  }
}

TEST_CASE("uniform network reproduces the instrument exactly") {
  const auto [cohort, gt] = synth_cohort(estimation_config(211));
  const RegressionDesign d =
      build_design(cohort, uniform_omegas(cohort, Split::train), Split::train);
  REQUIRE((d.endogenous - d.instrument).cwiseAbs().maxCoeff() < 1e-14);

  const FirstStage fs = first_stage(d);
  CHECK_THAT(fs.pi1, WithinAbs(1.0, 1e-10));
  REQUIRE((fs.fitted - d.endogenous).cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE(fs.f_stat > 1e6);  // essentially a perfect fit

  // With a perfect first stage the IV estimate equals linear-in-means.
  const IVEstimate iv = two_stage_iv(d, false);
  const IVEstimate lim = linear_in_means(d, false);
  CHECK_THAT(iv.beta, WithinAbs(lim.beta, 1e-10));
  REQUIRE(iv.method == "2SLS");
  REQUIRE(lim.method == "LIM");
}

TEST_CASE("noiseless outcomes recover the true coefficient exactly") {
  SynthConfig cfg = estimation_config(221);
  cfg.sigma_eps = 0.0;
  cfg.sigma_mu = 0.0;
  cfg.confounder_strength = 0.0;
  const auto [cohort, gt] = synth_cohort(cfg);
  const RegressionDesign d =
      build_design(cohort, realized_omegas(cohort, gt, Split::train), Split::train);

  const IVEstimate iv = two_stage_iv(d, false);
  const IVEstimate naive = direct_ols(d);
  CHECK_THAT(iv.beta, WithinAbs(cfg.beta_true, 1e-8));
  CHECK_THAT(naive.beta, WithinAbs(cfg.beta_true, 1e-8));
  REQUIRE(naive.method == "OLS");
  // The outcome equation holds exactly, so the control coefficients surface.
  // Regressor order: peer, own_z, age, sex, f_edu, m_edu, ethnic, ...
  CHECK_THAT(naive.coef[2], WithinAbs(gt.control_coeffs[0], 1e-8));  // age
  CHECK_THAT(naive.coef[4], WithinAbs(gt.control_coeffs[1], 1e-8));  // f_edu
  CHECK_THAT(naive.coef[5], WithinAbs(gt.control_coeffs[2], 1e-8));  // m_edu
  CHECK_THAT(naive.coef[6], WithinAbs(gt.control_coeffs[3], 1e-8));  // ethnic
  CHECK_THAT(naive.coef[1], WithinAbs(0.0, 1e-8));  // own z plays no direct role
  CHECK_THAT(naive.coef[3], WithinAbs(0.0, 1e-8));  // nor does gender
}

TEST_CASE("confounded cohorts bias naive estimation") {
  // One frozen draw: ability loads on the outcome and on friend choice, so
  // regressing directly on the realized peer rank overstates the effect,
  // while instrumenting pulls it back toward the truth.
  const auto [cohort, gt] = synth_cohort(estimation_config(231));
  const RegressionDesign d =
      build_design(cohort, realized_omegas(cohort, gt, Split::train), Split::train);
  const IVEstimate naive = direct_ols(d);
  const IVEstimate iv = two_stage_iv(d, false);
  REQUIRE(naive.beta - gt.beta_true > 0.25);
  REQUIRE(std::abs(iv.beta - gt.beta_true) < std::abs(naive.beta - gt.beta_true));
}

TEST_CASE("weak instruments are refused") {
  const auto [cohort, gt] = synth_cohort(estimation_config(241));
  RegressionDesign d =
      build_design(cohort, realized_omegas(cohort, gt, Split::train), Split::train);
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < d.n(); ++i) d.endogenous[i] = nd(rng);
  try {
    two_stage_iv(d, false);
    FAIL("expected a weak-instrument error");
  } catch (const estimation_error& e) {
    REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("weak instrument"));
  }
}

TEST_CASE("collinear peer columns are refused") {
  const auto [cohort, gt] = synth_cohort(estimation_config(251));
  RegressionDesign d =
      build_design(cohort, realized_omegas(cohort, gt, Split::train), Split::train);
  d.instrument = d.controls.col(0);  // duplicates own_z in the first stage
  try {
    first_stage(d);
    FAIL("expected a collinearity error");
  } catch (const estimation_error& e) {
    REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("collinear"));
  }
}

TEST_CASE("undersized designs are refused") {
  const Cohort cohort = oracles::tiny_cohort();  // 6 rows, 8 regressors
  const RegressionDesign d =
      build_design(cohort, uniform_omegas(cohort, Split::train), Split::train);
  REQUIRE_THROWS_AS(direct_ols(d), estimation_error);
}

TEST_CASE("random effect vanishes when classrooms share no intercept") {
  SynthConfig cfg = estimation_config(261);
  cfg.sigma_mu = 0.0;
  const auto [cohort, gt] = synth_cohort(cfg);
  const RegressionDesign d =
      build_design(cohort, realized_omegas(cohort, gt, Split::train), Split::train);
  const IVEstimate re = two_stage_iv(d, true);
  const IVEstimate plain = two_stage_iv(d, false);
  REQUIRE(std::abs(re.beta - plain.beta) < 1e-3);
  REQUIRE(re.sigma2_mu < 1e-4);
  REQUIRE(re.method == "2SLS+RE");
}

TEST_CASE("profiled likelihood is an actual maximum") {
  SynthConfig cfg;
  cfg.num_schools = 6;
  cfg.class_size_min = 8;
  cfg.class_size_max = 10;
  cfg.sigma_mu = 0.4;  // make the random effect matter
  cfg.seed = 271;
  const auto [cohort, gt] = synth_cohort(cfg);
  const RegressionDesign d =
      build_design(cohort, realized_omegas(cohort, gt, Split::train), Split::train);
  const Vector y = d.y;
  const Matrix x = d.regressors(d.endogenous);
  const ReFit fit = random_effects_mle(y, x, d.class_index);

  // Dense-algebra likelihood at the reported optimum agrees with the fit...
  const double at_hat = oracles::re_profile_loglik(y, x, d.class_index, fit.psi);
  REQUIRE_THAT(at_hat, WithinAbs(fit.loglik, 1e-6));
  // ...and no probed ratio beats it.
  for (double psi : {std::exp(-12.0), 1e-3, 0.1, fit.psi * 0.5, fit.psi * 2.0,
                     1.0, 10.0, std::exp(12.0)})
    REQUIRE(oracles::re_profile_loglik(y, x, d.class_index, psi) <=
            fit.loglik + 1e-6);
  REQUIRE_THAT(fit.sigma2_mu, WithinAbs(fit.psi * fit.sigma2_eps, 1e-12));
}

TEST_CASE("outcome shifts move only the intercept") {
  const auto [cohort, gt] = synth_cohort(estimation_config(281));
  RegressionDesign d =
      build_design(cohort, realized_omegas(cohort, gt, Split::train), Split::train);
  const IVEstimate base = two_stage_iv(d, false);
  d.y.array() += 5.0;
  const IVEstimate shifted = two_stage_iv(d, false);
  CHECK_THAT(shifted.beta, WithinAbs(base.beta, 1e-10));
  const auto names = d.regressor_names("peer_rank");
  const auto it = std::find(names.begin(), names.end(), "intercept");
  REQUIRE(it != names.end());
  const int k = static_cast<int>(it - names.begin());
  CHECK_THAT(shifted.coef[k] - base.coef[k], WithinAbs(5.0, 1e-10));
}
