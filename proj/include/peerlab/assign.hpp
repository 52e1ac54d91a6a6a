#pragma once

// Classroom assignment search: partitions one school's students into two
// classrooms under gender-ratio and size-parity constraints, scoring
// partitions by predicted mean peer effect (GA) optionally penalized by
// within- and across-classroom dispersion (AFGA).  Single-chain genetic
// algorithm with mutation and best-of-M crossover, plus an exhaustive oracle
// for small schools.

#include "peerlab/cohort.hpp"
#include "peerlab/common.hpp"
#include "peerlab/peernn.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace peerlab {

// One school's students pooled for reassignment (roster order by class).
struct SchoolPool {
  int school_id = -1;
  std::vector<int> ids;
  Matrix x;  // pooled features, rows aligned with ids
  Vector z;
  std::vector<int> gender;
  int n_boys = 0;
  int n_girls = 0;
  int minority_gender = 0;  // 0 = girls (also on ties), 1 = boys

  int n() const { return static_cast<int>(ids.size()); }
  int minority_total() const { return minority_gender == 1 ? n_boys : n_girls; }
};

inline SchoolPool school_pool(const Cohort& cohort, int school_id) {
  SchoolPool pool;
  pool.school_id = school_id;
  const School& school = cohort.school(school_id);
  std::vector<const Student*> members;
  for (int cid : school.class_ids) {
    const Classroom& cls = cohort.classroom(cid);
    for (const auto* s : detail::roster_students(cohort, cls)) members.push_back(s);
  }
  const int n = static_cast<int>(members.size());
  if (n < 4) throw validation_error("school_pool: need at least 4 students");
  pool.x = Matrix::Zero(n, cohort.feature_dim());
  pool.z = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    pool.ids.push_back(members[i]->id);
    pool.x.row(i) = members[i]->features.transpose();
    pool.z[i] = members[i]->z;
    pool.gender.push_back(members[i]->gender);
    members[i]->gender ? ++pool.n_boys : ++pool.n_girls;
  }
  pool.minority_gender = pool.n_boys < pool.n_girls ? 1 : 0;
  return pool;
}

struct Assignment {
  std::vector<int> c1, c2;  // sorted student ids
  bool feasible = false;
};

// Gender-ratio band on the minority gender: the count in classroom 1 must be
// between 35% and 65% of that gender's school total.  Integer arithmetic
// avoids ties being decided by floating-point rounding.
inline bool check_gender_band(int minority_in_c1, int n_minority) {
  return 100 * minority_in_c1 >= 35 * n_minority &&
         100 * minority_in_c1 <= 65 * n_minority;
}

// Band test on an explicit partition; j picks the minority gender whose
// count is constrained.
inline bool check(const std::vector<int>& c1, const std::vector<int>& /*c2*/,
                  int n_boys, int n_girls, int minority_gender,
                  const SchoolPool& pool) {
  int count = 0;
  for (int id : c1) {
    const auto it = std::find(pool.ids.begin(), pool.ids.end(), id);
    if (it == pool.ids.end())
      throw validation_error("check: id " + std::to_string(id) + " not in school");
    if (pool.gender[it - pool.ids.begin()] == minority_gender) ++count;
  }
  return check_gender_band(count, minority_gender == 1 ? n_boys : n_girls);
}

struct SwapPair {
  int from_c1 = -1;
  int from_c2 = -1;
  bool is_null() const { return from_c1 < 0 && from_c2 < 0; }
  static SwapPair null() { return {}; }
};

// Exchanges one student from each classroom; the null pair is the identity.
inline std::pair<std::vector<int>, std::vector<int>> swap_students(
    std::vector<int> c1, std::vector<int> c2, const SwapPair& cp) {
  if (cp.is_null()) return {std::move(c1), std::move(c2)};
  auto i1 = std::find(c1.begin(), c1.end(), cp.from_c1);
  auto i2 = std::find(c2.begin(), c2.end(), cp.from_c2);
  if (i1 == c1.end())
    throw validation_error("swap: id " + std::to_string(cp.from_c1) +
                           " not in classroom 1");
  if (i2 == c2.end())
    throw validation_error("swap: id " + std::to_string(cp.from_c2) +
                           " not in classroom 2");
  std::swap(*i1, *i2);
  std::sort(c1.begin(), c1.end());
  std::sort(c2.begin(), c2.end());
  return {std::move(c1), std::move(c2)};
}

enum class FitnessKind { ga, afga };

struct GAConfig {
  int iters = 150;        // L
  int swaps = 100;        // M candidate pairs per crossover
  double mut_prob = 0.05;
  double phi = 1.0;  // within-classroom dispersion weight
  double rho = 1.0;  // across-classroom dispersion weight
  std::uint64_t seed = 0;
  FitnessKind kind = FitnessKind::ga;

  void validate() const {
    if (iters < 1 || swaps < 1) throw validation_error("ga: iters and swaps must be >= 1");
    if (!(mut_prob >= 0.0 && mut_prob <= 1.0))
      throw validation_error("ga: mutation probability outside [0,1]");
    if (phi < 0.0 || rho < 0.0) throw validation_error("ga: negative fairness weight");
  }
};

// Decomposed fitness: mean predicted peer effect, summed within-classroom
// SDs, and the across-classroom SD (sample SDs, N-1 denominator).
struct FitnessParts {
  double mean_term = 0.0;
  double within_sd = 0.0;
  double across_sd = 0.0;

  double value(FitnessKind kind, double phi, double rho) const {
    return kind == FitnessKind::ga
               ? mean_term
               : mean_term - phi * within_sd - rho * across_sd;
  }
};

namespace detail {

inline std::vector<int> pool_positions(const SchoolPool& pool,
                                       const std::vector<int>& ids) {
  std::vector<int> pos;
  pos.reserve(ids.size());
  for (int id : ids) {
    const auto it = std::find(pool.ids.begin(), pool.ids.end(), id);
    if (it == pool.ids.end())
      throw validation_error("assign: id " + std::to_string(id) + " not in school");
    pos.push_back(static_cast<int>(it - pool.ids.begin()));
  }
  return pos;
}

// Predicted per-student peer effects beta * (Omega z) for one candidate
// classroom given as pool positions.
inline Vector side_peer_effects(const SchoolPool& pool, const std::vector<int>& pos,
                                const PeerNNParams& params, double beta) {
  const int n = static_cast<int>(pos.size());
  if (n < 2) throw validation_error("fitness: classroom needs N >= 2");
  Matrix x(n, pool.x.cols());
  Vector z(n);
  for (int i = 0; i < n; ++i) {
    x.row(i) = pool.x.row(pos[i]);
    z[i] = pool.z[pos[i]];
  }
  const OmegaMatrix omega = predict_omega(params, x);
  return beta * (omega.p * z);
}

}  // namespace detail

inline FitnessParts fitness_parts(const SchoolPool& pool, const std::vector<int>& c1,
                                  const std::vector<int>& c2,
                                  const PeerNNParams& params, double beta) {
  const Vector e1 = detail::side_peer_effects(pool, detail::pool_positions(pool, c1),
                                              params, beta);
  const Vector e2 = detail::side_peer_effects(pool, detail::pool_positions(pool, c2),
                                              params, beta);
  FitnessParts parts;
  parts.mean_term = (e1.sum() + e2.sum()) / double(e1.size() + e2.size());
  parts.within_sd = sample_sd(e1) + sample_sd(e2);
  Vector all(e1.size() + e2.size());
  all << e1, e2;
  parts.across_sd = sample_sd(all);
  return parts;
}

// Mean predicted peer effect across both candidate classrooms.
inline double fitness_ga(const SchoolPool& pool, const std::vector<int>& c1,
                         const std::vector<int>& c2, const PeerNNParams& params,
                         double beta) {
  return fitness_parts(pool, c1, c2, params, beta).mean_term;
}

// GA fitness minus the fairness penalties on dispersion.
inline double fitness_afga(const SchoolPool& pool, const std::vector<int>& c1,
                           const std::vector<int>& c2, const PeerNNParams& params,
                           double beta, double phi, double rho) {
  return fitness_parts(pool, c1, c2, params, beta)
      .value(FitnessKind::afga, phi, rho);
}

namespace detail {

// Uniform feasible ⌊n/2⌋-subset as classroom 1; rejected until the gender
// band holds, with a 10n attempt cap.
inline Assignment feasible_initial(const SchoolPool& pool, std::mt19937_64& rng) {
  const int n = pool.n();
  const int half = n / 2;
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int attempt = 0; attempt < 10 * n; ++attempt) {
    // Partial Fisher-Yates: the first `half` entries are a uniform subset.
    for (int i = 0; i < half; ++i) {
      std::uniform_int_distribution<int> d(i, n - 1);
      std::swap(idx[i], idx[d(rng)]);
    }
    int minority = 0;
    for (int i = 0; i < half; ++i)
      if (pool.gender[idx[i]] == pool.minority_gender) ++minority;
    if (!check_gender_band(minority, pool.minority_total())) continue;
    Assignment a;
    a.feasible = true;
    for (int i = 0; i < n; ++i)
      (i < half ? a.c1 : a.c2).push_back(pool.ids[idx[i]]);
    std::sort(a.c1.begin(), a.c1.end());
    std::sort(a.c2.begin(), a.c2.end());
    return a;
  }
  throw validation_error("assign: no feasible initialization for school " +
                         std::to_string(pool.school_id) + " after " +
                         std::to_string(10 * n) + " attempts");
}

}  // namespace detail

struct GARun {
  std::vector<Assignment> policy_history;  // one entry per iteration
  std::vector<double> fitness_history;
  Assignment initial;
  double initial_fitness = 0.0;
  Assignment best;
  double best_fitness = 0.0;
  int best_iteration = 0;  // 1-based index into the histories
  GAConfig config;
};

// Single-chain GA over two-classroom partitions.  Each iteration either
// mutates (one random feasible swap, applied unconditionally) with
// probability mut_prob, or evaluates M candidate swaps and applies the best
// only if it strictly beats the previous iteration's recorded fitness.
// The returned best is the argmax over the recorded history.
inline GARun run_ga(const SchoolPool& pool, const PeerNNParams& params, double beta,
                    const GAConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Gender lookup by id to avoid repeated linear scans in the loop.
  std::map<int, int> gender_by_id;
  for (int i = 0; i < pool.n(); ++i) gender_by_id[pool.ids[i]] = pool.gender[i];
  auto minority_in = [&](const std::vector<int>& side) {
    int cnt = 0;
    for (int id : side)
      if (gender_by_id.at(id) == pool.minority_gender) ++cnt;
    return cnt;
  };

  GARun run;
  run.config = config;
  auto fitness_of = [&](const std::vector<int>& c1, const std::vector<int>& c2) {
    return fitness_parts(pool, c1, c2, params, beta)
        .value(config.kind, config.phi, config.rho);
  };

  run.initial = detail::feasible_initial(pool, rng);
  run.initial_fitness = fitness_of(run.initial.c1, run.initial.c2);
  std::vector<int> c1 = run.initial.c1, c2 = run.initial.c2;
  double last_fitness = run.initial_fitness;  // FSH[0]

  for (int l = 1; l <= config.iters; ++l) {
    double recorded;
    if (unif(rng) < config.mut_prob) {
      // Mutation: redraw until the swapped partition passes the band.
      const int cap = 1000 * pool.n();
      int attempts = 0;
      for (;;) {
        if (++attempts > cap)
          throw numeric_error("run_ga: mutation could not find a feasible swap");
        std::uniform_int_distribution<int> d1(0, static_cast<int>(c1.size()) - 1);
        std::uniform_int_distribution<int> d2(0, static_cast<int>(c2.size()) - 1);
        const int out_id = c1[d1(rng)];
        const int in_id = c2[d2(rng)];
        int minority = minority_in(c1);
        if (gender_by_id.at(out_id) == pool.minority_gender) --minority;
        if (gender_by_id.at(in_id) == pool.minority_gender) ++minority;
        if (!check_gender_band(minority, pool.minority_total())) continue;
        std::tie(c1, c2) = swap_students(std::move(c1), std::move(c2),
                                         SwapPair{out_id, in_id});
        break;
      }
      recorded = fitness_of(c1, c2);
    } else {
      // Crossover: best of M candidate swaps, applied only on strict
      // improvement over the previous recorded fitness.
      double best_cand = -std::numeric_limits<double>::infinity();
      SwapPair best_pair = SwapPair::null();
      const int base_minority = minority_in(c1);
      for (int m = 0; m < config.swaps; ++m) {
        std::uniform_int_distribution<int> d1(0, static_cast<int>(c1.size()) - 1);
        std::uniform_int_distribution<int> d2(0, static_cast<int>(c2.size()) - 1);
        const int out_id = c1[d1(rng)];
        const int in_id = c2[d2(rng)];
        int minority = base_minority;
        if (gender_by_id.at(out_id) == pool.minority_gender) --minority;
        if (gender_by_id.at(in_id) == pool.minority_gender) ++minority;
        if (!check_gender_band(minority, pool.minority_total())) continue;
        auto [cand1, cand2] =
            swap_students(c1, c2, SwapPair{out_id, in_id});
        const double f = fitness_of(cand1, cand2);
        if (f > best_cand) {
          best_cand = f;
          best_pair = SwapPair{out_id, in_id};
        }
      }
      if (!best_pair.is_null() && best_cand > last_fitness) {
        std::tie(c1, c2) = swap_students(std::move(c1), std::move(c2), best_pair);
        recorded = best_cand;
      } else {
        recorded = last_fitness;
      }
    }
    Assignment snap;
    snap.c1 = c1;
    snap.c2 = c2;
    snap.feasible = true;
    run.policy_history.push_back(std::move(snap));
    run.fitness_history.push_back(recorded);
    last_fitness = recorded;
  }

  int best_idx = 0;
  for (std::size_t i = 1; i < run.fitness_history.size(); ++i)
    if (run.fitness_history[i] > run.fitness_history[best_idx])
      best_idx = static_cast<int>(i);
  run.best = run.policy_history[best_idx];
  run.best_fitness = run.fitness_history[best_idx];
  run.best_iteration = best_idx + 1;
  return run;
}

// The GA initialization step reused as the "raw" baseline policy.
inline Assignment random_assignment(const SchoolPool& pool, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return detail::feasible_initial(pool, rng);
}

// Exhaustive search over feasible near-even partitions; ties go to the
// lexicographically smallest classroom 1.  Classroom 1 is canonically the
// side containing the smallest pool id.
inline Assignment brute_force_optimal(const SchoolPool& pool,
                                      const PeerNNParams& params, double beta,
                                      FitnessKind kind, double phi = 1.0,
                                      double rho = 1.0) {
  const int n = pool.n();
  if (n > 16)
    throw validation_error("brute_force_optimal: school size " + std::to_string(n) +
                           " exceeds the enumeration cap 16");
  std::vector<int> sorted_ids = pool.ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  const int lo = n / 2, hi = (n + 1) / 2;  // allowed |C1| sizes including id0
  Assignment best;
  double best_f = -std::numeric_limits<double>::infinity();
  const int m = n - 1;  // free memberships besides the anchored smallest id
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    const int extra = __builtin_popcount(mask);
    const int size1 = extra + 1;
    if (size1 != lo && size1 != hi) continue;
    std::vector<int> c1{sorted_ids[0]}, c2;
    for (int k = 0; k < m; ++k)
      ((mask >> k) & 1u ? c1 : c2).push_back(sorted_ids[k + 1]);
    if (!check(c1, c2, pool.n_boys, pool.n_girls, pool.minority_gender, pool))
      continue;
    const double f = fitness_parts(pool, c1, c2, params, beta).value(kind, phi, rho);
    if (f > best_f || (f == best_f && best.feasible && c1 < best.c1)) {
      best_f = f;
      best.c1 = c1;
      best.c2 = c2;
      best.feasible = true;
    }
  }
  if (!best.feasible)
    throw validation_error("brute_force_optimal: no feasible partition exists");
  return best;
}

}  // namespace peerlab
