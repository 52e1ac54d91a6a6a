#pragma once

// Data model for students, classrooms, and schools; CSV round-trip; and the
// synthetic data-generating process that replaces the redacted survey data
// with cohorts whose friendship network, peer effect, and confounding
// structure are known exactly.

#include "peerlab/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace peerlab {

inline constexpr int kNumTraits = 10;  // ARD questions per student

enum class Split { train, test };

inline const char* split_name(Split s) {
  return s == Split::train ? "train" : "test";
}

struct Student {
  int id = 0;
  int school_id = 0;
  int class_id = 0;
  int gender = 0;      // 1 = boy, 0 = girl
  double z = 0.0;      // 6th-grade class quantile in [0,1]
  Vector features;     // length D; features[0] = gender, features[1] = z
  std::array<int, kNumTraits> traits{};  // A_s row, binary
  int num_friends = 0;                   // B in {1..5}
  std::array<int, kNumTraits> ard{};     // A_f row, each in {1,2,3}
  double outcome = 0.0;                  // 8th-grade cognitive score y
  // Controls: age, father's education, mother's education, ethnicity flag.
  double age = 0.0;
  double father_edu = 0.0;
  double mother_edu = 0.0;
  int ethnic = 0;
};

struct Classroom {
  int class_id = 0;
  int school_id = 0;
  std::vector<int> student_ids;  // ordered
  Split split = Split::train;

  int n() const { return static_cast<int>(student_ids.size()); }
};

struct School {
  int school_id = 0;
  std::vector<int> class_ids;
};

struct Cohort {
  std::vector<Student> students;
  std::vector<Classroom> classrooms;
  std::vector<School> schools;

  const Student& student(int id) const {
    for (const auto& s : students)
      if (s.id == id) return s;
    throw validation_error("cohort: unknown student id " + std::to_string(id));
  }
  const Classroom& classroom(int class_id) const {
    for (const auto& c : classrooms)
      if (c.class_id == class_id) return c;
    throw validation_error("cohort: unknown class id " + std::to_string(class_id));
  }
  const School& school(int school_id) const {
    for (const auto& s : schools)
      if (s.school_id == school_id) return s;
    throw validation_error("cohort: unknown school id " + std::to_string(school_id));
  }
  int feature_dim() const {
    if (students.empty()) throw validation_error("cohort: no students");
    return static_cast<int>(students.front().features.size());
  }
  std::vector<const Classroom*> classrooms_of(Split split) const {
    std::vector<const Classroom*> out;
    for (const auto& c : classrooms)
      if (c.split == split) out.push_back(&c);
    return out;
  }

  // Enforces all Student/Classroom/Cohort invariants; throws validation_error
  // listing offending student ids.
  void validate() const;
};

// One branch of the ARD correspondence: maps the count of trait-q friends to
// the survey response {1 = none, 2 = one or two, 3 = most}.  Ambiguous cells
// (count/B near one half) resolve by the majority rule count/B > 1/2 -> 3.
inline int ard_encode(int count, int B) {
  if (B < 1 || B > 5)
    throw validation_error("ard_encode: B must be in 1..5, got " + std::to_string(B));
  if (count < 0 || count > B)
    throw validation_error("ard_encode: count " + std::to_string(count) +
                           " outside 0.." + std::to_string(B));
  if (count == 0) return 1;
  if (count >= 3) return 3;
  return 2 * count <= B ? 2 : 3;  // count in {1,2}
}

inline void Cohort::validate() const {
  std::string bad;
  auto flag = [&bad](int id, const std::string& why) {
    if (!bad.empty()) bad += "; ";
    bad += "student " + std::to_string(id) + ": " + why;
  };
  if (students.empty()) throw validation_error("cohort: no students");
  const int d = static_cast<int>(students.front().features.size());
  std::map<int, int> seen_student;  // id -> count across classrooms
  for (const auto& s : students) {
    if (s.gender != 0 && s.gender != 1) flag(s.id, "gender not binary");
    if (!(s.z >= 0.0 && s.z <= 1.0)) flag(s.id, "z outside [0,1]");
    if (s.num_friends < 1 || s.num_friends > 5) flag(s.id, "B outside 1..5");
    for (int v : s.traits)
      if (v != 0 && v != 1) { flag(s.id, "A_s entry not binary"); break; }
    for (int v : s.ard)
      if (v < 1 || v > 3) { flag(s.id, "A_f entry outside {1,2,3}"); break; }
    if (static_cast<int>(s.features.size()) != d)
      flag(s.id, "feature length differs from cohort D");
    if (s.features.size() >= 2) {
      if (s.features[0] != double(s.gender)) flag(s.id, "features[0] != gender");
      if (s.features[1] != s.z) flag(s.id, "features[1] != z");
    } else {
      flag(s.id, "fewer than 2 features (need gender and z)");
    }
    seen_student[s.id] = 0;
  }
  if (seen_student.size() != students.size())
    throw validation_error("cohort: duplicate student ids");
  std::map<int, int> class_school;
  for (const auto& c : classrooms) {
    if (c.n() < 3)
      throw validation_error("cohort: classroom " + std::to_string(c.class_id) +
                             " has fewer than 3 students");
    if (class_school.count(c.class_id))
      throw validation_error("cohort: duplicate class id " + std::to_string(c.class_id));
    class_school[c.class_id] = c.school_id;
    for (int id : c.student_ids) {
      auto it = seen_student.find(id);
      if (it == seen_student.end())
        throw validation_error("cohort: classroom " + std::to_string(c.class_id) +
                               " lists unknown student " + std::to_string(id));
      it->second += 1;
      const Student& s = student(id);
      if (s.class_id != c.class_id) flag(id, "class_id disagrees with classroom roster");
      if (s.school_id != c.school_id) flag(id, "school_id disagrees with classroom");
    }
  }
  for (const auto& [id, count] : seen_student)
    if (count != 1) flag(id, "belongs to " + std::to_string(count) + " classrooms");
  std::map<int, int> seen_class;
  for (const auto& sc : schools)
    for (int cid : sc.class_ids) {
      seen_class[cid] += 1;
      if (!class_school.count(cid) || class_school[cid] != sc.school_id)
        throw validation_error("cohort: school " + std::to_string(sc.school_id) +
                               " lists class " + std::to_string(cid) +
                               " inconsistently");
    }
  for (const auto& [cid, n] : seen_class)
    if (n != 1)
      throw validation_error("cohort: class " + std::to_string(cid) +
                             " owned by " + std::to_string(n) + " schools");
  if (seen_class.size() != classrooms.size())
    throw validation_error("cohort: classroom lost from school rosters");
  if (!bad.empty()) throw validation_error("cohort invariants violated: " + bad);
}

// ---------------------------------------------------------------------------
// Synthetic data-generating process
// ---------------------------------------------------------------------------

struct SynthConfig {
  int num_schools = 12;
  int classes_per_school = 2;
  int class_size_min = 16;
  int class_size_max = 24;
  int feature_dim = 2;  // >= 2: gender, z, then optional auxiliary features
  double beta_true = 1.0;
  double confounder_strength = 0.5;  // latent ability load on the outcome
  double homophily_gender = 2.0;     // same-gender utility bonus
  double homophily_ability = 1.5;    // penalty per unit |ability gap|
  double popularity_scale = 0.5;     // sd of per-student popularity
  double sigma_eps = 0.5;            // idiosyncratic outcome noise
  double sigma_mu = 0.1;             // classroom random-effect sd
  double school_effect_scale = 0.3;  // school-level shift sd
  double test_fraction = 0.25;       // share of schools tagged test
  std::uint64_t seed = 1;

  void validate() const {
    if (num_schools < 1) throw validation_error("synth: num_schools < 1");
    if (classes_per_school < 1) throw validation_error("synth: classes_per_school < 1");
    if (class_size_min < 3) throw validation_error("synth: class sizes must be >= 3");
    if (class_size_max < class_size_min)
      throw validation_error("synth: class_size_max < class_size_min");
    if (feature_dim < 2) throw validation_error("synth: feature_dim < 2");
    for (double s : {confounder_strength, homophily_gender, homophily_ability,
                     popularity_scale, sigma_eps, sigma_mu, school_effect_scale})
      if (s < 0.0) throw validation_error("synth: negative scale parameter");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
      throw validation_error("synth: test_fraction outside [0,1)");
  }
};

// Everything the DGP knows that an estimator must not see.
struct GroundTruth {
  double beta_true = 0.0;
  Vector control_coeffs;  // gamma over (age, f_edu, m_edu, ethnic)
  std::map<int, std::vector<int>> true_friends;  // student id -> friend ids
  std::map<int, double> ability;                 // student id -> latent ability
  std::map<int, double> popularity;              // student id -> utility bonus
  std::map<int, double> school_effects;          // school id -> outcome shift
  std::map<int, double> class_effects;           // class id -> random intercept
  SynthConfig config;
};

// Outcome-equation coefficients on (age, f_edu, m_edu, ethnic).
inline Vector dgp_control_coeffs() {
  Vector g(4);
  g << -0.05, 0.05, 0.03, 0.1;
  return g;
}

// Noise added to ability before taking within-school quantiles; keeps z an
// imperfect proxy for ability so conditioning on z leaves confounding behind.
inline constexpr double kQuantileNoiseSd = 1.0;

namespace detail {

// One pass over the cohort to resolve a classroom's roster to Student
// pointers (id lookups are linear; hot paths should not repeat them).
inline std::vector<const Student*> roster_students(const Cohort& cohort,
                                                   const Classroom& cls) {
  std::map<int, const Student*> by_id;
  for (const auto& s : cohort.students)
    by_id[s.id] = &s;
  std::vector<const Student*> out;
  out.reserve(cls.student_ids.size());
  for (int id : cls.student_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw validation_error("cohort: classroom lists unknown student " +
                             std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace detail

// Ground-truth friend-choice probabilities for one classroom (softmax of the
// generating utility), rows/columns in classroom roster order.
inline Matrix dgp_choice_probabilities(const Cohort& cohort, const GroundTruth& gt,
                                       const Classroom& cls) {
  const int n = cls.n();
  const auto roster = detail::roster_students(cohort, cls);
  Matrix p = Matrix::Zero(n, n);
  const auto& cfg = gt.config;
  for (int i = 0; i < n; ++i) {
    const Student& si = *roster[i];
    const double ai = gt.ability.at(si.id);
    Vector u(n);
    double umax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const Student& sj = *roster[j];
      u[j] = cfg.homophily_gender * (si.gender == sj.gender ? 1.0 : 0.0) -
             cfg.homophily_ability * std::abs(ai - gt.ability.at(sj.id)) +
             gt.popularity.at(sj.id);
      umax = std::max(umax, u[j]);
    }
    double denom = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) denom += std::exp(u[j] - umax);
    for (int j = 0; j < n; ++j)
      if (j != i) p(i, j) = std::exp(u[j] - umax) / denom;
  }
  return p;
}

// Row-stochastic matrix of the realized network: row i puts 1/B_i on each of
// student i's true friends.  This is the exact regressor the outcome equation
// used, so estimators evaluated against it face no approximation gap.
inline Matrix realized_friendship_matrix(const GroundTruth& gt,
                                         const Classroom& cls) {
  const int n = cls.n();
  std::map<int, int> pos;
  for (int i = 0; i < n; ++i) pos[cls.student_ids[i]] = i;
  Matrix v = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const auto& friends = gt.true_friends.at(cls.student_ids[i]);
    for (int fid : friends) v(i, pos.at(fid)) += 1.0 / double(friends.size());
  }
  return v;
}

namespace detail {

// Draw b distinct indices from the probability vector xi by sequential
// renormalization: zero the drawn mass, divide the rest by what remains.
inline std::vector<int> draw_without_replacement(Vector xi, int b,
                                                 std::mt19937_64& rng) {
  const int n = static_cast<int>(xi.size());
  int support = 0;
  for (int j = 0; j < n; ++j)
    if (xi[j] > 0.0) ++support;
  if (b > support)
    throw validation_error("draw_without_replacement: need " + std::to_string(b) +
                           " draws but only " + std::to_string(support) +
                           " entries have positive mass");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> picks;
  picks.reserve(b);
  for (int t = 0; t < b; ++t) {
    const double u = unif(rng);
    double acc = 0.0;
    int pick = -1;
    for (int j = 0; j < n; ++j) {
      if (xi[j] <= 0.0) continue;
      acc += xi[j];
      pick = j;
      if (u < acc) break;
    }
    if (pick < 0) throw numeric_error("draw_without_replacement: empty support");
    picks.push_back(pick);
    const double mass = xi[pick];
    if (1.0 - mass <= 0.0 && t + 1 < b)
      throw numeric_error("draw_without_replacement: mass exhausted early");
    xi[pick] = 0.0;
    if (t + 1 < b) xi /= (1.0 - mass);
  }
  return picks;
}

}  // namespace detail

inline std::pair<Cohort, GroundTruth> synth_cohort(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Cohort cohort;
  GroundTruth gt;
  gt.beta_true = cfg.beta_true;
  gt.control_coeffs = dgp_control_coeffs();
  gt.config = cfg;

  const int n_test = static_cast<int>(std::lround(cfg.num_schools * cfg.test_fraction));
  int next_student = 1;
  int next_class = 1;

  for (int s = 0; s < cfg.num_schools; ++s) {
    const int school_id = s + 1;
    const Split split = (s >= cfg.num_schools - n_test) ? Split::test : Split::train;
    School school;
    school.school_id = school_id;
    gt.school_effects[school_id] = cfg.school_effect_scale * normal(rng);

    std::vector<int> class_sizes(cfg.classes_per_school);
    int pool_n = 0;
    for (int& size : class_sizes) {
      std::uniform_int_distribution<int> d(cfg.class_size_min, cfg.class_size_max);
      size = d(rng);
      pool_n += size;
    }

    // Gender composition kept inside [0.4, 0.6] so two-classroom partitions
    // under the 35-65% band always exist.
    const double boy_share = 0.45 + 0.10 * unif(rng);
    int n_boys = static_cast<int>(std::lround(pool_n * boy_share));
    n_boys = std::clamp(n_boys, static_cast<int>(std::ceil(0.4 * pool_n)),
                        static_cast<int>(std::floor(0.6 * pool_n)));
    std::vector<int> genders(pool_n, 0);
    std::fill(genders.begin(), genders.begin() + n_boys, 1);
    for (int i = pool_n - 1; i > 0; --i) {
      std::uniform_int_distribution<int> d(0, i);
      std::swap(genders[i], genders[d(rng)]);
    }

    // Latent abilities and the noisy within-school quantile z.
    std::vector<double> ability(pool_n), noisy(pool_n);
    for (int i = 0; i < pool_n; ++i) {
      ability[i] = normal(rng);
      noisy[i] = ability[i] + kQuantileNoiseSd * normal(rng);
    }
    std::vector<int> order(pool_n);
    for (int i = 0; i < pool_n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&noisy](int a, int b) { return noisy[a] < noisy[b]; });
    std::vector<double> z(pool_n);
    for (int r = 0; r < pool_n; ++r) z[order[r]] = (r + 0.5) / pool_n;

    // Class membership: shuffled (random assignment) for train schools,
    // ability-sorted (tracked assignment) for test schools.
    std::vector<int> roster(pool_n);
    for (int i = 0; i < pool_n; ++i) roster[i] = i;
    if (split == Split::train) {
      for (int i = pool_n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> d(0, i);
        std::swap(roster[i], roster[d(rng)]);
      }
    } else {
      std::sort(roster.begin(), roster.end(), [&ability](int a, int b) {
        return ability[a] > ability[b];
      });
    }

    // Materialize students in roster order, class by class.
    std::vector<std::vector<int>> class_members(cfg.classes_per_school);
    std::vector<int> pool_student_id(pool_n, 0);
    int cursor = 0;
    for (int c = 0; c < cfg.classes_per_school; ++c) {
      const int class_id = next_class++;
      Classroom cls;
      cls.class_id = class_id;
      cls.school_id = school_id;
      cls.split = split;
      gt.class_effects[class_id] = cfg.sigma_mu * normal(rng);
      for (int k = 0; k < class_sizes[c]; ++k) {
        const int p = roster[cursor++];
        Student st;
        st.id = next_student++;
        st.school_id = school_id;
        st.class_id = class_id;
        st.gender = genders[p];
        st.z = z[p];
        st.features = Vector::Zero(cfg.feature_dim);
        st.features[0] = st.gender;
        st.features[1] = st.z;
        for (int f = 2; f < cfg.feature_dim; ++f)
          st.features[f] = (f % 2 == 0) ? double(unif(rng) < 0.5) : unif(rng);
        // Traits: gender itself, ability-linked, gender-linked, and pure-noise
        // questions so the ARD panel spans informative and uninformative cases.
        for (int q = 0; q < kNumTraits; ++q) {
          double prob;
          if (q == 0)
            prob = -1.0;  // sentinel: copy gender below
          else if (q % 3 == 1)
            prob = 0.25 + 0.5 * st.z;
          else if (q % 3 == 2)
            prob = 0.3 + 0.4 * st.gender;
          else
            prob = 0.5;
          st.traits[q] = (q == 0) ? st.gender : int(unif(rng) < prob);
        }
        std::uniform_int_distribution<int> bdraw(3, 5);
        st.num_friends = std::min(bdraw(rng), class_sizes[c] - 1);
        st.age = 12.0 + 2.0 * unif(rng);
        std::uniform_int_distribution<int> edu(1, 6);
        st.father_edu = edu(rng);
        st.mother_edu = edu(rng);
        st.ethnic = int(unif(rng) < 0.12);
        gt.ability[st.id] = ability[p];
        gt.popularity[st.id] = cfg.popularity_scale * normal(rng);
        pool_student_id[p] = st.id;
        class_members[c].push_back(st.id);
        cls.student_ids.push_back(st.id);
        cohort.students.push_back(std::move(st));
      }
      school.class_ids.push_back(class_id);
      cohort.classrooms.push_back(std::move(cls));
    }
    cohort.schools.push_back(std::move(school));

    // Friendships, ARD responses, and outcomes, class by class.
    for (int c = 0; c < cfg.classes_per_school; ++c) {
      const Classroom& cls = cohort.classrooms[cohort.classrooms.size() -
                                               cfg.classes_per_school + c];
      const Matrix probs = dgp_choice_probabilities(cohort, gt, cls);
      const int n = cls.n();
      for (int i = 0; i < n; ++i) {
        Student& st = cohort.students[cls.student_ids[i] - 1];
        const auto picks =
            detail::draw_without_replacement(probs.row(i).transpose(), st.num_friends, rng);
        std::vector<int> friends;
        friends.reserve(picks.size());
        for (int p : picks) friends.push_back(cls.student_ids[p]);
        std::sort(friends.begin(), friends.end());
        double mean_friend_z = 0.0;
        std::array<int, kNumTraits> counts{};
        for (int fid : friends) {
          const Student& fr = cohort.students[fid - 1];
          mean_friend_z += fr.z;
          for (int q = 0; q < kNumTraits; ++q) counts[q] += fr.traits[q];
        }
        mean_friend_z /= double(friends.size());
        for (int q = 0; q < kNumTraits; ++q)
          st.ard[q] = ard_encode(counts[q], st.num_friends);
        Vector controls(4);
        controls << st.age, st.father_edu, st.mother_edu, double(st.ethnic);
        st.outcome = cfg.beta_true * mean_friend_z +
                     gt.control_coeffs.dot(controls) +
                     gt.school_effects[st.school_id] +
                     gt.class_effects[st.class_id] +
                     cfg.confounder_strength * gt.ability[st.id] +
                     cfg.sigma_eps * normal(rng);
        gt.true_friends[st.id] = std::move(friends);
      }
    }
  }

  cohort.validate();
  return {std::move(cohort), std::move(gt)};
}

// ---------------------------------------------------------------------------
// CSV round-trip
// ---------------------------------------------------------------------------

struct parse_error : validation_error {
  using validation_error::validation_error;
};

namespace detail {

inline std::vector<std::string> csv_header(int d) {
  std::vector<std::string> h = {"id",  "school_id", "class_id", "gender",
                                "z",   "B",         "y",        "age",
                                "f_edu", "m_edu",   "ethnic"};
  for (int i = 1; i <= d; ++i) h.push_back("x" + std::to_string(i));
  for (int i = 1; i <= kNumTraits; ++i) h.push_back("as" + std::to_string(i));
  for (int i = 1; i <= kNumTraits; ++i) h.push_back("af" + std::to_string(i));
  h.push_back("split");
  return h;
}

inline double parse_double(const std::string& tok, int row, const std::string& col) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size() || !std::isfinite(v))
    throw parse_error("cohort csv: row " + std::to_string(row) + ", column " + col +
                      ": cannot parse '" + tok + "' as number");
  return v;
}

inline int parse_int(const std::string& tok, int row, const std::string& col) {
  const double v = parse_double(tok, row, col);
  const int i = static_cast<int>(std::lround(v));
  if (double(i) != v)
    throw parse_error("cohort csv: row " + std::to_string(row) + ", column " + col +
                      ": expected integer, got '" + tok + "'");
  return i;
}

}  // namespace detail

// Writes the cohort as CSV.  A nonempty meta string is emitted first as a
// single '#' comment line (self-description; skipped on load).
inline void save_cohort(const Cohort& cohort, const std::string& path,
                        const std::string& meta = "") {
  std::ofstream out(path);
  if (!out) throw io_error("save_cohort: cannot open '" + path + "' for writing");
  if (!meta.empty()) out << "# " << meta << "\n";
  const int d = cohort.feature_dim();
  const auto header = detail::csv_header(d);
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& cls : cohort.classrooms) {
    for (int id : cls.student_ids) {
      const Student& s = cohort.student(id);
      out << s.id << ',' << s.school_id << ',' << s.class_id << ',' << s.gender
          << ',' << format_double(s.z) << ',' << s.num_friends << ','
          << format_double(s.outcome) << ',' << format_double(s.age) << ','
          << format_double(s.father_edu) << ',' << format_double(s.mother_edu)
          << ',' << s.ethnic;
      for (int f = 0; f < d; ++f) out << ',' << format_double(s.features[f]);
      for (int q = 0; q < kNumTraits; ++q) out << ',' << s.traits[q];
      for (int q = 0; q < kNumTraits; ++q) out << ',' << s.ard[q];
      out << ',' << split_name(cls.split) << "\n";
    }
  }
  if (!out) throw io_error("save_cohort: write failed for '" + path + "'");
}

inline Cohort load_cohort(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_cohort: cannot open '" + path + "'");
  std::string line;
  int lineno = 0;
  // Skip self-description comments; first real line is the header.
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line[0] != '#') break;
    line.clear();
  }
  if (line.empty()) throw parse_error("load_cohort: no records in '" + path + "'");
  auto split_line = [](const std::string& l) {
    std::vector<std::string> toks;
    std::string tok;
    std::istringstream ss(l);
    while (std::getline(ss, tok, ',')) toks.push_back(tok);
    if (!l.empty() && l.back() == ',') toks.push_back("");
    return toks;
  };
  const auto head = split_line(line);
  // Infer D from the header: columns between 'ethnic' and 'as1' are features.
  int d = static_cast<int>(head.size()) - 11 - 2 * kNumTraits - 1;
  if (d < 2 || head != detail::csv_header(d))
    throw parse_error("load_cohort: header does not match the cohort schema");

  Cohort cohort;
  std::map<int, std::size_t> class_pos;
  std::map<int, std::size_t> school_pos;
  int rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto toks = split_line(line);
    if (toks.size() != head.size())
      throw parse_error("cohort csv: row " + std::to_string(lineno) + ": expected " +
                        std::to_string(head.size()) + " fields, got " +
                        std::to_string(toks.size()));
    ++rows;
    Student s;
    int k = 0;
    s.id = detail::parse_int(toks[k], lineno, head[k]); ++k;
    s.school_id = detail::parse_int(toks[k], lineno, head[k]); ++k;
    s.class_id = detail::parse_int(toks[k], lineno, head[k]); ++k;
    s.gender = detail::parse_int(toks[k], lineno, head[k]); ++k;
    s.z = detail::parse_double(toks[k], lineno, head[k]); ++k;
    s.num_friends = detail::parse_int(toks[k], lineno, head[k]); ++k;
    s.outcome = detail::parse_double(toks[k], lineno, head[k]); ++k;
    s.age = detail::parse_double(toks[k], lineno, head[k]); ++k;
    s.father_edu = detail::parse_double(toks[k], lineno, head[k]); ++k;
    s.mother_edu = detail::parse_double(toks[k], lineno, head[k]); ++k;
    s.ethnic = detail::parse_int(toks[k], lineno, head[k]); ++k;
    s.features = Vector::Zero(d);
    for (int f = 0; f < d; ++f) { s.features[f] = detail::parse_double(toks[k], lineno, head[k]); ++k; }
    for (int q = 0; q < kNumTraits; ++q) { s.traits[q] = detail::parse_int(toks[k], lineno, head[k]); ++k; }
    for (int q = 0; q < kNumTraits; ++q) { s.ard[q] = detail::parse_int(toks[k], lineno, head[k]); ++k; }
    const std::string& sp = toks[k];
    Split split;
    if (sp == "train") split = Split::train;
    else if (sp == "test") split = Split::test;
    else
      throw parse_error("cohort csv: row " + std::to_string(lineno) +
                        ", column split: expected train|test, got '" + sp + "'");

    auto cit = class_pos.find(s.class_id);
    if (cit == class_pos.end()) {
      class_pos[s.class_id] = cohort.classrooms.size();
      Classroom cls;
      cls.class_id = s.class_id;
      cls.school_id = s.school_id;
      cls.split = split;
      cohort.classrooms.push_back(cls);
      auto sit = school_pos.find(s.school_id);
      if (sit == school_pos.end()) {
        school_pos[s.school_id] = cohort.schools.size();
        cohort.schools.push_back(School{s.school_id, {}});
      }
      cohort.schools[school_pos[s.school_id]].class_ids.push_back(s.class_id);
    } else {
      const Classroom& cls = cohort.classrooms[cit->second];
      if (cls.school_id != s.school_id || cls.split != split)
        throw parse_error("cohort csv: row " + std::to_string(lineno) +
                          ": class " + std::to_string(s.class_id) +
                          " changes school or split mid-file");
    }
    cohort.classrooms[class_pos[s.class_id]].student_ids.push_back(s.id);
    cohort.students.push_back(std::move(s));
  }
  if (rows == 0) throw parse_error("load_cohort: no records in '" + path + "'");
  cohort.validate();
  return cohort;
}

}  // namespace peerlab
