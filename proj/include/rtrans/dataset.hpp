#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rtrans/autodiff.hpp"
#include "rtrans/errors.hpp"

namespace rtrans {

using ad::Matrix;

enum class Task { KnotTying, NeedlePassing, Suturing };
enum class SkillLevel { Novice, Intermediate, Expert };
enum class Scheme { LOSO, LOUO };

// Fixed category order used for every array and report.
enum OsatsCategory {
  kTimeAndMotion = 0,
  kFlowOfOperation = 1,
  kSutureNeedleHandling = 2,
  kRespectForTissue = 3,
  kOverallPerformance = 4,
};

inline constexpr int kNumOsatsCategories = 5;
inline constexpr int kNumOsatsClasses = 5;  // scores 1..5
inline constexpr int kKinematicFeatures = 76;

inline constexpr std::array<const char*, kNumOsatsCategories>
    kOsatsCategoryNames = {"time_and_motion", "flow_of_operation",
                           "suture_needle_handling", "respect_for_tissue",
                           "overall_performance"};

const char* to_string(Task t);        // "KT" / "NP" / "SU"
const char* dir_name(Task t);         // "Knot_Tying" / ...
Task task_from_string(const std::string& s);
const char* to_string(SkillLevel l);
const char* to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

struct TrialLabels {
  std::array<int, kNumOsatsCategories> osats{};  // each in [1,5]
  int grs = 0;                                   // sum of osats, [5,25]
};

struct KinematicTrial {
  std::string trial_id;
  Task task = Task::KnotTying;
  std::string subject_id;
  int repetition = 1;
  SkillLevel self_claimed_level = SkillLevel::Novice;  // metadata only
  Matrix frames;  // T x D
};

struct Segment {
  Matrix values;  // L x D
  int index = 1;  // s in [1, S]
  std::string parent_trial;
};

struct FoldSpec {
  Scheme scheme = Scheme::LOSO;
  std::string fold_key;
  std::set<std::string> train_ids;
  std::set<std::string> test_ids;
};

struct LabelledTrial {
  KinematicTrial trial;
  TrialLabels labels;
};

struct Dataset {
  std::vector<LabelledTrial> trials;
};

// --- parsing ---------------------------------------------------------------

// One whitespace-separated row of `expected_cols` reals per frame.
Matrix parse_kinematics(const std::string& text,
                        int expected_cols = kKinematicFeatures);

struct MetaEntry {
  TrialLabels labels;
  SkillLevel level = SkillLevel::Novice;
};

// Lines of: trial_id  skill_level  grs  six element scores. The
// quality-of-final-product element (last) is dropped, the five kept scores
// are reordered into the fixed category order and GRS is recomputed as
// their sum.
std::map<std::string, MetaEntry> parse_meta(const std::string& text);

const MetaEntry& meta_lookup(const std::map<std::string, MetaEntry>& meta,
                             const std::string& trial_id);

struct TrialIdParts {
  std::string subject;
  int repetition = 0;
};
// "Knot_Tying_B001" -> subject "B", repetition 1
TrialIdParts parse_trial_id(const std::string& trial_id);

// --- transforms ------------------------------------------------------------

// Per-feature z-score over time; constant columns map to zero.
Matrix normalize_time_axis(const Matrix& frames, double eps = 1e-8);
// Per-frame z-score over the feature axis.
Matrix normalize_feature_axis(const Matrix& frames, double eps = 1e-8);
// Time-axis pass followed by the feature-axis pass.
Matrix normalize_frames(const Matrix& frames, double eps = 1e-8);
KinematicTrial normalize(const KinematicTrial& trial);

// floor(T/L) contiguous non-overlapping segments; the trailing remainder
// is discarded.
std::vector<Segment> segment_trial(const KinematicTrial& trial, int length);

// One fold per distinct key (repetition for LOSO, subject for LOUO),
// ordered by key.
std::vector<FoldSpec> make_folds(const std::vector<KinematicTrial>& trials,
                                 Scheme scheme);

// --- JIGSAWS directory layout ---------------------------------------------

// Reads <root>/<Task>/kinematics/AllGestures/<trial_id>.txt for every trial
// listed in <root>/<Task>/meta_file_<Task>.txt.
Dataset load_jigsaws(const std::filesystem::path& root,
                     const std::vector<Task>& tasks);

void write_manifest(const std::filesystem::path& path, const Dataset& ds);

}  // namespace rtrans
