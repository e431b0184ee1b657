#include "rtrans/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace rtrans {

namespace {
using nlohmann::json;
}

const char* to_string(Task t) {
  switch (t) {
    case Task::KnotTying: return "KT";
    case Task::NeedlePassing: return "NP";
    case Task::Suturing: return "SU";
  }
  return "?";
}

const char* dir_name(Task t) {
  switch (t) {
    case Task::KnotTying: return "Knot_Tying";
    case Task::NeedlePassing: return "Needle_Passing";
    case Task::Suturing: return "Suturing";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  if (s == "KT" || s == "Knot_Tying") return Task::KnotTying;
  if (s == "NP" || s == "Needle_Passing") return Task::NeedlePassing;
  if (s == "SU" || s == "Suturing") return Task::Suturing;
  throw RangeError("unknown task '" + s + "'");
}

const char* to_string(SkillLevel l) {
  switch (l) {
    case SkillLevel::Novice: return "Novice";
    case SkillLevel::Intermediate: return "Intermediate";
    case SkillLevel::Expert: return "Expert";
  }
  return "?";
}

const char* to_string(Scheme s) {
  return s == Scheme::LOSO ? "LOSO" : "LOUO";
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "LOSO") return Scheme::LOSO;
  if (s == "LOUO") return Scheme::LOUO;
  throw RangeError("unknown scheme '" + s + "'");
}

Matrix parse_kinematics(const std::string& text, int expected_cols) {
  std::vector<double> values;
  int rows = 0;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const char* p = line.c_str();
    int count = 0;
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) break;
      if (!std::isfinite(v)) {
        throw NonFiniteError("non-finite value at line " +
                             std::to_string(line_no));
      }
      values.push_back(v);
      ++count;
      p = end;
    }
    // trailing garbage after the numbers also counts as a malformed row
    while (*p != '\0' && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (count == 0 && *p == '\0') continue;  // blank line
    if (count != expected_cols || *p != '\0') {
      throw RowWidthError("line " + std::to_string(line_no) + ": expected " +
                          std::to_string(expected_cols) + " values, got " +
                          std::to_string(count));
    }
    ++rows;
  }
  if (rows == 0) throw EmptyFileError("no kinematic rows found");
  Matrix frames(rows, expected_cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < expected_cols; ++c) {
      frames(r, c) = values[static_cast<std::size_t>(r) * expected_cols + c];
    }
  }
  return frames;
}

namespace {

SkillLevel level_from_token(const std::string& tok, int line_no) {
  if (tok == "N" || tok == "Novice") return SkillLevel::Novice;
  if (tok == "I" || tok == "Intermediate") return SkillLevel::Intermediate;
  if (tok == "E" || tok == "Expert") return SkillLevel::Expert;
  throw MetaFormatError("line " + std::to_string(line_no) +
                        ": unknown skill level '" + tok + "'");
}

}  // namespace

std::map<std::string, MetaEntry> parse_meta(const std::string& text) {
  std::map<std::string, MetaEntry> out;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::istringstream tok(line);
    std::string id;
    if (!(tok >> id)) continue;  // blank line
    std::string level_tok;
    int grs_raw = 0;
    std::array<int, 6> elements{};
    if (!(tok >> level_tok >> grs_raw)) {
      throw MetaFormatError("line " + std::to_string(line_no) +
                            ": expected skill level and GRS after trial id");
    }
    for (int i = 0; i < 6; ++i) {
      if (!(tok >> elements[i])) {
        throw MetaFormatError("line " + std::to_string(line_no) +
                              ": expected six element scores");
      }
      if (elements[i] < 1 || elements[i] > 5) {
        throw ScoreRangeError("line " + std::to_string(line_no) +
                              ": element score " + std::to_string(elements[i]) +
                              " outside [1,5]");
      }
    }
    // File order: respect-for-tissue, suture/needle-handling,
    // time-and-motion, flow-of-operation, overall-performance,
    // quality-of-final-product (dropped).
    MetaEntry entry;
    entry.level = level_from_token(level_tok, line_no);
    entry.labels.osats[kTimeAndMotion] = elements[2];
    entry.labels.osats[kFlowOfOperation] = elements[3];
    entry.labels.osats[kSutureNeedleHandling] = elements[1];
    entry.labels.osats[kRespectForTissue] = elements[0];
    entry.labels.osats[kOverallPerformance] = elements[4];
    entry.labels.grs = 0;
    for (int s : entry.labels.osats) entry.labels.grs += s;
    out[id] = entry;
  }
  return out;
}

const MetaEntry& meta_lookup(const std::map<std::string, MetaEntry>& meta,
                             const std::string& trial_id) {
  auto it = meta.find(trial_id);
  if (it == meta.end()) {
    throw MissingTrialError("no meta entry for trial '" + trial_id + "'");
  }
  return it->second;
}

TrialIdParts parse_trial_id(const std::string& trial_id) {
  const auto pos = trial_id.rfind('_');
  const std::string tail =
      pos == std::string::npos ? trial_id : trial_id.substr(pos + 1);
  TrialIdParts parts;
  std::size_t i = 0;
  while (i < tail.size() && !std::isdigit(static_cast<unsigned char>(tail[i])))
    ++i;
  parts.subject = tail.substr(0, i);
  if (parts.subject.empty() || i == tail.size()) {
    throw MetaFormatError("trial id '" + trial_id +
                          "' does not end in <subject><repetition>");
  }
  parts.repetition = std::atoi(tail.c_str() + i);
  return parts;
}

Matrix normalize_time_axis(const Matrix& frames, double eps) {
  const Eigen::Index t = frames.rows(), d = frames.cols();
  Matrix out(t, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mu = frames.col(j).mean();
    const double var =
        (frames.col(j).array() - mu).square().sum() / static_cast<double>(t);
    const double sd = std::sqrt(var);
    out.col(j) = (frames.col(j).array() - mu) / (sd + eps);
  }
  return out;
}

Matrix normalize_feature_axis(const Matrix& frames, double eps) {
  const Eigen::Index t = frames.rows(), d = frames.cols();
  Matrix out(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    const double mu = frames.row(i).mean();
    const double var =
        (frames.row(i).array() - mu).square().sum() / static_cast<double>(d);
    const double sd = std::sqrt(var);
    out.row(i) = (frames.row(i).array() - mu) / (sd + eps);
  }
  return out;
}

Matrix normalize_frames(const Matrix& frames, double eps) {
  return normalize_feature_axis(normalize_time_axis(frames, eps), eps);
}

KinematicTrial normalize(const KinematicTrial& trial) {
  if (trial.frames.rows() < 2) {
    throw DegenerateTrialError("trial '" + trial.trial_id + "' has " +
                               std::to_string(trial.frames.rows()) +
                               " frame(s), need at least 2");
  }
  KinematicTrial out = trial;
  out.frames = normalize_frames(trial.frames);
  return out;
}

std::vector<Segment> segment_trial(const KinematicTrial& trial, int length) {
  if (length < 1) throw RangeError("segment length must be >= 1");
  const Eigen::Index t = trial.frames.rows();
  if (t < length) {
    throw TooShortError("trial '" + trial.trial_id + "' has " +
                        std::to_string(t) + " frames < segment length " +
                        std::to_string(length));
  }
  const int count = static_cast<int>(t / length);
  std::vector<Segment> segments;
  segments.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    Segment seg;
    seg.values = trial.frames.middleRows(
        static_cast<Eigen::Index>(s) * length, length);
    seg.index = s + 1;
    seg.parent_trial = trial.trial_id;
    segments.push_back(std::move(seg));
  }
  return segments;
}

std::vector<FoldSpec> make_folds(const std::vector<KinematicTrial>& trials,
                                 Scheme scheme) {
  std::map<std::string, std::set<std::string>> by_key;
  std::set<std::string> all_ids;
  for (const KinematicTrial& t : trials) {
    const std::string key = scheme == Scheme::LOSO
                                ? std::to_string(t.repetition)
                                : t.subject_id;
    by_key[key].insert(t.trial_id);
    all_ids.insert(t.trial_id);
  }
  if (by_key.size() < 2) {
    throw InsufficientGroupsError(
        "need at least 2 distinct fold keys, have " +
        std::to_string(by_key.size()));
  }
  std::vector<FoldSpec> folds;
  for (const auto& [key, test_ids] : by_key) {
    FoldSpec fold;
    fold.scheme = scheme;
    fold.fold_key = key;
    fold.test_ids = test_ids;
    std::set_difference(all_ids.begin(), all_ids.end(), test_ids.begin(),
                        test_ids.end(),
                        std::inserter(fold.train_ids, fold.train_ids.end()));
    folds.push_back(std::move(fold));
  }
  return folds;
}

Dataset load_jigsaws(const std::filesystem::path& root,
                     const std::vector<Task>& tasks) {
  namespace fs = std::filesystem;
  Dataset ds;
  std::vector<std::string> missing;
  for (Task task : tasks) {
    const fs::path task_dir = root / dir_name(task);
    const fs::path meta_path =
        task_dir / (std::string("meta_file_") + dir_name(task) + ".txt");
    if (!fs::exists(meta_path)) {
      missing.push_back(meta_path.string());
      continue;
    }
    std::ifstream meta_in(meta_path);
    std::stringstream meta_text;
    meta_text << meta_in.rdbuf();
    const auto meta = parse_meta(meta_text.str());
    for (const auto& [trial_id, entry] : meta) {
      const fs::path kin_path =
          task_dir / "kinematics" / "AllGestures" / (trial_id + ".txt");
      if (!fs::exists(kin_path)) {
        missing.push_back(kin_path.string());
        continue;
      }
      std::ifstream kin_in(kin_path);
      std::stringstream kin_text;
      kin_text << kin_in.rdbuf();

      LabelledTrial lt;
      lt.trial.trial_id = trial_id;
      lt.trial.task = task;
      const TrialIdParts parts = parse_trial_id(trial_id);
      lt.trial.subject_id = parts.subject;
      lt.trial.repetition = parts.repetition;
      lt.trial.self_claimed_level = entry.level;
      lt.trial.frames = parse_kinematics(kin_text.str());
      lt.labels = entry.labels;
      ds.trials.push_back(std::move(lt));
    }
  }
  if (!missing.empty()) {
    std::string detail = "missing files:";
    for (const std::string& m : missing) detail += " " + m;
    throw LayoutError(detail);
  }
  if (ds.trials.empty()) {
    throw LayoutError("no trials found under " + root.string());
  }
  return ds;
}

void write_manifest(const std::filesystem::path& path, const Dataset& ds) {
  json manifest;
  manifest["trial_count"] = ds.trials.size();
  json tasks = json::object();
  for (const LabelledTrial& lt : ds.trials) {
    const std::string task = to_string(lt.trial.task);
    if (!tasks.contains(task)) {
      tasks[task] = {{"count", 0}, {"trials", json::array()}};
    }
    tasks[task]["count"] = tasks[task]["count"].get<int>() + 1;
    json t;
    t["id"] = lt.trial.trial_id;
    t["subject"] = lt.trial.subject_id;
    t["repetition"] = lt.trial.repetition;
    t["frames"] = lt.trial.frames.rows();
    t["features"] = lt.trial.frames.cols();
    t["level"] = to_string(lt.trial.self_claimed_level);
    t["osats"] = lt.labels.osats;
    t["grs"] = lt.labels.grs;
    tasks[task]["trials"].push_back(std::move(t));
  }
  manifest["tasks"] = std::move(tasks);
  std::ofstream out(path);
  if (!out) throw LayoutError("cannot write manifest to " + path.string());
  out << manifest.dump(2) << "\n";
}

}  // namespace rtrans
