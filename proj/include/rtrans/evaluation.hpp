#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rtrans/dataset.hpp"
#include "rtrans/model.hpp"
#include "rtrans/training.hpp"

namespace rtrans {

struct TrialPrediction {
  std::string trial_id;
  // per segment, per category: probability vector over the 5 scores
  std::vector<std::array<Eigen::VectorXd, kNumOsatsCategories>> segment_probs;
  std::array<int, kNumOsatsCategories> final_osats{};       // argmax + 1
  std::array<double, kNumOsatsCategories> expected_osats{};  // sum k * p_k
  double grs = 0.0;
};

// Which score representation feeds GRS ranking.
enum class GrsRepresentation { ExpectedScore, ArgmaxSum };

// Deterministic, side-effect-free forward pass; the trial is raw
// (normalization applied here).
TrialPrediction predict_trial(const ModelParams& params,
                              const KinematicTrial& trial,
                              GrsRepresentation repr =
                                  GrsRepresentation::ExpectedScore);

// Arithmetic sum; each score must lie in [1,5].
double aggregate_grs(std::span<const double, kNumOsatsCategories> osats);
double aggregate_grs(const std::array<int, kNumOsatsCategories>& osats);

// Fractional (average) ranks for ties, then Pearson correlation of ranks.
// Equals the 1 - 6*sum(d^2)/(n(n^2-1)) closed form when no ties exist.
double spearman(std::span<const double> pred, std::span<const double> truth);

struct FoldResult {
  std::string fold_key;
  int n_test = 0;
  std::optional<double> scc_grs;  // empty when the correlation is undefined
  std::array<std::optional<double>, kNumOsatsCategories> scc_per_osats;
};

// Correlations for one fold from already-computed predictions.
FoldResult score_fold(const std::string& fold_key,
                      const std::vector<TrialPrediction>& predictions,
                      const std::vector<TrialLabels>& truths);

struct CvResult {
  Task task = Task::KnotTying;
  bool across_tasks = false;
  Scheme scheme = Scheme::LOSO;
  std::vector<FoldResult> folds;
  std::optional<double> averaged_scc_grs;
  std::array<std::optional<double>, kNumOsatsCategories> averaged_scc_osats;
  int undefined_grs_folds = 0;
};

struct CvOptions {
  GrsRepresentation repr = GrsRepresentation::ExpectedScore;
  int jobs = 1;
  // called after each fold completes with (fold_key, result)
  std::function<void(const FoldResult&)> on_fold;
};

// Trains a fresh model per fold, predicts the held-out split and averages
// the per-fold correlations (undefined folds excluded and counted).
CvResult run_cv(const std::vector<LabelledTrial>& trials, Scheme scheme,
                const ModelConfig& model_config, const TrainConfig& train_config,
                const CvOptions& options = {});

void write_results_json(const std::filesystem::path& path, const CvResult& cv);
CvResult read_results_json(const std::filesystem::path& path);

// CSV tables placing our numbers beside the stored baseline constants.
// `ours` maps "<task>_<scheme>" (e.g. "KT_LOSO", "across_LOUO") to results.
void write_report_tables(const std::filesystem::path& dir,
                         const std::vector<CvResult>& ours);

}  // namespace rtrans
