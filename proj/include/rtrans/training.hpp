#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rtrans/dataset.hpp"
#include "rtrans/model.hpp"
#include "rtrans/rng.hpp"

namespace rtrans {

struct TrainConfig {
  int epochs = 1500;
  int batch_size = 25;
  double learning_rate = 1e-6;
  double lambda_l2 = 0.01;
  double augment_rate = 0.5;
  double label_smoothing = 0.3;
  double noise_scale = 1.0;  // multiplier on the per-feature signal std
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  static AdamState init_like(const ParamSet& params);
};

// Applied independently per technique with probability `rate`: Gaussian
// noise scaled by the per-feature std of the signal, and whole-trial frame
// reversal (before segmentation).
KinematicTrial augment_trial(const KinematicTrial& trial, Rng& rng,
                             double rate, double noise_scale);

// 1 - smoothing on the true class, the rest spread uniformly.
Eigen::VectorXd smooth_labels(int score, double smoothing,
                              int num_classes = kNumOsatsClasses);

// weight_k = total / (num_classes * count_k); absent classes get the max
// present weight.
Eigen::VectorXd weights_from_counts(const Eigen::VectorXi& counts);
std::vector<Eigen::VectorXd> class_weights(
    const std::vector<TrialLabels>& train_labels,
    int num_classes = kNumOsatsClasses);

// Sum over categories of class-weighted, label-smoothed cross-entropy on
// the averaged outputs, plus lambda * sum of squared parameters.
ad::Var compute_loss(const BoundModel& model, const TrialForward& forward,
                     const TrialLabels& labels,
                     const std::vector<Eigen::VectorXd>& weights,
                     double label_smoothing, double lambda_l2);

// Standard bias-corrected Adam update.
void adam_step(ParamSet& params, const std::vector<Matrix>& grads,
               AdamState& state, double learning_rate);

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_history;  // one mean per-trial loss per epoch
};

// Mini-batches of whole trials; per-trial gradients accumulated and
// averaged per batch. Trials are expected raw (normalization is applied
// here, once, before the epoch loop).
TrainResult train(const std::vector<LabelledTrial>& train_set,
                  const ModelConfig& model_config, const TrainConfig& config);

void write_loss_log(const std::filesystem::path& path,
                    const std::vector<double>& history,
                    const std::string& fold_key);

}  // namespace rtrans
