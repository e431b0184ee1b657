#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rtrans/autodiff.hpp"
#include "rtrans/dataset.hpp"

namespace rtrans {

struct ModelConfig {
  int segment_len = 75;   // L
  int feature_dim = 76;   // D
  int num_classes = kNumOsatsClasses;
  int num_categories = kNumOsatsCategories;
  int heads = 4;
  int mlp_hidden = 128;
  std::uint64_t seed = 0;
  // Eq-averaging switch: average per-segment probabilities instead of
  // logits before the loss.
  bool average_probabilities = false;

  void validate() const;  // throws ConfigError
  bool same_architecture(const ModelConfig& other) const;
};

// Named parameter arrays in a fixed construction order (the checkpoint and
// optimizer orders).
struct ParamSet {
  struct Entry {
    std::string name;
    Matrix value;
  };
  std::vector<Entry> entries;

  int add(std::string name, Matrix value);
  const Matrix& at(std::string_view name) const;
  Matrix& at(std::string_view name);
  std::size_t total_size() const;
};

struct ModelParams {
  ModelConfig config;
  ParamSet params;
};

// Deterministic fan-in-scaled uniform initialization from config.seed.
ModelParams init_model(const ModelConfig& config);

// --- tape-bound views --------------------------------------------------

struct AttentionVars {
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FusionVars {
  AttentionVars self_attn, cross_attn;
  ad::Var ff_w1, ff_b1, ff_w2, ff_b2;
  ad::Var n1_gamma, n1_beta, n2_gamma, n2_beta, n3_gamma, n3_beta;
};

struct HeadVars {
  ad::Var norm_gamma, norm_beta, fc1_w, fc1_b, fc2_w, fc2_b;
};

struct BoundModel {
  ModelConfig config;
  std::vector<FusionVars> fusion;  // 3 modules
  std::vector<HeadVars> heads;     // one per category
  std::vector<ad::Var> flat;       // aligned with ParamSet::entries
};

// Copies every parameter onto the tape as a leaf.
BoundModel bind_model(ad::Tape& tape, const ModelParams& params,
                      bool requires_grad);

ad::Var multihead_attention(const AttentionVars& p, const ad::Var& query_src,
                            const ad::Var& kv_src, int heads);

// One backbone step: z_s = h(x_s, z_{s-1}) through the three fusion
// modules, with x_s added to the second module's output.
ad::Var fusion_forward(const BoundModel& m, const ad::Var& z_prev,
                       const ad::Var& x);

// Five MLP heads on the mean-pooled hidden state; one 1 x num_classes
// logit row per category.
std::vector<ad::Var> heads_forward(const BoundModel& m, const ad::Var& z);

struct TrialForward {
  // per segment, per category: 1 x num_classes logits
  std::vector<std::vector<ad::Var>> segment_logits;
  // per category: mean over segments (logits, or probabilities when
  // config.average_probabilities is set)
  std::vector<ad::Var> averaged;
  bool averaged_is_probabilities = false;
};

TrialForward forward_trial(const BoundModel& m,
                           const std::vector<Matrix>& segments);

}  // namespace rtrans
