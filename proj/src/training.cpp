#include "rtrans/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace rtrans {

using ad::Var;

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) {
    throw ConfigError("epochs and batch_size must be >= 1");
  }
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (lambda_l2 < 0.0) throw ConfigError("lambda_l2 must be >= 0");
  if (augment_rate < 0.0 || augment_rate > 1.0) {
    throw ConfigError("augment_rate must be in [0,1]");
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ConfigError("label_smoothing must be in [0,1)");
  }
  if (noise_scale < 0.0) throw ConfigError("noise_scale must be >= 0");
}

AdamState AdamState::init_like(const ParamSet& params) {
  AdamState s;
  s.m.reserve(params.entries.size());
  s.v.reserve(params.entries.size());
  for (const ParamSet::Entry& e : params.entries) {
    s.m.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    s.v.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
  }
  return s;
}

KinematicTrial augment_trial(const KinematicTrial& trial, Rng& rng,
                             double rate, double noise_scale) {
  const bool add_noise = rng.uniform() < rate;
  const bool flip = rng.uniform() < rate;
  if (!add_noise && !flip) return trial;

  KinematicTrial out = trial;
  if (add_noise) {
    const Eigen::Index t = out.frames.rows(), d = out.frames.cols();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double mu = out.frames.col(j).mean();
      const double sd = std::sqrt((out.frames.col(j).array() - mu)
                                      .square()
                                      .sum() /
                                  static_cast<double>(t));
      const double scale = noise_scale * sd;
      for (Eigen::Index i = 0; i < t; ++i) {
        out.frames(i, j) += rng.normal(0.0, scale);
      }
    }
  }
  if (flip) {
    out.frames = out.frames.colwise().reverse().eval();
  }
  return out;
}

Eigen::VectorXd smooth_labels(int score, double smoothing, int num_classes) {
  if (score < 1 || score > num_classes) {
    throw RangeError("score " + std::to_string(score) + " outside [1," +
                     std::to_string(num_classes) + "]");
  }
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw RangeError("smoothing must be in [0,1)");
  }
  Eigen::VectorXd target = Eigen::VectorXd::Constant(
      num_classes, num_classes > 1
                       ? smoothing / static_cast<double>(num_classes - 1)
                       : 0.0);
  target(score - 1) = 1.0 - smoothing;
  return target;
}

Eigen::VectorXd weights_from_counts(const Eigen::VectorXi& counts) {
  const int k = static_cast<int>(counts.size());
  const double total = counts.sum();
  Eigen::VectorXd w(k);
  double max_present = 0.0;
  for (int i = 0; i < k; ++i) {
    if (counts(i) > 0) {
      w(i) = total / (static_cast<double>(k) * counts(i));
      max_present = std::max(max_present, w(i));
    } else {
      w(i) = -1.0;  // filled below
    }
  }
  for (int i = 0; i < k; ++i) {
    if (w(i) < 0.0) w(i) = max_present;
  }
  return w;
}

std::vector<Eigen::VectorXd> class_weights(
    const std::vector<TrialLabels>& train_labels, int num_classes) {
  if (train_labels.empty()) {
    throw EmptyFoldError("class_weights needs a non-empty training fold");
  }
  std::vector<Eigen::VectorXd> weights;
  weights.reserve(kNumOsatsCategories);
  for (int n = 0; n < kNumOsatsCategories; ++n) {
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(num_classes);
    for (const TrialLabels& l : train_labels) {
      counts(l.osats[static_cast<std::size_t>(n)] - 1) += 1;
    }
    weights.push_back(weights_from_counts(counts));
  }
  return weights;
}

Var compute_loss(const BoundModel& model, const TrialForward& forward,
                 const TrialLabels& labels,
                 const std::vector<Eigen::VectorXd>& weights,
                 double label_smoothing, double lambda_l2) {
  if (weights.size() != forward.averaged.size()) {
    throw ShapeMismatchError(
        "compute_loss: " + std::to_string(weights.size()) +
        " weight vectors for " + std::to_string(forward.averaged.size()) +
        " categories");
  }
  ad::Tape& tape = *model.flat.front().tape;
  const int classes = model.config.num_classes;

  Var total;
  for (std::size_t n = 0; n < forward.averaged.size(); ++n) {
    const Var& avg = forward.averaged[n];
    if (avg.cols() != classes) {
      throw ShapeMismatchError("compute_loss: logits have " +
                               std::to_string(avg.cols()) + " classes, want " +
                               std::to_string(classes));
    }
    const Eigen::VectorXd target =
        smooth_labels(labels.osats[n], label_smoothing, classes);
    Matrix coeff = (weights[n].array() * target.array()).matrix().transpose();
    Var log_probs = forward.averaged_is_probabilities
                        ? ad::log_elem(avg)
                        : ad::log_softmax_rows(avg);
    Var ce = ad::scale(ad::sum_all(ad::mul(log_probs, tape.constant(coeff))),
                       -1.0);
    total = n == 0 ? ce : total + ce;
  }

  if (lambda_l2 > 0.0) {
    Var reg;
    bool first = true;
    for (const Var& p : model.flat) {
      Var sq = ad::sum_squares(p);
      reg = first ? sq : reg + sq;
      first = false;
    }
    total = total + ad::scale(reg, lambda_l2);
  }
  return total;
}

void adam_step(ParamSet& params, const std::vector<Matrix>& grads,
               AdamState& state, double learning_rate) {
  if (grads.size() != params.entries.size()) {
    throw ShapeMismatchError("adam_step: " + std::to_string(grads.size()) +
                             " grads for " +
                             std::to_string(params.entries.size()) +
                             " parameters");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Matrix& theta = params.entries[i].value;
    const Matrix& g = grads[i];
    if (g.rows() != theta.rows() || g.cols() != theta.cols()) {
      throw ShapeMismatchError("adam_step: grad shape mismatch for '" +
                               params.entries[i].name + "'");
    }
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] =
        state.beta2 * state.v[i] +
        (1.0 - state.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = state.m[i] / bc1;
    const Matrix v_hat = state.v[i] / bc2;
    theta -= learning_rate *
             (m_hat.array() / (v_hat.array().sqrt() + state.eps)).matrix();
  }
}

TrainResult train(const std::vector<LabelledTrial>& train_set,
                  const ModelConfig& model_config, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) {
    throw EmptyFoldError("train needs a non-empty training split");
  }

  std::vector<LabelledTrial> prepared;
  prepared.reserve(train_set.size());
  std::vector<TrialLabels> labels;
  labels.reserve(train_set.size());
  for (const LabelledTrial& lt : train_set) {
    prepared.push_back({normalize(lt.trial), lt.labels});
    labels.push_back(lt.labels);
  }

  const std::vector<Eigen::VectorXd> weights =
      class_weights(labels, model_config.num_classes);

  TrainResult result;
  result.params = init_model(model_config);
  AdamState adam = AdamState::init_like(result.params.params);
  Rng rng(config.seed);

  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);

  result.loss_history.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t batch_end = std::min(
          order.size(), pos + static_cast<std::size_t>(config.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(batch_end - pos);

      std::vector<Matrix> grad_accum;
      grad_accum.reserve(result.params.params.entries.size());
      for (const ParamSet::Entry& e : result.params.params.entries) {
        grad_accum.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
      }

      for (std::size_t b = pos; b < batch_end; ++b) {
        const LabelledTrial& lt = prepared[order[b]];
        const KinematicTrial aug = augment_trial(
            lt.trial, rng, config.augment_rate, config.noise_scale);
        const std::vector<Segment> segs =
            segment_trial(aug, model_config.segment_len);
        std::vector<Matrix> seg_values;
        seg_values.reserve(segs.size());
        for (const Segment& s : segs) seg_values.push_back(s.values);

        ad::Tape tape;
        const BoundModel bound = bind_model(tape, result.params, true);
        const TrialForward fwd = forward_trial(bound, seg_values);
        const Var loss = compute_loss(bound, fwd, lt.labels, weights,
                                      config.label_smoothing,
                                      config.lambda_l2);
        const double loss_value = loss.value()(0, 0);
        if (!std::isfinite(loss_value)) {
          throw NonFiniteError("loss diverged at epoch " +
                               std::to_string(epoch + 1) + ", trial '" +
                               lt.trial.trial_id + "'");
        }
        epoch_loss += loss_value;
        tape.backward(loss);
        for (std::size_t i = 0; i < grad_accum.size(); ++i) {
          grad_accum[i] += inv_batch * bound.flat[i].grad();
        }
      }

      adam_step(result.params.params, grad_accum, adam, config.learning_rate);
      pos = batch_end;
    }
    result.loss_history.push_back(epoch_loss /
                                  static_cast<double>(prepared.size()));
  }
  return result;
}

void write_loss_log(const std::filesystem::path& path,
                    const std::vector<double>& history,
                    const std::string& fold_key) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write loss log to " + path.string());
  out << "epoch,loss,fold\n";
  char buf[64];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", history[i]);
    out << (i + 1) << "," << buf << "," << fold_key << "\n";
  }
}

}  // namespace rtrans
