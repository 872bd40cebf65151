#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "eeqe/types.hpp"

namespace eeqe {

struct LossConfig {
  double beta = 1.0;
};

struct InstantConfidenceLoss {
  double loss = 0.0;
  double d_y_hat = 0.0;
  double d_e_hat = 0.0;
};

/// (y - y_hat)^2 + beta * (|y - y_hat| - e_hat)^2.
///
/// d_y_hat differentiates the first term only: the residual inside the
/// confidence term is a stop-gradient target, so beta never reaches the
/// score output.
InstantConfidenceLoss instant_confidence_loss(double y, double y_hat, double e_hat,
                                              const LossConfig& cfg);

/// Sum over layers of (y - y_hat_i)^2.
double cumulative_layer_loss(double y, const Vector& y_hats);
/// d/d y_hat_i.
Vector cumulative_layer_loss_gradient(double y, const Vector& y_hats);

/// Sum over layers of (|y_hat_i - y_hat_last| - e_hat_i)^2. The deviation from
/// the last layer is a constant target.
double self_confidence_loss(const Vector& y_hats, const Vector& e_hats);
/// d/d e_hat_i; the score outputs receive no gradient from this term.
Vector self_confidence_loss_gradient(const Vector& y_hats, const Vector& e_hats);

/// Returns the loss and its analytic gradient at `params`.
using LossEvaluator = std::function<std::pair<double, Vector>(const Vector& params)>;

/// Largest component-wise relative error between the analytic gradient and
/// central differences, relative to max(|analytic|, 1e-8).
double finite_diff_check(const LossEvaluator& evaluate, const Vector& params, double step);

/// Central-difference gradient.
Vector finite_diff_gradient(const LossEvaluator& evaluate, const Vector& params, double step);

/// Largest absolute error relative to the largest analytic component. Better
/// conditioned than the component-wise check when many components are near
/// zero.
double finite_diff_check_normwise(const LossEvaluator& evaluate, const Vector& params,
                                  double step);

/// Per-layer feature vectors of one example; row i is layer i + 1.
struct ToyLayerStack {
  Matrix features;
  double target = 0.0;

  Index layers() const { return features.rows(); }
  Index dim() const { return features.cols(); }
};

/// Linear regressor with two outputs (score, predicted error). Either one
/// head shared by every layer or one head per layer.
struct ToyRegressorHead {
  std::vector<Matrix> weights;           // d x 2 each
  std::vector<Eigen::Vector2d> biases;

  bool shared() const { return weights.size() == 1; }
  std::size_t slot(Index layer) const {
    return shared() ? 0 : static_cast<std::size_t>(layer - 1);
  }
  /// Layer outputs for one stack: column 0 scores, column 1 errors.
  Matrix predict(const Matrix& features) const;
  Vector predict_scores(const Matrix& features) const { return predict(features).col(0); }
  Vector predict_errors(const Matrix& features) const { return predict(features).col(1); }

  /// Parameters flattened as [w_score, w_error, b_score, b_error] per head.
  Vector flatten() const;
  void assign(const Vector& params);
};

enum class TrainingMode { per_layer_supervised, final_only };

struct TrainingOptions {
  TrainingMode mode = TrainingMode::per_layer_supervised;
  int epochs = 500;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  double init_scale = 0.01;
  bool separate_heads = false;
  /// Halvings tried when a step fails to lower the loss before training stops.
  int max_halvings = 30;
};

/// Objective averaged over examples. Per-layer supervision sums the
/// cumulative layer loss and beta times the self-confidence loss; final-only
/// training keeps the last-layer score term alone.
struct ToyObjective {
  double total = 0.0;
  double score_term = 0.0;
  double confidence_term = 0.0;
  Vector gradient;  // matches ToyRegressorHead::flatten()
};

/// `frozen_targets`, when given, replaces the per-example self-confidence
/// targets |y_hat_i - y_hat_last| (used for gradient checks).
ToyObjective toy_objective(const ToyRegressorHead& head, std::span<const ToyLayerStack> stacks,
                           const LossConfig& cfg, TrainingMode mode,
                           const std::vector<Vector>* frozen_targets = nullptr);

std::vector<Vector> self_confidence_targets(const ToyRegressorHead& head,
                                            std::span<const ToyLayerStack> stacks);

ToyRegressorHead init_head(Index dim, Index layers, const TrainingOptions& options);

struct TrainingLogEntry {
  int epoch = 0;
  double total = 0.0;
  double score_term = 0.0;
  double confidence_term = 0.0;
  double learning_rate = 0.0;
  int halvings = 0;
};

struct TrainingResult {
  ToyRegressorHead head;
  std::vector<TrainingLogEntry> log;
  /// Set when no step size lowered the loss; training stopped at that epoch.
  bool stalled = false;
};

/// Deterministic full-batch gradient descent. A step that raises the loss is
/// retried at half the learning rate; the halved rate is kept afterwards.
/// Throws TrainingError on a non-finite loss.
TrainingResult train_toy_heads(std::span<const ToyLayerStack> stacks, const LossConfig& cfg,
                               const TrainingOptions& options);

/// `epoch,total,score_term,confidence_term,learning_rate,halvings`.
void write_training_log_csv(std::ostream& out, std::span<const TrainingLogEntry> log);

/// Fixture where the target signal moves from feature 1 (early layers) to
/// feature 0 (late layers). Feature 0 carries layer noise that fades with
/// depth, feature 1 vanishes at the last layer, remaining features are
/// nuisance noise. A head trained on the last layer alone never learns to use
/// feature 1.
struct ToyStackConfig {
  Index n_examples = 400;
  Index layers = 24;
  Index dim = 6;
  double early_noise = 2.0;
  double nuisance_noise = 0.3;
  std::uint64_t seed = 0;
};

std::vector<ToyLayerStack> generate_toy_stacks(const ToyStackConfig& cfg);

/// Pearson correlation, across stacks, between the head's score at `layer`
/// and at the last layer.
double layer_agreement(const ToyRegressorHead& head, std::span<const ToyLayerStack> stacks,
                       Index layer);

}  // namespace eeqe
