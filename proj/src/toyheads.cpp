#include "eeqe/toyheads.hpp"

#include <cmath>
#include <ostream>

#include "eeqe/errors.hpp"
#include "eeqe/format.hpp"
#include "eeqe/metrics.hpp"
#include "eeqe/rng.hpp"

namespace eeqe {

InstantConfidenceLoss instant_confidence_loss(double y, double y_hat, double e_hat,
                                              const LossConfig& cfg) {
  const double residual = y - y_hat;
  const double abs_residual = std::abs(residual);  // stop-gradient target
  const double conf_residual = abs_residual - e_hat;
  InstantConfidenceLoss out;
  out.loss = residual * residual + cfg.beta * conf_residual * conf_residual;
  out.d_y_hat = 2.0 * (y_hat - y);
  out.d_e_hat = 2.0 * cfg.beta * (e_hat - abs_residual);
  return out;
}

double cumulative_layer_loss(double y, const Vector& y_hats) {
  if (y_hats.size() == 0) throw ArgumentError("cumulative_layer_loss: no layers");
  return (y_hats.array() - y).square().sum();
}

Vector cumulative_layer_loss_gradient(double y, const Vector& y_hats) {
  if (y_hats.size() == 0) throw ArgumentError("cumulative_layer_loss: no layers");
  return 2.0 * (y_hats.array() - y).matrix();
}

namespace {

void check_same_length(const Vector& y_hats, const Vector& e_hats) {
  if (y_hats.size() != e_hats.size()) throw ArgumentError("self_confidence_loss: length mismatch");
  if (y_hats.size() == 0) throw ArgumentError("self_confidence_loss: no layers");
}

}  // namespace

double self_confidence_loss(const Vector& y_hats, const Vector& e_hats) {
  check_same_length(y_hats, e_hats);
  const double last = y_hats(y_hats.size() - 1);
  return ((y_hats.array() - last).abs() - e_hats.array()).square().sum();
}

Vector self_confidence_loss_gradient(const Vector& y_hats, const Vector& e_hats) {
  check_same_length(y_hats, e_hats);
  const double last = y_hats(y_hats.size() - 1);
  return 2.0 * (e_hats.array() - (y_hats.array() - last).abs()).matrix();
}

Vector finite_diff_gradient(const LossEvaluator& evaluate, const Vector& params, double step) {
  if (!(step > 0.0)) throw ArgumentError("finite_diff_check: step must be positive");
  if (!std::isfinite(evaluate(params).first)) {
    throw NumericError("finite_diff_check: non-finite loss");
  }
  Vector numeric(params.size());
  Vector probe = params;
  for (Index i = 0; i < params.size(); ++i) {
    probe(i) = params(i) + step;
    const double up = evaluate(probe).first;
    probe(i) = params(i) - step;
    const double down = evaluate(probe).first;
    probe(i) = params(i);
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_check: non-finite loss at component " + std::to_string(i));
    }
    numeric(i) = (up - down) / (2.0 * step);
  }
  return numeric;
}

namespace {

Vector analytic_gradient(const LossEvaluator& evaluate, const Vector& params) {
  Vector analytic = evaluate(params).second;
  if (analytic.size() != params.size()) {
    throw ArgumentError("finite_diff_check: gradient size differs from parameter count");
  }
  return analytic;
}

}  // namespace

double finite_diff_check(const LossEvaluator& evaluate, const Vector& params, double step) {
  const Vector numeric = finite_diff_gradient(evaluate, params, step);
  const Vector analytic = analytic_gradient(evaluate, params);
  return ((numeric - analytic).array().abs() / analytic.array().abs().max(1e-8)).maxCoeff();
}

double finite_diff_check_normwise(const LossEvaluator& evaluate, const Vector& params,
                                  double step) {
  const Vector numeric = finite_diff_gradient(evaluate, params, step);
  const Vector analytic = analytic_gradient(evaluate, params);
  return (numeric - analytic).lpNorm<Eigen::Infinity>() /
         std::max(analytic.lpNorm<Eigen::Infinity>(), 1e-8);
}

Matrix ToyRegressorHead::predict(const Matrix& features) const {
  const Index layers = features.rows();
  if (!shared() && static_cast<Index>(weights.size()) != layers) {
    throw ArgumentError("toy head: per-layer head count differs from layer count");
  }
  Matrix out(layers, 2);
  for (Index l = 1; l <= layers; ++l) {
    const std::size_t s = slot(l);
    out.row(l - 1) = features.row(l - 1) * weights[s] + biases[s].transpose();
  }
  return out;
}

Vector ToyRegressorHead::flatten() const {
  const Index d = weights.front().rows();
  Vector p(static_cast<Index>(weights.size()) * (2 * d + 2));
  Index pos = 0;
  for (std::size_t s = 0; s < weights.size(); ++s) {
    p.segment(pos, d) = weights[s].col(0);
    p.segment(pos + d, d) = weights[s].col(1);
    p(pos + 2 * d) = biases[s](0);
    p(pos + 2 * d + 1) = biases[s](1);
    pos += 2 * d + 2;
  }
  return p;
}

void ToyRegressorHead::assign(const Vector& params) {
  const Index d = weights.front().rows();
  if (params.size() != static_cast<Index>(weights.size()) * (2 * d + 2)) {
    throw ArgumentError("toy head: parameter vector has wrong size");
  }
  Index pos = 0;
  for (std::size_t s = 0; s < weights.size(); ++s) {
    weights[s].col(0) = params.segment(pos, d);
    weights[s].col(1) = params.segment(pos + d, d);
    biases[s](0) = params(pos + 2 * d);
    biases[s](1) = params(pos + 2 * d + 1);
    pos += 2 * d + 2;
  }
}

std::vector<Vector> self_confidence_targets(const ToyRegressorHead& head,
                                            std::span<const ToyLayerStack> stacks) {
  std::vector<Vector> targets;
  targets.reserve(stacks.size());
  for (const auto& s : stacks) {
    const Vector scores = head.predict_scores(s.features);
    targets.push_back((scores.array() - scores(scores.size() - 1)).abs().matrix());
  }
  return targets;
}

ToyObjective toy_objective(const ToyRegressorHead& head, std::span<const ToyLayerStack> stacks,
                           const LossConfig& cfg, TrainingMode mode,
                           const std::vector<Vector>* frozen_targets) {
  if (stacks.empty()) throw ArgumentError("toy objective: no examples");
  const Index d = head.weights.front().rows();
  const Index per_head = 2 * d + 2;

  ToyObjective obj;
  obj.gradient = Vector::Zero(static_cast<Index>(head.weights.size()) * per_head);
  const std::vector<Vector> computed =
      frozen_targets ? std::vector<Vector>{} : self_confidence_targets(head, stacks);
  const std::vector<Vector>& targets = frozen_targets ? *frozen_targets : computed;

  for (std::size_t n = 0; n < stacks.size(); ++n) {
    const auto& s = stacks[n];
    if (s.dim() != d) throw ArgumentError("toy objective: feature dimension mismatch");
    const Matrix out = head.predict(s.features);
    const Vector scores = out.col(0);
    const Vector errors = out.col(1);
    const Index layers = s.layers();

    Vector d_scores = Vector::Zero(layers);
    Vector d_errors = Vector::Zero(layers);
    if (mode == TrainingMode::final_only) {
      const double r = scores(layers - 1) - s.target;
      obj.score_term += r * r;
      d_scores(layers - 1) = 2.0 * r;
    } else {
      obj.score_term += cumulative_layer_loss(s.target, scores);
      d_scores = cumulative_layer_loss_gradient(s.target, scores);
      const Vector& t = targets[n];
      obj.confidence_term += (t - errors).squaredNorm();
      d_errors = 2.0 * cfg.beta * (errors - t);
    }

    for (Index l = 1; l <= layers; ++l) {
      const Index base = static_cast<Index>(head.slot(l)) * per_head;
      const auto x = s.features.row(l - 1).transpose();
      obj.gradient.segment(base, d) += d_scores(l - 1) * x;
      obj.gradient.segment(base + d, d) += d_errors(l - 1) * x;
      obj.gradient(base + 2 * d) += d_scores(l - 1);
      obj.gradient(base + 2 * d + 1) += d_errors(l - 1);
    }
  }
  const double scale = 1.0 / static_cast<double>(stacks.size());
  obj.score_term *= scale;
  obj.confidence_term *= scale;
  obj.gradient *= scale;
  obj.total = obj.score_term + cfg.beta * obj.confidence_term;
  return obj;
}

ToyRegressorHead init_head(Index dim, Index layers, const TrainingOptions& options) {
  auto rng = CounterRng::derive(options.seed, "toy_head_init");
  const std::size_t heads = options.separate_heads ? static_cast<std::size_t>(layers) : 1;
  ToyRegressorHead head;
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix w(dim, 2);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = options.init_scale * rng.normal();
    head.weights.push_back(std::move(w));
    head.biases.push_back(Eigen::Vector2d::Zero());
  }
  return head;
}

TrainingResult train_toy_heads(std::span<const ToyLayerStack> stacks, const LossConfig& cfg,
                               const TrainingOptions& options) {
  if (stacks.size() < 2) throw ArgumentError("train_toy_heads: need at least two examples");
  if (options.epochs < 0) throw ArgumentError("train_toy_heads: negative epoch count");
  if (!(options.learning_rate > 0.0)) {
    throw ArgumentError("train_toy_heads: learning rate must be positive");
  }
  if (options.separate_heads && options.mode == TrainingMode::final_only) {
    throw ArgumentError("train_toy_heads: final-only training uses a shared head");
  }
  const Index layers = stacks.front().layers();
  const Index dim = stacks.front().dim();
  for (const auto& s : stacks) {
    if (s.layers() != layers || s.dim() != dim) {
      throw ArgumentError("train_toy_heads: stacks differ in shape");
    }
  }

  TrainingResult result;
  result.head = init_head(dim, layers, options);
  double lr = options.learning_rate;
  ToyObjective current = toy_objective(result.head, stacks, cfg, options.mode);
  if (!std::isfinite(current.total)) throw TrainingError(0, "non-finite loss at initialisation");

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    const Vector params = result.head.flatten();
    ToyRegressorHead trial = result.head;
    int halvings = 0;
    bool accepted = false;
    ToyObjective next;
    while (true) {
      trial.assign(params - lr * current.gradient);
      next = toy_objective(trial, stacks, cfg, options.mode);
      if (!std::isfinite(next.total)) throw TrainingError(epoch, "non-finite loss");
      if (next.total <= current.total) {
        accepted = true;
        break;
      }
      if (halvings == options.max_halvings) break;
      lr *= 0.5;
      ++halvings;
    }
    if (!accepted) {
      result.stalled = true;
      break;
    }
    result.head = std::move(trial);
    current = std::move(next);
    result.log.push_back(
        {epoch, current.total, current.score_term, current.confidence_term, lr, halvings});
  }
  return result;
}

void write_training_log_csv(std::ostream& out, std::span<const TrainingLogEntry> log) {
  out << "epoch,total,score_term,confidence_term,learning_rate,halvings\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_number(e.total) << ',' << format_number(e.score_term) << ','
        << format_number(e.confidence_term) << ',' << format_number(e.learning_rate) << ','
        << e.halvings << '\n';
  }
}

std::vector<ToyLayerStack> generate_toy_stacks(const ToyStackConfig& cfg) {
  if (cfg.dim < 2) throw ArgumentError("toy stacks: need at least two feature dimensions");
  if (cfg.layers < 2) throw ArgumentError("toy stacks: need at least two layers");
  auto rng = CounterRng::derive(cfg.seed, "toy_stacks");
  std::vector<ToyLayerStack> stacks;
  stacks.reserve(static_cast<std::size_t>(cfg.n_examples));
  for (Index n = 0; n < cfg.n_examples; ++n) {
    const double q = rng.normal();
    ToyLayerStack s;
    s.target = q;
    s.features.resize(cfg.layers, cfg.dim);
    for (Index l = 0; l < cfg.layers; ++l) {
      const double depth = static_cast<double>(l) / static_cast<double>(cfg.layers - 1);
      s.features(l, 0) = depth * q + (1.0 - depth) * cfg.early_noise * rng.normal();
      s.features(l, 1) = (1.0 - depth) * q;
      for (Index k = 2; k < cfg.dim; ++k) s.features(l, k) = cfg.nuisance_noise * rng.normal();
    }
    stacks.push_back(std::move(s));
  }
  return stacks;
}

double layer_agreement(const ToyRegressorHead& head, std::span<const ToyLayerStack> stacks,
                       Index layer) {
  const auto n = static_cast<Index>(stacks.size());
  Vector mid(n), last(n);
  for (Index i = 0; i < n; ++i) {
    const Vector scores = head.predict_scores(stacks[static_cast<std::size_t>(i)].features);
    mid(i) = scores(layer - 1);
    last(i) = scores(scores.size() - 1);
  }
  return pearson(mid, last);
}

}  // namespace eeqe
