#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eeqe/dataset.hpp"

namespace eeqe {

/// sqrt(pi/2): ratio of standard deviation to mean absolute deviation of a
/// zero-mean normal.
inline constexpr double kMaeToSigma = 1.2533141373155002512;

/// Converts a predicted mean absolute error to a standard deviation estimate.
template <std::floating_point Scalar>
constexpr Scalar mae_to_sigma(Scalar mae) {
  return mae * Scalar(kMaeToSigma);
}

template <typename Derived>
auto mae_to_sigma(const Eigen::MatrixBase<Derived>& mae) {
  return mae * typename Derived::Scalar(kMaeToSigma);
}

template <std::floating_point Scalar>
constexpr Scalar ucb_score(Scalar score, Scalar sigma, Scalar gamma) {
  return score + gamma * sigma;
}

struct BanditConfig {
  double gamma = 1.0;
  /// Total budget in layer evaluations; must cover |C| * start_layer.
  Index budget = 0;
  /// Layers computed for every candidate before the first pull.
  Index start_layer = 1;
};

/// One arm pull: `candidate` advanced to `layer`, after which `spent` budget
/// units have been used.
struct BanditPull {
  Index spent = 0;
  Index candidate = 0;
  Index layer = 0;

  friend bool operator==(const BanditPull&, const BanditPull&) = default;
};

struct BanditResult {
  Index selected = 0;
  Index cost = 0;
  std::vector<BanditPull> trace;
  /// Deepest layer explored per candidate (1-based).
  IndexVector deepest;
  Index layers = 0;
  Index start_layer = 1;
  Index budget = 0;
};

/// Upper-confidence-bound reranking over a |C| x |L| grid of layer scores and
/// predicted absolute errors. Every candidate is first evaluated up to
/// start_layer; then, while budget remains and some candidate is not fully
/// evaluated, the candidate with the largest score + gamma * sigma at its
/// deepest layer is advanced by one layer at unit cost. The result is the
/// candidate with the best deepest-layer score. Ties go to the lowest index.
BanditResult bandit_rerank(const Matrix& scores, const Matrix& errors, const BanditConfig& cfg);
BanditResult bandit_rerank(const CandidatePool& pool, const BanditConfig& cfg);

/// Budget in layer units for a fraction of full evaluation, rounded to nearest.
Index budget_from_fraction(double fraction, Index candidates, Index layers);

enum class BaselineMode { random, logprob_sum, logprob_avg };

std::string to_string(BaselineMode mode);
BaselineMode parse_baseline_mode(std::string_view name);

struct BaselineResult {
  Index selected = 0;
  Index cost = 0;
  std::vector<Index> subset;
};

/// Fully evaluates floor(budget / |L|) candidates (clamped to [1, |C|]) chosen
/// at random or by highest logprob, and returns the best final score among
/// them.
BaselineResult baseline_select(const CandidatePool& pool, BaselineMode mode, Index budget,
                               std::uint64_t seed);

struct LayerHistogram {
  double fraction = 0.0;
  /// counts(l - 1) = candidates whose deepest explored layer is l.
  IndexVector counts;
};

/// Replays the trace up to floor(fraction * budget) spent units. The
/// initialisation is always included.
std::vector<LayerHistogram> layer_snapshot(const BanditResult& result,
                                           std::span<const double> fractions);

/// `fraction,layer,count` with header; one row per layer.
void write_snapshot_csv(std::ostream& out, std::span<const LayerHistogram> snapshots);

/// Target-prefix length for a partial translation: fertility * src_len *
/// fraction rounded half up, at least 1.
int prefix_cutoff(int src_len, double fraction, double fertility);

struct PruneStage {
  /// Revealed target fraction at which the intermediate reranking happens.
  double at = 0.25;
  /// Fraction of the alive candidates kept (ceil, at least one).
  double keep = 1.0;
};

struct PruneSchedule {
  std::vector<PruneStage> stages;
};

void validate_schedule(const PruneSchedule& schedule);

struct StagedPruneResult {
  Index survivor = 0;
  /// Generated target length relative to generating every candidate in full.
  double cost_fraction = 0.0;
  std::vector<Index> alive_after_stage;
};

/// Prunes generations at quarter-length checkpoints using the records'
/// partial scores, then picks the best final score among the survivors.
StagedPruneResult staged_prune(const CandidatePool& pool, const PruneSchedule& schedule);

struct RerankRow {
  std::string pool_id;
  std::string method;
  double budget_fraction = 0.0;
  std::string selected_id;
  double selected_final_score = 0.0;
  bool is_top1 = false;
  Index cost_units = 0;
};

RerankRow make_rerank_row(const CandidatePool& pool, std::string method, double budget_fraction,
                          Index selected, Index cost_units);

/// `pool_id,method,budget_fraction,selected_id,selected_final_score,is_top1,cost_units`.
void write_rerank_csv(std::ostream& out, std::span<const RerankRow> rows);

}  // namespace eeqe
