#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eeqe/dataset.hpp"

namespace eeqe {

enum class ExitPolicyKind { constant, variance, confidence };

std::string to_string(ExitPolicyKind kind);
ExitPolicyKind parse_exit_policy(std::string_view name);

struct ExitPolicyConfig {
  ExitPolicyKind kind = ExitPolicyKind::confidence;
  Index k = 1;        // constant
  double tau = 0.0;   // variance, confidence
  Index window = 3;   // variance
};

/// Cost is counted in layers and always equals the exit layer.
struct ExitResult {
  double score = 0.0;
  Index exit_layer = 0;
  Index cost = 0;
};

/// Stops after layer k (1 <= k <= |L|).
ExitResult constant_exit(const LayerTrajectory& t, Index k);

/// Stops at the first layer i >= window where the population variance of the
/// last `window` scores is strictly below tau. Trajectories shorter than the
/// window never exit early.
ExitResult variance_exit(const LayerTrajectory& t, double tau, Index window = 3);

/// Stops at the first layer whose predicted error is strictly below tau.
/// Predicted errors are used as given; negative values are legal.
ExitResult confidence_exit(const LayerTrajectory& t, double tau);

ExitResult apply_exit_policy(const LayerTrajectory& t, const ExitPolicyConfig& cfg);

struct SweepPoint {
  ExitPolicyKind policy = ExitPolicyKind::constant;
  double parameter = 0.0;
  double cost_fraction = 0.0;
  double corr_final = 0.0;
  double corr_human = 0.0;
};

/// Applies the policy with every parameter value (k for constant, tau
/// otherwise) to all records and reports the mean cost fraction together with
/// Pearson correlation of exited scores against final-layer and human scores.
/// Points are sorted by cost fraction; equal costs keep parameter order.
std::vector<SweepPoint> budget_sweep(std::span<const SegmentRecord> records, ExitPolicyKind kind,
                                     std::span<const double> parameters, Index window = 3);

/// `policy,parameter,cost_fraction,corr_final,corr_human` with header.
void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points);

}  // namespace eeqe
