#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eeqe/dataset.hpp"
#include "eeqe/rng.hpp"

namespace eeqe {

/// Generator settings. Scores are on a 0-100 style scale.
///
/// Layer i of a trajectory deviates from the final score by Normal(0, s_i)
/// with s_i = noise_sd_layer1 * d * noise_decay^(i-1), where d is a per
/// trajectory difficulty factor exp(difficulty_sd * z). The error head
/// reports s_i * sqrt(2/pi), the mean absolute deviation, optionally scaled by
/// (1 + miscalibration * z'). The last layer is exact and reports zero error,
/// unless instant_confidence is set, in which case it reports the expected
/// absolute deviation of the human score.
struct SynthConfig {
  std::uint64_t seed = 0;
  Index layers = 24;
  Index n_segments = 1000;
  Index n_candidates = 200;
  double final_score_mean = 75.0;
  double final_score_sd = 10.0;
  double noise_sd_layer1 = 15.0;
  double noise_decay = 0.85;
  double difficulty_sd = 0.5;
  double human_noise_sd = 10.0;
  double human_difficulty_sd = 0.5;
  double miscalibration = 0.0;
  bool instant_confidence = false;

  // QE dataset layout.
  Index n_languages = 1;
  Index n_systems = 1;
  double system_sd = 2.0;

  // Candidate pools.
  double pool_spread_sd = 5.0;
  /// Spread of candidate final scores around their pool mean.
  double candidate_sd = 3.0;
  /// logprob_avg = intercept + slope * (final - final_score_mean) + Normal(0, noise).
  double logprob_intercept = -1.5;
  double logprob_slope = 0.035;
  double logprob_noise_sd = 0.23;
  /// Partial-translation scores attached to pool candidates; empty for none.
  std::vector<double> partial_fractions;
  /// Noise of a partial score at fraction f is partial_noise_sd * (1 - f).
  double partial_noise_sd = 12.0;
};

void validate_config(const SynthConfig& cfg);

/// Per-layer noise sd for a trajectory of unit difficulty.
Vector layer_noise_sd(const SynthConfig& cfg);

struct SyntheticTrajectory {
  LayerTrajectory trajectory;
  double final_truth = 0.0;
  double human_score = 0.0;
};

/// Draws y_final ~ Normal(final_score_mean, final_score_sd) and a trajectory
/// converging to it.
SyntheticTrajectory generate_trajectory(const SynthConfig& cfg, CounterRng& rng);
/// Same, around a given final score.
SyntheticTrajectory generate_trajectory(const SynthConfig& cfg, double final_truth,
                                        CounterRng& rng);

double partial_sd(const SynthConfig& cfg, double fraction);

/// One fraction -> score map per final score. Fractions must be ascending and
/// end at 1.0, where the score is exact.
std::vector<std::map<double, double>> generate_partial_scores(const SynthConfig& cfg,
                                                              const Vector& final_truths,
                                                              std::span<const double> fractions,
                                                              CounterRng& rng);

/// n_candidates candidates of one source. Human scores are left empty.
CandidatePool generate_pool(const SynthConfig& cfg, CounterRng& rng,
                            const std::string& source_id = "src0");

/// n_pools pools, each from its own derived stream of cfg.seed.
std::vector<CandidatePool> generate_pools(const SynthConfig& cfg, Index n_pools);

/// n_segments scored segments with human scores, spread round-robin over
/// n_languages and n_systems.
std::vector<SegmentRecord> generate_qe_dataset(const SynthConfig& cfg);

}  // namespace eeqe
