#include "eeqe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eeqe/errors.hpp"

namespace eeqe {

namespace {

const double kSqrtTwoOverPi = std::sqrt(2.0 / std::numbers::pi);

std::string padded(Index i, int width) {
  std::string s = std::to_string(i);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

int source_length(CounterRng& rng) { return 5 + static_cast<int>(rng.uniform_index(36)); }

int target_length(int src_len, CounterRng& rng) {
  return std::max(1, static_cast<int>(std::lround(1.1 * src_len + rng.normal(0.0, 2.0))));
}

}  // namespace

void validate_config(const SynthConfig& cfg) {
  if (cfg.layers < 1) throw ArgumentError("synth: layers must be positive");
  if (cfg.n_segments < 1) throw ArgumentError("synth: n_segments must be positive");
  if (cfg.n_candidates < 1) throw ArgumentError("synth: n_candidates must be positive");
  if (cfg.n_languages < 1 || cfg.n_systems < 1) {
    throw ArgumentError("synth: n_languages and n_systems must be positive");
  }
  if (!(cfg.noise_sd_layer1 >= 0.0)) throw ArgumentError("synth: noise_sd_layer1 must be >= 0");
  if (!(cfg.noise_decay > 0.0 && cfg.noise_decay < 1.0)) {
    throw ArgumentError("synth: noise_decay must lie in (0, 1)");
  }
  if (!(cfg.human_noise_sd >= 0.0)) throw ArgumentError("synth: human_noise_sd must be >= 0");
  if (!(cfg.miscalibration >= 0.0)) throw ArgumentError("synth: miscalibration must be >= 0");
  if (!(cfg.difficulty_sd >= 0.0) || !(cfg.human_difficulty_sd >= 0.0)) {
    throw ArgumentError("synth: difficulty spreads must be >= 0");
  }
}

Vector layer_noise_sd(const SynthConfig& cfg) {
  Vector sd(cfg.layers);
  for (Index i = 0; i < cfg.layers; ++i) {
    sd(i) = cfg.noise_sd_layer1 * std::pow(cfg.noise_decay, static_cast<double>(i));
  }
  return sd;
}

SyntheticTrajectory generate_trajectory(const SynthConfig& cfg, CounterRng& rng) {
  const double final_truth = rng.normal(cfg.final_score_mean, cfg.final_score_sd);
  return generate_trajectory(cfg, final_truth, rng);
}

SyntheticTrajectory generate_trajectory(const SynthConfig& cfg, double final_truth,
                                        CounterRng& rng) {
  const Index n = cfg.layers;
  const Vector base_sd = layer_noise_sd(cfg);
  const double difficulty = std::exp(cfg.difficulty_sd * rng.normal());

  SyntheticTrajectory out;
  out.final_truth = final_truth;
  out.trajectory.scores.resize(n);
  out.trajectory.errors.resize(n);
  for (Index i = 0; i + 1 < n; ++i) {
    const double sd = base_sd(i) * difficulty;
    out.trajectory.scores(i) = final_truth + sd * rng.normal();
    const double perturb = cfg.miscalibration > 0.0 ? cfg.miscalibration * rng.normal() : 0.0;
    out.trajectory.errors(i) = sd * kSqrtTwoOverPi * (1.0 + perturb);
  }
  out.trajectory.scores(n - 1) = final_truth;
  out.trajectory.errors(n - 1) = 0.0;

  const double human_sd = cfg.human_noise_sd * std::exp(cfg.human_difficulty_sd * rng.normal());
  out.human_score = final_truth + human_sd * rng.normal();
  if (cfg.instant_confidence) {
    const double perturb = cfg.miscalibration > 0.0 ? cfg.miscalibration * rng.normal() : 0.0;
    out.trajectory.errors(n - 1) = human_sd * kSqrtTwoOverPi * (1.0 + perturb);
  }
  return out;
}

double partial_sd(const SynthConfig& cfg, double fraction) {
  return cfg.partial_noise_sd * (1.0 - fraction);
}

std::vector<std::map<double, double>> generate_partial_scores(const SynthConfig& cfg,
                                                              const Vector& final_truths,
                                                              std::span<const double> fractions,
                                                              CounterRng& rng) {
  if (fractions.empty()) throw ArgumentError("partial scores: no fractions");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] <= 1.0)) {
      throw ArgumentError("partial scores: fraction outside (0, 1]");
    }
    if (i > 0 && !(fractions[i] > fractions[i - 1])) {
      throw ArgumentError("partial scores: fractions must be sorted ascending");
    }
  }
  if (fractions.back() != 1.0) throw ArgumentError("partial scores: last fraction must be 1.0");

  std::vector<std::map<double, double>> out(static_cast<std::size_t>(final_truths.size()));
  for (Index c = 0; c < final_truths.size(); ++c) {
    auto& m = out[static_cast<std::size_t>(c)];
    for (double f : fractions) {
      m[f] = f == 1.0 ? final_truths(c) : final_truths(c) + partial_sd(cfg, f) * rng.normal();
    }
  }
  return out;
}

CandidatePool generate_pool(const SynthConfig& cfg, CounterRng& rng,
                            const std::string& source_id) {
  validate_config(cfg);
  CandidatePool pool;
  pool.source_id = source_id;
  const double pool_mean = rng.normal(cfg.final_score_mean, cfg.pool_spread_sd);
  const int src_len = source_length(rng);
  const int width = static_cast<int>(std::to_string(cfg.n_candidates - 1).size());

  Vector finals(cfg.n_candidates);
  for (Index c = 0; c < cfg.n_candidates; ++c) {
    const double final_truth = rng.normal(pool_mean, cfg.candidate_sd);
    SyntheticTrajectory st = generate_trajectory(cfg, final_truth, rng);
    SegmentRecord r;
    r.segment_id = source_id + "-c" + padded(c, width);
    r.source_id = source_id;
    r.lang_pair = "xx-yy";
    r.system_id = "candidate";
    r.src_len = src_len;
    r.tgt_len = target_length(src_len, rng);
    const double avg = cfg.logprob_intercept +
                       cfg.logprob_slope * (final_truth - cfg.final_score_mean) +
                       rng.normal(0.0, cfg.logprob_noise_sd);
    r.logprob_avg = avg;
    r.logprob_sum = avg * r.tgt_len;
    r.trajectory = std::move(st.trajectory);
    finals(c) = final_truth;
    pool.candidates.push_back(std::move(r));
  }
  if (!cfg.partial_fractions.empty()) {
    auto partial = generate_partial_scores(cfg, finals, cfg.partial_fractions, rng);
    for (Index c = 0; c < cfg.n_candidates; ++c) {
      pool.candidates[static_cast<std::size_t>(c)].partial_scores =
          std::move(partial[static_cast<std::size_t>(c)]);
    }
  }
  return pool;
}

std::vector<CandidatePool> generate_pools(const SynthConfig& cfg, Index n_pools) {
  std::vector<CandidatePool> pools;
  pools.reserve(static_cast<std::size_t>(n_pools));
  const int width = static_cast<int>(std::to_string(std::max<Index>(n_pools - 1, 0)).size());
  for (Index p = 0; p < n_pools; ++p) {
    auto rng = CounterRng::derive(cfg.seed, "pool", static_cast<std::uint64_t>(p));
    pools.push_back(generate_pool(cfg, rng, "src" + padded(p, width)));
  }
  return pools;
}

std::vector<SegmentRecord> generate_qe_dataset(const SynthConfig& cfg) {
  validate_config(cfg);
  // System quality offsets per (language, system).
  auto sys_rng = CounterRng::derive(cfg.seed, "system_quality");
  std::vector<double> offset(static_cast<std::size_t>(cfg.n_languages * cfg.n_systems));
  for (auto& o : offset) o = sys_rng.normal(0.0, cfg.system_sd);

  const int width = static_cast<int>(std::to_string(cfg.n_segments - 1).size());
  std::vector<SegmentRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.n_segments));
  for (Index j = 0; j < cfg.n_segments; ++j) {
    auto rng = CounterRng::derive(cfg.seed, "segment", static_cast<std::uint64_t>(j));
    const Index lang = j % cfg.n_languages;
    const Index sys = (j / cfg.n_languages) % cfg.n_systems;
    const double mean = cfg.final_score_mean +
                        offset[static_cast<std::size_t>(lang * cfg.n_systems + sys)];
    SyntheticTrajectory st =
        generate_trajectory(cfg, rng.normal(mean, cfg.final_score_sd), rng);

    SegmentRecord r;
    r.segment_id = "seg" + padded(j, width);
    r.source_id = r.segment_id;
    r.lang_pair = "l" + padded(lang, 2);
    r.system_id = "sys" + padded(sys, 2);
    r.src_len = source_length(rng);
    r.tgt_len = target_length(r.src_len, rng);
    r.human_score = st.human_score;
    r.trajectory = std::move(st.trajectory);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace eeqe
