#include <set>

#include "doctest.h"
#include "eeqe/errors.hpp"
#include "eeqe/metrics.hpp"
#include "eeqe/synth.hpp"

using namespace eeqe;

TEST_CASE("zero noise collapses onto the final score") {
  SynthConfig cfg;
  cfg.noise_sd_layer1 = 0.0;
  CounterRng rng(1);
  const auto t = generate_trajectory(cfg, rng);
  CHECK((t.trajectory.scores.array() == t.final_truth).all());
  CHECK((t.trajectory.errors.array() == 0.0).all());
}

TEST_CASE("layer noise decays geometrically") {
  SynthConfig cfg;
  cfg.noise_decay = 0.8;
  const Vector sd = layer_noise_sd(cfg);
  CHECK(sd.size() == cfg.layers);
  CHECK(sd(0) == 15.0);
  CHECK(sd(1) / sd(0) == doctest::Approx(0.8));
  CHECK(sd(10) / sd(9) == doctest::Approx(0.8));
}

TEST_CASE("last layer is exact") {
  SynthConfig cfg;
  CounterRng rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto t = generate_trajectory(cfg, rng);
    CHECK(t.trajectory.final_score() == t.final_truth);
    CHECK(t.trajectory.final_error() == 0.0);
  }
  cfg.instant_confidence = true;
  const auto t = generate_trajectory(cfg, rng);
  CHECK(t.trajectory.final_score() == t.final_truth);
  CHECK(t.trajectory.final_error() > 0.0);
}

TEST_CASE("error heads are calibrated per layer") {
  SynthConfig cfg;
  CounterRng rng(3);
  const Index n = 100000;
  Vector abs_err = Vector::Zero(cfg.layers), pred = Vector::Zero(cfg.layers);
  for (Index s = 0; s < n; ++s) {
    const auto t = generate_trajectory(cfg, rng);
    abs_err += (t.trajectory.scores.array() - t.final_truth).abs().matrix();
    pred += t.trajectory.errors;
  }
  for (Index i = 0; i + 1 < cfg.layers; ++i) {
    CAPTURE(i);
    CHECK(abs_err(i) / pred(i) == doctest::Approx(1.0).epsilon(0.02));
  }
}

TEST_CASE("instant confidence predicts the human gap") {
  SynthConfig cfg;
  cfg.instant_confidence = true;
  CounterRng rng(4);
  double gap = 0, pred = 0;
  for (int s = 0; s < 100000; ++s) {
    const auto t = generate_trajectory(cfg, rng);
    gap += std::abs(t.human_score - t.final_truth);
    pred += t.trajectory.final_error();
  }
  CHECK(gap / pred == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("layer scores converge towards the last layer") {
  SynthConfig cfg;
  CounterRng rng(5);
  const Index n = 10000;
  Matrix m(n, cfg.layers);
  for (Index s = 0; s < n; ++s) m.row(s) = generate_trajectory(cfg, rng).trajectory.scores;
  double previous = -1.0;
  for (Index i = 0; i < cfg.layers; ++i) {
    const double r = pearson(m.col(i), m.col(cfg.layers - 1));
    CHECK(r >= previous);
    previous = r;
  }
  CHECK(previous == 1.0);
}

TEST_CASE("determinism") {
  SynthConfig cfg;
  cfg.n_segments = 50;
  cfg.n_languages = 3;
  cfg.n_systems = 2;
  cfg.seed = 77;
  const auto a = generate_qe_dataset(cfg);
  const auto b = generate_qe_dataset(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(serialize_record(a[i]) == serialize_record(b[i]));
  }
  cfg.seed = 78;
  CHECK(serialize_record(generate_qe_dataset(cfg)[0]) != serialize_record(a[0]));

  cfg.n_candidates = 5;
  const auto p = generate_pools(cfg, 3);
  const auto q = generate_pools(cfg, 3);
  CHECK(serialize_record(p[2].candidates[4]) == serialize_record(q[2].candidates[4]));
}

TEST_CASE("qe dataset layout") {
  SynthConfig cfg;
  cfg.n_segments = 60;
  cfg.n_languages = 3;
  cfg.n_systems = 4;
  const auto recs = generate_qe_dataset(cfg);
  REQUIRE(recs.size() == 60);
  std::set<std::string> ids, langs, systems;
  for (const auto& r : recs) {
    ids.insert(r.segment_id);
    langs.insert(r.lang_pair);
    systems.insert(r.system_id);
    CHECK(r.human_score.has_value());
    CHECK_NOTHROW(validate_record(r));
  }
  CHECK(ids.size() == 60);
  CHECK(langs.size() == 3);
  CHECK(systems.size() == 4);
}

TEST_CASE("pools") {
  SynthConfig cfg;
  cfg.n_candidates = 1;
  CounterRng rng(6);
  CHECK(generate_pool(cfg, rng, "x").size() == 1);

  SUBCASE("logprob link is informative but noisy") {
    cfg.n_candidates = 10000;
    const auto pool = generate_pool(cfg, rng, "big");
    Vector lp(pool.size()), fin = pool.final_scores();
    for (Index c = 0; c < pool.size(); ++c) {
      const auto& rec = pool.candidates[static_cast<std::size_t>(c)];
      lp(c) = *rec.logprob_avg;
      CHECK(*rec.logprob_sum == doctest::Approx(*rec.logprob_avg * rec.tgt_len));
      CHECK_FALSE(rec.human_score.has_value());
    }
    const double r = pearson(lp, fin);
    CHECK(r >= 0.2);
    CHECK(r <= 0.6);
  }
  SUBCASE("candidate spread within a pool") {
    cfg.n_candidates = 20000;
    const Vector fin = generate_pool(cfg, rng, "wide").final_scores();
    const double sd = std::sqrt((fin.array() - fin.mean()).square().mean());
    CHECK(sd == doctest::Approx(cfg.candidate_sd).epsilon(0.02));
  }
}

TEST_CASE("partial scores") {
  SynthConfig cfg;
  CounterRng rng(8);
  const Vector finals = Vector::LinSpaced(5, 60, 80);
  const std::vector<double> only_full{1.0};
  const auto exact = generate_partial_scores(cfg, finals, only_full, rng);
  for (Index c = 0; c < 5; ++c) {
    CHECK(exact[static_cast<std::size_t>(c)].at(1.0) == finals(c));
  }
  const std::vector<double> quarters{0.25, 0.5, 0.75, 1.0};
  const auto q = generate_partial_scores(cfg, finals, quarters, rng);
  for (const auto& m : q) CHECK(m.size() == 4);
  CHECK(partial_sd(cfg, 0.25) > partial_sd(cfg, 0.75));
  CHECK(partial_sd(cfg, 1.0) == 0.0);

  const std::vector<double> unsorted{0.5, 0.25, 1.0};
  CHECK_THROWS_AS(generate_partial_scores(cfg, finals, unsorted, rng), ArgumentError);
  const std::vector<double> no_full{0.25, 0.5};
  CHECK_THROWS_AS(generate_partial_scores(cfg, finals, no_full, rng), ArgumentError);

  cfg.partial_fractions = quarters;
  cfg.n_candidates = 3;
  const auto pool = generate_pool(cfg, rng, "p");
  for (const auto& c : pool.candidates) {
    CHECK(c.partial_scores.size() == 4);
    CHECK(c.partial_scores.at(1.0) == c.final_score());
  }
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.noise_decay = 1.0;
  CHECK_THROWS_AS(validate_config(cfg), ArgumentError);
  cfg = {};
  cfg.layers = 0;
  CHECK_THROWS_AS(validate_config(cfg), ArgumentError);
  cfg = {};
  cfg.miscalibration = -0.1;
  CHECK_THROWS_AS(validate_config(cfg), ArgumentError);
  CHECK_NOTHROW(validate_config(SynthConfig{}));
}
