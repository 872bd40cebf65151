// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "eeqe/bandit.hpp"
#include "eeqe/cli.hpp"
#include "eeqe/deferral.hpp"
#include "eeqe/exitpolicy.hpp"
#include "eeqe/metrics.hpp"
#include "eeqe/rng.hpp"
#include "eeqe/synth.hpp"
#include "eeqe/toyheads.hpp"
#include "support/reference.hpp"

namespace fs = std::filesystem;
using namespace eeqe;

namespace {

// Pinned tolerances.
constexpr double kCorrTol = 1e-10;
constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-6;
constexpr double kSigmaTol = 0.01;
constexpr double kCostTarget = 0.5;
constexpr double kCostTol = 0.02;
constexpr double kExitMargin = 0.01;
constexpr double kExitFloor = 0.95;
constexpr double kTop1Margin = 0.10;
constexpr double kMonotoneTol = 1e-9;
constexpr double kCalibrationSpearman = 0.95;
constexpr double kToyGain = 0.1;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... xs) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, xs...);
  return buf;
}

std::vector<double> as_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

std::vector<std::vector<double>> rows(const Matrix& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = as_std(m.row(i).transpose());
  return out;
}

Outcome correlation_oracle() {
  CounterRng rng(CounterRng::derive(1, "acceptance_corr").key());
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Index n = 3 + static_cast<Index>(rng.uniform_index(48));
    Vector x(n), y(n);
    for (Index i = 0; i < n; ++i) {
      x(i) = t % 2 ? rng.normal() : static_cast<double>(rng.uniform_index(5));
      y(i) = t % 2 ? rng.normal() + 0.5 * x(i) : static_cast<double>(rng.uniform_index(4));
    }
    if (x.maxCoeff() == x.minCoeff() || y.maxCoeff() == y.minCoeff()) {
      x(0) += 1.0;
      y(n - 1) += 1.0;
    }
    worst = std::max(worst, std::abs(pearson(x, y) - reference::pearson(as_std(x), as_std(y))));
    worst = std::max(worst, std::abs(spearman(x, y) - reference::spearman(as_std(x), as_std(y))));
  }
  return {worst <= kCorrTol, fmt("max |diff| %.3g over 1000 vectors (tol %.0e)", worst, kCorrTol)};
}

Outcome loss_gradients() {
  CounterRng rng(CounterRng::derive(2, "acceptance_grad").key());
  double worst = 0.0;
  bool stop_gradient = true;
  for (int t = 0; t < 100; ++t) {
    const double y = rng.normal(70, 10), y_hat = y + rng.normal(0, 5);
    const double e_hat = std::abs(rng.normal(0, 3)), beta = 2.0 * rng.uniform();
    const double frozen = std::abs(y - y_hat);
    // The confidence term's residual is a constant target at the evaluation
    // point, so the differenced function holds it fixed.
    const LossEvaluator eval = [&](const Vector& p) {
      const auto r = instant_confidence_loss(y, p(0), p(1), {beta});
      const double loss = (y - p(0)) * (y - p(0)) + beta * (frozen - p(1)) * (frozen - p(1));
      Vector g(2);
      g << r.d_y_hat, r.d_e_hat;
      return std::pair{loss, g};
    };
    Vector p(2);
    p << y_hat, e_hat;
    worst = std::max(worst, finite_diff_check(eval, p, kGradStep));
    const double base = instant_confidence_loss(y, y_hat, e_hat, {beta}).d_y_hat;
    for (double other : {0.0, 0.5, 3.0}) {
      stop_gradient &= instant_confidence_loss(y, y_hat, e_hat, {other}).d_y_hat == base;
    }
  }
  return {worst < kGradTol && stop_gradient,
          fmt("max rel err %.3g (tol %.0e), d_y_hat independent of beta: %s", worst, kGradTol,
              stop_gradient ? "yes" : "no")};
}

Outcome mae_sigma() {
  CounterRng rng(CounterRng::derive(3, "acceptance_sigma").key());
  std::string detail;
  bool ok = true;
  for (double sigma : {0.5, 1.0, 2.0}) {
    double acc = 0.0;
    for (int i = 0; i < 1000000; ++i) acc += std::abs(rng.normal(0.0, sigma));
    const double recovered = mae_to_sigma(acc / 1e6);
    const double rel = std::abs(recovered / sigma - 1.0);
    ok &= rel <= kSigmaTol;
    detail += fmt("sigma %.1f -> %.4f; ", sigma, recovered);
  }
  return {ok, detail + fmt("tol %.0f%%", kSigmaTol * 100)};
}

Outcome exit_oracle() {
  CounterRng rng(CounterRng::derive(4, "acceptance_exit").key());
  long mismatches = 0, non_monotone = 0;
  for (int t = 0; t < 10000; ++t) {
    const Index n = 3 + static_cast<Index>(rng.uniform_index(22));
    Vector s(n), e(n);
    for (Index i = 0; i < n; ++i) {
      s(i) = t % 2 ? rng.normal(70, 10) : static_cast<double>(rng.uniform_index(5));
      e(i) = std::abs(rng.normal(0, 3));
    }
    const LayerTrajectory traj{s, e};
    const auto ss = as_std(s), es = as_std(e);
    const double tau = 3.0 * rng.uniform();
    const Index k = 1 + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    const auto c = constant_exit(traj, k);
    const auto rc = reference::constant_exit(ss, k);
    const auto v = variance_exit(traj, tau);
    const auto rv = reference::variance_exit(ss, tau);
    const auto f = confidence_exit(traj, tau);
    const auto rf = reference::confidence_exit(ss, es, tau);
    mismatches += c.score != rc.score || c.exit_layer != rc.layer || v.score != rv.score ||
                  v.exit_layer != rv.layer || f.score != rf.score || f.exit_layer != rf.layer;
    Index previous = n + 1;
    for (double sweep = 0.0; sweep <= 10.0; sweep += 0.1) {
      const Index cost = confidence_exit(traj, sweep).cost;
      non_monotone += cost > previous;
      previous = cost;
    }
  }
  return {mismatches == 0 && non_monotone == 0,
          fmt("%ld mismatches over 10^4 trajectories, %ld tau-monotonicity violations", mismatches,
              non_monotone)};
}

Outcome exit_sweep_pattern() {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.n_segments = 10000;
  cfg.layers = 24;
  const auto recs = generate_qe_dataset(cfg);

  // Bisect on tau for the mean cost closest to the target.
  auto cost_at = [&](double tau) {
    const std::vector<double> p{tau};
    return budget_sweep(recs, ExitPolicyKind::confidence, p).front();
  };
  double lo = 0.0, hi = 50.0;
  SweepPoint best = cost_at(lo);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const auto pt = cost_at(mid);
    if (std::abs(pt.cost_fraction - kCostTarget) < std::abs(best.cost_fraction - kCostTarget)) {
      best = pt;
    }
    (pt.cost_fraction > kCostTarget ? lo : hi) = mid;
  }
  const std::vector<double> k{12};
  const auto constant = budget_sweep(recs, ExitPolicyKind::constant, k).front();
  const bool ok = std::abs(best.cost_fraction - kCostTarget) <= kCostTol &&
                  std::abs(constant.cost_fraction - kCostTarget) <= kCostTol &&
                  best.corr_final - constant.corr_final >= kExitMargin &&
                  best.corr_final >= kExitFloor;
  return {ok, fmt("confidence tau %.4f cost %.4f r %.4f vs constant cost %.4f r %.4f (margin >= "
                  "%.2f, floor %.2f)",
                  best.parameter, best.cost_fraction, best.corr_final, constant.cost_fraction,
                  constant.corr_final, kExitMargin, kExitFloor)};
}

Outcome bandit_exactness() {
  CounterRng rng(CounterRng::derive(6, "acceptance_bandit").key());
  long trace_mismatch = 0, full_fail = 0;
  for (int t = 0; t < 1000; ++t) {
    const Index n = 1 + static_cast<Index>(rng.uniform_index(10));
    const Index layers = 1 + static_cast<Index>(rng.uniform_index(6));
    Matrix s(n, layers), e(n, layers);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < layers; ++j) {
        s(i, j) = t % 3 ? rng.normal(70, 10) : static_cast<double>(rng.uniform_index(4));
        e(i, j) = t % 3 ? std::abs(rng.normal(0, 3)) : static_cast<double>(rng.uniform_index(3));
      }
    }
    const Index start = 1 + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(layers)));
    const Index budget = n * start + static_cast<Index>(rng.uniform_index(
                                         static_cast<std::uint64_t>(n * (layers - start) + 2)));
    const double gamma = 2.0 * rng.uniform();
    const auto got = bandit_rerank(s, e, {gamma, budget, start});
    const auto want = reference::ucb_bandit(rows(s), rows(e), gamma, budget, start);
    bool same = got.selected == want.selected && got.cost == want.cost &&
                got.trace.size() == want.trace.size();
    for (std::size_t i = 0; same && i < want.trace.size(); ++i) {
      same = got.trace[i].spent == want.trace[i].spent &&
             got.trace[i].candidate == want.trace[i].candidate &&
             got.trace[i].layer == want.trace[i].layer;
    }
    trace_mismatch += !same;

    const auto full = bandit_rerank(s, e, {gamma, n * layers, start});
    full_fail += full.cost != n * layers ||
                 s(full.selected, layers - 1) != s.col(layers - 1).maxCoeff();
  }
  return {trace_mismatch == 0 && full_fail == 0,
          fmt("%ld trace mismatches over 10^3 pools; full budget non-top1 or wrong cost: %ld",
              trace_mismatch, full_fail)};
}

Outcome bandit_vs_baselines() {
  SynthConfig cfg;
  cfg.seed = 7;
  cfg.n_candidates = 200;
  cfg.layers = 24;
  const auto pools = generate_pools(cfg, 500);
  const std::vector<double> fractions{0.15, 0.45, 0.75, 1.0};
  std::vector<RerankQuality> bandit;
  RerankQuality random;
  for (double f : fractions) {
    std::map<std::string, Index> picks, random_picks;
    for (std::size_t p = 0; p < pools.size(); ++p) {
      const auto& pool = pools[p];
      const Index budget = budget_from_fraction(f, pool.size(), pool.layers());
      picks[pool.source_id] = bandit_rerank(pool, {1.0, budget, 1}).selected;
      if (f == 0.45) {
        const auto seed = CounterRng::derive(cfg.seed, "acceptance_random", p).next_u64();
        random_picks[pool.source_id] =
            baseline_select(pool, BaselineMode::random, budget, seed).selected;
      }
    }
    bandit.push_back(rerank_quality(pools, picks));
    if (f == 0.45) random = rerank_quality(pools, random_picks);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < bandit.size(); ++i) {
    monotone &= bandit[i].avg_final_score >= bandit[i - 1].avg_final_score - kMonotoneTol;
  }
  const bool ok = bandit[1].top1_rate - random.top1_rate >= kTop1Margin &&
                  bandit[1].avg_final_score >= random.avg_final_score && monotone;
  return {ok, fmt("at 0.45 top1 %.3f vs random %.3f, avg %.3f vs %.3f; avg over budgets "
                  "%.3f %.3f %.3f %.3f (%s)",
                  bandit[1].top1_rate, random.top1_rate, bandit[1].avg_final_score,
                  random.avg_final_score, bandit[0].avg_final_score, bandit[1].avg_final_score,
                  bandit[2].avg_final_score, bandit[3].avg_final_score,
                  monotone ? "monotone" : "not monotone")};
}

Outcome calibration() {
  SynthConfig cfg;
  cfg.seed = 8;
  CounterRng rng(CounterRng::derive(cfg.seed, "acceptance_calibration").key());
  const Index n = 100000;
  Vector predicted(n), actual(n);
  for (Index i = 0; i < n; ++i) {
    const auto t = generate_trajectory(cfg, rng);
    const Index layer = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(cfg.layers - 1)));
    predicted(i) = t.trajectory.errors(layer);
    actual(i) = std::abs(t.trajectory.scores(layer) - t.final_truth);
  }
  const auto bins = calibration_curve(predicted, actual, {100});
  Vector index(static_cast<Index>(bins.size())), mean(static_cast<Index>(bins.size()));
  for (std::size_t b = 0; b < bins.size(); ++b) {
    index(static_cast<Index>(b)) = static_cast<double>(b);
    mean(static_cast<Index>(b)) = bins[b].mean_error;
  }
  const double rho = spearman(index, mean);
  return {bins.size() == 100 && rho >= kCalibrationSpearman,
          fmt("Spearman(bin index, bin mean true error) %.4f over %zu bins (>= %.2f)", rho,
              bins.size(), kCalibrationSpearman)};
}

Outcome deferral() {
  SynthConfig cfg;
  cfg.seed = 9;
  cfg.n_segments = 3000;
  cfg.n_languages = 10;
  cfg.n_systems = 10;
  cfg.instant_confidence = true;
  const auto recs = generate_qe_dataset(cfg);
  std::vector<double> rates;
  for (int i = 0; i <= 10; ++i) rates.push_back(i / 10.0);
  const auto conf = deferral_curve(recs, {DeferralKind::low_confidence}, rates);
  const auto rnd = deferral_curve(recs, {DeferralKind::random, cfg.seed}, rates);
  const auto orc = deferral_curve(recs, {DeferralKind::oracle_high_error}, rates);
  const auto metric_only = deferral_curve(recs, {DeferralKind::low_score}, std::vector<double>{0.0});

  // Pure-metric macro Spearman by direct aggregation.
  std::map<std::string, std::map<std::string, std::array<double, 3>>> acc;
  for (const auto& r : recs) {
    auto& a = acc[r.lang_pair][r.system_id];
    a[0] += r.final_score();
    a[1] += *r.human_score;
    a[2] += 1;
  }
  double macro = 0.0;
  for (const auto& [lang, systems] : acc) {
    std::vector<double> m, h;
    for (const auto& [sys, a] : systems) {
      m.push_back(a[0] / a[2]);
      h.push_back(a[1] / a[2]);
    }
    macro += reference::spearman(m, h);
  }
  macro /= static_cast<double>(acc.size());

  bool endpoints = true;
  for (const auto* curve : {&conf, &rnd, &orc}) {
    endpoints &= curve->back().y == 1.0 && curve->front().y == metric_only.front().y;
  }
  endpoints &= std::abs(metric_only.front().y - macro) <= kCorrTol;
  bool ceiling = true;
  for (std::size_t i = 0; i < rates.size(); ++i) ceiling &= orc[i].y >= conf[i].y;
  const double a_conf = trapezoid_area(conf), a_rnd = trapezoid_area(rnd);
  return {endpoints && ceiling && a_conf >= a_rnd,
          fmt("endpoints exact: %s; area low_confidence %.4f vs random %.4f; oracle pointwise "
              ">= low_confidence: %s",
              endpoints ? "yes" : "no", a_conf, a_rnd, ceiling ? "yes" : "no")};
}

Outcome toy_training() {
  const auto stacks = generate_toy_stacks({.seed = 10});
  TrainingOptions opt;
  opt.epochs = 400;
  opt.learning_rate = 0.05;
  const auto sup = train_toy_heads(stacks, {1.0}, opt);
  opt.mode = TrainingMode::final_only;
  const auto fin = train_toy_heads(stacks, {1.0}, opt);
  const double a = layer_agreement(sup.head, stacks, 13);
  const double b = layer_agreement(fin.head, stacks, 13);
  return {a - b >= kToyGain,
          fmt("layer 13 vs 24 agreement %.4f supervised vs %.4f final-only (gain >= %.1f)", a, b,
              kToyGain)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "eeqe_acceptance_replay";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string qe = (root / "qe/records.jsonl").string();
  const std::string pools = (root / "pools/records.jsonl").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"qe", "simulate --segments 600 --layers 12 --languages 4 --systems 6 --instant-confidence "
             "--seed 11"},
      {"pools", "simulate --kind pools --pools 20 --candidates 30 --layers 8 --partial --seed 12"},
      {"validate", "validate --input " + qe},
      {"sweep", "exit-sweep --input " + qe},
      {"rerank", "rerank --input " + pools + " --method all,staged --seed 13"},
      {"defer", "defer --input " + qe + " --seed 14"},
      {"calibrate", "calibrate --input " + qe + " --bins 20"},
      {"losses", "losses-check --samples 20 --epochs 50 --seed 15"},
  };
  int failures = 0;
  std::size_t compared = 0;
  std::string failed;
  for (const auto& [name, args] : commands) {
    const fs::path first = root / name, second = root / (name + "_replay");
    const std::string run1 =
        std::string(EEQE_CLI_PATH) + " " + args + " --output-dir " + first.string() + " >/dev/null";
    const std::string run2 = std::string(EEQE_CLI_PATH) + " replay --manifest " +
                             (first / "manifest.json").string() + " --output-dir " +
                             second.string() + " >/dev/null";
    if (std::system(run1.c_str()) != 0 || std::system(run2.c_str()) != 0) {
      ++failures;
      failed += " " + name;
      continue;
    }
    for (const auto& entry : fs::directory_iterator(first)) {
      ++compared;
      if (slurp(entry.path()) != slurp(second / entry.path().filename())) {
        ++failures;
        failed += " " + name + "/" + entry.path().filename().string();
      }
    }
  }
  fs::remove_all(root);
  return {failures == 0, fmt("%zu files over %zu commands byte-identical on replay", compared,
                             commands.size()) +
                             (failed.empty() ? "" : "; differing:" + failed)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"correlation oracle", correlation_oracle},
      {"loss gradients", loss_gradients},
      {"mae to sigma", mae_sigma},
      {"exit policy oracle", exit_oracle},
      {"early exit sweep", exit_sweep_pattern},
      {"bandit exactness", bandit_exactness},
      {"bandit vs baselines", bandit_vs_baselines},
      {"calibration", calibration},
      {"deferral", deferral},
      {"toy training", toy_training},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": "
              << o.detail << " (" << fmt("%.1fs", secs) << ")\n";
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
            << '\n';
  return failed == 0 ? 0 : 1;
}
