#include "eeqe/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "eeqe/bandit.hpp"
#include "eeqe/dataset.hpp"
#include "eeqe/deferral.hpp"
#include "eeqe/errors.hpp"
#include "eeqe/exitpolicy.hpp"
#include "eeqe/format.hpp"
#include "eeqe/metrics.hpp"
#include "eeqe/rng.hpp"
#include "eeqe/synth.hpp"
#include "eeqe/toyheads.hpp"
#include "json.hpp"

namespace eeqe::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// A self-check of losses-check did not pass.
class CheckFailed : public Error {
 public:
  using Error::Error;
};

struct Run {
  std::string command;
  std::vector<std::string> arguments;
  std::uint64_t seed = 0;
  ordered_json parameters = ordered_json::object();
  ordered_json inputs = ordered_json::object();
  ordered_json summary = ordered_json::object();
  std::map<std::string, std::string> artifacts;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_atomically(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw Error("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::vector<SegmentRecord> load_input(Run& run, const std::string& path) {
  run.inputs[path] = sha256_hex(read_file(path));
  return load_records(path);
}

ordered_json manifest_json(const Run& run) {
  ordered_json m;
  m["command"] = run.command;
  m["arguments"] = run.arguments;
  m["seed"] = run.seed;
  m["parameters"] = run.parameters;
  m["inputs"] = run.inputs;
  m["summary"] = run.summary;
  ordered_json artifacts = ordered_json::object();
  for (const auto& [name, content] : run.artifacts) artifacts[name] = sha256_hex(content);
  m["artifacts"] = std::move(artifacts);
  return m;
}

void commit(const Run& run, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [name, content] : run.artifacts) write_atomically(dir / name, content);
  write_atomically(dir / "manifest.json", manifest_json(run).dump(2) + "\n");
}

// Everything but --output-dir, which must not influence the manifest.
std::vector<std::string> recorded_arguments(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--output-dir") {
      ++i;
      continue;
    }
    if (args[i].rfind("--output-dir=", 0) == 0) continue;
    out.push_back(args[i]);
  }
  return out;
}

template <typename F>
std::string render(F&& f) {
  std::ostringstream out;
  f(out);
  return out.str();
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// Sorted distinct quantiles of `values` at count + 1 evenly spaced levels.
std::vector<double> quantile_grid(std::vector<double> values, int count) {
  std::vector<double> grid;
  if (values.empty()) return grid;
  std::sort(values.begin(), values.end());
  const double last = static_cast<double>(values.size() - 1);
  for (int j = 0; j <= count; ++j) {
    const auto idx = static_cast<std::size_t>(std::llround(last * j / count));
    grid.push_back(values[idx]);
  }
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  std::string kind = "qe";
  Index layers = SynthConfig{}.layers;
  Index segments = SynthConfig{}.n_segments;
  Index candidates = SynthConfig{}.n_candidates;
  Index pools = 20;
  Index languages = 1;
  Index systems = 1;
  double noise_sd = SynthConfig{}.noise_sd_layer1;
  double noise_decay = SynthConfig{}.noise_decay;
  double difficulty_sd = SynthConfig{}.difficulty_sd;
  double human_noise_sd = SynthConfig{}.human_noise_sd;
  double candidate_sd = SynthConfig{}.candidate_sd;
  double miscalibration = 0.0;
  bool instant_confidence = false;
  bool partial = false;
};

void cmd_simulate(Run& run, const SimulateOptions& o) {
  SynthConfig cfg;
  cfg.seed = run.seed;
  cfg.layers = o.layers;
  cfg.n_segments = o.segments;
  cfg.n_candidates = o.candidates;
  cfg.n_languages = o.languages;
  cfg.n_systems = o.systems;
  cfg.noise_sd_layer1 = o.noise_sd;
  cfg.noise_decay = o.noise_decay;
  cfg.difficulty_sd = o.difficulty_sd;
  cfg.human_noise_sd = o.human_noise_sd;
  cfg.candidate_sd = o.candidate_sd;
  cfg.miscalibration = o.miscalibration;
  cfg.instant_confidence = o.instant_confidence;
  if (o.partial) cfg.partial_fractions = {0.25, 0.5, 0.75, 1.0};

  run.parameters = {{"kind", o.kind},
                    {"layers", o.layers},
                    {"segments", o.segments},
                    {"candidates", o.candidates},
                    {"pools", o.pools},
                    {"languages", o.languages},
                    {"systems", o.systems},
                    {"noise_sd", o.noise_sd},
                    {"noise_decay", o.noise_decay},
                    {"difficulty_sd", o.difficulty_sd},
                    {"human_noise_sd", o.human_noise_sd},
                    {"candidate_sd", o.candidate_sd},
                    {"miscalibration", o.miscalibration},
                    {"instant_confidence", o.instant_confidence},
                    {"partial", o.partial}};

  std::vector<SegmentRecord> records;
  if (o.kind == "qe") {
    records = generate_qe_dataset(cfg);
  } else if (o.kind == "pools") {
    for (auto& pool : generate_pools(cfg, o.pools)) {
      for (auto& c : pool.candidates) records.push_back(std::move(c));
    }
  } else {
    throw ArgumentError("unknown --kind '" + o.kind + "' (expected qe or pools)");
  }
  run.summary["records"] = records.size();
  run.artifacts["records.jsonl"] = render([&](std::ostream& out) { write_records(out, records); });
}

// ---------------------------------------------------------------- validate

struct ValidateOptions {
  std::string input;
  std::string fertility;
};

void cmd_validate(Run& run, const ValidateOptions& o) {
  run.parameters = {{"input", o.input}, {"fertility", o.fertility}};
  const auto records = load_input(run, o.input);
  const auto pools = group_pools(records);
  std::size_t with_human = 0;
  for (const auto& r : records) with_human += r.human_score.has_value();
  run.summary["records"] = records.size();
  run.summary["pools"] = pools.size();
  run.summary["with_human_score"] = with_human;
  if (!o.fertility.empty()) {
    run.inputs[o.fertility] = sha256_hex(read_file(o.fertility));
    run.summary["fertility_entries"] = load_fertility_table(o.fertility).factors.size();
  }
}

// ---------------------------------------------------------------- exit-sweep

struct ExitSweepOptions {
  std::string input;
  std::string policy = "all";
  std::vector<double> taus;
  std::vector<double> ks;
  Index window = 3;
  int grid = 20;
};

void cmd_exit_sweep(Run& run, const ExitSweepOptions& o) {
  const auto records = load_input(run, o.input);
  if (records.empty()) throw ArgumentError("exit-sweep: input has no records");
  const Index layers = records.front().trajectory.layers();

  std::vector<ExitPolicyKind> kinds;
  if (o.policy == "all") {
    kinds = {ExitPolicyKind::constant, ExitPolicyKind::variance, ExitPolicyKind::confidence};
  } else {
    kinds = {parse_exit_policy(o.policy)};
  }

  std::vector<SweepPoint> points;
  ordered_json used = ordered_json::object();
  for (ExitPolicyKind kind : kinds) {
    std::vector<double> params;
    if (kind == ExitPolicyKind::constant) {
      params = o.ks;
      if (params.empty()) {
        for (Index k = 1; k <= layers; ++k) params.push_back(static_cast<double>(k));
      }
    } else if (!o.taus.empty()) {
      params = o.taus;
    } else {
      std::vector<double> observed;
      for (const auto& r : records) {
        const auto& t = r.trajectory;
        if (kind == ExitPolicyKind::confidence) {
          for (Index i = 1; i < t.layers(); ++i) observed.push_back(t.error_at(i));
        } else {
          for (Index i = o.window; i <= t.layers(); ++i) {
            const auto w = t.scores.segment(i - o.window, o.window).array();
            observed.push_back((w - w.mean()).square().sum() / static_cast<double>(o.window));
          }
        }
      }
      params = quantile_grid(std::move(observed), o.grid);
      params.insert(params.begin(), -kInf);
      params.push_back(kInf);
    }
    auto sweep = budget_sweep(records, kind, params, o.window);
    points.insert(points.end(), sweep.begin(), sweep.end());
    ordered_json list = ordered_json::array();
    for (double p : params) list.push_back(format_number(p));
    used[to_string(kind)] = std::move(list);
  }
  run.parameters = {{"input", o.input}, {"policy", o.policy}, {"window", o.window},
                    {"grid", o.grid}, {"parameters", used}};
  run.summary["points"] = points.size();
  run.artifacts["sweep.csv"] = render([&](std::ostream& out) { write_sweep_csv(out, points); });
}

// ---------------------------------------------------------------- rerank

struct RerankOptions {
  std::string input;
  std::vector<std::string> methods{"all"};
  std::vector<double> budgets{0.15, 0.3, 0.45, 0.6, 0.75, 0.9, 1.0};
  double gamma = 1.0;
  Index start_layer = 1;
  std::vector<double> keep{1.0, 1.0, 1.0};
  std::vector<double> snapshots;
};

void cmd_rerank(Run& run, const RerankOptions& o) {
  const auto records = load_input(run, o.input);
  const auto pools = group_pools(records);
  if (pools.empty()) throw ArgumentError("rerank: input has no records");

  std::vector<std::string> methods;
  for (const auto& m : o.methods) {
    if (m == "all") {
      for (const char* name : {"bandit", "random", "logprob_sum", "logprob_avg"}) {
        methods.emplace_back(name);
      }
    } else if (m == "bandit" || m == "staged") {
      methods.push_back(m);
    } else {
      parse_baseline_mode(m);
      methods.push_back(m);
    }
  }
  if (o.keep.size() != 3) throw ArgumentError("--keep needs three fractions (at 25%, 50%, 75%)");

  std::vector<double> snapshot_fractions = o.snapshots;
  if (snapshot_fractions.empty()) {
    for (int j = 1; j <= 20; ++j) snapshot_fractions.push_back(0.05 * j);
  }

  std::vector<RerankRow> rows;
  std::ostringstream summary;
  summary << "method,budget_fraction,avg_final_score,top1_rate,mean_cost_units\n";
  std::vector<LayerHistogram> snapshots;

  auto add_summary = [&](const std::string& method, double budget,
                         std::span<const RerankRow> block) {
    double score = 0.0, top1 = 0.0, cost = 0.0;
    for (const auto& r : block) {
      score += r.selected_final_score;
      top1 += r.is_top1 ? 1.0 : 0.0;
      cost += static_cast<double>(r.cost_units);
    }
    const auto n = static_cast<double>(block.size());
    summary << method << ',' << format_number(budget) << ',' << format_number(score / n) << ','
            << format_number(top1 / n) << ',' << format_number(cost / n) << '\n';
  };

  for (const auto& method : methods) {
    if (method == "staged") {
      PruneSchedule schedule{{{0.25, o.keep[0]}, {0.5, o.keep[1]}, {0.75, o.keep[2]}}};
      const std::size_t first = rows.size();
      double cost_fraction = 0.0;
      for (const auto& pool : pools) {
        const auto res = staged_prune(pool, schedule);
        rows.push_back(make_rerank_row(pool, method, res.cost_fraction, res.survivor,
                                       res.alive_after_stage.back() * pool.layers()));
        cost_fraction += res.cost_fraction;
      }
      add_summary(method, cost_fraction / static_cast<double>(pools.size()),
                  std::span(rows).subspan(first));
      continue;
    }
    const double max_budget = *std::max_element(o.budgets.begin(), o.budgets.end());
    for (double fraction : o.budgets) {
      const std::size_t first = rows.size();
      for (std::size_t p = 0; p < pools.size(); ++p) {
        const auto& pool = pools[p];
        const Index budget = budget_from_fraction(fraction, pool.size(), pool.layers());
        if (method == "bandit") {
          const auto res = bandit_rerank(pool, BanditConfig{o.gamma, budget, o.start_layer});
          rows.push_back(make_rerank_row(pool, method, fraction, res.selected, res.cost));
          if (fraction == max_budget) {
            auto h = layer_snapshot(res, snapshot_fractions);
            if (snapshots.empty()) {
              snapshots = std::move(h);
            } else {
              for (std::size_t i = 0; i < h.size(); ++i) {
                if (h[i].counts.size() != snapshots[i].counts.size()) {
                  throw ArgumentError("rerank: pools differ in layer count; snapshots undefined");
                }
                snapshots[i].counts += h[i].counts;
              }
            }
          }
        } else {
          const std::uint64_t pool_seed =
              CounterRng::derive(run.seed, "rerank_" + method, p).next_u64();
          const auto res = baseline_select(pool, parse_baseline_mode(method), budget, pool_seed);
          rows.push_back(make_rerank_row(pool, method, fraction, res.selected, res.cost));
        }
      }
      add_summary(method, fraction, std::span(rows).subspan(first));
    }
  }

  ordered_json methods_json = methods;
  run.parameters = {{"input", o.input},        {"methods", methods_json},
                    {"budgets", o.budgets},    {"gamma", o.gamma},
                    {"start_layer", o.start_layer}, {"keep", o.keep},
                    {"snapshots", snapshot_fractions}};
  run.summary["pools"] = pools.size();
  run.summary["rows"] = rows.size();
  run.artifacts["rerank.csv"] = render([&](std::ostream& out) { write_rerank_csv(out, rows); });
  run.artifacts["summary.csv"] = summary.str();
  if (!snapshots.empty()) {
    run.artifacts["snapshots.csv"] =
        render([&](std::ostream& out) { write_snapshot_csv(out, snapshots); });
  }
}

// ---------------------------------------------------------------- defer

struct DeferOptions {
  std::string input;
  std::vector<std::string> policies{"all"};
  std::vector<double> rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  bool z_normalize = false;
};

void cmd_defer(Run& run, const DeferOptions& o) {
  const auto records = load_input(run, o.input);
  std::vector<DeferralKind> kinds;
  for (const auto& p : o.policies) {
    if (p == "all") {
      kinds.insert(kinds.end(), {DeferralKind::random, DeferralKind::low_score,
                                 DeferralKind::low_confidence, DeferralKind::oracle_low_human,
                                 DeferralKind::oracle_high_error});
    } else {
      kinds.push_back(parse_deferral_kind(p));
    }
  }
  const std::uint64_t policy_seed = CounterRng::derive(run.seed, "defer").next_u64();
  std::vector<CurvePoint> points;
  for (DeferralKind kind : kinds) {
    auto curve = deferral_curve(records, DeferralPolicy{kind, policy_seed}, o.rates,
                                DeferralOptions{o.z_normalize});
    points.insert(points.end(), curve.begin(), curve.end());
  }

  std::ostringstream bias;
  bias << "statistic,value\n";
  try {
    const LengthBias lb = length_bias(records);
    bias << "score_vs_length," << format_number(lb.score_vs_length) << '\n'
         << "error_vs_length," << format_number(lb.error_vs_length) << '\n';
  } catch (const UndefinedCorrelationError&) {
    bias << "score_vs_length,undefined\nerror_vs_length,undefined\n";
  }

  ordered_json names = ordered_json::array();
  for (DeferralKind k : kinds) names.push_back(to_string(k));
  run.parameters = {{"input", o.input},
                    {"policies", names},
                    {"rates", o.rates},
                    {"z_normalize", o.z_normalize}};
  run.summary["points"] = points.size();
  run.artifacts["deferral.csv"] =
      render([&](std::ostream& out) { write_deferral_csv(out, points); });
  run.artifacts["length_bias.csv"] = bias.str();
}

// ---------------------------------------------------------------- calibrate

struct CalibrateOptions {
  std::string input;
  int bins = 100;
  Index layer = 0;
};

void cmd_calibrate(Run& run, const CalibrateOptions& o) {
  const auto records = load_input(run, o.input);
  if (records.empty()) throw ArgumentError("calibrate: input has no records");
  const Index layers = records.front().trajectory.layers();
  if (o.layer < 0 || o.layer >= layers) {
    throw ArgumentError("--layer must be 0 (all intermediate layers) or in [1, " +
                        std::to_string(layers - 1) + "]");
  }

  std::vector<double> predicted, actual;
  Vector layer_predicted = Vector::Zero(layers);
  Vector layer_actual = Vector::Zero(layers);
  bool all_human = true;
  for (const auto& r : records) {
    const auto& t = r.trajectory;
    if (t.layers() != layers) {
      throw ArgumentError("calibrate: trajectories differ in length (segment '" + r.segment_id +
                          "')");
    }
    for (Index i = 1; i <= layers; ++i) {
      const double deviation = std::abs(t.score_at(i) - t.final_score());
      layer_predicted(i - 1) += t.error_at(i);
      layer_actual(i - 1) += deviation;
      if (i < layers && (o.layer == 0 || o.layer == i)) {
        predicted.push_back(t.error_at(i));
        actual.push_back(deviation);
      }
    }
    all_human = all_human && r.human_score.has_value();
  }
  layer_predicted /= static_cast<double>(records.size());
  layer_actual /= static_cast<double>(records.size());

  std::vector<CurvePoint> points;
  auto add_bins = [&](const std::string& label, const Vector& pred, const Vector& act) {
    for (const auto& b : calibration_curve(pred, act, CalibrationConfig{o.bins})) {
      points.push_back({b.mean_confidence, b.mean_error, label});
    }
  };
  add_bins("self_confidence", Eigen::Map<const Vector>(predicted.data(), predicted.size()),
           Eigen::Map<const Vector>(actual.data(), actual.size()));
  if (all_human) {
    Vector pred(static_cast<Index>(records.size())), act(static_cast<Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) {
      pred(static_cast<Index>(i)) = records[i].trajectory.final_error();
      act(static_cast<Index>(i)) = std::abs(records[i].final_score() - *records[i].human_score);
    }
    add_bins("instant_confidence", pred, act);
  }
  for (Index i = 0; i < layers; ++i) {
    points.push_back({static_cast<double>(i + 1), layer_predicted(i), "layer_mean_predicted"});
  }
  for (Index i = 0; i < layers; ++i) {
    points.push_back({static_cast<double>(i + 1), layer_actual(i), "layer_mean_true"});
  }

  run.parameters = {{"input", o.input}, {"bins", o.bins}, {"layer", o.layer}};
  run.summary["samples"] = predicted.size();
  run.artifacts["calibration.csv"] =
      render([&](std::ostream& out) { write_curve_csv(out, points); });
}

// ---------------------------------------------------------------- losses-check

struct LossesOptions {
  int samples = 100;
  double step = 1e-5;
  double tolerance = 1e-6;
  int epochs = 400;
  double learning_rate = 0.01;
  double beta = 1.0;
};

void cmd_losses_check(Run& run, const LossesOptions& o) {
  auto rng = CounterRng::derive(run.seed, "losses_check");
  struct Check {
    std::string name;
    double value;
    double threshold;
    bool higher_is_better;
  };
  std::vector<Check> checks;

  double worst_score = 0.0, worst_error = 0.0;
  bool stop_gradient = true;
  for (int s = 0; s < o.samples; ++s) {
    const double y = rng.normal(0.0, 1.0);
    const double y_hat = rng.normal(0.0, 1.0);
    const double e_hat = std::abs(rng.normal(0.0, 1.0));
    const double beta = 2.0 * rng.uniform();
    const LossConfig cfg{beta};
    // First term only for the score gradient: the confidence residual is a
    // constant target under stop-gradient.
    worst_score = std::max(worst_score, finite_diff_check(
        [&](const Vector& p) {
          const double r = y - p(0);
          return std::pair{r * r, Vector::Constant(1, instant_confidence_loss(y, p(0), e_hat, cfg).d_y_hat)};
        },
        Vector::Constant(1, y_hat), o.step));
    worst_error = std::max(worst_error, finite_diff_check(
        [&](const Vector& p) {
          const auto l = instant_confidence_loss(y, y_hat, p(0), cfg);
          return std::pair{l.loss, Vector::Constant(1, l.d_e_hat)};
        },
        Vector::Constant(1, e_hat), o.step));
    const double d0 = instant_confidence_loss(y, y_hat, e_hat, LossConfig{0.0}).d_y_hat;
    stop_gradient = stop_gradient && d0 == instant_confidence_loss(y, y_hat, e_hat, cfg).d_y_hat;
  }
  checks.push_back({"instant_confidence.d_y_hat", worst_score, o.tolerance, false});
  checks.push_back({"instant_confidence.d_e_hat", worst_error, o.tolerance, false});
  checks.push_back({"instant_confidence.stop_gradient", stop_gradient ? 1.0 : 0.0, 1.0, true});

  ToyStackConfig stack_cfg;
  stack_cfg.seed = CounterRng::derive(run.seed, "toy_train").next_u64();
  const auto train = generate_toy_stacks(stack_cfg);
  stack_cfg.seed = CounterRng::derive(run.seed, "toy_eval").next_u64();
  const auto eval = generate_toy_stacks(stack_cfg);

  TrainingOptions topt;
  topt.epochs = o.epochs;
  topt.learning_rate = o.learning_rate;
  topt.seed = CounterRng::derive(run.seed, "toy_init").next_u64();
  const LossConfig loss_cfg{o.beta};
  {
    const ToyRegressorHead head = init_head(stack_cfg.dim, stack_cfg.layers, topt);
    const auto targets = self_confidence_targets(head, train);
    ToyRegressorHead probe = head;
    // Hundreds of parameters, many with near-zero gradient: compare against
    // the largest component so rounding in those does not dominate.
    const double err = finite_diff_check_normwise(
        [&](const Vector& p) {
          probe.assign(p);
          const auto obj = toy_objective(probe, train, loss_cfg,
                                         TrainingMode::per_layer_supervised, &targets);
          return std::pair{obj.total, obj.gradient};
        },
        head.flatten(), o.step);
    checks.push_back({"toy_objective.gradient", err, o.tolerance, false});
  }

  topt.mode = TrainingMode::per_layer_supervised;
  const auto supervised = train_toy_heads(train, loss_cfg, topt);
  topt.mode = TrainingMode::final_only;
  const auto final_only = train_toy_heads(train, loss_cfg, topt);
  const Index mid = stack_cfg.layers / 2 + 1;
  const double agree_supervised = layer_agreement(supervised.head, eval, mid);
  const double agree_final = layer_agreement(final_only.head, eval, mid);
  checks.push_back({"toy_training.mid_layer_gain", agree_supervised - agree_final, 0.1, true});

  std::ostringstream table;
  table << "check,value,threshold,pass\n";
  std::string failed;
  for (const auto& c : checks) {
    const bool pass = c.higher_is_better ? c.value >= c.threshold : c.value <= c.threshold;
    table << c.name << ',' << format_number(c.value) << ',' << format_number(c.threshold) << ','
          << (pass ? 1 : 0) << '\n';
    if (!pass && failed.empty()) failed = c.name;
  }
  std::ostringstream agreement;
  agreement << "mode,layer,pearson_vs_last\n";
  for (Index l = 1; l <= stack_cfg.layers; ++l) {
    agreement << "per_layer_supervised," << l << ','
              << format_number(layer_agreement(supervised.head, eval, l)) << '\n';
  }
  for (Index l = 1; l <= stack_cfg.layers; ++l) {
    agreement << "final_only," << l << ','
              << format_number(layer_agreement(final_only.head, eval, l)) << '\n';
  }

  run.parameters = {{"samples", o.samples}, {"step", o.step},
                    {"tolerance", o.tolerance}, {"epochs", o.epochs},
                    {"learning_rate", o.learning_rate}, {"beta", o.beta}};
  run.summary["mid_layer"] = mid;
  run.summary["agreement_supervised"] = agree_supervised;
  run.summary["agreement_final_only"] = agree_final;
  run.artifacts["losses.csv"] = table.str();
  run.artifacts["layer_agreement.csv"] = agreement.str();
  run.artifacts["training_log_supervised.csv"] =
      render([&](std::ostream& out) { write_training_log_csv(out, supervised.log); });
  run.artifacts["training_log_final_only.csv"] =
      render([&](std::ostream& out) { write_training_log_csv(out, final_only.log); });
  if (!failed.empty()) {
    // Artifacts are still written so the failing values can be inspected.
    run.summary["failed"] = failed;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Budget-aware quality estimation toolkit", "eeqe"};
  app.require_subcommand(1);

  std::string output_dir;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--output-dir", output_dir, "Directory for artifacts and manifest.json")
        ->required();
    sub->add_option("--seed", seed, "Seed for every derived random stream");
  };

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic record file");
  simulate->alias("synth");
  add_common(simulate);
  simulate->add_option("--kind", sim.kind, "qe (scored segments) or pools (candidate pools)");
  simulate->add_option("--layers", sim.layers);
  simulate->add_option("--segments", sim.segments);
  simulate->add_option("--candidates", sim.candidates);
  simulate->add_option("--pools", sim.pools);
  simulate->add_option("--languages", sim.languages);
  simulate->add_option("--systems", sim.systems);
  simulate->add_option("--noise-sd", sim.noise_sd, "Layer-1 noise sd");
  simulate->add_option("--noise-decay", sim.noise_decay, "Per-layer noise decay");
  simulate->add_option("--difficulty-sd", sim.difficulty_sd);
  simulate->add_option("--human-noise-sd", sim.human_noise_sd);
  simulate->add_option("--candidate-sd", sim.candidate_sd, "Spread of final scores within a pool");
  simulate->add_option("--miscalibration", sim.miscalibration);
  simulate->add_flag("--instant-confidence", sim.instant_confidence,
                     "Last-layer error predicts deviation from the human score");
  simulate->add_flag("--partial", sim.partial, "Attach partial-translation scores");

  ValidateOptions val;
  auto* validate = app.add_subcommand("validate", "Check a record file");
  add_common(validate);
  validate->add_option("--input", val.input)->required();
  validate->add_option("--fertility", val.fertility, "lang_pair<TAB>factor table");

  ExitSweepOptions sweep;
  auto* exit_sweep = app.add_subcommand("exit-sweep", "Cost vs correlation of early-exit policies");
  add_common(exit_sweep);
  exit_sweep->add_option("--input", sweep.input)->required();
  exit_sweep->add_option("--policy", sweep.policy, "constant, variance, confidence or all");
  exit_sweep->add_option("--tau", sweep.taus, "Thresholds (comma separated)")->delimiter(',');
  exit_sweep->add_option("--k", sweep.ks, "Exit layers for constant exit")->delimiter(',');
  exit_sweep->add_option("--window", sweep.window);
  exit_sweep->add_option("--grid", sweep.grid, "Quantile steps for default thresholds");

  RerankOptions rr;
  auto* rerank = app.add_subcommand("rerank", "Budgeted candidate selection");
  add_common(rerank);
  rerank->add_option("--input", rr.input)->required();
  rerank->add_option("--method", rr.methods,
                     "bandit, random, logprob_sum, logprob_avg, staged or all")
      ->delimiter(',');
  rerank->add_option("--budget-fraction", rr.budgets)->delimiter(',');
  rerank->add_option("--gamma", rr.gamma);
  rerank->add_option("--start-layer", rr.start_layer);
  rerank->add_option("--keep", rr.keep, "Keep fractions at 25%,50%,75% target length")
      ->delimiter(',');
  rerank->add_option("--snapshots", rr.snapshots, "Budget fractions for layer snapshots")
      ->delimiter(',');

  DeferOptions df;
  auto* defer = app.add_subcommand("defer", "Deferral-to-human curves");
  add_common(defer);
  defer->add_option("--input", df.input)->required();
  defer->add_option("--policy", df.policies)->delimiter(',');
  defer->add_option("--rates", df.rates)->delimiter(',');
  defer->add_flag("--z-normalize", df.z_normalize);

  CalibrateOptions cal;
  auto* calibrate = app.add_subcommand("calibrate", "Calibration curves of error predictions");
  add_common(calibrate);
  calibrate->add_option("--input", cal.input)->required();
  calibrate->add_option("--bins", cal.bins);
  calibrate->add_option("--layer", cal.layer, "0 pools all intermediate layers");

  LossesOptions lo;
  auto* losses = app.add_subcommand("losses-check", "Gradient checks and toy head training");
  add_common(losses);
  losses->add_option("--samples", lo.samples);
  losses->add_option("--step", lo.step);
  losses->add_option("--tolerance", lo.tolerance);
  losses->add_option("--epochs", lo.epochs);
  losses->add_option("--learning-rate", lo.learning_rate);
  losses->add_option("--beta", lo.beta);

  std::string manifest_path;
  auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare checksums");
  replay->add_option("--manifest", manifest_path)->required();
  replay->add_option("--output-dir", output_dir)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (replay->parsed()) {
      const auto manifest = nlohmann::json::parse(read_file(manifest_path));
      auto replay_args = manifest.at("arguments").get<std::vector<std::string>>();
      replay_args.push_back("--output-dir");
      replay_args.push_back(output_dir);
      std::ostringstream sink;
      if (const int status = run(replay_args, sink, err); status != 0) return status;
      const auto fresh = nlohmann::json::parse(read_file(fs::path(output_dir) / "manifest.json"));
      for (const auto& [name, digest] : manifest.at("artifacts").items()) {
        const auto it = fresh.at("artifacts").find(name);
        if (it == fresh.at("artifacts").end() || *it != digest) {
          err << "error: checksum mismatch for " << name << '\n';
          return 1;
        }
      }
      out << "replay ok\n";
      return 0;
    }

    Run r;
    r.arguments = recorded_arguments(args);
    r.seed = seed;
    if (simulate->parsed()) {
      r.command = "simulate";
      cmd_simulate(r, sim);
    } else if (validate->parsed()) {
      r.command = "validate";
      cmd_validate(r, val);
    } else if (exit_sweep->parsed()) {
      r.command = "exit-sweep";
      cmd_exit_sweep(r, sweep);
    } else if (rerank->parsed()) {
      r.command = "rerank";
      cmd_rerank(r, rr);
    } else if (defer->parsed()) {
      r.command = "defer";
      cmd_defer(r, df);
    } else if (calibrate->parsed()) {
      r.command = "calibrate";
      cmd_calibrate(r, cal);
    } else if (losses->parsed()) {
      r.command = "losses-check";
      cmd_losses_check(r, lo);
    }
    commit(r, output_dir);
    if (r.summary.contains("failed")) {
      throw CheckFailed("check failed: " + r.summary["failed"].get<std::string>());
    }
    out << r.command << ": wrote " << r.artifacts.size() + 1 << " files to " << output_dir
        << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace eeqe::cli
