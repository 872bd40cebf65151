#include "eeqe/bandit.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <queue>

#include "eeqe/errors.hpp"
#include "eeqe/format.hpp"
#include "eeqe/metrics.hpp"
#include "eeqe/rng.hpp"

namespace eeqe {

namespace {

struct Arm {
  double ucb;
  Index candidate;
};

// Max-heap order: larger UCB first, then lower candidate index.
struct ArmOrder {
  bool operator()(const Arm& a, const Arm& b) const {
    if (a.ucb != b.ucb) return a.ucb < b.ucb;
    return a.candidate > b.candidate;
  }
};

}  // namespace

BanditResult bandit_rerank(const Matrix& scores, const Matrix& errors, const BanditConfig& cfg) {
  const Index n = scores.rows();
  const Index layers = scores.cols();
  if (n < 1 || layers < 1) throw ArgumentError("bandit: empty pool");
  if (errors.rows() != n || errors.cols() != layers) {
    throw ArgumentError("bandit: score and error grids differ in shape");
  }
  if (cfg.start_layer < 1 || cfg.start_layer > layers) {
    throw ArgumentError("bandit: start_layer outside [1, " + std::to_string(layers) + "]");
  }
  const Index init_cost = n * cfg.start_layer;
  if (cfg.budget < init_cost) {
    throw ArgumentError("bandit: budget " + std::to_string(cfg.budget) +
                        " below initialisation cost " + std::to_string(init_cost));
  }

  const Matrix sigma = mae_to_sigma(errors);
  BanditResult res;
  res.layers = layers;
  res.start_layer = cfg.start_layer;
  res.budget = cfg.budget;
  res.deepest = IndexVector::Constant(n, cfg.start_layer);

  auto ucb_at = [&](Index c) {
    const Index col = res.deepest(c) - 1;
    return ucb_score(scores(c, col), sigma(c, col), cfg.gamma);
  };

  std::priority_queue<Arm, std::vector<Arm>, ArmOrder> remaining;
  if (cfg.start_layer < layers) {
    for (Index c = 0; c < n; ++c) remaining.push({ucb_at(c), c});
  }

  Index spent = init_cost;
  while (spent < cfg.budget && !remaining.empty()) {
    const Index c = remaining.top().candidate;
    remaining.pop();
    ++res.deepest(c);
    ++spent;
    res.trace.push_back({spent, c, res.deepest(c)});
    if (res.deepest(c) < layers) remaining.push({ucb_at(c), c});
  }
  res.cost = spent;

  Vector reached(n);
  for (Index c = 0; c < n; ++c) reached(c) = scores(c, res.deepest(c) - 1);
  res.selected = argmax_lowest(reached);
  return res;
}

BanditResult bandit_rerank(const CandidatePool& pool, const BanditConfig& cfg) {
  if (pool.candidates.empty()) throw ArgumentError("bandit: empty pool");
  return bandit_rerank(pool.score_matrix(), pool.error_matrix(), cfg);
}

Index budget_from_fraction(double fraction, Index candidates, Index layers) {
  if (!(fraction > 0.0)) throw ArgumentError("budget fraction must be positive");
  return static_cast<Index>(std::llround(fraction * static_cast<double>(candidates * layers)));
}

std::string to_string(BaselineMode mode) {
  switch (mode) {
    case BaselineMode::random: return "random";
    case BaselineMode::logprob_sum: return "logprob_sum";
    case BaselineMode::logprob_avg: return "logprob_avg";
  }
  return "unknown";
}

BaselineMode parse_baseline_mode(std::string_view name) {
  if (name == "random") return BaselineMode::random;
  if (name == "logprob_sum") return BaselineMode::logprob_sum;
  if (name == "logprob_avg") return BaselineMode::logprob_avg;
  throw ArgumentError("unknown baseline mode '" + std::string(name) + "'");
}

BaselineResult baseline_select(const CandidatePool& pool, BaselineMode mode, Index budget,
                               std::uint64_t seed) {
  if (pool.candidates.empty()) throw ArgumentError("baseline: empty pool");
  const Index n = pool.size();
  const Index layers = pool.layers();
  if (budget < layers) {
    throw ArgumentError("baseline: budget " + std::to_string(budget) +
                        " cannot cover one full evaluation");
  }
  const Index k = std::clamp<Index>(budget / layers, 1, n);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  if (mode == BaselineMode::random) {
    auto rng = CounterRng::derive(seed, "baseline_random");
    for (Index i = 0; i < k; ++i) {
      const auto j = i + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
  } else {
    const bool use_sum = mode == BaselineMode::logprob_sum;
    const char* field = use_sum ? "logprob_sum" : "logprob_avg";
    Vector logprob(n);
    for (Index c = 0; c < n; ++c) {
      const auto& rec = pool.candidates[static_cast<std::size_t>(c)];
      const auto& v = use_sum ? rec.logprob_sum : rec.logprob_avg;
      if (!v) throw MissingFieldError(field, rec.segment_id);
      logprob(c) = *v;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return logprob(a) > logprob(b); });
  }

  BaselineResult res;
  res.subset.assign(order.begin(), order.begin() + k);
  std::sort(res.subset.begin(), res.subset.end());
  res.selected = res.subset.front();
  for (Index c : res.subset) {
    if (pool.candidates[static_cast<std::size_t>(c)].final_score() >
        pool.candidates[static_cast<std::size_t>(res.selected)].final_score()) {
      res.selected = c;
    }
  }
  res.cost = k * layers;
  return res;
}

std::vector<LayerHistogram> layer_snapshot(const BanditResult& result,
                                           std::span<const double> fractions) {
  std::vector<LayerHistogram> out;
  out.reserve(fractions.size());
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ArgumentError("snapshot fraction outside (0, 1]");
    // Nudge guards against f * B landing just below an integer.
    const auto limit =
        static_cast<Index>(std::floor(f * static_cast<double>(result.budget) + 1e-9));
    IndexVector deepest = IndexVector::Constant(result.deepest.size(), result.start_layer);
    for (const auto& pull : result.trace) {
      if (pull.spent > limit) break;
      deepest(pull.candidate) = pull.layer;
    }
    LayerHistogram h{f, IndexVector::Zero(result.layers)};
    for (Index c = 0; c < deepest.size(); ++c) ++h.counts(deepest(c) - 1);
    out.push_back(std::move(h));
  }
  return out;
}

void write_snapshot_csv(std::ostream& out, std::span<const LayerHistogram> snapshots) {
  out << "fraction,layer,count\n";
  for (const auto& h : snapshots) {
    for (Index l = 0; l < h.counts.size(); ++l) {
      out << format_number(h.fraction) << ',' << (l + 1) << ',' << h.counts(l) << '\n';
    }
  }
}

int prefix_cutoff(int src_len, double fraction, double fertility) {
  if (src_len < 1) throw ArgumentError("prefix_cutoff: src_len must be positive");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("prefix_cutoff: fraction outside (0, 1]");
  }
  const double target = fertility * static_cast<double>(src_len) * fraction;
  // Half-up rounding; the epsilon absorbs representation error such as
  // 1.1 * 10 * 0.5 = 5.500000000000001 vs 5.4999999.
  const auto rounded = static_cast<int>(std::floor(target + 0.5 + 1e-9));
  return std::max(rounded, 1);
}

void validate_schedule(const PruneSchedule& schedule) {
  double previous = 0.0;
  for (const auto& stage : schedule.stages) {
    const bool on_grid = stage.at == 0.25 || stage.at == 0.5 || stage.at == 0.75;
    if (!on_grid) throw ArgumentError("prune stage must be at 0.25, 0.5 or 0.75");
    if (!(stage.at > previous)) throw ArgumentError("prune stages must be strictly increasing");
    if (!(stage.keep > 0.0 && stage.keep <= 1.0)) {
      throw ArgumentError("prune keep fraction outside (0, 1]");
    }
    previous = stage.at;
  }
}

StagedPruneResult staged_prune(const CandidatePool& pool, const PruneSchedule& schedule) {
  validate_schedule(schedule);
  if (pool.candidates.empty()) throw ArgumentError("staged_prune: empty pool");
  const Index n = pool.size();

  std::vector<Index> alive(static_cast<std::size_t>(n));
  std::iota(alive.begin(), alive.end(), Index{0});

  StagedPruneResult res;
  double generated = 0.0;
  constexpr double kSegment = 0.25;
  std::size_t next_stage = 0;
  for (int seg = 1; seg <= 4; ++seg) {
    const double boundary = kSegment * seg;
    generated += static_cast<double>(alive.size()) * kSegment;
    if (next_stage == schedule.stages.size() || schedule.stages[next_stage].at != boundary) {
      continue;
    }
    const auto& stage = schedule.stages[next_stage++];
    std::vector<std::pair<double, Index>> ranked;
    ranked.reserve(alive.size());
    for (Index c : alive) {
      const auto& rec = pool.candidates[static_cast<std::size_t>(c)];
      auto it = rec.partial_scores.find(stage.at);
      if (it == rec.partial_scores.end()) {
        throw MissingFieldError("partial_scores[" + format_number(stage.at) + "]",
                                rec.segment_id);
      }
      ranked.emplace_back(it->second, c);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(stage.keep * static_cast<double>(ranked.size()) - 1e-9)));
    alive.clear();
    for (std::size_t i = 0; i < keep; ++i) alive.push_back(ranked[i].second);
    std::sort(alive.begin(), alive.end());
    res.alive_after_stage.push_back(static_cast<Index>(alive.size()));
  }

  res.survivor = alive.front();
  for (Index c : alive) {
    if (pool.candidates[static_cast<std::size_t>(c)].final_score() >
        pool.candidates[static_cast<std::size_t>(res.survivor)].final_score()) {
      res.survivor = c;
    }
  }
  res.cost_fraction = generated / static_cast<double>(n);
  return res;
}

RerankRow make_rerank_row(const CandidatePool& pool, std::string method, double budget_fraction,
                          Index selected, Index cost_units) {
  const Vector finals = pool.final_scores();
  RerankRow row;
  row.pool_id = pool.source_id;
  row.method = std::move(method);
  row.budget_fraction = budget_fraction;
  row.selected_id = pool.candidates[static_cast<std::size_t>(selected)].segment_id;
  row.selected_final_score = finals(selected);
  row.is_top1 = finals(selected) >= finals.maxCoeff();
  row.cost_units = cost_units;
  return row;
}

void write_rerank_csv(std::ostream& out, std::span<const RerankRow> rows) {
  out << "pool_id,method,budget_fraction,selected_id,selected_final_score,is_top1,cost_units\n";
  for (const auto& r : rows) {
    out << r.pool_id << ',' << r.method << ',' << format_number(r.budget_fraction) << ','
        << r.selected_id << ',' << format_number(r.selected_final_score) << ','
        << (r.is_top1 ? 1 : 0) << ',' << r.cost_units << '\n';
  }
}

}  // namespace eeqe
