#include "eeqe/exitpolicy.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "eeqe/errors.hpp"
#include "eeqe/format.hpp"
#include "eeqe/metrics.hpp"

namespace eeqe {

namespace {

ExitResult exit_at(const LayerTrajectory& t, Index layer) {
  return ExitResult{t.score_at(layer), layer, layer};
}

}  // namespace

std::string to_string(ExitPolicyKind kind) {
  switch (kind) {
    case ExitPolicyKind::constant: return "constant";
    case ExitPolicyKind::variance: return "variance";
    case ExitPolicyKind::confidence: return "confidence";
  }
  return "unknown";
}

ExitPolicyKind parse_exit_policy(std::string_view name) {
  if (name == "constant") return ExitPolicyKind::constant;
  if (name == "variance") return ExitPolicyKind::variance;
  if (name == "confidence") return ExitPolicyKind::confidence;
  throw ArgumentError("unknown exit policy '" + std::string(name) + "'");
}

ExitResult constant_exit(const LayerTrajectory& t, Index k) {
  if (k < 1 || k > t.layers()) {
    throw ArgumentError("constant_exit: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(t.layers()) + "]");
  }
  return exit_at(t, k);
}

ExitResult variance_exit(const LayerTrajectory& t, double tau, Index window) {
  if (window < 2) throw ArgumentError("variance_exit: window must be at least 2");
  const Index n = t.layers();
  for (Index i = window; i <= n; ++i) {
    const auto w = t.scores.segment(i - window, window).array();
    const double var = (w - w.mean()).square().sum() / static_cast<double>(window);
    if (var < tau) return exit_at(t, i);
  }
  return exit_at(t, n);
}

ExitResult confidence_exit(const LayerTrajectory& t, double tau) {
  const Index n = t.layers();
  for (Index i = 1; i <= n; ++i) {
    if (t.error_at(i) < tau) return exit_at(t, i);
  }
  return exit_at(t, n);
}

ExitResult apply_exit_policy(const LayerTrajectory& t, const ExitPolicyConfig& cfg) {
  switch (cfg.kind) {
    case ExitPolicyKind::constant: return constant_exit(t, cfg.k);
    case ExitPolicyKind::variance: return variance_exit(t, cfg.tau, cfg.window);
    case ExitPolicyKind::confidence: return confidence_exit(t, cfg.tau);
  }
  throw ArgumentError("unknown exit policy");
}

std::vector<SweepPoint> budget_sweep(std::span<const SegmentRecord> records, ExitPolicyKind kind,
                                     std::span<const double> parameters, Index window) {
  if (records.empty()) throw ArgumentError("budget_sweep: no records");
  const Index layers = records.front().trajectory.layers();
  const Index n = static_cast<Index>(records.size());
  Vector finals(n), humans(n);
  for (Index r = 0; r < n; ++r) {
    const auto& rec = records[static_cast<std::size_t>(r)];
    if (rec.trajectory.layers() != layers) {
      throw ArgumentError("budget_sweep: trajectories differ in length (segment '" +
                          rec.segment_id + "')");
    }
    finals(r) = rec.final_score();
    humans(r) = rec.require_human();
  }

  std::vector<SweepPoint> points;
  points.reserve(parameters.size());
  Vector exited(n);
  for (double parameter : parameters) {
    ExitPolicyConfig cfg{kind, 1, parameter, window};
    if (kind == ExitPolicyKind::constant) {
      if (parameter != std::floor(parameter)) {
        throw ArgumentError("budget_sweep: constant policy needs integer k");
      }
      cfg.k = static_cast<Index>(parameter);
    }
    Index total_cost = 0;
    for (Index r = 0; r < n; ++r) {
      const ExitResult res = apply_exit_policy(records[static_cast<std::size_t>(r)].trajectory, cfg);
      exited(r) = res.score;
      total_cost += res.cost;
    }
    SweepPoint p;
    p.policy = kind;
    p.parameter = parameter;
    p.cost_fraction = static_cast<double>(total_cost) / static_cast<double>(n * layers);
    p.corr_final = pearson(exited, finals);
    p.corr_human = pearson(exited, humans);
    points.push_back(p);
  }
  std::stable_sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) {
    return a.cost_fraction < b.cost_fraction;
  });
  return points;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points) {
  out << "policy,parameter,cost_fraction,corr_final,corr_human\n";
  for (const auto& p : points) {
    out << to_string(p.policy) << ',' << format_number(p.parameter) << ','
        << format_number(p.cost_fraction) << ',' << format_number(p.corr_final) << ','
        << format_number(p.corr_human) << '\n';
  }
}

}  // namespace eeqe
