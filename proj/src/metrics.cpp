#include "eeqe/metrics.hpp"

#include <ostream>

#include "eeqe/format.hpp"

namespace eeqe {

double macro_average(const std::map<std::string, double>& by_group) {
  if (by_group.empty()) throw ArgumentError("macro_average: no groups");
  double sum = 0.0;
  for (const auto& [group, value] : by_group) sum += value;
  return sum / static_cast<double>(by_group.size());
}

std::vector<Index> equal_mass_bin_sizes(Index n, int n_bins) {
  if (n_bins < 1) throw ArgumentError("calibration: n_bins must be positive");
  if (n < n_bins) throw ArgumentError("calibration: fewer samples than bins");
  std::vector<Index> sizes(static_cast<std::size_t>(n_bins), n / n_bins);
  for (Index b = 0; b < n % n_bins; ++b) ++sizes[static_cast<std::size_t>(b)];
  return sizes;
}

std::vector<CalibrationBin> calibration_curve(const Vector& predicted_error,
                                              const Vector& true_error,
                                              const CalibrationConfig& cfg) {
  if (predicted_error.size() != true_error.size()) {
    throw ArgumentError("calibration: length mismatch");
  }
  const Index n = predicted_error.size();
  const auto sizes = equal_mass_bin_sizes(n, cfg.n_bins);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return predicted_error(a) < predicted_error(b);
  });

  std::vector<CalibrationBin> bins;
  bins.reserve(sizes.size());
  Index pos = 0;
  for (Index size : sizes) {
    CalibrationBin bin;
    bin.count = size;
    for (Index k = pos; k < pos + size; ++k) {
      bin.mean_confidence += predicted_error(order[k]);
      bin.mean_error += true_error(order[k]);
    }
    bin.mean_confidence /= static_cast<double>(size);
    bin.mean_error /= static_cast<double>(size);
    bins.push_back(bin);
    pos += size;
  }
  return bins;
}

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> points) {
  out << "label,x,y\n";
  for (const auto& p : points) {
    out << p.label << ',' << format_number(p.x) << ',' << format_number(p.y) << '\n';
  }
}

double trapezoid_area(std::span<const CurvePoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += 0.5 * (points[i].y + points[i - 1].y) * (points[i].x - points[i - 1].x);
  }
  return area;
}

RerankQuality rerank_quality(std::span<const CandidatePool> pools,
                             const std::map<std::string, Index>& selections) {
  if (pools.empty()) throw ArgumentError("rerank_quality: no pools");
  RerankQuality q;
  for (const auto& pool : pools) {
    auto it = selections.find(pool.source_id);
    if (it == selections.end()) {
      throw ArgumentError("rerank_quality: no selection for pool '" + pool.source_id + "'");
    }
    if (it->second < 0 || it->second >= pool.size()) {
      throw ArgumentError("rerank_quality: selection out of range for pool '" + pool.source_id +
                          "'");
    }
    const Vector finals = pool.final_scores();
    const double chosen = finals(it->second);
    q.avg_final_score += chosen;
    if (chosen >= finals.maxCoeff()) q.top1_rate += 1.0;
  }
  q.avg_final_score /= static_cast<double>(pools.size());
  q.top1_rate /= static_cast<double>(pools.size());
  return q;
}

}  // namespace eeqe
