#pragma once

#include <algorithm>
#include <cmath>
#include <iosfwd>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "eeqe/dataset.hpp"
#include "eeqe/errors.hpp"
#include "eeqe/types.hpp"

namespace eeqe {

/// Sample Pearson correlation. Throws ArgumentError on length mismatch or
/// fewer than two samples and UndefinedCorrelationError when either side is
/// constant.
template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar pearson(const Eigen::MatrixBase<DerivedX>& xs,
                                  const Eigen::MatrixBase<DerivedY>& ys) {
  using Scalar = typename DerivedX::Scalar;
  if (xs.size() != ys.size()) throw ArgumentError("pearson: length mismatch");
  if (xs.size() < 2) throw ArgumentError("pearson: need at least two samples");
  // Exact constancy test; a centred sum can leave rounding residue.
  if (xs.maxCoeff() == xs.minCoeff() || ys.maxCoeff() == ys.minCoeff()) {
    throw UndefinedCorrelationError("pearson: zero variance");
  }
  const auto x = xs.template cast<Scalar>().array();
  const auto y = ys.template cast<Scalar>().array();
  const Eigen::Array<Scalar, Eigen::Dynamic, 1> dx = x - x.mean();
  const Eigen::Array<Scalar, Eigen::Dynamic, 1> dy = y - y.mean();
  const Scalar sxy = (dx * dy).sum();
  const Scalar sxx = dx.square().sum();
  const Scalar syy = dy.square().sum();
  const Scalar r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, Scalar(-1), Scalar(1));
}

/// 1-based ranks; tied values share the mean of the ranks they span.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> average_ranks(
    const Eigen::MatrixBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  const Index n = values.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values(a) < values(b); });
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> ranks(n);
  Index i = 0;
  while (i < n) {
    Index j = i + 1;
    while (j < n && values(order[j]) == values(order[i])) ++j;
    const Scalar rank = Scalar(i + 1 + j) / Scalar(2);  // mean of i+1 .. j
    for (Index k = i; k < j; ++k) ranks(order[k]) = rank;
    i = j;
  }
  return ranks;
}

/// Pearson correlation of average ranks.
template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar spearman(const Eigen::MatrixBase<DerivedX>& xs,
                                   const Eigen::MatrixBase<DerivedY>& ys) {
  if (xs.size() != ys.size()) throw ArgumentError("spearman: length mismatch");
  if (xs.size() < 2) throw ArgumentError("spearman: need at least two samples");
  return pearson(average_ranks(xs), average_ranks(ys));
}

/// Unweighted mean over groups.
double macro_average(const std::map<std::string, double>& by_group);

struct CalibrationConfig {
  int n_bins = 100;
};

struct CalibrationBin {
  double mean_confidence = 0.0;
  double mean_error = 0.0;
  Index count = 0;
};

/// Sorts samples by predicted error (ties keep input order), splits them into
/// equal-mass bins and returns per-bin means. Bin sizes differ by at most one;
/// the leading bins take the remainder.
std::vector<CalibrationBin> calibration_curve(const Vector& predicted_error,
                                              const Vector& true_error,
                                              const CalibrationConfig& cfg = {});

/// Bin sizes used by calibration_curve for n samples.
std::vector<Index> equal_mass_bin_sizes(Index n, int n_bins);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

/// `label,x,y` with header.
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> points);

/// Area under a piecewise-linear curve through points sorted by x.
double trapezoid_area(std::span<const CurvePoint> points);

struct RerankQuality {
  double avg_final_score = 0.0;
  double top1_rate = 0.0;
};

/// `selections` maps pool source_id to the selected candidate index. Ties
/// with the pool maximum count as top-1.
RerankQuality rerank_quality(std::span<const CandidatePool> pools,
                             const std::map<std::string, Index>& selections);

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Index argmax_lowest(const Eigen::DenseBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

}  // namespace eeqe
