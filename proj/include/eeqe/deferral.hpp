#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eeqe/dataset.hpp"
#include "eeqe/metrics.hpp"

namespace eeqe {

enum class DeferralKind { random, low_score, low_confidence, oracle_low_human, oracle_high_error };

std::string to_string(DeferralKind kind);
DeferralKind parse_deferral_kind(std::string_view name);

struct DeferralPolicy {
  DeferralKind kind = DeferralKind::low_confidence;
  std::uint64_t seed = 0;  // random only
};

/// round(rate * n), halves rounded up.
Index deferral_count(double rate, Index n);

/// Indices of the records routed to human annotation, in priority order.
/// Sorting policies break ties by segment_id.
std::vector<Index> defer_indices(std::span<const SegmentRecord> records,
                                 const DeferralPolicy& policy, double rate);

std::set<std::string> defer_select(std::span<const SegmentRecord> records,
                                   const DeferralPolicy& policy, double rate);

struct DeferralOptions {
  /// Rescale metric scores to the human mean and spread of each language
  /// before mixing. Off by default.
  bool z_normalize = false;
};

/// For every rate: within each language, deferred segments take their human
/// score and the rest keep the final-layer metric score; system scores are
/// the means of these mixed scores; the system ranking is compared to the
/// all-human ranking by Spearman correlation and macro-averaged over
/// languages. Points carry x = rate and y = macro Spearman.
std::vector<CurvePoint> deferral_curve(std::span<const SegmentRecord> records,
                                       const DeferralPolicy& policy,
                                       std::span<const double> rates,
                                       const DeferralOptions& options = {});

/// `policy,rate,macro_spearman` with header.
void write_deferral_csv(std::ostream& out, std::span<const CurvePoint> points);

struct LengthBias {
  /// Macro Pearson of final-layer score vs target length.
  double score_vs_length = 0.0;
  /// Macro Pearson of final-layer predicted error vs target length.
  double error_vs_length = 0.0;
};

LengthBias length_bias(std::span<const SegmentRecord> records);

}  // namespace eeqe
