#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eeqe/types.hpp"

namespace eeqe {

/// Per-layer outputs of a multi-layer scorer: the score head and the
/// predicted-absolute-error head evaluated after every layer. Layers are
/// 1-based in the public accessors and 0-based in the underlying vectors.
struct LayerTrajectory {
  Vector scores;
  Vector errors;

  Index layers() const { return scores.size(); }
  double score_at(Index layer) const { return scores(layer - 1); }
  double error_at(Index layer) const { return errors(layer - 1); }
  double final_score() const { return scores(scores.size() - 1); }
  double final_error() const { return errors(errors.size() - 1); }
};

bool operator==(const LayerTrajectory& a, const LayerTrajectory& b);

struct SegmentRecord {
  std::string segment_id;
  /// Candidates of one source segment share this id. Defaults to
  /// segment_id when the file omits it.
  std::string source_id;
  std::string lang_pair;
  std::string system_id;
  int src_len = 1;
  int tgt_len = 1;
  std::optional<double> human_score;
  std::optional<double> logprob_sum;
  std::optional<double> logprob_avg;
  /// Scores of a partial-translation scorer keyed by revealed target fraction.
  std::map<double, double> partial_scores;
  LayerTrajectory trajectory;

  double final_score() const { return trajectory.final_score(); }
  /// Throws MissingFieldError when absent.
  double require_human() const;
};

bool operator==(const SegmentRecord& a, const SegmentRecord& b);

struct CandidatePool {
  std::string source_id;
  std::vector<SegmentRecord> candidates;

  Index size() const { return static_cast<Index>(candidates.size()); }
  Index layers() const { return candidates.front().trajectory.layers(); }
  /// |C| x |L| matrices of layer scores / layer errors.
  Matrix score_matrix() const;
  Matrix error_matrix() const;
  Vector final_scores() const;
};

/// lang_pair -> target/source length ratio.
struct FertilityTable {
  std::map<std::string, double> factors;
};

inline constexpr double kDefaultFertility = 1.0;

/// Checks every record invariant; throws ValidationError naming the field.
void validate_record(const SegmentRecord& record);

/// Parses one JSON object line. `line_no` is used in diagnostics only.
SegmentRecord parse_record(std::string_view line, std::size_t line_no = 1);
/// Single-line JSON; absent optionals are omitted.
std::string serialize_record(const SegmentRecord& record);

std::vector<SegmentRecord> read_records(std::istream& in);
std::vector<SegmentRecord> load_records(const std::filesystem::path& path);
void write_records(std::ostream& out, std::span<const SegmentRecord> records);

/// Stable grouping by `key` (source_id, lang_pair, system_id or segment_id).
/// Pool order follows first occurrence, within-pool order follows input.
std::vector<CandidatePool> group_pools(std::span<const SegmentRecord> records,
                                       std::string_view key = "source_id");

double fertility_lookup(const FertilityTable& table, std::string_view lang_pair);
/// Two columns per line: `lang_pair<TAB>factor`. Blank lines and lines
/// starting with '#' are skipped.
FertilityTable read_fertility_table(std::istream& in);
FertilityTable load_fertility_table(const std::filesystem::path& path);

}  // namespace eeqe
