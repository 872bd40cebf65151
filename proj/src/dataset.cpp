#include "eeqe/dataset.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "eeqe/errors.hpp"
#include "json.hpp"

namespace eeqe {

using nlohmann::json;

namespace {

bool same_vector(const Vector& a, const Vector& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

// Accepts a field that must be present with a particular JSON type.
const json& required(const json& obj, const char* field, const std::string& segment_id) {
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) {
    throw ValidationError(field, segment_id, "missing required field");
  }
  return *it;
}

std::string required_string(const json& obj, const char* field, const std::string& segment_id) {
  const json& v = required(obj, field, segment_id);
  if (!v.is_string()) throw ValidationError(field, segment_id, "expected string");
  return v.get<std::string>();
}

int required_int(const json& obj, const char* field, const std::string& segment_id) {
  const json& v = required(obj, field, segment_id);
  if (!v.is_number_integer()) throw ValidationError(field, segment_id, "expected integer");
  const auto n = v.get<long long>();
  if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) {
    throw ValidationError(field, segment_id, "integer out of range");
  }
  return static_cast<int>(n);
}

std::optional<double> optional_number(const json& obj, const char* field,
                                      const std::string& segment_id) {
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw ValidationError(field, segment_id, "expected number");
  return it->get<double>();
}

Vector number_array(const json& obj, const char* field, const std::string& segment_id) {
  const json& v = required(obj, field, segment_id);
  if (!v.is_array()) throw ValidationError(field, segment_id, "expected array");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ValidationError(field, segment_id, "expected numeric entries");
    out(static_cast<Index>(i)) = v[i].get<double>();
  }
  return out;
}

}  // namespace

bool operator==(const LayerTrajectory& a, const LayerTrajectory& b) {
  return same_vector(a.scores, b.scores) && same_vector(a.errors, b.errors);
}

bool operator==(const SegmentRecord& a, const SegmentRecord& b) {
  return a.segment_id == b.segment_id && a.source_id == b.source_id &&
         a.lang_pair == b.lang_pair && a.system_id == b.system_id && a.src_len == b.src_len &&
         a.tgt_len == b.tgt_len && a.human_score == b.human_score &&
         a.logprob_sum == b.logprob_sum && a.logprob_avg == b.logprob_avg &&
         a.partial_scores == b.partial_scores && a.trajectory == b.trajectory;
}

double SegmentRecord::require_human() const {
  if (!human_score) throw MissingFieldError("human_score", segment_id);
  return *human_score;
}

Matrix CandidatePool::score_matrix() const {
  Matrix m(size(), layers());
  for (Index c = 0; c < size(); ++c) m.row(c) = candidates[c].trajectory.scores.transpose();
  return m;
}

Matrix CandidatePool::error_matrix() const {
  Matrix m(size(), layers());
  for (Index c = 0; c < size(); ++c) m.row(c) = candidates[c].trajectory.errors.transpose();
  return m;
}

Vector CandidatePool::final_scores() const {
  Vector v(size());
  for (Index c = 0; c < size(); ++c) v(c) = candidates[c].final_score();
  return v;
}

void validate_record(const SegmentRecord& r) {
  const std::string& id = r.segment_id;
  if (r.segment_id.empty()) throw ValidationError("segment_id", id, "empty identifier");
  if (r.src_len < 1) throw ValidationError("src_len", id, "must be positive");
  if (r.tgt_len < 1) throw ValidationError("tgt_len", id, "must be positive");
  const auto& t = r.trajectory;
  if (t.scores.size() != t.errors.size()) {
    throw ValidationError("layer_errors", id, "trajectory length mismatch");
  }
  if (t.scores.size() < 1) throw ValidationError("layer_scores", id, "empty trajectory");
  if (!t.scores.allFinite()) throw ValidationError("layer_scores", id, "non-finite entry");
  if (!t.errors.allFinite()) throw ValidationError("layer_errors", id, "non-finite entry");
  auto check_finite = [&](const std::optional<double>& v, const char* field) {
    if (v && !std::isfinite(*v)) throw ValidationError(field, id, "non-finite value");
  };
  check_finite(r.human_score, "human_score");
  check_finite(r.logprob_sum, "logprob_sum");
  check_finite(r.logprob_avg, "logprob_avg");
  if (r.logprob_sum && r.logprob_avg) {
    const double expected = *r.logprob_sum / r.tgt_len;
    const double scale = std::max(std::abs(expected), std::abs(*r.logprob_avg));
    if (std::abs(expected - *r.logprob_avg) > 1e-6 * scale) {
      throw ValidationError("logprob_avg", id, "logprob_avg != logprob_sum / tgt_len");
    }
  }
  for (const auto& [fraction, score] : r.partial_scores) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
      throw ValidationError("partial_scores", id, "fraction outside (0, 1]");
    }
    if (!std::isfinite(score)) throw ValidationError("partial_scores", id, "non-finite value");
  }
}

SegmentRecord parse_record(std::string_view line, std::size_t line_no) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed record: ") + e.what());
  }
  if (!obj.is_object()) throw ParseError(line_no, "record is not an object");

  SegmentRecord r;
  // segment_id first so later diagnostics can name it.
  r.segment_id = required_string(obj, "segment_id", "");
  const std::string& id = r.segment_id;
  auto src = obj.find("source_id");
  if (src != obj.end() && !src->is_null()) {
    if (!src->is_string()) throw ValidationError("source_id", id, "expected string");
    r.source_id = src->get<std::string>();
  } else {
    r.source_id = r.segment_id;
  }
  r.lang_pair = required_string(obj, "lang_pair", id);
  r.system_id = required_string(obj, "system_id", id);
  r.src_len = required_int(obj, "src_len", id);
  r.tgt_len = required_int(obj, "tgt_len", id);
  r.human_score = optional_number(obj, "human_score", id);
  r.logprob_sum = optional_number(obj, "logprob_sum", id);
  r.logprob_avg = optional_number(obj, "logprob_avg", id);
  r.trajectory.scores = number_array(obj, "layer_scores", id);
  r.trajectory.errors = number_array(obj, "layer_errors", id);

  auto partial = obj.find("partial_scores");
  if (partial != obj.end() && !partial->is_null()) {
    if (!partial->is_object()) throw ValidationError("partial_scores", id, "expected object");
    for (const auto& [key, value] : partial->items()) {
      double fraction = 0.0;
      try {
        std::size_t used = 0;
        fraction = std::stod(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw ValidationError("partial_scores", id, "fraction key '" + key + "' is not a number");
      }
      if (!value.is_number()) throw ValidationError("partial_scores", id, "expected number");
      r.partial_scores[fraction] = value.get<double>();
    }
  }
  validate_record(r);
  return r;
}

std::string serialize_record(const SegmentRecord& r) {
  // ordered_json keeps the documented field order in the output.
  nlohmann::ordered_json obj;
  obj["segment_id"] = r.segment_id;
  if (r.source_id != r.segment_id) obj["source_id"] = r.source_id;
  obj["lang_pair"] = r.lang_pair;
  obj["system_id"] = r.system_id;
  obj["src_len"] = r.src_len;
  obj["tgt_len"] = r.tgt_len;
  if (r.human_score) obj["human_score"] = *r.human_score;
  if (r.logprob_sum) obj["logprob_sum"] = *r.logprob_sum;
  if (r.logprob_avg) obj["logprob_avg"] = *r.logprob_avg;
  if (!r.partial_scores.empty()) {
    nlohmann::ordered_json partial = nlohmann::ordered_json::object();
    for (const auto& [fraction, score] : r.partial_scores) {
      partial[nlohmann::ordered_json(fraction).dump()] = score;
    }
    obj["partial_scores"] = std::move(partial);
  }
  const auto& t = r.trajectory;
  obj["layer_scores"] = std::vector<double>(t.scores.data(), t.scores.data() + t.scores.size());
  obj["layer_errors"] = std::vector<double>(t.errors.data(), t.errors.data() + t.errors.size());
  return obj.dump();
}

std::vector<SegmentRecord> read_records(std::istream& in) {
  std::vector<SegmentRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SegmentRecord r = parse_record(line, line_no);
    if (!seen.insert(r.segment_id).second) {
      throw ValidationError("segment_id", r.segment_id, "duplicate segment_id");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<SegmentRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open record file '" + path.string() + "'");
  return read_records(in);
}

void write_records(std::ostream& out, std::span<const SegmentRecord> records) {
  for (const auto& r : records) out << serialize_record(r) << '\n';
}

std::vector<CandidatePool> group_pools(std::span<const SegmentRecord> records,
                                       std::string_view key) {
  using Getter = const std::string& (*)(const SegmentRecord&);
  Getter get = nullptr;
  if (key == "source_id") {
    get = [](const SegmentRecord& r) -> const std::string& { return r.source_id; };
  } else if (key == "lang_pair") {
    get = [](const SegmentRecord& r) -> const std::string& { return r.lang_pair; };
  } else if (key == "system_id") {
    get = [](const SegmentRecord& r) -> const std::string& { return r.system_id; };
  } else if (key == "segment_id") {
    get = [](const SegmentRecord& r) -> const std::string& { return r.segment_id; };
  } else {
    throw ArgumentError("unknown grouping key '" + std::string(key) + "'");
  }

  std::vector<CandidatePool> pools;
  std::map<std::string, std::size_t> slot;
  for (const auto& r : records) {
    const std::string& id = get(r);
    auto [it, inserted] = slot.emplace(id, pools.size());
    if (inserted) {
      pools.push_back(CandidatePool{id, {}});
    } else if (pools[it->second].layers() != r.trajectory.layers()) {
      throw ValidationError("layer_scores", r.segment_id,
                            "layer count differs from pool '" + id + "'");
    }
    pools[it->second].candidates.push_back(r);
  }
  return pools;
}

double fertility_lookup(const FertilityTable& table, std::string_view lang_pair) {
  auto it = table.factors.find(std::string(lang_pair));
  return it == table.factors.end() ? kDefaultFertility : it->second;
}

FertilityTable read_fertility_table(std::istream& in) {
  FertilityTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(line_no, "expected lang_pair<TAB>factor");
    const std::string pair = line.substr(0, tab);
    double factor = 0.0;
    try {
      std::size_t used = 0;
      const std::string rest = line.substr(tab + 1);
      factor = std::stod(rest, &used);
      if (used != rest.size()) throw std::invalid_argument(rest);
    } catch (const std::exception&) {
      throw ParseError(line_no, "fertility factor is not a number");
    }
    if (!(factor > 0.0) || !std::isfinite(factor)) {
      throw ParseError(line_no, "fertility factor must be positive");
    }
    table.factors[pair] = factor;
  }
  return table;
}

FertilityTable load_fertility_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open fertility table '" + path.string() + "'");
  return read_fertility_table(in);
}

}  // namespace eeqe
