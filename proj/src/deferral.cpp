#include "eeqe/deferral.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include "eeqe/errors.hpp"
#include "eeqe/format.hpp"
#include "eeqe/rng.hpp"

namespace eeqe {

namespace {

using Group = std::vector<Index>;

std::map<std::string, Group> by_language(std::span<const SegmentRecord> records) {
  std::map<std::string, Group> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    groups[records[i].lang_pair].push_back(static_cast<Index>(i));
  }
  return groups;
}

}  // namespace

std::string to_string(DeferralKind kind) {
  switch (kind) {
    case DeferralKind::random: return "random";
    case DeferralKind::low_score: return "low_score";
    case DeferralKind::low_confidence: return "low_confidence";
    case DeferralKind::oracle_low_human: return "oracle_low_human";
    case DeferralKind::oracle_high_error: return "oracle_high_error";
  }
  return "unknown";
}

DeferralKind parse_deferral_kind(std::string_view name) {
  if (name == "random") return DeferralKind::random;
  if (name == "low_score") return DeferralKind::low_score;
  if (name == "low_confidence") return DeferralKind::low_confidence;
  if (name == "oracle_low_human") return DeferralKind::oracle_low_human;
  if (name == "oracle_high_error") return DeferralKind::oracle_high_error;
  throw ArgumentError("unknown deferral policy '" + std::string(name) + "'");
}

Index deferral_count(double rate, Index n) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ArgumentError("deferral rate outside [0, 1]");
  const auto k = static_cast<Index>(std::floor(rate * static_cast<double>(n) + 0.5 + 1e-9));
  return std::min(k, n);
}

std::vector<Index> defer_indices(std::span<const SegmentRecord> records,
                                 const DeferralPolicy& policy, double rate) {
  const auto n = static_cast<Index>(records.size());
  const Index k = deferral_count(rate, n);

  std::vector<Index> order(records.size());
  std::iota(order.begin(), order.end(), Index{0});
  auto id_less = [&](Index a, Index b) {
    return records[static_cast<std::size_t>(a)].segment_id <
           records[static_cast<std::size_t>(b)].segment_id;
  };
  std::sort(order.begin(), order.end(), id_less);

  if (policy.kind == DeferralKind::random) {
    auto rng = CounterRng::derive(policy.seed, "deferral_random");
    for (Index i = 0; i < k; ++i) {
      const auto j = i + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    order.resize(static_cast<std::size_t>(k));
    return order;
  }

  // Priority key, smaller first.
  Vector key(n);
  for (Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    switch (policy.kind) {
      case DeferralKind::low_score: key(i) = r.final_score(); break;
      case DeferralKind::low_confidence: key(i) = -r.trajectory.final_error(); break;
      case DeferralKind::oracle_low_human: key(i) = r.require_human(); break;
      case DeferralKind::oracle_high_error:
        key(i) = -std::abs(r.final_score() - r.require_human());
        break;
      case DeferralKind::random: break;
    }
  }
  // order is already sorted by segment_id, so a stable sort breaks ties by it.
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return key(a) < key(b); });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

std::set<std::string> defer_select(std::span<const SegmentRecord> records,
                                   const DeferralPolicy& policy, double rate) {
  std::set<std::string> ids;
  for (Index i : defer_indices(records, policy, rate)) {
    ids.insert(records[static_cast<std::size_t>(i)].segment_id);
  }
  return ids;
}

std::vector<CurvePoint> deferral_curve(std::span<const SegmentRecord> records,
                                       const DeferralPolicy& policy,
                                       std::span<const double> rates,
                                       const DeferralOptions& options) {
  if (records.empty()) throw ArgumentError("deferral_curve: no records");
  for (const auto& r : records) r.require_human();

  struct Language {
    std::string name;
    std::vector<SegmentRecord> records;
    std::vector<Index> system_of;  // per record, index into system names
    Index n_systems = 0;
    Vector metric;
    Vector human;
    Vector human_means;
  };

  std::vector<Language> languages;
  for (const auto& [name, members] : by_language(records)) {
    Language lang;
    lang.name = name;
    std::map<std::string, Index> systems;
    for (Index i : members) {
      const auto& r = records[static_cast<std::size_t>(i)];
      lang.records.push_back(r);
      systems.emplace(r.system_id, 0);
    }
    Index next = 0;
    for (auto& [sys, slot] : systems) slot = next++;
    lang.n_systems = next;
    const auto m = static_cast<Index>(lang.records.size());
    lang.metric.resize(m);
    lang.human.resize(m);
    for (Index i = 0; i < m; ++i) {
      const auto& r = lang.records[static_cast<std::size_t>(i)];
      lang.system_of.push_back(systems.at(r.system_id));
      lang.metric(i) = r.final_score();
      lang.human(i) = *r.human_score;
    }
    if (options.z_normalize && m > 1) {
      const double mm = lang.metric.mean();
      const double hm = lang.human.mean();
      const double ms = std::sqrt((lang.metric.array() - mm).square().mean());
      const double hs = std::sqrt((lang.human.array() - hm).square().mean());
      if (ms > 0.0) lang.metric = ((lang.metric.array() - mm) / ms * hs + hm).matrix();
    }
    languages.push_back(std::move(lang));
  }

  auto system_means = [](const Language& lang, const Vector& scores) {
    Vector sums = Vector::Zero(lang.n_systems);
    Vector counts = Vector::Zero(lang.n_systems);
    for (Index i = 0; i < scores.size(); ++i) {
      sums(lang.system_of[static_cast<std::size_t>(i)]) += scores(i);
      counts(lang.system_of[static_cast<std::size_t>(i)]) += 1.0;
    }
    return Vector(sums.array() / counts.array());
  };
  for (auto& lang : languages) lang.human_means = system_means(lang, lang.human);

  std::vector<CurvePoint> points;
  points.reserve(rates.size());
  for (double rate : rates) {
    std::map<std::string, double> per_language;
    for (const auto& lang : languages) {
      DeferralPolicy local = policy;
      local.seed = CounterRng::derive(policy.seed, "deferral_language:" + lang.name).next_u64();
      Vector mixed = lang.metric;
      for (Index i : defer_indices(lang.records, local, rate)) mixed(i) = lang.human(i);
      per_language[lang.name] = spearman(system_means(lang, mixed), lang.human_means);
    }
    points.push_back(CurvePoint{rate, macro_average(per_language), to_string(policy.kind)});
  }
  return points;
}

void write_deferral_csv(std::ostream& out, std::span<const CurvePoint> points) {
  out << "policy,rate,macro_spearman\n";
  for (const auto& p : points) {
    out << p.label << ',' << format_number(p.x) << ',' << format_number(p.y) << '\n';
  }
}

LengthBias length_bias(std::span<const SegmentRecord> records) {
  std::map<std::string, double> score_corr, error_corr;
  for (const auto& [name, members] : by_language(records)) {
    const auto m = static_cast<Index>(members.size());
    if (m < 2) throw ArgumentError("length_bias: language '" + name + "' has fewer than 2 records");
    Vector score(m), error(m), length(m);
    for (Index i = 0; i < m; ++i) {
      const auto& r = records[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])];
      score(i) = r.final_score();
      error(i) = r.trajectory.final_error();
      length(i) = r.tgt_len;
    }
    score_corr[name] = pearson(score, length);
    error_corr[name] = pearson(error, length);
  }
  return LengthBias{macro_average(score_corr), macro_average(error_corr)};
}

}  // namespace eeqe
