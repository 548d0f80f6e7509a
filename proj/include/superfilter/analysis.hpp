#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "superfilter/error.hpp"
#include "superfilter/scoring.hpp"
#include "superfilter/selection.hpp"

namespace superfilter {

// ---------------------------------------------------------------------------
// Rank correlation

/// 1-based ranks; tied values share the mean of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i+1 .. j share the mean rank
    const double rank = static_cast<double>(i + 1 + j) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

/// Spearman's rho: Pearson correlation of the average-rank vectors.
inline double spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("spearman: paired lists differ in length");
  if (a.size() < 2) throw DataError("spearman: need at least two pairs");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw DataError("spearman: non-finite value");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const auto n = static_cast<double>(a.size());
  const double mean_a = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mean_b = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean_a;
    const double db = rb[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) {
    throw UndefinedCorrelation("spearman: zero rank variance (all values identical in one list)");
  }
  return std::clamp(cov / std::sqrt(var_a * var_b), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Selection overlap

struct CommonPool {
  std::vector<ScoredSample> a;
  std::vector<ScoredSample> b;  // same id order as `a`
};

/// Restricts both score lists to ids present in each, ordered as in `a`.
inline CommonPool common_pool(std::span<const ScoredSample> a, std::span<const ScoredSample> b) {
  std::unordered_map<std::string, std::size_t> in_b;
  in_b.reserve(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) in_b.emplace(b[i].id, i);
  CommonPool pool;
  for (const auto& s : a) {
    if (const auto it = in_b.find(s.id); it != in_b.end()) {
      pool.a.push_back(s);
      pool.b.push_back(b[it->second]);
    }
  }
  return pool;
}

/// Fraction of the selection budget picked identically by both scorers, with
/// each side selected by select_top_ifd over the common-id pool. When the cap
/// leaves either side short of the budget, the larger of the two selections is
/// the denominator.
inline double overlap_ratio(std::span<const ScoredSample> a, std::span<const ScoredSample> b, double budget_fraction,
                            double ifd_cap = 1.0) {
  const auto pool = common_pool(a, b);
  if (pool.a.empty()) throw DataError("overlap: the score lists share no ids");
  const SelectionConfig config{budget_fraction, ifd_cap};
  const auto sel_a = select_top_ifd(pool.a, config);
  const auto sel_b = select_top_ifd(pool.b, config);
  std::size_t denom = sel_a.budget;
  if (sel_a.underfilled || sel_b.underfilled) denom = std::max(sel_a.selected_ids.size(), sel_b.selected_ids.size());
  if (denom == 0) throw DataError("overlap: no sample lies under the IFD cap in either list");
  const std::unordered_set<std::string> chosen_a(sel_a.selected_ids.begin(), sel_a.selected_ids.end());
  std::size_t shared = 0;
  for (const auto& id : sel_b.selected_ids) shared += chosen_a.count(id);
  return static_cast<double>(shared) / static_cast<double>(denom);
}

struct ConsistencyReport {
  std::string scorer_a;
  std::string scorer_b;
  std::size_t n_common = 0;
  std::optional<double> spearman_ppl;
  std::optional<double> spearman_ifd;
  std::map<double, std::optional<double>> overlap;  // budget fraction -> ratio
  double ifd_cap = 1.0;
  std::vector<std::string> notes;

  [[nodiscard]] bool degenerate() const {
    if (!spearman_ppl || !spearman_ifd) return true;
    return std::any_of(overlap.begin(), overlap.end(), [](const auto& kv) { return !kv.second.has_value(); });
  }
};

inline ConsistencyReport compare_scores(std::span<const ScoredSample> a, std::span<const ScoredSample> b,
                                        std::span<const double> budgets, std::string scorer_a, std::string scorer_b,
                                        double ifd_cap = 1.0) {
  ConsistencyReport report;
  report.scorer_a = std::move(scorer_a);
  report.scorer_b = std::move(scorer_b);
  report.ifd_cap = ifd_cap;
  const auto pool = common_pool(a, b);
  report.n_common = pool.a.size();
  if (pool.a.empty()) throw DataError("compare: the score files share no ids");

  auto column = [](const std::vector<ScoredSample>& v, double ScoredSample::*field) {
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(s.*field);
    return out;
  };
  auto rho = [&](double ScoredSample::*field, const char* label) -> std::optional<double> {
    try {
      return spearman_rho(column(pool.a, field), column(pool.b, field));
    } catch (const DataError& e) {
      report.notes.push_back(std::string(label) + " rank correlation undefined: " + e.what());
      return std::nullopt;
    }
  };
  report.spearman_ppl = rho(&ScoredSample::ppl_cond, "ppl_cond");
  report.spearman_ifd = rho(&ScoredSample::ifd, "ifd");

  for (const double f : budgets) {
    try {
      report.overlap[f] = overlap_ratio(pool.a, pool.b, f, ifd_cap);
    } catch (const DataError& e) {
      report.overlap[f] = std::nullopt;
      report.notes.push_back("overlap at " + format_real(f) + " undefined: " + e.what());
    }
  }
  return report;
}

inline nlohmann::ordered_json to_json(const ConsistencyReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["scorer_a"] = r.scorer_a;
  j["scorer_b"] = r.scorer_b;
  j["n_common"] = r.n_common;
  j["spearman_ppl"] = opt(r.spearman_ppl);
  j["spearman_ifd"] = opt(r.spearman_ifd);
  auto overlap = nlohmann::ordered_json::object();
  for (const auto& [f, v] : r.overlap) overlap[format_real(f)] = opt(v);
  j["overlap"] = std::move(overlap);
  j["degenerate"] = r.degenerate();
  j["notes"] = r.notes;
  j["method"] = {
      {"spearman", "Pearson correlation of average ranks over common ids"},
      {"overlap", "cap-then-select over the common-id pool, budget = floor(fraction * n_common)"},
      {"ifd_cap", r.ifd_cap},
  };
  return j;
}

// ---------------------------------------------------------------------------
// Winning score

/// (wins - losses) / total + 1, evaluated as (2 * wins + ties) / total so the
/// result is a single correctly rounded quotient.
inline double winning_score(std::uint64_t wins, std::uint64_t ties, std::uint64_t losses) {
  const std::uint64_t total = wins + ties + losses;
  if (total == 0) throw ConfigError("winning score needs at least one comparison");
  return static_cast<double>(2 * wins + ties) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Distribution summaries

enum class Metric { kPplCond, kIfd };

inline const char* metric_name(Metric m) { return m == Metric::kPplCond ? "ppl_cond" : "ifd"; }

inline constexpr std::array<int, 7> kSummaryPercentiles{1, 5, 25, 50, 75, 95, 99};

struct DistributionSummary {
  std::string scorer;
  Metric metric = Metric::kIfd;
  std::array<double, kSummaryPercentiles.size()> quantiles{};
  double mean = 0.0;
  std::size_t count = 0;
};

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
inline double nearest_rank(std::span<const double> sorted, int percentile) {
  const std::size_t n = sorted.size();
  std::size_t rank = (static_cast<std::size_t>(percentile) * n + 99) / 100;
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

inline DistributionSummary summarize_distribution(std::span<const ScoredSample> scores, Metric metric,
                                                  std::string scorer = {}) {
  if (scores.empty()) throw DataError("cannot summarize an empty score list");
  std::vector<double> values;
  values.reserve(scores.size());
  for (const auto& s : scores) values.push_back(metric == Metric::kIfd ? s.ifd : s.ppl_cond);
  std::sort(values.begin(), values.end());
  DistributionSummary out;
  out.scorer = scorer.empty() ? scores.front().scorer : std::move(scorer);
  out.metric = metric;
  out.count = values.size();
  for (std::size_t i = 0; i < kSummaryPercentiles.size(); ++i) out.quantiles[i] = nearest_rank(values, kSummaryPercentiles[i]);
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return out;
}

inline nlohmann::ordered_json to_json(const DistributionSummary& d) {
  nlohmann::ordered_json j;
  j["scorer"] = d.scorer;
  j["metric"] = metric_name(d.metric);
  auto q = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < kSummaryPercentiles.size(); ++i) q["p" + std::to_string(kSummaryPercentiles[i])] = d.quantiles[i];
  j["quantiles"] = std::move(q);
  j["mean"] = d.mean;
  j["count"] = d.count;
  return j;
}

/// Wide plot-data CSV: metric,percentile,<one column per scorer>.
inline std::string quantile_csv(std::span<const DistributionSummary> summaries) {
  std::vector<std::string> scorers;
  for (const auto& s : summaries) {
    if (std::find(scorers.begin(), scorers.end(), s.scorer) == scorers.end()) scorers.push_back(s.scorer);
  }
  std::string out = "metric,percentile";
  for (const auto& s : scorers) out += "," + s;
  out += '\n';
  for (const Metric metric : {Metric::kPplCond, Metric::kIfd}) {
    for (std::size_t p = 0; p < kSummaryPercentiles.size(); ++p) {
      std::string row = std::string(metric_name(metric)) + "," + std::to_string(kSummaryPercentiles[p]);
      bool any = false;
      for (const auto& scorer : scorers) {
        row += ',';
        for (const auto& s : summaries) {
          if (s.scorer == scorer && s.metric == metric) {
            row += format_real(s.quantiles[p]);
            any = true;
          }
        }
      }
      if (any) out += row + '\n';
    }
  }
  return out;
}

}  // namespace superfilter
