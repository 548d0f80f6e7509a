#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "superfilter/analysis.hpp"
#include "superfilter/dataset.hpp"
#include "superfilter/error.hpp"
#include "superfilter/scoring.hpp"

namespace superfilter {

struct Lexicons {
  std::set<std::string, std::less<>> verbs;
  std::set<std::string, std::less<>> nouns;
};

/// One lowercase word per line; blank lines and '#' comments are skipped.
inline std::set<std::string, std::less<>> load_word_list(const std::string& path) {
  std::set<std::string, std::less<>> words;
  std::istringstream in(detail::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    std::size_t start = 0;
    while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
    line.erase(0, start);
    if (line.empty() || line.front() == '#') continue;
    std::transform(line.begin(), line.end(), line.begin(), [](unsigned char c) { return std::tolower(c); });
    words.insert(line);
  }
  return words;
}

inline Lexicons load_lexicons(const std::string& verbs_path, const std::string& nouns_path) {
  Lexicons lex{load_word_list(verbs_path), load_word_list(nouns_path)};
  if (lex.verbs.empty() || lex.nouns.empty()) throw ConfigError("verb and noun lexicons must be non-empty");
  return lex;
}

inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

using VerbNoun = std::pair<std::string, std::string>;

/// First lexicon verb, then the first lexicon noun after it.
inline std::optional<VerbNoun> extract_verb_noun(std::string_view instruction, const Lexicons& lex) {
  if (lex.verbs.empty() || lex.nouns.empty()) throw ConfigError("verb and noun lexicons must be non-empty");
  const auto tokens = word_tokens(instruction);
  auto verb = std::find_if(tokens.begin(), tokens.end(), [&](const std::string& t) { return lex.verbs.contains(t); });
  if (verb == tokens.end()) return std::nullopt;
  auto noun = std::find_if(verb + 1, tokens.end(), [&](const std::string& t) { return lex.nouns.contains(t); });
  if (noun == tokens.end()) return std::nullopt;
  return VerbNoun{*verb, *noun};
}

struct VerbNounRow {
  std::string verb;
  std::string noun;
  std::size_t count = 0;

  friend bool operator==(const VerbNounRow&, const VerbNounRow&) = default;
};

struct VerbNounTable {
  std::string slice;  // "top" or "bottom"
  double fraction = 0.0;
  std::size_t slice_size = 0;
  std::size_t n_extracted = 0;
  std::vector<VerbNounRow> rows;  // count desc, then (verb, noun)
};

struct VerbNounReport {
  VerbNounTable top;
  VerbNounTable bottom;
};

namespace detail {

inline VerbNounTable count_pairs(std::string slice, double fraction, std::span<const std::size_t> positions,
                                 std::span<const ScoredSample> scores, const Dataset& dataset,
                                 const std::unordered_map<std::string, std::size_t>& index, const Lexicons& lex,
                                 std::size_t top_k_rows) {
  VerbNounTable table{std::move(slice), fraction, positions.size(), 0, {}};
  std::map<VerbNoun, std::size_t> counts;
  for (const auto p : positions) {
    const auto it = index.find(scores[p].id);
    if (it == index.end()) throw ConsistencyError("scored id not present in dataset: " + scores[p].id);
    if (auto pair = extract_verb_noun(dataset.samples[it->second].instruction, lex)) {
      ++counts[*pair];
      ++table.n_extracted;
    }
  }
  for (auto& [pair, count] : counts) table.rows.push_back({pair.first, pair.second, count});
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const VerbNounRow& a, const VerbNounRow& b) { return a.count > b.count; });
  if (table.rows.size() > top_k_rows) table.rows.resize(top_k_rows);
  return table;
}

}  // namespace detail

/// Verb-noun tables for the highest- and lowest-IFD slices. No IFD cap is
/// applied. The bottom slice is the tail of the same total order as the top
/// slice, so the two never share a sample for fraction <= 0.5.
inline VerbNounReport verb_noun_report(const Dataset& dataset, std::span<const ScoredSample> scores, double fraction,
                                       std::size_t top_k_rows, const Lexicons& lex) {
  if (!(fraction > 0.0 && fraction <= 0.5)) throw ConfigError("slice fraction must lie in (0, 0.5]");
  const std::size_t n = scores.size();
  const std::size_t slice = selection_budget(fraction, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].ifd != scores[b].ifd) return scores[a].ifd > scores[b].ifd;
    return a < b;
  });
  const auto index = dataset.index();
  const std::span<const std::size_t> all(order);
  VerbNounReport report;
  report.top = detail::count_pairs("top", fraction, all.first(slice), scores, dataset, index, lex, top_k_rows);
  std::vector<std::size_t> bottom(order.rbegin(), order.rbegin() + static_cast<std::ptrdiff_t>(slice));
  report.bottom = detail::count_pairs("bottom", fraction, bottom, scores, dataset, index, lex, top_k_rows);
  return report;
}

inline std::string table_csv(const VerbNounTable& t) {
  std::string out = "verb,noun,count\n";
  for (const auto& r : t.rows) out += r.verb + "," + r.noun + "," + std::to_string(r.count) + "\n";
  return out;
}

inline nlohmann::ordered_json to_json(const VerbNounTable& t) {
  nlohmann::ordered_json j;
  j["slice"] = t.slice;
  j["fraction"] = t.fraction;
  j["slice_size"] = t.slice_size;
  j["n_extracted"] = t.n_extracted;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) rows.push_back({{"verb", r.verb}, {"noun", r.noun}, {"count", r.count}});
  j["rows"] = std::move(rows);
  return j;
}

// ---------------------------------------------------------------------------
// Whole-dataset quality report

struct QualityOptions {
  double slice_fraction = 0.05;
  std::size_t top_k_rows = 10;
  double ifd_cap = 1.0;
};

struct QualityReport {
  std::string scorer;
  std::size_t n_scores = 0;
  std::size_t n_dataset = 0;
  DistributionSummary ppl;
  DistributionSummary ifd;
  std::size_t n_at_or_above_cap = 0;
  double fraction_at_or_above_cap = 0.0;
  double ifd_spread_5_95 = 0.0;
  double ifd_spread_1_99 = 0.0;
  std::vector<std::string> warnings;
  VerbNounReport verb_noun;
  QualityOptions options;

  [[nodiscard]] bool degenerate() const { return !warnings.empty(); }
};

inline QualityReport quality_report(std::span<const ScoredSample> scores, const Dataset& dataset, const Lexicons& lex,
                                    const QualityOptions& options = {}) {
  if (scores.empty()) throw DataError("quality report needs at least one score");
  QualityReport r;
  r.options = options;
  r.scorer = scores.front().scorer;
  r.n_scores = scores.size();
  r.n_dataset = dataset.size();
  r.ppl = summarize_distribution(scores, Metric::kPplCond, r.scorer);
  r.ifd = summarize_distribution(scores, Metric::kIfd, r.scorer);
  r.n_at_or_above_cap = static_cast<std::size_t>(
      std::count_if(scores.begin(), scores.end(), [&](const ScoredSample& s) { return s.ifd >= options.ifd_cap; }));
  r.fraction_at_or_above_cap = static_cast<double>(r.n_at_or_above_cap) / static_cast<double>(scores.size());
  // quantile indices: 0=p1 1=p5 5=p95 6=p99
  r.ifd_spread_5_95 = r.ifd.quantiles[5] - r.ifd.quantiles[1];
  r.ifd_spread_1_99 = r.ifd.quantiles[6] - r.ifd.quantiles[0];

  if (r.n_at_or_above_cap == scores.size()) {
    r.warnings.push_back("degenerate dataset: no sample has IFD strictly below the cap, nothing is selectable");
  }
  const bool constant = std::all_of(scores.begin(), scores.end(), [&](const ScoredSample& s) { return s.ifd == scores.front().ifd; });
  if (constant) r.warnings.push_back("degenerate scores: every IFD value is identical, the scorer ignores the instruction");
  r.verb_noun = verb_noun_report(dataset, scores, options.slice_fraction, options.top_k_rows, lex);
  return r;
}

inline constexpr const char* kVerbNounMethodNote =
    "verb-noun pairs use a first-match lexicon heuristic (first lexicon verb, then the next lexicon noun); "
    "this approximates a dependency parse and is not one";

inline nlohmann::ordered_json to_json(const QualityReport& r) {
  nlohmann::ordered_json j;
  j["scorer"] = r.scorer;
  j["n_scores"] = r.n_scores;
  j["n_dataset"] = r.n_dataset;
  j["ifd_cap"] = r.options.ifd_cap;
  j["n_at_or_above_cap"] = r.n_at_or_above_cap;
  j["fraction_at_or_above_cap"] = r.fraction_at_or_above_cap;
  j["n_below_cap"] = r.n_scores - r.n_at_or_above_cap;
  j["ifd_spread"] = {{"p5_to_p95", r.ifd_spread_5_95}, {"p1_to_p99", r.ifd_spread_1_99}};
  j["distributions"] = {to_json(r.ppl), to_json(r.ifd)};
  j["degenerate"] = r.degenerate();
  j["warnings"] = r.warnings;
  j["verb_noun_method"] = kVerbNounMethodNote;
  j["verb_noun"] = {{"top", to_json(r.verb_noun.top)}, {"bottom", to_json(r.verb_noun.bottom)}};
  return j;
}

inline std::string render_text(const QualityReport& r) {
  std::ostringstream out;
  out << "Quality report (scorer: " << r.scorer << ")\n";
  out << "  scored samples: " << r.n_scores << " of " << r.n_dataset << "\n";
  out << "  IFD >= cap (" << format_real(r.options.ifd_cap) << "): " << r.n_at_or_above_cap << " ("
      << format_real(100.0 * r.fraction_at_or_above_cap) << "%)\n";
  out << "  IFD spread p5..p95: " << format_real(r.ifd_spread_5_95) << ", p1..p99: " << format_real(r.ifd_spread_1_99)
      << "\n";
  for (const auto* d : {&r.ppl, &r.ifd}) {
    out << "\n  " << metric_name(d->metric) << " (mean " << format_real(d->mean) << ")\n";
    for (std::size_t i = 0; i < kSummaryPercentiles.size(); ++i) {
      out << "    p" << kSummaryPercentiles[i] << ": " << format_real(d->quantiles[i]) << "\n";
    }
  }
  for (const auto& w : r.warnings) out << "\nWARNING: " << w << "\n";
  out << "\nNote: " << kVerbNounMethodNote << ".\n";
  for (const auto* t : {&r.verb_noun.top, &r.verb_noun.bottom}) {
    out << "\n  " << t->slice << " " << format_real(100.0 * t->fraction) << "% by IFD (" << t->slice_size
        << " samples, " << t->n_extracted << " with a pair)\n";
    for (const auto& row : t->rows) out << "    " << row.verb << " " << row.noun << " " << row.count << "\n";
  }
  return out.str();
}

}  // namespace superfilter
