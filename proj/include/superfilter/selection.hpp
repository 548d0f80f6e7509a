#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "superfilter/dataset.hpp"
#include "superfilter/error.hpp"
#include "superfilter/scoring.hpp"

namespace superfilter {

struct SelectionConfig {
  double ratio = 0.1;
  double ifd_cap = 1.0;
  // Ties are always broken by original order; no other policy exists.
};

struct SelectionResult {
  std::vector<std::string> selected_ids;      // descending IFD
  std::vector<std::size_t> selected_indices;  // positions in the input score list
  std::size_t n_total = 0;
  std::size_t budget = 0;
  std::size_t n_eligible = 0;
  std::size_t n_excluded_by_cap = 0;
  bool underfilled = false;
};

inline void validate(const SelectionConfig& config) {
  if (!(config.ratio > 0.0 && config.ratio <= 1.0)) {
    throw ConfigError("selection ratio must lie in (0, 1], got " + std::to_string(config.ratio));
  }
  if (!(config.ifd_cap > 0.0)) throw ConfigError("IFD cap must be positive");
}

/// floor(ratio * n). The small epsilon keeps products such as 0.29 * 100 from
/// landing one below the intended integer.
inline std::size_t selection_budget(double ratio, std::size_t n) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("ratio must lie in (0, 1], got " + std::to_string(ratio));
  const double raw = ratio * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::floor(raw + 1e-9 * std::max(1.0, raw))));
}

/// Highest-IFD samples strictly under the cap, ties by original order.
inline SelectionResult select_top_ifd(std::span<const ScoredSample> scores, const SelectionConfig& config) {
  validate(config);
  if (scores.empty()) throw ValidationError("cannot select from an empty score list");
  {
    std::unordered_set<std::string> seen;
    for (const auto& s : scores) {
      if (!seen.insert(s.id).second) throw ValidationError("duplicate id in scores: " + s.id);
    }
  }
  SelectionResult result;
  result.n_total = scores.size();
  result.budget = selection_budget(config.ratio, scores.size());
  if (result.budget == 0) {
    throw ConfigError("ratio " + std::to_string(config.ratio) + " gives a zero budget for n=" +
                      std::to_string(scores.size()));
  }

  std::vector<std::size_t> eligible;
  eligible.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].ifd < config.ifd_cap) eligible.push_back(i);
  }
  result.n_eligible = eligible.size();
  result.n_excluded_by_cap = scores.size() - eligible.size();

  const std::size_t take = std::min(result.budget, eligible.size());
  result.underfilled = eligible.size() < result.budget;
  auto by_ifd_desc = [&](std::size_t a, std::size_t b) {
    if (scores[a].ifd != scores[b].ifd) return scores[a].ifd > scores[b].ifd;
    return a < b;
  };
  std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take), eligible.end(), by_ifd_desc);
  eligible.resize(take);

  result.selected_indices = std::move(eligible);
  result.selected_ids.reserve(take);
  for (const auto i : result.selected_indices) result.selected_ids.push_back(scores[i].id);
  return result;
}

/// The selected samples, in selection order.
inline Dataset materialize_subset(const Dataset& dataset, const SelectionResult& result) {
  const auto index = dataset.index();
  Dataset out;
  out.source_path = dataset.source_path;
  out.samples.reserve(result.selected_ids.size());
  for (const auto& id : result.selected_ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw ConsistencyError("selected id not present in dataset: " + id);
    out.samples.push_back(dataset.samples[it->second]);
  }
  return out;
}

}  // namespace superfilter
