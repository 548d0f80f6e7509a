#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <queue>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "superfilter/dataset.hpp"
#include "superfilter/embedding.hpp"
#include "superfilter/error.hpp"
#include "superfilter/scoring.hpp"
#include "superfilter/selection.hpp"

namespace superfilter {

/// Facility location F(S) = sum_{i in V} max_{j in S} sim(i, j) over a ground
/// set V, with sim the cosine similarity clipped below at zero. Position in the
/// ground set is the tie-break order for equal marginal gains.
class FacilityLocation {
 public:
  FacilityLocation(const EmbeddingSet& embeddings, std::span<const std::string> ground_ids) {
    validate(embeddings);
    const auto index = embeddings.index();
    dim_ = embeddings.dim;
    ids_.assign(ground_ids.begin(), ground_ids.end());
    unit_.reserve(ids_.size() * dim_);
    std::unordered_set<std::string> seen;
    for (const auto& id : ids_) {
      if (!seen.insert(id).second) throw ConfigError("duplicate id in ground set: " + id);
      const auto it = index.find(id);
      if (it == index.end()) throw ConsistencyError("ground id has no embedding: " + id);
      const auto row = embeddings.row(it->second);
      double sq = 0.0;
      for (const float x : row) sq += static_cast<double>(x) * x;
      const double norm = std::sqrt(sq);
      for (const float x : row) unit_.push_back(static_cast<double>(x) / norm);
    }
  }

  [[nodiscard]] std::size_t size() const { return ids_.size(); }
  [[nodiscard]] const std::string& id(std::size_t i) const { return ids_[i]; }

  [[nodiscard]] double similarity(std::size_t a, std::size_t b) const {
    const double* x = unit_.data() + a * dim_;
    const double* y = unit_.data() + b * dim_;
    double dot = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) dot += x[d] * y[d];
    return std::max(0.0, dot);
  }

  /// Gain of adding `candidate` given per-element coverage `cover`
  /// (cover[i] = max similarity of i to the current selection).
  [[nodiscard]] double marginal_gain(std::size_t candidate, std::span<const double> cover) const {
    double gain = 0.0;
    for (std::size_t i = 0; i < ids_.size(); ++i) gain += std::max(0.0, similarity(i, candidate) - cover[i]);
    return gain;
  }

  void commit(std::size_t pick, std::span<double> cover) const {
    for (std::size_t i = 0; i < ids_.size(); ++i) cover[i] = std::max(cover[i], similarity(i, pick));
  }

  /// F evaluated from scratch for an explicit subset of ground positions.
  [[nodiscard]] double objective(std::span<const std::size_t> subset) const {
    double total = 0.0;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      double best = 0.0;
      for (const auto j : subset) best = std::max(best, similarity(i, j));
      total += best;
    }
    return total;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> unit_;
};

struct GreedyResult {
  std::vector<std::size_t> picks;  // ground-set positions, in pick order
  std::vector<std::string> ids;
  std::vector<double> gains;       // marginal gain of each pick
  double objective = 0.0;          // sum of gains
};

namespace detail {

inline void check_k(std::size_t k, std::size_t n) {
  if (k < 1 || k > n) {
    throw ConfigError("facility location needs 1 <= k <= |ground set|, got k=" + std::to_string(k) +
                      " with |ground set|=" + std::to_string(n));
  }
}

/// Evaluates gains for `candidates` in parallel chunks; each gain is computed
/// independently so the output does not depend on the worker count.
inline std::vector<double> parallel_gains(const FacilityLocation& fl, std::span<const std::size_t> candidates,
                                          std::span<const double> cover, std::size_t workers) {
  std::vector<double> gains(candidates.size());
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, candidates.size()));
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) gains[c] = fl.marginal_gain(candidates[c], cover);
  };
  if (workers == 1) {
    run(0, candidates.size());
    return gains;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (candidates.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(candidates.size(), begin + chunk);
    if (begin < end) pool.emplace_back(run, begin, end);
  }
  pool.clear();
  return gains;
}

inline void finish(const FacilityLocation& fl, GreedyResult& r) {
  r.ids.reserve(r.picks.size());
  for (const auto p : r.picks) r.ids.push_back(fl.id(p));
  for (const double g : r.gains) r.objective += g;
}

}  // namespace detail

/// Plain greedy: every step re-evaluates every remaining candidate.
inline GreedyResult greedy_naive(const FacilityLocation& fl, std::size_t k, std::size_t workers = 1) {
  detail::check_k(k, fl.size());
  const std::size_t n = fl.size();
  std::vector<double> cover(n, 0.0);
  std::vector<bool> taken(n, false);
  GreedyResult r;
  for (std::size_t step = 0; step < k; ++step) {
    std::vector<std::size_t> remaining;
    for (std::size_t c = 0; c < n; ++c) {
      if (!taken[c]) remaining.push_back(c);
    }
    const auto gains = detail::parallel_gains(fl, remaining, cover, workers);
    std::size_t best = 0;
    for (std::size_t c = 1; c < remaining.size(); ++c) {
      if (gains[c] > gains[best]) best = c;  // strict: earlier position wins ties
    }
    r.picks.push_back(remaining[best]);
    r.gains.push_back(gains[best]);
    taken[remaining[best]] = true;
    fl.commit(remaining[best], cover);
  }
  detail::finish(fl, r);
  return r;
}

/// Lazy greedy with stale upper bounds in a max-heap ordered by (gain desc,
/// position asc). Marginal gains only shrink as coverage grows, so a fresh
/// entry on top of the heap is the exact argmax; the picks match greedy_naive
/// bit for bit.
inline GreedyResult greedy_lazy(const FacilityLocation& fl, std::size_t k, std::size_t workers = 1) {
  detail::check_k(k, fl.size());
  const std::size_t n = fl.size();
  std::vector<double> cover(n, 0.0);

  struct Entry {
    double gain;
    std::size_t pos;
    std::size_t stamp;  // step at which `gain` was computed
  };
  auto lower_priority = [](const Entry& a, const Entry& b) {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.pos > b.pos;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(lower_priority)> heap(lower_priority);
  {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    const auto gains = detail::parallel_gains(fl, all, cover, workers);
    for (std::size_t i = 0; i < n; ++i) heap.push({gains[i], i, 0});
  }

  GreedyResult r;
  for (std::size_t step = 0; step < k; ++step) {
    while (true) {
      Entry top = heap.top();
      heap.pop();
      if (top.stamp == step) {
        r.picks.push_back(top.pos);
        r.gains.push_back(top.gain);
        fl.commit(top.pos, cover);
        break;
      }
      heap.push({fl.marginal_gain(top.pos, cover), top.pos, step});
    }
  }
  detail::finish(fl, r);
  return r;
}

/// Greedy facility-location selection of k ids from `ground_ids`. The order of
/// `ground_ids` is the tie-break order.
inline GreedyResult facility_location_greedy(const EmbeddingSet& embeddings, std::span<const std::string> ground_ids,
                                             std::size_t k, std::size_t workers = 1) {
  const FacilityLocation fl(embeddings, ground_ids);
  return greedy_lazy(fl, k, workers);
}

// ---------------------------------------------------------------------------
// Two-stage pipeline: IFD pre-filter, then facility-location compression.

struct DiversityConfig {
  double pre_ratio = 0.20;
  double final_ratio = 0.02;
  double ifd_cap = 1.0;
};

inline void validate(const DiversityConfig& c) {
  if (!(c.final_ratio > 0.0 && c.final_ratio < c.pre_ratio && c.pre_ratio <= 1.0)) {
    throw ConfigError("diversity ratios must satisfy 0 < final_ratio < pre_ratio <= 1");
  }
  if (!(c.ifd_cap > 0.0)) throw ConfigError("IFD cap must be positive");
}

struct DiversityResult {
  SelectionResult stage1;
  std::size_t k = 0;
  GreedyResult greedy;

  [[nodiscard]] std::size_t stage1_size() const { return stage1.selected_ids.size(); }

  /// Final selection in pick order, with stage-1 accounting carried over.
  [[nodiscard]] SelectionResult as_selection() const {
    SelectionResult out = stage1;
    out.selected_ids = greedy.ids;
    out.selected_indices.clear();
    out.budget = k;
    out.underfilled = false;
    return out;
  }
};

inline DiversityResult superfilter_d(const Dataset& dataset, std::span<const ScoredSample> scores,
                                     const EmbeddingSet& embeddings, const DiversityConfig& config,
                                     std::size_t workers = 1) {
  validate(config);
  const auto positions = dataset.index();
  if (scores.size() != dataset.size()) {
    throw ConsistencyError("scores cover " + std::to_string(scores.size()) + " of " +
                           std::to_string(dataset.size()) + " dataset samples");
  }
  for (const auto& s : scores) {
    if (!positions.contains(s.id)) throw ConsistencyError("scored id not present in dataset: " + s.id);
  }

  DiversityResult result;
  result.stage1 = select_top_ifd(scores, {config.pre_ratio, config.ifd_cap});
  result.k = selection_budget(config.final_ratio, dataset.size());
  if (result.k == 0) throw ConfigError("final ratio gives a zero budget for n=" + std::to_string(dataset.size()));
  if (result.stage1_size() < result.k) {
    throw ConfigError("stage-1 pool has " + std::to_string(result.stage1_size()) + " samples, fewer than the final budget " +
                      std::to_string(result.k));
  }

  std::vector<std::string> ground = result.stage1.selected_ids;
  std::sort(ground.begin(), ground.end(),
            [&](const std::string& a, const std::string& b) { return positions.at(a) < positions.at(b); });
  result.greedy = facility_location_greedy(embeddings, ground, result.k, workers);
  return result;
}

}  // namespace superfilter
