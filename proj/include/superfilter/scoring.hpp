#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "superfilter/dataset.hpp"
#include "superfilter/error.hpp"
#include "superfilter/logprobs.hpp"
#include "superfilter/prompt_template.hpp"
#include "superfilter/scorer.hpp"

namespace superfilter {

struct ScoredSample {
  std::string id;
  double ppl_cond = 1.0;
  double ppl_uncond = 1.0;
  double ifd = 1.0;
  std::size_t n_tokens = 0;
  std::string scorer;
  bool truncated = false;
};

struct SampleFailure {
  std::string id;
  std::string message;
};

struct ScoringOptions {
  std::size_t workers = 1;
  /// The run fails when more than this fraction of samples could not be scored.
  double failure_threshold = 0.01;
  std::function<void(std::size_t done, std::size_t total)> on_progress;
};

struct ScoringRun {
  std::vector<ScoredSample> scores;  // dataset order, failed samples omitted
  std::vector<SampleFailure> failures;
  std::size_t n_truncated = 0;
  double wall_seconds = 0.0;

  [[nodiscard]] double samples_per_second(std::size_t total) const {
    return wall_seconds > 0.0 ? static_cast<double>(total) / wall_seconds : 0.0;
  }
};

inline ScoredSample score_sample(const InstructionSample& sample, const PromptTemplate& tmpl, const Scorer& scorer) {
  const auto cond = scorer.logprobs(render_prompt(sample, tmpl), sample.response);
  const auto uncond = scorer.logprobs("", sample.response);
  ScoredSample out;
  out.id = sample.id;
  out.ppl_cond = perplexity(cond);
  out.ppl_uncond = perplexity(uncond);
  out.ifd = ifd_score(out.ppl_cond, out.ppl_uncond);
  out.n_tokens = cond.size();
  out.scorer = scorer.name();
  out.truncated = cond.truncated || uncond.truncated;
  return out;
}

/// Scores every sample with up to `options.workers` requests in flight. Output
/// order is dataset order regardless of completion order.
inline ScoringRun score_dataset(const Dataset& dataset, const PromptTemplate& tmpl, const Scorer& scorer,
                                const ScoringOptions& options = {}) {
  if (dataset.empty()) throw ValidationError("cannot score an empty dataset");
  validate(tmpl);
  if (!(options.failure_threshold >= 0.0 && options.failure_threshold <= 1.0)) {
    throw ConfigError("failure threshold must lie in [0, 1]");
  }
  const std::size_t n = dataset.size();
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, n);

  std::vector<std::optional<ScoredSample>> slots(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mu;

  const auto t0 = std::chrono::steady_clock::now();
  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        slots[i] = score_sample(dataset.samples[i], tmpl, scorer);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      const std::size_t finished = done.fetch_add(1) + 1;
      if (options.on_progress) {
        std::lock_guard lock(progress_mu);
        options.on_progress(finished, n);
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  ScoringRun run;
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.scores.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      run.n_truncated += slots[i]->truncated ? 1 : 0;
      run.scores.push_back(std::move(*slots[i]));
    } else {
      run.failures.push_back({dataset.samples[i].id, errors[i]});
    }
  }
  const double failed_fraction = static_cast<double>(run.failures.size()) / static_cast<double>(n);
  if (failed_fraction > options.failure_threshold) {
    std::ostringstream msg;
    msg << run.failures.size() << " of " << n << " samples failed (threshold " << options.failure_threshold
        << "); first failure: " << run.failures.front().id << ": " << run.failures.front().message;
    throw BackendError(msg.str());
  }
  return run;
}

// ---------------------------------------------------------------------------
// Score files: JSONL, a header object followed by one ScoredSample per line.

struct ScoreFile {
  nlohmann::ordered_json header;
  std::vector<ScoredSample> scores;

  [[nodiscard]] std::string scorer_name() const {
    if (header.contains("scorer") && header["scorer"].is_string()) return header["scorer"].get<std::string>();
    return scores.empty() ? std::string("unknown") : scores.front().scorer;
  }
};

inline constexpr const char* kScoreFormat = "superfilter-scores/1";
inline constexpr const char* kTruncationPolicy = "left-truncate prompt, response kept intact";
inline constexpr const char* kUnconditionalPolicy = "empty prompt, sequence-start handling delegated to backend";

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

/// `timestamp` is written verbatim into the header; pass nullopt for a null
/// field so reruns stay byte-identical.
inline nlohmann::ordered_json make_score_header(const Scorer& scorer, const PromptTemplate& tmpl,
                                                const ScoringRun& run, std::optional<std::string> timestamp) {
  nlohmann::ordered_json h;
  h["type"] = "header";
  h["format"] = kScoreFormat;
  h["scorer"] = scorer.name();
  h["backend"] = scorer.metadata();
  h["template"] = tmpl.name;
  h["timestamp"] = timestamp ? nlohmann::ordered_json(*timestamp) : nlohmann::ordered_json();
  h["truncation_policy"] = kTruncationPolicy;
  h["unconditional_prompt"] = kUnconditionalPolicy;
  h["n_scored"] = run.scores.size();
  h["n_truncated"] = run.n_truncated;
  auto failed = nlohmann::ordered_json::array();
  for (const auto& f : run.failures) failed.push_back({{"id", f.id}, {"error", f.message}});
  h["failed"] = std::move(failed);
  return h;
}

inline std::string score_row(const ScoredSample& s) {
  std::string row = "{\"id\":" + nlohmann::json(s.id).dump();
  row += ",\"ppl_cond\":" + format_real(s.ppl_cond);
  row += ",\"ppl_uncond\":" + format_real(s.ppl_uncond);
  row += ",\"ifd\":" + format_real(s.ifd);
  row += ",\"n_tokens\":" + std::to_string(s.n_tokens);
  row += ",\"scorer\":" + nlohmann::json(s.scorer).dump();
  row += s.truncated ? ",\"truncated\":true}" : ",\"truncated\":false}";
  return row;
}

inline std::string to_score_jsonl(const ScoreFile& file) {
  std::string out = file.header.dump();
  out += '\n';
  for (const auto& s : file.scores) {
    out += score_row(s);
    out += '\n';
  }
  return out;
}

inline ScoreFile parse_score_jsonl(std::string_view text) {
  ScoreFile file;
  std::istringstream lines{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  std::unordered_set<std::string> seen;
  while (std::getline(lines, line)) {
    ++lineno;
    if (detail::is_blank(line)) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("score file line " + std::to_string(lineno) + ": " + e.what());
    }
    if (row.value("type", "") == "header") {
      file.header = nlohmann::ordered_json::parse(line);
      continue;
    }
    ScoredSample s;
    try {
      s.id = row.at("id").get<std::string>();
      s.ppl_cond = row.at("ppl_cond").get<double>();
      s.ppl_uncond = row.at("ppl_uncond").get<double>();
      s.ifd = row.at("ifd").get<double>();
      s.n_tokens = row.at("n_tokens").get<std::size_t>();
      s.scorer = row.at("scorer").get<std::string>();
      s.truncated = row.value("truncated", false);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("score file line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!(std::isfinite(s.ifd) && s.ifd > 0.0 && std::isfinite(s.ppl_cond) && std::isfinite(s.ppl_uncond))) {
      throw ValidationError("score file line " + std::to_string(lineno) + ": non-finite or non-positive score");
    }
    if (!seen.insert(s.id).second) throw ValidationError("score file: duplicate id " + s.id);
    file.scores.push_back(std::move(s));
  }
  return file;
}

inline ScoreFile load_scores(const std::string& path) { return parse_score_jsonl(detail::read_file(path)); }

inline void save_scores(const ScoreFile& file, const std::string& path) {
  detail::write_file(path, to_score_jsonl(file));
}

}  // namespace superfilter
