#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "superfilter/dataset.hpp"
#include "superfilter/error.hpp"
#include "superfilter/logprobs.hpp"

namespace superfilter {

/// A named source of token log-probabilities. Tokenization belongs to the
/// scorer; callers only ever hand over raw text. Implementations must be safe
/// to call concurrently.
class Scorer {
 public:
  virtual ~Scorer() = default;

  [[nodiscard]] virtual const std::string& name() const = 0;
  [[nodiscard]] virtual std::string_view kind() const = 0;

  /// Unconditional scoring is requested with an empty prompt.
  [[nodiscard]] virtual TokenLogProbs logprobs(std::string_view prompt, std::string_view completion) const = 0;

  /// Recorded in score-file headers for reproducibility.
  [[nodiscard]] virtual nlohmann::ordered_json metadata() const {
    nlohmann::ordered_json m;
    m["name"] = name();
    m["kind"] = std::string(kind());
    return m;
  }
};

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

/// Uniform distribution over a V-word vocabulary; ignores the prompt entirely.
class UniformScorer final : public Scorer {
 public:
  explicit UniformScorer(std::uint64_t vocab_size, std::string name = {})
      : vocab_size_(vocab_size), name_(name.empty() ? "uniform:" + std::to_string(vocab_size) : std::move(name)) {
    if (vocab_size_ == 0) throw ConfigError("uniform scorer needs a vocabulary size >= 1");
  }

  [[nodiscard]] const std::string& name() const override { return name_; }
  [[nodiscard]] std::string_view kind() const override { return "uniform"; }
  [[nodiscard]] std::uint64_t vocab_size() const { return vocab_size_; }

  [[nodiscard]] TokenLogProbs logprobs(std::string_view /*prompt*/, std::string_view completion) const override {
    TokenLogProbs out;
    out.tokens = whitespace_tokens(completion);
    if (out.tokens.empty()) throw DataError("completion tokenizes to zero tokens");
    out.logprobs.assign(out.tokens.size(), -std::log(static_cast<double>(vocab_size_)));
    return out;
  }

  [[nodiscard]] nlohmann::ordered_json metadata() const override {
    auto m = Scorer::metadata();
    m["vocab_size"] = vocab_size_;
    m["tokenizer"] = "whitespace";
    return m;
  }

 private:
  std::uint64_t vocab_size_;
  std::string name_;
};

/// Explicit (context, token) -> logprob lookup. Completions are split on
/// whitespace; the context of token j is the prompt followed by tokens 0..j-1,
/// joined by single spaces. Lookup order: exact context, then any-context
/// entries, then the table-wide default.
///
/// File format:
///   {"name": "...", "default_logprob": -2.0,
///    "entries": [{"context": "", "token": "a", "logprob": -0.693}, ...]}
/// A null context matches any context.
class TableScorer final : public Scorer {
 public:
  struct Entry {
    std::optional<std::string> context;
    std::string token;
    double logprob = 0.0;
  };

  TableScorer(std::string name, std::vector<Entry> entries, std::optional<double> default_logprob = std::nullopt)
      : name_(std::move(name)), default_(default_logprob) {
    if (default_ && (!std::isfinite(*default_) || *default_ > 0.0)) {
      throw DataError("table default logprob must be finite and <= 0");
    }
    for (auto& e : entries) {
      if (!std::isfinite(e.logprob) || e.logprob > 0.0) {
        throw DataError("table entry for token '" + e.token + "' has invalid logprob");
      }
      if (e.context) {
        exact_[key(*e.context, e.token)] = e.logprob;
      } else {
        any_context_[e.token] = e.logprob;
      }
    }
  }

  static TableScorer from_json(const nlohmann::json& doc, std::string fallback_name = "table") {
    try {
      std::vector<Entry> entries;
      for (const auto& e : doc.at("entries")) {
        Entry entry;
        if (!e.at("context").is_null()) entry.context = e.at("context").get<std::string>();
        entry.token = e.at("token").get<std::string>();
        entry.logprob = e.at("logprob").get<double>();
        entries.push_back(std::move(entry));
      }
      std::optional<double> def;
      if (doc.contains("default_logprob") && !doc["default_logprob"].is_null()) def = doc["default_logprob"].get<double>();
      return TableScorer(doc.value("name", std::move(fallback_name)), std::move(entries), def);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("table scorer: ") + e.what());
    }
  }

  static TableScorer load(const std::string& path) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("table scorer " + path + ": " + e.what());
    }
    return from_json(doc, "table:" + path);
  }

  [[nodiscard]] const std::string& name() const override { return name_; }
  [[nodiscard]] std::string_view kind() const override { return "table"; }
  void rename(std::string name) { name_ = std::move(name); }

  [[nodiscard]] TokenLogProbs logprobs(std::string_view prompt, std::string_view completion) const override {
    TokenLogProbs out;
    out.tokens = whitespace_tokens(completion);
    if (out.tokens.empty()) throw DataError("completion tokenizes to zero tokens");
    std::string context(prompt);
    for (const auto& tok : out.tokens) {
      out.logprobs.push_back(lookup(context, tok));
      if (!context.empty()) context += ' ';
      context += tok;
    }
    return out;
  }

  [[nodiscard]] nlohmann::ordered_json metadata() const override {
    auto m = Scorer::metadata();
    m["tokenizer"] = "whitespace";
    m["entries"] = exact_.size() + any_context_.size();
    return m;
  }

 private:
  static std::string key(std::string_view context, std::string_view token) {
    std::string k(context);
    k += '\x1f';
    k += token;
    return k;
  }

  [[nodiscard]] double lookup(const std::string& context, const std::string& token) const {
    if (auto it = exact_.find(key(context, token)); it != exact_.end()) return it->second;
    if (auto it = any_context_.find(token); it != any_context_.end()) return it->second;
    if (default_) return *default_;
    throw DataError("table scorer has no entry for token '" + token + "' in context '" + context + "'");
  }

  std::string name_;
  std::optional<double> default_;
  std::unordered_map<std::string, double> exact_;
  std::unordered_map<std::string, double> any_context_;
};

}  // namespace superfilter
