#pragma once

// HTTP clients for the logprob server: token log-probabilities and sentence
// embeddings. Kept apart from the core headers so that only code talking to a
// server pays for the HTTP dependency.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "superfilter/dataset.hpp"
#include "superfilter/embedding.hpp"
#include "superfilter/error.hpp"
#include "superfilter/logprobs.hpp"
#include "superfilter/scorer.hpp"

namespace superfilter {

struct RemoteOptions {
  std::optional<int> max_length;
  double timeout_seconds = 60.0;
  std::optional<std::string> api_token;
};

/// Client for the logprob server's POST /v1/logprobs endpoint.
class RemoteScorer final : public Scorer {
 public:
  RemoteScorer(std::string base_url, RemoteOptions options, std::string name = {})
      : base_url_(std::move(base_url)),
        options_(std::move(options)),
        name_(name.empty() ? "remote:" + base_url_ : std::move(name)) {
    if (base_url_.empty()) throw ConfigError("remote scorer needs an endpoint URL");
    if (options_.max_length && *options_.max_length < 2) throw ConfigError("max_length must be >= 2");
    if (!(options_.timeout_seconds > 0.0)) throw ConfigError("timeout must be positive");
  }

  [[nodiscard]] const std::string& name() const override { return name_; }
  [[nodiscard]] std::string_view kind() const override { return "remote"; }
  [[nodiscard]] const std::string& base_url() const { return base_url_; }

  /// Request body, field order fixed: prompt, completion, max_length (omitted when unset).
  [[nodiscard]] std::string request_body(std::string_view prompt, std::string_view completion) const {
    nlohmann::ordered_json body;
    body["prompt"] = std::string(prompt);
    body["completion"] = std::string(completion);
    if (options_.max_length) body["max_length"] = *options_.max_length;
    return body.dump();
  }

  [[nodiscard]] TokenLogProbs logprobs(std::string_view prompt, std::string_view completion) const override {
    if (completion.empty()) throw DataError("completion is empty");
    auto cli = client();
    const auto res = cli.Post("/v1/logprobs", headers(), request_body(prompt, completion), "application/json");
    if (!res) throw BackendError("POST " + base_url_ + "/v1/logprobs failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      throw BackendError("POST " + base_url_ + "/v1/logprobs returned HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 200));
    }
    return parse_response(res->body);
  }

  static TokenLogProbs parse_response(std::string_view body) {
    TokenLogProbs out;
    try {
      const auto doc = nlohmann::json::parse(body);
      out.tokens = doc.at("tokens").get<std::vector<std::string>>();
      for (const auto& v : doc.at("token_logprobs")) {
        if (!v.is_number()) throw DataError("non-numeric logprob in server response");
        out.logprobs.push_back(v.get<double>());
      }
      out.truncated = doc.value("truncated", false);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed server response: ") + e.what());
    }
    validate(out);
    return out;
  }

  /// GET /v1/health, returned as parsed JSON.
  [[nodiscard]] nlohmann::json health() const {
    auto cli = client();
    const auto res = cli.Get("/v1/health", headers());
    if (!res || res->status != 200) throw BackendError("GET " + base_url_ + "/v1/health failed");
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(std::string("malformed health response: ") + e.what());
    }
  }

  [[nodiscard]] nlohmann::ordered_json metadata() const override {
    auto m = Scorer::metadata();
    m["endpoint"] = base_url_;
    m["max_length"] = options_.max_length ? nlohmann::ordered_json(*options_.max_length) : nlohmann::ordered_json();
    m["tokenizer"] = "server";
    return m;
  }

 private:
  [[nodiscard]] httplib::Client client() const {
    httplib::Client cli(base_url_);
    const auto secs = static_cast<time_t>(options_.timeout_seconds);
    const auto usecs = static_cast<time_t>((options_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    return cli;
  }

  [[nodiscard]] httplib::Headers headers() const {
    httplib::Headers h;
    if (options_.api_token) h.emplace("Authorization", "Bearer " + *options_.api_token);
    return h;
  }

  std::string base_url_;
  RemoteOptions options_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Remote embedder: POST /v1/embed {"texts": [...]} -> {"vectors", "dim", "model"}

struct RemoteEmbedOptions {
  std::size_t batch_size = 64;
  double timeout_seconds = 120.0;
  std::optional<std::string> api_token;
};

inline EmbeddingSet embed_remote(std::span<const InstructionSample> samples, const std::string& base_url,
                                 const RemoteEmbedOptions& options = {}) {
  if (samples.empty()) throw DataError("cannot embed an empty sample list");
  if (options.batch_size == 0) throw ConfigError("embedding batch size must be positive");
  httplib::Client cli(base_url);
  const auto secs = static_cast<time_t>(options.timeout_seconds);
  cli.set_connection_timeout(secs, 0);
  cli.set_read_timeout(secs, 0);
  httplib::Headers headers;
  if (options.api_token) headers.emplace("Authorization", "Bearer " + *options.api_token);

  EmbeddingSet out;
  for (std::size_t start = 0; start < samples.size(); start += options.batch_size) {
    const std::size_t end = std::min(samples.size(), start + options.batch_size);
    nlohmann::ordered_json body;
    body["texts"] = nlohmann::ordered_json::array();
    for (std::size_t i = start; i < end; ++i) body["texts"].push_back(embedding_text(samples[i]));
    const auto res = cli.Post("/v1/embed", headers, body.dump(), "application/json");
    if (!res) throw BackendError("POST " + base_url + "/v1/embed failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      throw BackendError("POST " + base_url + "/v1/embed returned HTTP " + std::to_string(res->status));
    }
    try {
      const auto doc = nlohmann::json::parse(res->body);
      const auto dim = doc.at("dim").get<std::size_t>();
      if (out.dim == 0) {
        out.dim = dim;
        out.embedder = "remote:" + doc.value("model", base_url);
      } else if (dim != out.dim) {
        throw DataError("embedding dimension changed between batches");
      }
      const auto& vectors = doc.at("vectors");
      if (vectors.size() != end - start) throw DataError("embed response has wrong vector count");
      for (std::size_t i = 0; i < vectors.size(); ++i) {
        const auto v = vectors[i].get<std::vector<float>>();
        if (v.size() != dim) throw DataError("embed response vector has wrong dimension");
        out.ids.push_back(samples[start + i].id);
        out.data.insert(out.data.end(), v.begin(), v.end());
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed embed response: ") + e.what());
    }
  }
  validate(out);
  return out;
}

/// Parses "uniform:V", "table:path" or "remote:url".
inline std::unique_ptr<Scorer> make_scorer(std::string_view spec, const RemoteOptions& remote = {},
                                           std::string name = {}) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) throw ConfigError("backend spec must be kind:parameter, got '" + std::string(spec) + "'");
  const auto kind = spec.substr(0, colon);
  const auto param = spec.substr(colon + 1);
  if (kind == "uniform") {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(param.data(), param.data() + param.size(), v);
    if (ec != std::errc{} || ptr != param.data() + param.size()) {
      throw ConfigError("uniform backend needs an integer vocabulary size, got '" + std::string(param) + "'");
    }
    return std::make_unique<UniformScorer>(v, std::move(name));
  }
  if (kind == "table") {
    auto table = std::make_unique<TableScorer>(TableScorer::load(std::string(param)));
    if (!name.empty()) table->rename(std::move(name));
    return table;
  }
  if (kind == "remote") return std::make_unique<RemoteScorer>(std::string(param), remote, std::move(name));
  throw ConfigError("unknown backend kind '" + std::string(kind) + "'");
}

}  // namespace superfilter
