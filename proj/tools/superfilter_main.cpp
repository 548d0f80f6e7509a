// superfilter: score, select, compare, diversify and report on instruction-tuning data.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "superfilter/superfilter.hpp"

#ifndef SUPERFILTER_VERSION
#define SUPERFILTER_VERSION "dev"
#endif
#ifndef SUPERFILTER_LEXICON_DIR
#define SUPERFILTER_LEXICON_DIR "data/lexicons"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace superfilter;

namespace {

constexpr const char* kTokenEnv = "SUPERFILTER_API_TOKEN";

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string file_digest(const std::string& path) { return "sha256:" + sha256_hex(detail::read_file(path)); }

std::string utc_iso8601(std::time_t t) {
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

/// Written next to every output as <output>.manifest.json. Holds the only
/// wall-clock dependent fields of a run.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    config_ = ordered_json::object();
  }

  ordered_json& config() { return config_; }
  void input(const std::string& path) { inputs_[path] = file_digest(path); }
  void output(const std::string& path) { outputs_[path] = file_digest(path); }
  ordered_json& extra() { return extra_; }

  void write(const std::string& primary_output) const {
    ordered_json m;
    m["command"] = command_;
    m["tool_version"] = SUPERFILTER_VERSION;
    m["config"] = config_;
    m["input_digests"] = inputs_;
    m["output_digests"] = outputs_;
    if (!extra_.is_null()) m["result"] = extra_;
    m["started_at"] = utc_iso8601(std::time(nullptr));
    m["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    detail::write_file(primary_output + ".manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  ordered_json config_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  ordered_json extra_;
};

std::optional<DatasetFormat> parse_format(const std::string& s) {
  if (s == "auto") return std::nullopt;
  if (s == "alpaca-json") return DatasetFormat::kAlpacaJson;
  if (s == "jsonl") return DatasetFormat::kJsonl;
  throw ConfigError("unknown dataset format '" + s + "'");
}

/// Header timestamp: --timestamp, else SOURCE_DATE_EPOCH, else null. Leaving
/// wall-clock time out of the score file keeps reruns byte-identical.
std::optional<std::string> header_timestamp(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (auto epoch = env("SOURCE_DATE_EPOCH")) {
    try {
      return utc_iso8601(static_cast<std::time_t>(std::stoll(*epoch)));
    } catch (const std::exception&) {
      throw ConfigError("SOURCE_DATE_EPOCH must be an integer");
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

struct ScoreArgs {
  std::string dataset;
  std::string format = "auto";
  std::string backend;
  std::string template_name = "vicuna-v1";
  std::string output;
  std::size_t workers = 1;
  double failure_threshold = 0.01;
  int max_length = 0;
  double timeout = 60.0;
  std::string scorer_name;
  std::string timestamp;
  bool quiet = false;
};

int cmd_score(const ScoreArgs& a) {
  Manifest manifest("score");
  const auto dataset = load_dataset(a.dataset, parse_format(a.format));
  manifest.input(a.dataset);
  const auto tmpl = resolve_template(a.template_name);
  RemoteOptions remote;
  if (a.max_length > 0) remote.max_length = a.max_length;
  remote.timeout_seconds = a.timeout;
  remote.api_token = env(kTokenEnv);
  const auto scorer = make_scorer(a.backend, remote, a.scorer_name);

  ScoringOptions options;
  options.workers = a.workers;
  options.failure_threshold = a.failure_threshold;
  std::size_t last_decile = 0;
  if (!a.quiet) {
    options.on_progress = [&last_decile](std::size_t done, std::size_t total) {
      const std::size_t decile = done * 10 / total;
      if (decile > last_decile || done == total) {
        last_decile = decile;
        std::cerr << "scored " << done << "/" << total << "\n";
      }
    };
  }
  const auto run = score_dataset(dataset, tmpl, *scorer, options);

  ScoreFile file{make_score_header(*scorer, tmpl, run, header_timestamp(a.timestamp)), run.scores};
  save_scores(file, a.output);
  manifest.output(a.output);

  manifest.config() = {{"dataset", a.dataset},          {"format", a.format},
                       {"backend", a.backend},          {"template", tmpl.name},
                       {"workers", a.workers},          {"failure_threshold", a.failure_threshold},
                       {"max_length", a.max_length},    {"timeout", a.timeout},
                       {"scorer_name", scorer->name()}};
  manifest.extra() = {{"n_samples", dataset.size()},
                      {"n_scored", run.scores.size()},
                      {"n_failed", run.failures.size()},
                      {"n_truncated", run.n_truncated},
                      {"scoring_seconds", run.wall_seconds},
                      {"samples_per_second", run.samples_per_second(dataset.size())}};
  manifest.write(a.output);

  std::printf("scored %zu samples (%zu failed) with %s in %.3f s (%.1f samples/s)\n", run.scores.size(),
              run.failures.size(), scorer->name().c_str(), run.wall_seconds,
              run.samples_per_second(dataset.size()));
  return 0;
}

// ---------------------------------------------------------------------------

struct SelectArgs {
  std::string dataset;
  std::string format = "auto";
  std::string scores;
  double ratio = 0.0;
  double ifd_cap = 1.0;
  std::string output;
};

int cmd_select(const SelectArgs& a) {
  Manifest manifest("select");
  const auto dataset = load_dataset(a.dataset, parse_format(a.format));
  const auto scores = load_scores(a.scores);
  manifest.input(a.dataset);
  manifest.input(a.scores);
  const auto result = select_top_ifd(scores.scores, {a.ratio, a.ifd_cap});
  const auto subset = materialize_subset(dataset, result);
  save_dataset(subset, a.output);
  manifest.output(a.output);

  manifest.config() = {{"dataset", a.dataset}, {"scores", a.scores}, {"ratio", a.ratio},
                       {"ifd_cap", format_real(a.ifd_cap)}, {"tie_break", "original-order"}};
  manifest.extra() = {{"n", result.n_total},
                      {"budget", result.budget},
                      {"n_selected", result.selected_ids.size()},
                      {"n_eligible", result.n_eligible},
                      {"n_excluded_by_cap", result.n_excluded_by_cap},
                      {"underfilled", result.underfilled}};
  manifest.write(a.output);
  std::printf("selected %zu of %zu samples (budget %zu, %zu excluded by cap%s)\n", result.selected_ids.size(),
              result.n_total, result.budget, result.n_excluded_by_cap, result.underfilled ? ", underfilled" : "");
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::string scores_a;
  std::string scores_b;
  std::vector<double> budgets{0.05, 0.10, 0.15};
  double ifd_cap = 1.0;
  std::string output;
  std::string plot_csv;
};

int cmd_compare(const CompareArgs& a) {
  Manifest manifest("compare");
  const auto fa = load_scores(a.scores_a);
  const auto fb = load_scores(a.scores_b);
  manifest.input(a.scores_a);
  manifest.input(a.scores_b);
  const auto report = compare_scores(fa.scores, fb.scores, a.budgets, fa.scorer_name(), fb.scorer_name(), a.ifd_cap);
  detail::write_file(a.output, to_json(report).dump(2) + "\n");
  manifest.output(a.output);
  if (!a.plot_csv.empty()) {
    std::vector<DistributionSummary> summaries;
    for (const auto* f : {&fa, &fb}) {
      for (const auto metric : {Metric::kPplCond, Metric::kIfd}) {
        summaries.push_back(summarize_distribution(f->scores, metric, f->scorer_name()));
      }
    }
    if (fa.scorer_name() == fb.scorer_name()) summaries.resize(2);
    detail::write_file(a.plot_csv, quantile_csv(summaries));
    manifest.output(a.plot_csv);
  }
  manifest.config() = {{"scores_a", a.scores_a}, {"scores_b", a.scores_b}, {"budgets", a.budgets},
                       {"ifd_cap", format_real(a.ifd_cap)}};
  manifest.write(a.output);

  auto show = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string("undefined"); };
  std::printf("n_common=%zu spearman_ppl=%s spearman_ifd=%s\n", report.n_common, show(report.spearman_ppl).c_str(),
              show(report.spearman_ifd).c_str());
  for (const auto& [f, v] : report.overlap) std::printf("overlap@%s=%s\n", format_real(f).c_str(), show(v).c_str());
  for (const auto& note : report.notes) std::fprintf(stderr, "degenerate: %s\n", note.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct DiversifyArgs {
  std::string dataset;
  std::string format = "auto";
  std::string scores;
  double pre_ratio = 0.20;
  double final_ratio = 0.02;
  double ifd_cap = 1.0;
  std::string embedder = "hashed-bow";
  std::string embeddings_cache;
  std::size_t workers = 1;
  std::string output;
};

EmbeddingSet build_embeddings(const DiversifyArgs& a, const Dataset& dataset) {
  const std::string& spec = a.embedder;
  if (spec == "hashed-bow" || spec.starts_with("hashed-bow:")) {
    std::size_t dim = kDefaultHashedDim;
    if (spec.size() > 11) {
      try {
        dim = std::stoul(spec.substr(11));
      } catch (const std::exception&) {
        throw ConfigError("bad hashed-bow dimension in '" + spec + "'");
      }
    }
    return embed_hashed_bow(dataset.samples, dim);
  }
  if (spec.starts_with("remote:")) {
    RemoteEmbedOptions options;
    options.api_token = env(kTokenEnv);
    return embed_remote(dataset.samples, spec.substr(7), options);
  }
  throw ConfigError("embedder must be hashed-bow[:dim] or remote:url, got '" + spec + "'");
}

int cmd_diversify(const DiversifyArgs& a) {
  Manifest manifest("diversify");
  const auto dataset = load_dataset(a.dataset, parse_format(a.format));
  const auto scores = load_scores(a.scores);
  manifest.input(a.dataset);
  manifest.input(a.scores);

  EmbeddingSet embeddings;
  if (!a.embeddings_cache.empty() && fs::exists(a.embeddings_cache)) {
    embeddings = load_embeddings(a.embeddings_cache);
    manifest.input(a.embeddings_cache);
  } else {
    embeddings = build_embeddings(a, dataset);
    if (!a.embeddings_cache.empty()) {
      save_embeddings(embeddings, a.embeddings_cache);
      manifest.output(a.embeddings_cache);
    }
  }
  const DiversityConfig config{a.pre_ratio, a.final_ratio, a.ifd_cap};
  const auto result = superfilter_d(dataset, scores.scores, embeddings, config, a.workers);
  const auto subset = materialize_subset(dataset, result.as_selection());
  save_dataset(subset, a.output);
  manifest.output(a.output);

  manifest.config() = {{"dataset", a.dataset},
                       {"scores", a.scores},
                       {"pre_ratio", a.pre_ratio},
                       {"final_ratio", a.final_ratio},
                       {"ifd_cap", format_real(a.ifd_cap)},
                       {"embedder", embeddings.embedder},
                       {"similarity", "cosine-clipped"},
                       {"ground_set", "stage-1 pool"},
                       {"tie_break", "original-order"}};
  manifest.extra() = {{"n", dataset.size()},
                      {"stage1_size", result.stage1_size()},
                      {"final_size", result.greedy.ids.size()},
                      {"objective", result.greedy.objective}};
  manifest.write(a.output);
  std::printf("stage 1: %zu samples; facility location: %zu samples (objective %s)\n", result.stage1_size(),
              result.greedy.ids.size(), format_real(result.greedy.objective).c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string dataset;
  std::string format = "auto";
  std::string scores;
  std::string output_dir;
  double fraction = 0.05;
  std::size_t top_k = 10;
  double ifd_cap = 1.0;
  std::string verbs = std::string(SUPERFILTER_LEXICON_DIR) + "/verbs.txt";
  std::string nouns = std::string(SUPERFILTER_LEXICON_DIR) + "/nouns.txt";
};

int cmd_report(const ReportArgs& a) {
  Manifest manifest("report");
  const auto dataset = load_dataset(a.dataset, parse_format(a.format));
  const auto scores = load_scores(a.scores);
  const auto lex = load_lexicons(a.verbs, a.nouns);
  for (const auto* p : {&a.dataset, &a.scores, &a.verbs, &a.nouns}) manifest.input(*p);

  QualityOptions options;
  options.slice_fraction = a.fraction;
  options.top_k_rows = a.top_k;
  options.ifd_cap = a.ifd_cap;
  const auto report = quality_report(scores.scores, dataset, lex, options);

  fs::create_directories(a.output_dir);
  const fs::path dir(a.output_dir);
  const std::vector<std::pair<std::string, std::string>> files{
      {"report.json", to_json(report).dump(2) + "\n"},
      {"report.txt", render_text(report)},
      {"quantiles.csv", quantile_csv(std::vector<DistributionSummary>{report.ppl, report.ifd})},
      {"verb_noun_top.csv", table_csv(report.verb_noun.top)},
      {"verb_noun_bottom.csv", table_csv(report.verb_noun.bottom)},
  };
  for (const auto& [name, contents] : files) {
    const auto path = (dir / name).string();
    detail::write_file(path, contents);
    manifest.output(path);
  }
  manifest.config() = {{"dataset", a.dataset}, {"scores", a.scores},   {"fraction", a.fraction},
                       {"top_k", a.top_k},     {"ifd_cap", format_real(a.ifd_cap)}, {"verbs", a.verbs},
                       {"nouns", a.nouns}};
  manifest.write((dir / "report.json").string());
  std::fputs(render_text(report).c_str(), stdout);
  for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

void add_format(CLI::App* sub, std::string& format) {
  sub->add_option("--format", format, "Dataset format")
      ->check(CLI::IsMember({"auto", "alpaca-json", "jsonl"}))
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IFD-based instruction data filtering with weak scorer models"};
  app.set_version_flag("--version", SUPERFILTER_VERSION);
  app.set_config("--config", "", "TOML/INI file with option values; flags override it");
  app.require_subcommand(1);

  ScoreArgs score;
  auto* s = app.add_subcommand("score", "Compute perplexities and IFD for every sample");
  s->add_option("--dataset", score.dataset, "Alpaca JSON or JSONL dataset")->required()->check(CLI::ExistingFile);
  add_format(s, score.format);
  s->add_option("--backend", score.backend, "uniform:V | table:path | remote:url")->required();
  s->add_option("--template", score.template_name, "Built-in template name or template JSON file")->capture_default_str();
  s->add_option("--output", score.output, "Score file (JSONL)")->required();
  s->add_option("--workers", score.workers, "Concurrent scorer requests")->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--failure-threshold", score.failure_threshold, "Max tolerated failed fraction")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  s->add_option("--max-length", score.max_length, "Remote max_length (0 = server default)");
  s->add_option("--timeout", score.timeout, "Remote request timeout in seconds")->capture_default_str();
  s->add_option("--scorer-name", score.scorer_name, "Name recorded in the score file");
  s->add_option("--timestamp", score.timestamp, "Header timestamp (default: SOURCE_DATE_EPOCH or null)");
  s->add_flag("--quiet", score.quiet, "No progress output");

  SelectArgs select;
  auto* sel = app.add_subcommand("select", "Select the top-IFD subset under the cap");
  sel->add_option("--dataset", select.dataset)->required()->check(CLI::ExistingFile);
  add_format(sel, select.format);
  sel->add_option("--scores", select.scores)->required()->check(CLI::ExistingFile);
  sel->add_option("--ratio", select.ratio, "Selected fraction of n, in (0, 1]")->required();
  sel->add_option("--ifd-cap", select.ifd_cap, "Samples with IFD >= cap are excluded (inf disables)")->capture_default_str();
  sel->add_option("--output", select.output, "Subset path (.jsonl for canonical JSONL, else Alpaca JSON)")->required();

  CompareArgs compare;
  auto* cmp = app.add_subcommand("compare", "Weak-to-strong consistency between two score files");
  cmp->add_option("--scores-a", compare.scores_a)->required()->check(CLI::ExistingFile);
  cmp->add_option("--scores-b", compare.scores_b)->required()->check(CLI::ExistingFile);
  cmp->add_option("--budgets", compare.budgets, "Selection fractions for overlap ratios")
      ->delimiter(',')
      ->capture_default_str();
  cmp->add_option("--ifd-cap", compare.ifd_cap)->capture_default_str();
  cmp->add_option("--output", compare.output, "ConsistencyReport JSON")->required();
  cmp->add_option("--plot-csv", compare.plot_csv, "Quantile CSV for both scorers");

  DiversifyArgs diversify;
  auto* div = app.add_subcommand("diversify", "IFD pre-filter followed by facility-location selection");
  div->add_option("--dataset", diversify.dataset)->required()->check(CLI::ExistingFile);
  add_format(div, diversify.format);
  div->add_option("--scores", diversify.scores)->required()->check(CLI::ExistingFile);
  div->add_option("--pre-ratio", diversify.pre_ratio)->capture_default_str();
  div->add_option("--final-ratio", diversify.final_ratio)->capture_default_str();
  div->add_option("--ifd-cap", diversify.ifd_cap)->capture_default_str();
  div->add_option("--embedder", diversify.embedder, "hashed-bow[:dim] | remote:url")->capture_default_str();
  div->add_option("--embeddings-cache", diversify.embeddings_cache, "Binary embedding cache (read if present, else written)");
  div->add_option("--workers", diversify.workers)->check(CLI::PositiveNumber)->capture_default_str();
  div->add_option("--output", diversify.output)->required();

  ReportArgs report;
  auto* rep = app.add_subcommand("report", "Distribution summaries and verb-noun tables");
  rep->add_option("--dataset", report.dataset)->required()->check(CLI::ExistingFile);
  add_format(rep, report.format);
  rep->add_option("--scores", report.scores)->required()->check(CLI::ExistingFile);
  rep->add_option("--output-dir", report.output_dir)->required();
  rep->add_option("--fraction", report.fraction, "Top/bottom slice fraction")->capture_default_str();
  rep->add_option("--top-k", report.top_k, "Rows per verb-noun table")->capture_default_str();
  rep->add_option("--ifd-cap", report.ifd_cap)->capture_default_str();
  rep->add_option("--verbs", report.verbs)->check(CLI::ExistingFile)->capture_default_str();
  rep->add_option("--nouns", report.nouns)->check(CLI::ExistingFile)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::kConfig);
  }

  try {
    if (s->parsed()) return cmd_score(score);
    if (sel->parsed()) return cmd_select(select);
    if (cmp->parsed()) return cmd_compare(compare);
    if (div->parsed()) return cmd_diversify(diversify);
    if (rep->parsed()) return cmd_report(report);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
