// Acceptance suite: one PASS/FAIL line per criterion. Usage: acceptance_test <path-to-superfilter-cli>

#include <sys/wait.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "superfilter/analysis.hpp"
#include "superfilter/diversity.hpp"
#include "superfilter/logprobs.hpp"
#include "superfilter/scorer.hpp"
#include "superfilter/scoring.hpp"
#include "superfilter/selection.hpp"
#include "test_util.hpp"

using namespace superfilter;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <typename Fn>
void criterion(const std::string& name, Fn&& fn) {
  try {
    std::string detail;
    const bool ok = fn(detail);
    report(name, ok, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Oracles

std::vector<long double> counted_ranks(const std::vector<double>& v) {
  std::vector<long double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    long double smaller = 0, equal = 0;
    for (const double x : v) {
      smaller += x < v[i] ? 1 : 0;
      equal += x == v[i] ? 1 : 0;
    }
    r[i] = 1 + smaller + (equal - 1) / 2;
  }
  return r;
}

double rank_pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = counted_ranks(a);
  const auto rb = counted_ranks(b);
  const auto n = static_cast<long double>(a.size());
  long double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += ra[i];
    sb += rb[i];
    saa += ra[i] * ra[i];
    sbb += rb[i] * rb[i];
    sab += ra[i] * rb[i];
  }
  return static_cast<double>((sab - sa * sb / n) / std::sqrt((saa - sa * sa / n) * (sbb - sb * sb / n)));
}

std::vector<std::string> exhaustive_top(const std::vector<ScoredSample>& scores, std::size_t budget, double cap) {
  std::vector<std::pair<double, std::size_t>> eligible;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].ifd < cap) eligible.emplace_back(-scores[i].ifd, i);
  }
  std::sort(eligible.begin(), eligible.end());
  std::vector<std::string> out;
  for (std::size_t k = 0; k < std::min(budget, eligible.size()); ++k) out.push_back(scores[eligible[k].second].id);
  return out;
}

double brute_force_opt(const FacilityLocation& fl, std::size_t k) {
  double best = 0.0;
  std::vector<std::size_t> subset;
  for (std::uint32_t mask = 0; mask < (1U << fl.size()); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
    subset.clear();
    for (std::size_t i = 0; i < fl.size(); ++i) {
      if (mask & (1U << i)) subset.push_back(i);
    }
    best = std::max(best, fl.objective(subset));
  }
  return best;
}

EmbeddingSet random_embeddings(std::mt19937& rng, std::size_t n, std::size_t dim) {
  EmbeddingSet e;
  e.dim = dim;
  e.embedder = "random";
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (std::size_t i = 0; i < n; ++i) {
    e.ids.push_back("v" + std::to_string(i));
    for (std::size_t d = 0; d < dim; ++d) e.data.push_back(g(rng));
  }
  return e;
}

// ---------------------------------------------------------------------------
// CLI helpers

int run(const std::string& command) {
  const int status = std::system((command + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// Regular files under `dir` (recursively), excluding manifests, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name.ends_with(".manifest.json")) continue;
    out[fs::relative(entry.path(), dir).string()] = detail::read_file(entry.path().string());
  }
  return out;
}

Dataset synthetic_corpus(std::size_t n, std::uint32_t seed) {
  static const std::vector<std::string> verbs{"write", "give", "explain", "list", "describe", "create", "rewrite", "summarize"};
  static const std::vector<std::string> nouns{"story", "poem", "example", "list", "essay", "summary", "sentence", "recipe"};
  static const std::vector<std::string> topics{"cats", "rivers", "trains", "music", "space", "coffee", "winter", "cities",
                                               "robots", "gardens", "oceans", "history"};
  std::mt19937 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  Dataset ds;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    InstructionSample s;
    s.id = detail::positional_id(i, n);
    s.instruction = pick(verbs) + " a " + pick(nouns) + " about " + pick(topics);
    if (rng() % 4 == 0) s.input = "Context: " + pick(topics) + " and " + pick(topics);
    s.response = "Here is a " + pick(nouns) + " on " + pick(topics) + " with " + pick(topics) + ".";
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

/// Score file with distinct pseudo-random IFD values, about 90% below 1.
ScoreFile synthetic_scores(const Dataset& ds, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.10);
  std::vector<ScoredSample> scores;
  scores.reserve(ds.size());
  for (const auto& s : ds.samples) {
    const double ifd = u(rng);
    scores.push_back({s.id, 20.0 * ifd, 20.0, ifd, 12, "synthetic", false});
  }
  nlohmann::ordered_json header{{"type", "header"}, {"format", kScoreFormat}, {"scorer", "synthetic"}, {"timestamp", nullptr}};
  return {header, scores};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <superfilter-cli>\n", argv[0]);
    return 2;
  }
  const fs::path cli = fs::absolute(argv[1]);
  testutil::TempDir work;

  criterion("uniform-lm-oracle", [&](std::string& msg) {
    const double vocab = 50257.0;
    const UniformScorer scorer(50257);
    const auto ds = testutil::random_dataset(1, 1000);
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = score_dataset(ds, vicuna_v1_template(), scorer);
    const double elapsed = seconds_since(t0);
    double worst = 0.0;
    for (const auto& s : run.scores) {
      worst = std::max({worst, std::abs(s.ppl_cond - vocab), std::abs(s.ppl_uncond - vocab), std::abs(s.ifd - 1.0)});
    }
    msg = "1000 samples, max |error| " + fmt(worst) + ", " + fmt(elapsed) + " s";
    return run.scores.size() == 1000 && worst <= 1e-9 && elapsed < 1.0;
  });

  criterion("perplexity-arithmetic", [&](std::string& msg) {
    const double one = perplexity({{"a"}, {0.0}, false});
    const double pair = perplexity({{"a", "b"}, {std::log(0.5), std::log(0.25)}, false});
    bool ok = std::abs(one - 1.0) <= 1e-9 && std::abs(pair - 2.8284271247461903) <= 1e-9;
    std::mt19937 rng(77);
    std::uniform_int_distribution<int> len(1, 20);
    std::uniform_real_distribution<double> prob(0.001, 1.0);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
      TokenLogProbs t;
      const int n = len(rng);
      long double product = 1.0L;
      for (int i = 0; i < n; ++i) {
        const double p = prob(rng);
        t.tokens.push_back("t");
        t.logprobs.push_back(std::log(p));
        product *= p;
      }
      const double brute = static_cast<double>(std::pow(product, -1.0L / n));
      worst = std::max(worst, std::abs(perplexity(t) - brute) / brute);
    }
    ok = ok && worst <= 1e-9;
    msg = "hand cases " + fmt(one) + ", " + fmt(pair) + "; 100 random cases max rel error " + fmt(worst);
    return ok;
  });

  criterion("spearman-oracle", [&](std::string& msg) {
    std::mt19937 rng(2024);
    std::uniform_int_distribution<std::size_t> len(2, 10);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::uniform_int_distribution<int> coarse(0, 3);
    int compared = 0;
    double worst = 0.0;
    while (compared < 200) {
      const bool ties = compared % 2 == 0;
      const auto n = len(rng);
      std::vector<double> a(n), b(n);
      for (auto& x : a) x = ties ? coarse(rng) : u(rng);
      for (auto& x : b) x = ties ? coarse(rng) : u(rng);
      const auto varies = [](const std::vector<double>& v) {
        return std::any_of(v.begin(), v.end(), [&](double x) { return x != v.front(); });
      };
      if (!varies(a) || !varies(b)) continue;
      worst = std::max(worst, std::abs(spearman_rho(a, b) - rank_pearson_oracle(a, b)));
      ++compared;
    }
    bool exact = true;
    double worst_monotone = 0.0;
    for (int t = 0; t < 50; ++t) {
      const auto n = len(rng);
      std::vector<double> a(n), same(n), reversed(n), b(n), transformed(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = u(rng) + static_cast<double>(i) * 20.0;  // distinct
        same[i] = std::exp(a[i] / 50.0);
        reversed[i] = -a[i];
        b[i] = t % 2 == 0 ? u(rng) : coarse(rng);
        transformed[i] = std::log1p(b[i]) * 3.0 + 1.0;
      }
      exact = exact && spearman_rho(a, same) == 1.0 && spearman_rho(a, reversed) == -1.0;
      if (std::all_of(b.begin(), b.end(), [&](double x) { return x == b.front(); })) continue;
      worst_monotone = std::max(worst_monotone, std::abs(spearman_rho(a, b) - spearman_rho(a, transformed)));
    }
    msg = "200 lists max |error| " + fmt(worst) + "; exact +-1: " + (exact ? "yes" : "no") +
             "; monotone max |delta| " + fmt(worst_monotone);
    return worst <= 1e-12 && exact && worst_monotone <= 1e-12;
  });

  criterion("selection-contract", [&](std::string& msg) {
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> size(1, 300);
    std::uniform_real_distribution<double> ratio(0.01, 1.0);
    std::uniform_int_distribution<int> coarse(0, 15);
    std::uniform_real_distribution<double> fine(0.0, 1.5);
    int mismatches = 0;
    int checked = 0;
    int cap_violations = 0;
    int nesting_violations = 0;
    while (checked < 500) {
      const auto n = static_cast<std::size_t>(size(rng));
      std::vector<double> ifd(n);
      const bool ties = checked % 2 == 0;
      for (auto& v : ifd) v = ties ? 0.1 * coarse(rng) : fine(rng);
      const auto scores = testutil::scores_from_ifd(ifd);
      double r1 = ratio(rng), r2 = ratio(rng);
      if (r1 > r2) std::swap(r1, r2);
      if (selection_budget(r1, n) == 0) continue;
      const auto s1 = select_top_ifd(scores, {r1, 1.0});
      const auto s2 = select_top_ifd(scores, {r2, 1.0});
      if (s1.selected_ids != exhaustive_top(scores, selection_budget(r1, n), 1.0)) ++mismatches;
      if (s1.budget != static_cast<std::size_t>(std::floor(r1 * static_cast<double>(n) + 1e-9))) ++mismatches;
      for (const auto i : s1.selected_indices) cap_violations += scores[i].ifd < 1.0 ? 0 : 1;
      const std::set<std::string> bigger(s2.selected_ids.begin(), s2.selected_ids.end());
      for (const auto& id : s1.selected_ids) nesting_violations += bigger.contains(id) ? 0 : 1;
      ++checked;
    }
    const auto budget = selection_budget(0.05, 52000);
    msg = "500 sets: " + std::to_string(mismatches) + " oracle mismatches, " + std::to_string(nesting_violations) +
             " nesting violations, " + std::to_string(cap_violations) + " cap violations; 52000 at 5% -> " +
             std::to_string(budget);
    return mismatches == 0 && nesting_violations == 0 && cap_violations == 0 && budget == 2600;
  });

  criterion("overlap-contract", [&](std::string& msg) {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.5);
    const std::vector<double> budgets{0.05, 0.10, 0.15, 0.5};
    bool self_ok = true;
    bool range_ok = true;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> x(200), y(200);
      for (auto& v : x) v = u(rng);
      for (auto& v : y) v = u(rng);
      const auto a = testutil::scores_from_ifd(x);
      const auto b = testutil::scores_from_ifd(y);
      for (const double f : budgets) {
        self_ok = self_ok && overlap_ratio(a, a, f) == 1.0;
        const double o = overlap_ratio(a, b, f);
        range_ok = range_ok && o >= 0.0 && o <= 1.0;
      }
    }
    // disjoint tops: a ranks the first half highest, b the second half
    std::vector<double> x(100), y(100);
    for (std::size_t i = 0; i < 100; ++i) {
      x[i] = 0.99 - 0.009 * static_cast<double>(i);
      y[i] = 0.99 - 0.009 * static_cast<double>(99 - i);
    }
    bool disjoint_ok = true;
    for (const double f : budgets) {
      disjoint_ok = disjoint_ok && overlap_ratio(testutil::scores_from_ifd(x), testutil::scores_from_ifd(y), f) == 0.0;
    }
    msg = std::string("self=1.0: ") + (self_ok ? "yes" : "no") + "; disjoint=0.0: " + (disjoint_ok ? "yes" : "no") +
             "; in [0,1]: " + (range_ok ? "yes" : "no");
    return self_ok && disjoint_ok && range_ok;
  });

  criterion("winning-score", [&](std::string& msg) {
    const double ws = winning_score(50, 18, 32);
    std::mt19937 rng(8);
    std::uniform_int_distribution<std::uint64_t> c(0, 500);
    int violations = 0;
    for (int i = 0; i < 100; ++i) {
      std::uint64_t w = c(rng), t = c(rng), l = c(rng);
      if (w + t + l == 0) w = 1;
      const double s = winning_score(w, t, l);
      const double identity = static_cast<double>(w) / static_cast<double>(w + t + l) -
                              static_cast<double>(l) / static_cast<double>(w + t + l) + 1.0;
      if (std::abs(s + winning_score(l, t, w) - 2.0) > 1e-12 || std::abs(s - identity) > 1e-12) ++violations;
    }
    msg = "(50,18,32) -> " + format_real(ws) + " (exact: " + (ws == 1.18 ? "yes" : "no") + "); " +
             std::to_string(violations) + " antisymmetry violations in 100 triples";
    return ws == 1.18 && violations == 0;
  });

  criterion("facility-location", [&](std::string& msg) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937 rng(31);
    std::uniform_int_distribution<std::size_t> size(1, 8);
    const double bound = 1.0 - 1.0 / std::exp(1.0);
    int bound_violations = 0;
    int diminishing_violations = 0;
    int lazy_mismatches = 0;
    double worst_ratio = 1.0;
    for (int inst = 0; inst < 100; ++inst) {
      const auto n = size(rng);
      const auto e = random_embeddings(rng, n, 3);
      const FacilityLocation fl(e, e.ids);
      const std::size_t k = 1 + static_cast<std::size_t>(inst) % std::min<std::size_t>(3, n);
      const auto lazy = greedy_lazy(fl, k);
      const auto naive = greedy_naive(fl, k);
      if (lazy.picks != naive.picks || lazy.gains != naive.gains) ++lazy_mismatches;
      const double opt = brute_force_opt(fl, k);
      if (opt > 0) worst_ratio = std::min(worst_ratio, lazy.objective / opt);
      if (lazy.objective < bound * opt - 1e-12) ++bound_violations;
      // gain of every element shrinks along the greedy chain S_0 in S_1 in ... S_k
      std::vector<double> cover(n, 0.0);
      std::vector<double> previous(n);
      for (std::size_t v = 0; v < n; ++v) previous[v] = fl.marginal_gain(v, cover);
      for (const auto pick : lazy.picks) {
        fl.commit(pick, cover);
        for (std::size_t v = 0; v < n; ++v) {
          const double g = fl.marginal_gain(v, cover);
          if (g > previous[v] + 1e-12) ++diminishing_violations;
          previous[v] = g;
        }
      }
    }
    const double elapsed = seconds_since(t0);
    msg = "100 instances: worst F/OPT " + fmt(worst_ratio) + ", " + std::to_string(bound_violations) +
             " bound violations, " + std::to_string(diminishing_violations) + " diminishing-gain violations, " +
             std::to_string(lazy_mismatches) + " lazy/naive mismatches, " + fmt(elapsed) + " s";
    return bound_violations == 0 && diminishing_violations == 0 && lazy_mismatches == 0 && elapsed < 30.0;
  });

  const fs::path big = work.path() / "big";
  fs::create_directories(big);
  criterion("superfiltering-d-pipeline", [&](std::string& msg) {
    const auto ds = synthetic_corpus(52000, 5);
    const auto scores = synthetic_scores(ds, 6);
    save_dataset(ds, (big / "data.jsonl").string());
    save_scores(scores, (big / "scores.jsonl").string());
    const auto t0 = std::chrono::steady_clock::now();
    const int code = run(q(cli) + " diversify --dataset " + q(big / "data.jsonl") + " --scores " +
                         q(big / "scores.jsonl") + " --embedder hashed-bow:8 --output " + q(big / "diverse.jsonl"));
    const double elapsed = seconds_since(t0);
    if (code != 0) {
      msg = "diversify exited with " + std::to_string(code);
      return false;
    }
    const auto manifest = nlohmann::json::parse(detail::read_file((big / "diverse.jsonl.manifest.json").string()));
    const auto stage1 = manifest["result"]["stage1_size"].get<std::size_t>();
    const auto final_size = manifest["result"]["final_size"].get<std::size_t>();
    const auto out = load_dataset((big / "diverse.jsonl").string());
    const auto reloaded = load_scores((big / "scores.jsonl").string());
    const auto pool = select_top_ifd(reloaded.scores, {0.2, 1.0}).selected_ids;
    const std::set<std::string> pool_set(pool.begin(), pool.end());
    std::size_t outside = 0;
    for (const auto& s : out.samples) outside += pool_set.contains(s.id) ? 0 : 1;
    msg = "stage sizes " + std::to_string(stage1) + " -> " + std::to_string(final_size) + ", output " +
             std::to_string(out.size()) + " samples, " + std::to_string(outside) + " outside stage 1, " +
             fmt(elapsed) + " s";
    return stage1 == 10400 && final_size == 1040 && out.size() == 1040 && outside == 0;
  });

  criterion("reproducibility", [&](std::string& msg) {
    const auto ds = synthetic_corpus(400, 9);
    const fs::path in = work.path() / "inputs";
    fs::create_directories(in);
    save_dataset(ds, (in / "data.json").string());
    save_scores(synthetic_scores(ds, 10), (in / "scores.jsonl").string());
    detail::write_file((in / "table.json").string(),
                       R"({"name":"table-toy","default_logprob":-2.5,"entries":[{"context":null,"token":"Here","logprob":-0.7},)"
                       R"({"context":null,"token":"a","logprob":-0.2},{"context":"Here","token":"is","logprob":-0.1}]})");
    std::vector<std::map<std::string, std::string>> snapshots;
    for (int pass = 0; pass < 2; ++pass) {
      const fs::path out = work.path() / ("pass" + std::to_string(pass));
      fs::create_directories(out);
      const std::string data = q(in / "data.json");
      const std::string scores = q(in / "scores.jsonl");
      const std::vector<std::string> commands{
          " score --quiet --dataset " + data + " --backend uniform:32000 --workers 3 --output " + q(out / "uniform.jsonl"),
          " score --quiet --dataset " + data + " --backend table:" + q(in / "table.json") + " --output " +
              q(out / "table.jsonl"),
          " select --dataset " + data + " --scores " + scores + " --ratio 0.1 --output " +
              q(out / "subset.json"),
          " compare --scores-a " + q(out / "uniform.jsonl") + " --scores-b " + q(out / "table.jsonl") + " --output " +
              q(out / "compare.json") + " --plot-csv " + q(out / "quantiles.csv"),
          " diversify --dataset " + data + " --scores " + scores + " --pre-ratio 0.2 --final-ratio 0.05" +
              " --embeddings-cache " + q(out / "emb.bin") + " --output " + q(out / "diverse.jsonl"),
          " report --dataset " + data + " --scores " + scores + " --output-dir " + q(out / "report"),
      };
      for (const auto& c : commands) {
        const int code = run(q(cli) + c);
        if (code != 0) {
          msg = "command failed with exit " + std::to_string(code) + ":" + c;
          return false;
        }
      }
      snapshots.push_back(snapshot(out));
    }
    std::vector<std::string> differing;
    for (const auto& [name, bytes] : snapshots[0]) {
      const auto it = snapshots[1].find(name);
      if (it == snapshots[1].end() || it->second != bytes) differing.push_back(name);
    }
    msg = "6 commands x 2 runs, " + std::to_string(snapshots[0].size()) + " output files compared, " +
             std::to_string(differing.size()) + " differ";
    for (const auto& d : differing) msg += " " + d;
    return differing.empty() && snapshots[0].size() == snapshots[1].size() && snapshots[0].size() >= 10;
  });

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED", failures);
  return failures == 0 ? 0 : 1;
}
