#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "superfilter/error.hpp"

namespace superfilter {

/// Per-token natural-log probabilities of a completion, each conditioned on the
/// prompt and the completion tokens before it.
struct TokenLogProbs {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;
  bool truncated = false;

  [[nodiscard]] std::size_t size() const { return logprobs.size(); }
};

inline void validate(const TokenLogProbs& tlp) {
  if (tlp.logprobs.empty()) throw DataError("completion produced zero tokens");
  if (tlp.tokens.size() != tlp.logprobs.size()) {
    throw DataError("token/logprob length mismatch: " + std::to_string(tlp.tokens.size()) + " tokens, " +
                    std::to_string(tlp.logprobs.size()) + " logprobs");
  }
  for (std::size_t i = 0; i < tlp.logprobs.size(); ++i) {
    const double lp = tlp.logprobs[i];
    if (!std::isfinite(lp)) throw DataError("non-finite logprob at token " + std::to_string(i));
    if (lp > 0.0) throw DataError("positive logprob at token " + std::to_string(i));
  }
}

/// exp of the mean negative log-probability. Accumulates in log space so long
/// responses cannot underflow.
inline double perplexity(const TokenLogProbs& tlp) {
  validate(tlp);
  double sum = 0.0;
  for (const double lp : tlp.logprobs) sum += lp;
  return std::exp(-sum / static_cast<double>(tlp.logprobs.size()));
}

/// Ratio of conditional to unconditional perplexity.
inline double ifd_score(double ppl_cond, double ppl_uncond) {
  if (!std::isfinite(ppl_cond) || !std::isfinite(ppl_uncond) || ppl_cond <= 0.0) {
    throw NumericError("IFD inputs must be positive and finite");
  }
  if (ppl_uncond < 1e-12) throw NumericError("unconditional perplexity below 1e-12");
  return ppl_cond / ppl_uncond;
}

}  // namespace superfilter
