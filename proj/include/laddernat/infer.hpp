#pragma once

// Test-time decoding and evaluation: NAT translation with iterative
// refinement (latent = prior/posterior mean, never a sample), greedy AT
// decoding, corpus BLEU, and the AT-vs-NAT wall-clock benchmark.

#include <vector>

#include "laddernat/data.hpp"
#include "laddernat/model.hpp"

namespace laddernat {

struct TranslationResult {
  TokenSeq tokens;  // AT output includes the terminating eos when emitted
  int refinements_used = 0;
  double latency_seconds = 0.0;
  long decoder_passes = 0;
  long length_predictions = 0;
  bool from_untrained = false;
};

// One parallel decoder pass from the prior mean, then `refinements` rounds of
// posterior re-estimation from (x, current hypothesis).
TranslationResult translate_nat(const TokenSeq& x, const ModelBundle& b, Direction dir,
                                int refinements);

// Single refinement round; re-predicts length and re-decodes.
TokenSeq refine(const TokenSeq& x, const TokenSeq& y_hat, const ModelBundle& b, Direction dir,
                long* decoder_passes = nullptr, long* length_predictions = nullptr);

TranslationResult translate_at(const TokenSeq& x, const ModelBundle& b, Direction dir, int max_len);

TokenSeq strip_eos(const TokenSeq& tokens);

// Corpus-level BLEU-4 with brevity penalty, uniform weights, no smoothing.
double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references);

struct SpeedBenchResult {
  double at_seconds = 0.0;
  double nat_seconds = 0.0;
  double ratio = 0.0;  // AT time / NAT time, median of runs
  int sentences = 0;
  int repetitions = 1;
};

// Median-of-3 wall-clock ratio at batch size 1; the corpus is repeated until
// each side runs for at least min_seconds.
SpeedBenchResult speed_bench(const ModelBundle& nat_bundle, const ModelBundle& at_bundle,
                             const std::vector<TokenSeq>& sources, Direction dir, int refinements,
                             int max_len, double min_seconds = 0.1, int runs = 3);

}  // namespace laddernat
