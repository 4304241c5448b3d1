#include "laddernat/infer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace laddernat {

namespace {

int argmax_row(const Tensor& t, int row) {
  int best = 0;
  double best_v = t.at(row, 0);
  for (int j = 1; j < t.cols(); ++j) {
    if (t.at(row, j) > best_v) {
      best_v = t.at(row, j);
      best = j;
    }
  }
  return best;
}

int argmax_vec(const Tensor& t) {
  int best = 0;
  double best_v = t.at(0);
  for (int j = 1; j < t.numel(); ++j) {
    if (t.at(j) > best_v) {
      best_v = t.at(j);
      best = j;
    }
  }
  return best;
}

TokenSeq greedy_rows(const Tensor& logits) {
  TokenSeq out(static_cast<size_t>(logits.rows()));
  for (int i = 0; i < logits.rows(); ++i) out[static_cast<size_t>(i)] = argmax_row(logits, i);
  return out;
}

// Posterior mean over (input sentence, current hypothesis) for either latent
// family, oriented so the hypothesis side is the one being generated.
GaussianSeq refinement_posterior(const TokenSeq& x, const TokenSeq& y_hat, const ModelBundle& b,
                                 Direction dir, const FwdCtx& ctx) {
  if (b.kind == ModelKind::LaNMT) return posterior_lanmt(x, y_hat, b, dir, ctx);
  if (dir == Direction::Forward) return posterior_ladder(x, y_hat, b, KeepSide::Y, ctx);
  return posterior_ladder(y_hat, x, b, KeepSide::X, ctx);
}

}  // namespace

TokenSeq refine(const TokenSeq& x, const TokenSeq& y_hat, const ModelBundle& b, Direction dir,
                long* decoder_passes, long* length_predictions) {
  if (y_hat.empty()) throw std::invalid_argument("refine: empty hypothesis");
  FwdCtx ctx = FwdCtx::eval();
  GaussianSeq q = refinement_posterior(x, y_hat, b, dir, ctx);
  const SideParams& side = b.side(dir);
  Tensor memory = encode_tokens(x, side.emb, b.pos_table, side.enc, b.block, ctx);
  Tensor len_logits = predict_length(q.mean, memory, side, length_predictions);
  int l = clamp_predicted_length(static_cast<int>(x.size()), argmax_vec(len_logits),
                                 b.block.max_positions);
  Tensor logits = decode_from_latent(q.mean, memory, l, side, b, ctx, decoder_passes);
  return greedy_rows(logits);
}

TranslationResult translate_nat(const TokenSeq& x, const ModelBundle& b, Direction dir,
                                int refinements) {
  if (b.kind == ModelKind::AT) throw std::invalid_argument("translate_nat: latent bundle required");
  if (refinements < 0) throw std::invalid_argument("translate_nat: refinements must be >= 0");
  TranslationResult res;
  res.from_untrained = !b.trained;
  auto t0 = std::chrono::steady_clock::now();

  FwdCtx ctx = FwdCtx::eval();
  EncodedSide pri = prior(x, b, dir, ctx);
  Tensor len_logits = predict_length(pri.q.mean, pri.h, b.side(dir), &res.length_predictions);
  int l = clamp_predicted_length(static_cast<int>(x.size()), argmax_vec(len_logits),
                                 b.block.max_positions);
  Tensor logits = decode_from_latent(pri.q.mean, pri.h, l, b.side(dir), b, ctx, &res.decoder_passes);
  res.tokens = greedy_rows(logits);
  for (int r = 0; r < refinements; ++r) {
    res.tokens = refine(x, res.tokens, b, dir, &res.decoder_passes, &res.length_predictions);
    ++res.refinements_used;
  }
  res.latency_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

TranslationResult translate_at(const TokenSeq& x, const ModelBundle& b, Direction dir, int max_len) {
  if (max_len < 1) throw std::invalid_argument("translate_at: max_len must be >= 1");
  TranslationResult res;
  res.from_untrained = !b.trained;
  auto t0 = std::chrono::steady_clock::now();

  FwdCtx ctx = FwdCtx::eval();
  const SideParams& side = b.side(dir);
  Tensor memory = encode_tokens(x, side.emb, b.pos_table, side.enc, b.block, ctx);
  std::vector<int> prefix{kEosId};
  while (static_cast<int>(res.tokens.size()) < max_len) {
    Tensor logits = decode_ar_logits(prefix, memory, side, b, ctx, &res.decoder_passes);
    int next = argmax_row(logits, logits.rows() - 1);
    res.tokens.push_back(next);
    if (next == kEosId) break;
    prefix.push_back(next);
  }
  res.latency_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

TokenSeq strip_eos(const TokenSeq& tokens) {
  TokenSeq out;
  for (int t : tokens) {
    if (t == kEosId) break;
    out.push_back(t);
  }
  return out;
}

double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("bleu: hypothesis/reference count mismatch");
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");

  constexpr int kMaxOrder = 4;
  long correct[kMaxOrder] = {0}, total[kMaxOrder] = {0};
  long hyp_len = 0, ref_len = 0;

  auto ngram_key = [](const TokenSeq& s, size_t i, int n) {
    std::uint64_t key = 0;
    for (int k = 0; k < n; ++k) key = key * 1000003u + static_cast<std::uint64_t>(s[i + k]) + 1;
    return key;
  };

  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const TokenSeq& hyp = hypotheses[s];
    const TokenSeq& ref = references[s];
    hyp_len += static_cast<long>(hyp.size());
    ref_len += static_cast<long>(ref.size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      if (static_cast<int>(hyp.size()) < n) continue;
      std::unordered_map<std::uint64_t, long> ref_counts;
      for (size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[ngram_key(ref, i, n)];
      std::unordered_map<std::uint64_t, long> hyp_counts;
      for (size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[ngram_key(hyp, i, n)];
      for (const auto& [key, count] : hyp_counts) {
        total[n - 1] += count;
        auto it = ref_counts.find(key);
        if (it != ref_counts.end()) correct[n - 1] += std::min(count, it->second);
      }
    }
  }

  double log_precision = 0.0;
  int used = 0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (total[n] == 0) continue;
    if (correct[n] == 0) return 0.0;  // zero count at corpus level: no smoothing
    log_precision += std::log(static_cast<double>(correct[n]) / total[n]);
    ++used;
  }
  if (used == 0) return 0.0;
  double bp = hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / hyp_len) : 1.0;
  return bp * std::exp(log_precision / used);
}

SpeedBenchResult speed_bench(const ModelBundle& nat_bundle, const ModelBundle& at_bundle,
                             const std::vector<TokenSeq>& sources, Direction dir, int refinements,
                             int max_len, double min_seconds, int runs) {
  if (sources.empty()) throw std::invalid_argument("speed_bench: empty corpus");

  SpeedBenchResult res;
  res.sentences = static_cast<int>(sources.size());

  auto time_side = [&](bool nat, int reps) {
    const ModelBundle& b = nat ? nat_bundle : at_bundle;
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r)
      for (const auto& s : sources) {
        if (b.kind == ModelKind::AT)
          translate_at(s, b, dir, max_len);
        else
          translate_nat(s, b, dir, refinements);
      }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  // Grow repetitions until both sides clear the timer-resolution floor.
  int reps = 1;
  while (true) {
    double at_s = time_side(false, reps);
    double nat_s = time_side(true, reps);
    if (nat_s >= min_seconds && at_s >= min_seconds) break;
    reps *= 2;
    if (reps > 1 << 20) throw std::runtime_error("speed_bench: timing floor unreachable");
  }
  res.repetitions = reps;

  std::vector<double> ratios;
  double at_total = 0, nat_total = 0;
  for (int r = 0; r < runs; ++r) {
    double at_s = time_side(false, reps);
    double nat_s = time_side(true, reps);
    at_total += at_s;
    nat_total += nat_s;
    ratios.push_back(at_s / nat_s);
  }
  std::sort(ratios.begin(), ratios.end());
  res.ratio = ratios[ratios.size() / 2];
  res.at_seconds = at_total / runs;
  res.nat_seconds = nat_total / runs;
  return res;
}

}  // namespace laddernat
