#include "laddernat/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "laddernat/infer.hpp"
#include "laddernat/rng.hpp"

namespace laddernat {

void TrainConfig::validate() const {
  if (beta < 0) throw std::invalid_argument("train: beta must be >= 0");
  if (rho < 0 || rho > 1) throw std::invalid_argument("train: rho must be in [0,1]");
  if (lr_peak <= 0) throw std::invalid_argument("train: lr_peak must be positive");
  if (warmup_steps < 1) throw std::invalid_argument("train: warmup_steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (max_steps < 1) throw std::invalid_argument("train: max_steps must be >= 1");
  if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
  if (validate_every < 1) throw std::invalid_argument("train: validate_every must be >= 1");
}

namespace {

int length_offset_index(int out_len, int in_len) {
  return std::clamp(out_len - in_len + kLenOffsetRange, 0, kLenLogits - 1);
}

Tensor token_log_likelihood(const Tensor& logits, const TokenSeq& targets) {
  return sum_all(pick_rows(log_softmax_rows(logits), targets));
}

LossGraph assemble_elbo(const Tensor& token_ll, const Tensor& length_ll, const Tensor& kl_sum,
                        double beta) {
  LossGraph g;
  g.total = add(neg(add(token_ll, length_ll)), scale(kl_sum, beta));
  g.values.token_ll = token_ll.item();
  g.values.length_ll = length_ll.item();
  g.values.kl = kl_sum.item();
  g.values.total = g.total.item();
  return g;
}

// Reconstruction of `out_tokens` through `gen` (decoder, length head, output
// embedding) given latent sample z and encoder memory.
LossGraph latent_reconstruction(const TokenSeq& out_tokens, int in_len, const Tensor& z,
                                const Tensor& memory, const SideParams& gen, ModelBundle& b,
                                const GaussianSeq& q, const GaussianSeq& p, double beta,
                                const FwdCtx& ctx) {
  Tensor len_logits = predict_length(z, memory, gen);
  Tensor len_lp = log_softmax_rows(reshape(len_logits, {1, kLenLogits}));
  Tensor length_ll = pick_rows(len_lp, {length_offset_index(static_cast<int>(out_tokens.size()), in_len)});
  Tensor logits = decode_from_latent(z, memory, static_cast<int>(out_tokens.size()), gen, b, ctx);
  Tensor token_ll = token_log_likelihood(logits, out_tokens);
  Tensor kl_sum = sum_all(kl_gaussian(q, p));
  return assemble_elbo(token_ll, reshape(length_ll, {1}), kl_sum, beta);
}

}  // namespace

LossGraph elbo_lanmt(const TokenSeq& input, const TokenSeq& output, ModelBundle& b, Direction dir,
                     double beta, const FwdCtx& ctx, const Tensor& noise) {
  if (b.kind != ModelKind::LaNMT) throw std::invalid_argument("elbo_lanmt: LaNMT bundle required");
  const SideParams& side = b.side(dir);
  EncodedSide enc = encode_with_head(input, side, b, ctx);
  GaussianSeq q = posterior_lanmt(input, output, b, dir, ctx);
  Tensor z = reparameterize(q, noise);
  LossGraph g = latent_reconstruction(output, static_cast<int>(input.size()), z, enc.h, side, b, q,
                                      enc.q, beta, ctx);
  if (!std::isfinite(g.values.total)) throw std::runtime_error("elbo_lanmt: non-finite loss");
  return g;
}

LossGraph elbo_ladder_sup(const TokenSeq& x, const TokenSeq& y, ReconDir dir, ModelBundle& b,
                          double beta, const FwdCtx& ctx, const Tensor& noise) {
  if (b.kind != ModelKind::LadderNMT)
    throw std::invalid_argument("elbo_ladder_sup: LadderNMT bundle required");
  EncodedSide ex = encode_with_head(x, b.theta, b, ctx);
  EncodedSide ey = encode_with_head(y, b.phi, b, ctx);
  GaussianSeq q = fuse_gaussians(ex.q, ey.q, b.mask,
                                 dir == ReconDir::SourceRecon ? KeepSide::X : KeepSide::Y);
  Tensor z = reparameterize(q, noise);
  LossGraph g;
  if (dir == ReconDir::SourceRecon) {
    // Generate x through phi; the prior is the y-encoder head alone.
    g = latent_reconstruction(x, static_cast<int>(y.size()), z, ey.h, b.phi, b, q, ey.q, beta, ctx);
  } else {
    g = latent_reconstruction(y, static_cast<int>(x.size()), z, ex.h, b.theta, b, q, ex.q, beta, ctx);
  }
  if (!std::isfinite(g.values.total)) throw std::runtime_error("elbo_ladder_sup: non-finite loss");
  return g;
}

LossGraph dual_recon_loss(const TokenSeq& x, const TokenSeq& y, ModelBundle& b, double beta,
                          const FwdCtx& ctx, const Tensor& noise) {
  if (b.kind != ModelKind::LadderNMT)
    throw std::invalid_argument("dual_recon_loss: LadderNMT bundle required");
  EncodedSide ex = encode_with_head(x, b.theta, b, ctx);
  EncodedSide ey = encode_with_head(y, b.phi, b, ctx);
  GaussianSeq q_src = fuse_gaussians(ex.q, ey.q, b.mask, KeepSide::X);
  Tensor z = reparameterize(q_src, noise);  // sampled once, reused by both directions
  LossGraph src = latent_reconstruction(x, static_cast<int>(y.size()), z, ey.h, b.phi, b, q_src,
                                        ey.q, beta, ctx);
  GaussianSeq q_tgt = fuse_gaussians(ex.q, ey.q, b.mask, KeepSide::Y);
  LossGraph tgt = latent_reconstruction(y, static_cast<int>(x.size()), z, ex.h, b.theta, b, q_tgt,
                                        ex.q, beta, ctx);
  LossGraph g;
  g.total = add(src.total, tgt.total);
  g.values.token_ll = src.values.token_ll + tgt.values.token_ll;
  g.values.length_ll = src.values.length_ll + tgt.values.length_ll;
  g.values.kl = src.values.kl + tgt.values.kl;
  g.values.total = src.values.total + tgt.values.total;
  return g;
}

LossGraph at_loss(const TokenSeq& input, const TokenSeq& output, ModelBundle& b, Direction dir,
                  double label_smoothing, const FwdCtx& ctx) {
  if (b.kind != ModelKind::AT) throw std::invalid_argument("at_loss: AT bundle required");
  const SideParams& side = b.side(dir);
  Tensor memory = encode_tokens(input, side.emb, b.pos_table, side.enc, b.block, ctx);
  std::vector<int> prefix{kEosId};
  prefix.insert(prefix.end(), output.begin(), output.end());
  std::vector<int> targets = output;
  targets.push_back(kEosId);
  Tensor lp = log_softmax_rows(decode_ar_logits(prefix, memory, side, b, ctx));
  Tensor picked = sum_all(pick_rows(lp, targets));
  Tensor smooth = label_smoothing == 0.0
                      ? picked
                      : add(scale(picked, 1.0 - label_smoothing),
                            scale(sum_all(lp), label_smoothing / b.vocab));
  LossGraph g;
  g.total = neg(smooth);
  g.values.token_ll = smooth.item();
  g.values.total = g.total.item();
  return g;
}

double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
  double w = cfg.warmup_steps;
  return cfg.lr_peak * std::min(static_cast<double>(step) / w, std::sqrt(w / step));
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0);
    v_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    for (size_t j = 0; j < g.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      p.data()[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

LossGraph build_pair_loss(const ParallelPair& pair, ModelBundle& b, const TrainConfig& cfg,
                          const FwdCtx& ctx, std::mt19937_64& noise_rng) {
  switch (b.kind) {
    case ModelKind::AT: {
      LossGraph f = at_loss(pair.source, pair.target, b, Direction::Forward, cfg.label_smoothing, ctx);
      LossGraph r = at_loss(pair.target, pair.source, b, Direction::Reverse, cfg.label_smoothing, ctx);
      LossGraph g;
      g.total = add(f.total, r.total);
      g.values.token_ll = f.values.token_ll + r.values.token_ll;
      g.values.total = f.values.total + r.values.total;
      return g;
    }
    case ModelKind::LaNMT: {
      // Both directions per pair, independent posteriors and noise draws.
      Shape zshape{b.latent.t_z, b.latent.d_z};
      Tensor n1 = Tensor::normal(zshape, 0.0, 1.0, noise_rng, false);
      Tensor n2 = Tensor::normal(zshape, 0.0, 1.0, noise_rng, false);
      LossGraph f = elbo_lanmt(pair.source, pair.target, b, Direction::Forward, cfg.beta, ctx, n1);
      LossGraph r = elbo_lanmt(pair.target, pair.source, b, Direction::Reverse, cfg.beta, ctx, n2);
      LossGraph g;
      g.total = add(f.total, r.total);
      g.values.token_ll = f.values.token_ll + r.values.token_ll;
      g.values.length_ll = f.values.length_ll + r.values.length_ll;
      g.values.kl = f.values.kl + r.values.kl;
      g.values.total = f.values.total + r.values.total;
      return g;
    }
    case ModelKind::LadderNMT: {
      Tensor noise = Tensor::normal({b.latent.t_z, b.latent.d_z}, 0.0, 1.0, noise_rng, false);
      return dual_recon_loss(pair.source, pair.target, b, cfg.beta, ctx, noise);
    }
  }
  throw std::invalid_argument("build_pair_loss: unknown model kind");
}

double validation_bleu(const ModelBundle& b, const Corpus& valid, Direction dir, int refinements,
                       int subset, int max_len) {
  std::vector<TokenSeq> hyps, refs;
  int n = std::min<int>(subset, static_cast<int>(valid.pairs.size()));
  for (int i = 0; i < n; ++i) {
    const auto& p = valid.pairs[static_cast<size_t>(i)];
    const TokenSeq& input = dir == Direction::Forward ? p.source : p.target;
    const TokenSeq& ref = dir == Direction::Forward ? p.target : p.source;
    TokenSeq hyp = b.kind == ModelKind::AT
                       ? strip_eos(translate_at(input, b, dir, max_len).tokens)
                       : translate_nat(input, b, dir, refinements).tokens;
    if (hyp.empty()) hyp.push_back(kUnkId);
    hyps.push_back(std::move(hyp));
    refs.push_back(ref);
  }
  return bleu(hyps, refs);
}

}  // namespace

LossBreakdown dual_step(const ParallelPair& pair, ModelBundle& b, Adam& opt, const TrainConfig& cfg,
                        long step, std::mt19937_64& rng) {
  b.params.zero_grads();
  FwdCtx ctx = cfg.dropout > 0 ? FwdCtx::train(cfg.dropout, rng) : FwdCtx::eval();
  LossGraph g = build_pair_loss(pair, b, cfg, ctx, rng);
  if (!std::isfinite(g.values.total)) throw std::runtime_error("dual_step: non-finite loss");
  backward(g.total);
  opt.step(lr_schedule(step, cfg));
  return g.values;
}

TrainResult train(ModelBundle& b, const Corpus& train_corpus, const Corpus& valid_corpus,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_corpus.pairs.empty()) throw std::invalid_argument("train: empty corpus");
  if (valid_corpus.pairs.empty()) throw std::invalid_argument("train: empty validation corpus");

  auto rng = make_rng(cfg.seed, "train." + kind_name(b.kind));
  Adam opt(b.params.tensors());
  TrainResult result;

  std::vector<size_t> order(train_corpus.pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();  // triggers a shuffle on first use

  LossBreakdown window_sum;
  long window_count = 0;
  int nonfinite_streak = 0;
  int validations_without_improvement = 0;
  std::vector<double> best_snapshot;

  for (long step = 1; step <= cfg.max_steps; ++step) {
    b.params.zero_grads();
    FwdCtx ctx = cfg.dropout > 0 ? FwdCtx::train(cfg.dropout, rng) : FwdCtx::eval();

    Tensor batch_total;
    LossBreakdown batch_values;
    int in_batch = 0;
    for (int k = 0; k < cfg.batch_size; ++k) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const ParallelPair& pair = train_corpus.pairs[order[cursor++]];
      LossGraph g = build_pair_loss(pair, b, cfg, ctx, rng);
      batch_total = in_batch == 0 ? g.total : add(batch_total, g.total);
      batch_values.token_ll += g.values.token_ll;
      batch_values.length_ll += g.values.length_ll;
      batch_values.kl += g.values.kl;
      batch_values.total += g.values.total;
      ++in_batch;
    }
    Tensor loss = scale(batch_total, 1.0 / in_batch);

    if (!std::isfinite(loss.item())) {
      if (++nonfinite_streak >= 5)
        throw std::runtime_error("train: non-finite loss streak at step " + std::to_string(step));
      continue;
    }
    nonfinite_streak = 0;
    backward(loss);
    opt.step(lr_schedule(step, cfg));
    result.steps_run = step;

    window_sum.token_ll += batch_values.token_ll / in_batch;
    window_sum.length_ll += batch_values.length_ll / in_batch;
    window_sum.kl += batch_values.kl / in_batch;
    window_sum.total += batch_values.total / in_batch;
    ++window_count;

    if (step % cfg.validate_every == 0 || step == cfg.max_steps) {
      ValidationPoint v;
      v.step = step;
      v.lr = lr_schedule(step, cfg);
      v.mean_loss.token_ll = window_sum.token_ll / window_count;
      v.mean_loss.length_ll = window_sum.length_ll / window_count;
      v.mean_loss.kl = window_sum.kl / window_count;
      v.mean_loss.total = window_sum.total / window_count;
      window_sum = {};
      window_count = 0;
      v.bleu_fwd = validation_bleu(b, valid_corpus, Direction::Forward, cfg.valid_refinements,
                                   cfg.valid_subset, b.block.max_positions);
      v.bleu_rev = validation_bleu(b, valid_corpus, Direction::Reverse, cfg.valid_refinements,
                                   cfg.valid_subset, b.block.max_positions);
      result.log.push_back(v);

      double score = 0.5 * (v.bleu_fwd + v.bleu_rev);
      if (score > result.best_score + 1e-9) {
        result.best_score = score;
        result.best_step = step;
        best_snapshot = b.params.snapshot();
        validations_without_improvement = 0;
      } else if (++validations_without_improvement >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
      if (step == cfg.max_steps) break;
    }
  }

  if (!best_snapshot.empty()) b.params.restore(best_snapshot);
  b.trained = true;
  return result;
}

void write_metrics_csv(const TrainResult& result, const std::string& path,
                       const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("metrics: cannot open " + path + " for writing");
  char ts[64];
  std::time_t now = std::time(nullptr);
  std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  os << "# config=" << config_hash << " generated=" << ts << '\n';
  os << "step,lr,token_ll,length_ll,kl,total,valid_bleu_fwd,valid_bleu_rev\n";
  char line[512];
  for (const auto& v : result.log) {
    std::snprintf(line, sizeof(line), "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", v.step,
                  v.lr, v.mean_loss.token_ll, v.mean_loss.length_ll, v.mean_loss.kl,
                  v.mean_loss.total, v.bleu_fwd, v.bleu_rev);
    os << line;
  }
  if (!os) throw std::runtime_error("metrics: write failed for " + path);
}

}  // namespace laddernat
