#pragma once

// Objectives and the training loop. Latent models maximize an ELBO
// (minimized here as its negation); LadderNMT trains both reconstruction
// directions per pair with a single shared latent sample.

#include <cstdint>
#include <string>
#include <vector>

#include "laddernat/data.hpp"
#include "laddernat/model.hpp"

namespace laddernat {

struct TrainConfig {
  double beta = 1.0;   // KL coefficient
  double rho = 1.0;    // latent sharing ratio (LadderNMT)
  double lr_peak = 3e-3;
  int warmup_steps = 200;
  int batch_size = 8;
  int max_steps = 3000;
  int patience = 5;          // counted in validations without improvement
  std::uint64_t seed = 1;
  int validate_every = 200;
  double dropout = 0.1;
  double label_smoothing = 0.1;  // AT only; latent models use plain CE
  int valid_refinements = 3;
  int valid_subset = 128;

  void validate() const;
};

struct LossBreakdown {
  double token_ll = 0.0;
  double length_ll = 0.0;
  double kl = 0.0;
  double total = 0.0;  // -(token_ll + length_ll) + beta * kl
};

// A loss graph still attached to the autodiff tape plus its scalar breakdown.
struct LossGraph {
  Tensor total;
  LossBreakdown values;
};

enum class ReconDir { SourceRecon, TargetRecon };

// LaNMT ELBO for one direction; `input` is that direction's source sentence.
// `noise` must be a [T_z, D_z] standard-normal draw.
LossGraph elbo_lanmt(const TokenSeq& input, const TokenSeq& output, ModelBundle& b, Direction dir,
                     double beta, const FwdCtx& ctx, const Tensor& noise);

// Supervised LadderNMT ELBO for one reconstruction direction of the pair
// (x, y), sampling its own latent from the direction's fused posterior.
LossGraph elbo_ladder_sup(const TokenSeq& x, const TokenSeq& y, ReconDir dir, ModelBundle& b,
                          double beta, const FwdCtx& ctx, const Tensor& noise);

// Both reconstruction directions of one pair sharing a single latent sample
// (the source-reconstruction posterior's); totals add.
LossGraph dual_recon_loss(const TokenSeq& x, const TokenSeq& y, ModelBundle& b, double beta,
                          const FwdCtx& ctx, const Tensor& noise);

// Teacher-forced AT cross-entropy with label smoothing; token_ll carries the
// smoothed log-likelihood so total == -token_ll.
LossGraph at_loss(const TokenSeq& input, const TokenSeq& output, ModelBundle& b, Direction dir,
                  double label_smoothing, const FwdCtx& ctx);

double lr_schedule(long step, const TrainConfig& cfg);

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.98,
                double eps = 1e-9);
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// The spec-level single-pair step: builds the kind-appropriate loss for one
// pair, backpropagates, and applies one optimizer update over theta and phi.
LossBreakdown dual_step(const ParallelPair& pair, ModelBundle& b, Adam& opt, const TrainConfig& cfg,
                        long step, std::mt19937_64& rng);

struct ValidationPoint {
  long step = 0;
  double lr = 0.0;
  LossBreakdown mean_loss;  // mean over steps since the previous validation
  double bleu_fwd = 0.0;
  double bleu_rev = 0.0;
};

struct TrainResult {
  std::vector<ValidationPoint> log;
  double best_score = -1.0;  // mean of forward/reverse validation BLEU
  long best_step = 0;
  long steps_run = 0;
  bool early_stopped = false;
};

// Trains in place; on return the bundle holds the best-validation parameters.
TrainResult train(ModelBundle& b, const Corpus& train_corpus, const Corpus& valid_corpus,
                  const TrainConfig& cfg);

void write_metrics_csv(const TrainResult& result, const std::string& path,
                       const std::string& config_hash);

}  // namespace laddernat
