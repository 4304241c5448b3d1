#pragma once

// Assembles the three model families from blocks and latent math: the
// autoregressive reference (AT), the separate-posterior baseline (LaNMT),
// and the shared-latent-space model (LadderNMT). A bundle always carries two
// directional parameter sets: theta translates source->target, phi the
// reverse. Embeddings are tied between encoder input and decoder output
// within a direction (joint vocabulary), never across directions.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "laddernat/blocks.hpp"
#include "laddernat/checkpoint.hpp"
#include "laddernat/data.hpp"
#include "laddernat/latent.hpp"

namespace laddernat {

enum class ModelKind { AT, LaNMT, LadderNMT };
enum class Direction { Forward, Reverse };

std::string kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& name);

// Length prediction is offset classification over target_len - source_len.
inline constexpr int kLenOffsetRange = 20;
inline constexpr int kLenLogits = 2 * kLenOffsetRange + 1;

// Desk-scale default: T_z matches the corpus max length so the length
// transform stays near-lossless; shorter T_z averages neighboring tokens
// into one latent position and caps NAT accuracy on long sentences.
struct LatentConfig {
  int t_z = 16;
  int d_z = 16;
  double rho = 1.0;
};

struct PosteriorParams {
  EncoderParams enc;
  DecoderParams dec;
  GaussHeadParams head;
};

struct SideParams {
  Tensor emb;
  EncoderParams enc;
  GaussHeadParams lat;  // prior head over encoder states (latent kinds only)
  DecoderParams dec;
  Tensor zproj_w, zproj_b;  // D_z -> D_h decoder input projection
  Tensor len_pool_w, len_pool_b;
  Tensor len_out_w, len_out_b;
  std::optional<PosteriorParams> pos;  // LaNMT only
};

struct ModelBundle {
  ModelKind kind = ModelKind::LadderNMT;
  BlockConfig block;
  LatentConfig latent;
  int vocab = 0;
  std::uint64_t seed = 0;
  bool trained = false;

  ParamStore params;
  SharingMask mask;
  Tensor pos_table;
  SideParams theta, phi;

  const SideParams& side(Direction d) const { return d == Direction::Forward ? theta : phi; }
  SideParams& side(Direction d) { return d == Direction::Forward ? theta : phi; }
};

ModelBundle make_bundle(ModelKind kind, const BlockConfig& block, const LatentConfig& latent,
                        int vocab, std::uint64_t seed);

// ---- latent-model surfaces -------------------------------------------------

struct EncodedSide {
  Tensor h;       // [T, D_h]
  GaussianSeq q;  // head output, [T_z, D_z]
};

// Encoder + Gaussian head of one direction's parameter set.
EncodedSide encode_with_head(const TokenSeq& tokens, const SideParams& side, const ModelBundle& b,
                             const FwdCtx& ctx);

// Prior p(z | sentence) of the given direction: encoder states plus head.
EncodedSide prior(const TokenSeq& tokens, const ModelBundle& b, Direction dir, const FwdCtx& ctx);

// LaNMT posterior network: TD(input tokens, TE(output tokens)) with the
// direction's dedicated posterior parameters.
GaussianSeq posterior_lanmt(const TokenSeq& input, const TokenSeq& output, const ModelBundle& b,
                            Direction dir, const FwdCtx& ctx);

// Collaborative posterior: fuses the theta-encoder head over x with the
// phi-encoder head over y. `keep` names the side whose statistics fill the
// non-shared dimensions (the side being generated).
GaussianSeq posterior_ladder(const TokenSeq& x, const TokenSeq& y, const ModelBundle& b,
                             KeepSide keep, const FwdCtx& ctx);

// Offset logits [41] from pooled latent + pooled encoder memory.
Tensor predict_length(const Tensor& z, const Tensor& memory, const SideParams& side,
                      long* length_predictions = nullptr);

int clamp_predicted_length(int memory_len, int offset_index, int max_positions);

// Non-autoregressive decoding of a latent sample: [l, vocab] logits in a
// single decoder pass.
Tensor decode_from_latent(const Tensor& z, const Tensor& memory, int l, const SideParams& side,
                          const ModelBundle& b, const FwdCtx& ctx, long* passes = nullptr);

// Causal decoding over an explicit prefix (eos-started); returns [|prefix|, vocab].
Tensor decode_ar_logits(const std::vector<int>& prefix, const Tensor& memory,
                        const SideParams& side, const ModelBundle& b, const FwdCtx& ctx,
                        long* passes = nullptr);

// ---- accounting / persistence ------------------------------------------------

struct ParamCounts {
  long encoder = 0;
  long decoder = 0;
  long length = 0;
  long posterior = 0;
  long total = 0;
};

ParamCounts param_count(const ModelBundle& b);

void save_bundle(const ModelBundle& b, const std::string& dir, long step);
ModelBundle load_bundle(const std::string& dir, long step);
// Highest-step checkpoint in dir.
ModelBundle load_latest_bundle(const std::string& dir);

}  // namespace laddernat
