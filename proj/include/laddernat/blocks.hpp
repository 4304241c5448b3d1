#pragma once

// Transformer building blocks shared by the AT reference and both latent
// model families: multi-head attention, post-norm encoder layers, and the
// two decoder variants (parallel and causal).

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "laddernat/checkpoint.hpp"
#include "laddernat/tensor.hpp"

namespace laddernat {

struct BlockConfig {
  int model_dim = 64;
  int heads = 4;
  int ffn_dim = 128;
  int enc_layers = 2;
  int dec_layers = 2;
  int max_positions = 64;
  double dropout = 0.1;

  void validate() const;
};

// Forward-pass context: eval() is deterministic (no dropout), train() applies
// inverted dropout driven by the caller's RNG.
struct FwdCtx {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  static FwdCtx eval() { return {}; }
  static FwdCtx train(double rate, std::mt19937_64& rng) { return {true, rate, &rng}; }
};

struct AttnParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct LayerNormParams {
  Tensor gain, bias;
};

// Pre-norm residual blocks; each stack closes with a final layer norm.
struct EncLayerParams {
  AttnParams attn;
  LayerNormParams ln1;
  FfnParams ffn;
  LayerNormParams ln2;
};

struct DecLayerParams {
  AttnParams self_attn;
  LayerNormParams ln1;
  AttnParams cross_attn;
  LayerNormParams ln2;
  FfnParams ffn;
  LayerNormParams ln3;
};

struct EncoderParams {
  std::vector<EncLayerParams> layers;
  LayerNormParams final_ln;
};

struct DecoderParams {
  std::vector<DecLayerParams> layers;
  LayerNormParams final_ln;
};

// Parameter constructors register tensors in `store` under `prefix` and
// return typed views sharing the same nodes.
AttnParams make_attn_params(ParamStore& store, const std::string& prefix, int d, std::mt19937_64& rng);
FfnParams make_ffn_params(ParamStore& store, const std::string& prefix, int d, int ffn, std::mt19937_64& rng);
LayerNormParams make_ln_params(ParamStore& store, const std::string& prefix, int d);
EncLayerParams make_enc_layer(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                              std::mt19937_64& rng);
DecLayerParams make_dec_layer(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                              std::mt19937_64& rng);
EncoderParams make_encoder(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                           int layers, std::mt19937_64& rng);
DecoderParams make_decoder(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                           int layers, std::mt19937_64& rng);

// Sinusoidal position table, rows 0..max_positions-1.
Tensor sinusoidal_positions(int max_positions, int d);

// Scaled dot-product attention over `heads` head splits; `disallow`, when
// present, is a [n_q x n_k] row-major mask of key positions each query must
// not attend to.
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                            const AttnParams& p, int heads,
                            const std::vector<std::uint8_t>* disallow = nullptr);

Tensor encoder_layer_forward(const Tensor& x, const EncLayerParams& p, const BlockConfig& cfg,
                             const FwdCtx& ctx);

// Token embedding (scaled by sqrt(D)) + positions + encoder stack -> [T, D].
Tensor encode_tokens(const std::vector<int>& ids, const Tensor& emb, const Tensor& pos_table,
                     const EncoderParams& encoder, const BlockConfig& cfg, const FwdCtx& ctx);

// Parallel decoder: no causal mask, cross-attention over `memory`. Returns
// hidden states [l, D]. Counts one decoder pass into *passes when given.
Tensor decode_nat_hidden(const Tensor& inputs, const Tensor& memory, const DecoderParams& decoder,
                         const BlockConfig& cfg, const FwdCtx& ctx, long* passes = nullptr);

// Causal decoder over an embedded prefix; memory may not be empty. Returns
// hidden states [T, D], one row per prefix position.
Tensor decode_ar_hidden(const Tensor& prefix_inputs, const Tensor& memory,
                        const DecoderParams& decoder, const BlockConfig& cfg, const FwdCtx& ctx,
                        long* passes = nullptr);

// Embeds a token sequence for decoder input: emb*sqrt(D) + positions.
Tensor embed_with_positions(const std::vector<int>& ids, const Tensor& emb, const Tensor& pos_table,
                            const BlockConfig& cfg, const FwdCtx& ctx);

// logits = hidden @ emb^T (output projection tied to the embedding table).
Tensor project_to_vocab(const Tensor& hidden, const Tensor& emb);

std::vector<std::uint8_t> causal_mask(int n);

}  // namespace laddernat
