#include "laddernat/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace laddernat {

void BlockConfig::validate() const {
  if (model_dim <= 0 || heads <= 0 || ffn_dim <= 0 || enc_layers <= 0 || dec_layers <= 0 ||
      max_positions <= 0)
    throw std::invalid_argument("BlockConfig: dimensions must be positive");
  if (model_dim % heads != 0) throw std::invalid_argument("BlockConfig: model_dim must divide by heads");
  if (dropout < 0 || dropout >= 1) throw std::invalid_argument("BlockConfig: dropout must be in [0,1)");
}

namespace {

Tensor xavier(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / (in + out));
  return store.add(name, Tensor::uniform({in, out}, -limit, limit, rng, true));
}

Tensor zeros_param(ParamStore& store, const std::string& name, Shape s) {
  return store.add(name, Tensor::zeros(std::move(s), true));
}

Tensor maybe_dropout(const Tensor& x, const FwdCtx& ctx) {
  if (!ctx.training || ctx.dropout == 0.0) return x;
  return dropout(x, ctx.dropout, *ctx.rng);
}

}  // namespace

AttnParams make_attn_params(ParamStore& store, const std::string& prefix, int d, std::mt19937_64& rng) {
  AttnParams p;
  p.wq = xavier(store, prefix + ".wq", d, d, rng);
  p.bq = zeros_param(store, prefix + ".bq", {d});
  p.wk = xavier(store, prefix + ".wk", d, d, rng);
  p.bk = zeros_param(store, prefix + ".bk", {d});
  p.wv = xavier(store, prefix + ".wv", d, d, rng);
  p.bv = zeros_param(store, prefix + ".bv", {d});
  p.wo = xavier(store, prefix + ".wo", d, d, rng);
  p.bo = zeros_param(store, prefix + ".bo", {d});
  return p;
}

FfnParams make_ffn_params(ParamStore& store, const std::string& prefix, int d, int ffn,
                          std::mt19937_64& rng) {
  FfnParams p;
  p.w1 = xavier(store, prefix + ".w1", d, ffn, rng);
  p.b1 = zeros_param(store, prefix + ".b1", {ffn});
  p.w2 = xavier(store, prefix + ".w2", ffn, d, rng);
  p.b2 = zeros_param(store, prefix + ".b2", {d});
  return p;
}

LayerNormParams make_ln_params(ParamStore& store, const std::string& prefix, int d) {
  LayerNormParams p;
  p.gain = store.add(prefix + ".g", Tensor::full({d}, 1.0, true));
  p.bias = zeros_param(store, prefix + ".b", {d});
  return p;
}

EncLayerParams make_enc_layer(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                              std::mt19937_64& rng) {
  EncLayerParams p;
  p.attn = make_attn_params(store, prefix + ".attn", cfg.model_dim, rng);
  p.ln1 = make_ln_params(store, prefix + ".ln1", cfg.model_dim);
  p.ffn = make_ffn_params(store, prefix + ".ffn", cfg.model_dim, cfg.ffn_dim, rng);
  p.ln2 = make_ln_params(store, prefix + ".ln2", cfg.model_dim);
  return p;
}

DecLayerParams make_dec_layer(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                              std::mt19937_64& rng) {
  DecLayerParams p;
  p.self_attn = make_attn_params(store, prefix + ".self", cfg.model_dim, rng);
  p.ln1 = make_ln_params(store, prefix + ".ln1", cfg.model_dim);
  p.cross_attn = make_attn_params(store, prefix + ".cross", cfg.model_dim, rng);
  p.ln2 = make_ln_params(store, prefix + ".ln2", cfg.model_dim);
  p.ffn = make_ffn_params(store, prefix + ".ffn", cfg.model_dim, cfg.ffn_dim, rng);
  p.ln3 = make_ln_params(store, prefix + ".ln3", cfg.model_dim);
  return p;
}

EncoderParams make_encoder(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                           int layers, std::mt19937_64& rng) {
  EncoderParams enc;
  for (int i = 0; i < layers; ++i)
    enc.layers.push_back(make_enc_layer(store, prefix + ".l" + std::to_string(i), cfg, rng));
  enc.final_ln = make_ln_params(store, prefix + ".lnf", cfg.model_dim);
  return enc;
}

DecoderParams make_decoder(ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                           int layers, std::mt19937_64& rng) {
  DecoderParams dec;
  for (int i = 0; i < layers; ++i)
    dec.layers.push_back(make_dec_layer(store, prefix + ".l" + std::to_string(i), cfg, rng));
  dec.final_ln = make_ln_params(store, prefix + ".lnf", cfg.model_dim);
  return dec;
}

Tensor sinusoidal_positions(int max_positions, int d) {
  std::vector<double> table(static_cast<size_t>(max_positions) * d);
  for (int pos = 0; pos < max_positions; ++pos) {
    for (int i = 0; i < d; i += 2) {
      double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      table[static_cast<size_t>(pos) * d + i] = std::sin(angle);
      if (i + 1 < d) table[static_cast<size_t>(pos) * d + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({max_positions, d}, std::move(table), false);
}

namespace {

// out[n,d2] = x[n,d1] w[d1,d2] + b
void linear_into(const double* x, const double* w, const double* b, double* out, int n, int d1,
                 int d2) {
  for (int i = 0; i < n; ++i) {
    double* row = out + static_cast<long>(i) * d2;
    std::copy(b, b + d2, row);
    const double* xrow = x + static_cast<long>(i) * d1;
    for (int k = 0; k < d1; ++k) {
      const double xv = xrow[k];
      if (xv == 0.0) continue;
      const double* wrow = w + static_cast<long>(k) * d2;
      for (int j = 0; j < d2; ++j) row[j] += xv * wrow[j];
    }
  }
}

// c[d1,d2] += a[n,d1]^T b[n,d2]
void accum_at_b(const double* a, const double* b, double* c, int n, int d1, int d2) {
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<long>(i) * d1;
    const double* brow = b + static_cast<long>(i) * d2;
    for (int k = 0; k < d1; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      double* crow = c + static_cast<long>(k) * d2;
      for (int j = 0; j < d2; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n,d1] += a[n,d2] b[d1,d2]^T (rows of a dotted with rows of b)
void accum_a_bt(const double* a, const double* b, double* c, int n, int d2, int d1) {
  for (int i = 0; i < n; ++i) {
    const double* arow = a + static_cast<long>(i) * d2;
    double* crow = c + static_cast<long>(i) * d1;
    for (int k = 0; k < d1; ++k) {
      const double* brow = b + static_cast<long>(k) * d2;
      double dot = 0;
      for (int j = 0; j < d2; ++j) dot += arow[j] * brow[j];
      crow[k] += dot;
    }
  }
}

void accum_colsum(const double* a, double* out, int n, int d) {
  for (int i = 0; i < n; ++i) {
    const double* row = a + static_cast<long>(i) * d;
    for (int j = 0; j < d; ++j) out[j] += row[j];
  }
}

}  // namespace

// Fused scaled dot-product attention: one graph node with a hand-written
// backward pass. Projection inputs may alias (self-attention); gradient
// accumulation handles the shared buffers.
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                            const AttnParams& p, int heads,
                            const std::vector<std::uint8_t>* disallow) {
  const int d = queries.cols();
  if (keys.cols() != d || values.cols() != d)
    throw std::invalid_argument("attention: model dim mismatch");
  if (d % heads != 0) throw std::invalid_argument("attention: heads must divide model dim");
  const int n_q = queries.rows(), n_k = keys.rows();
  if (disallow && static_cast<int>(disallow->size()) != n_q * n_k)
    throw std::invalid_argument("attention: mask shape mismatch");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> q(static_cast<size_t>(n_q) * d), k(static_cast<size_t>(n_k) * d),
      v(static_cast<size_t>(n_k) * d);
  linear_into(queries.data(), p.wq.data(), p.bq.data(), q.data(), n_q, d, d);
  linear_into(keys.data(), p.wk.data(), p.bk.data(), k.data(), n_k, d, d);
  linear_into(values.data(), p.wv.data(), p.bv.data(), v.data(), n_k, d, d);

  std::vector<double> weights(static_cast<size_t>(heads) * n_q * n_k, 0.0);
  std::vector<double> merged(static_cast<size_t>(n_q) * d, 0.0);
  std::vector<double> scores(static_cast<size_t>(n_k));
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < n_q; ++i) {
      const double* qi = q.data() + static_cast<long>(i) * d + off;
      double mx = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (int j = 0; j < n_k; ++j) {
        if (disallow && (*disallow)[static_cast<size_t>(i) * n_k + j]) continue;
        const double* kj = k.data() + static_cast<long>(j) * d + off;
        double dot = 0;
        for (int c = 0; c < dh; ++c) dot += qi[c] * kj[c];
        scores[static_cast<size_t>(j)] = dot * scale;
        mx = std::max(mx, scores[static_cast<size_t>(j)]);
        any = true;
      }
      if (!any) throw std::invalid_argument("attention: fully masked row");
      double z = 0;
      double* wrow = weights.data() + (static_cast<size_t>(h) * n_q + i) * n_k;
      for (int j = 0; j < n_k; ++j) {
        if (disallow && (*disallow)[static_cast<size_t>(i) * n_k + j]) {
          wrow[j] = 0.0;
          continue;
        }
        wrow[j] = std::exp(scores[static_cast<size_t>(j)] - mx);
        z += wrow[j];
      }
      double* mrow = merged.data() + static_cast<long>(i) * d + off;
      for (int j = 0; j < n_k; ++j) {
        wrow[j] /= z;
        if (wrow[j] == 0.0) continue;
        const double* vj = v.data() + static_cast<long>(j) * d + off;
        for (int c = 0; c < dh; ++c) mrow[c] += wrow[j] * vj[c];
      }
    }
  }

  std::vector<double> out(static_cast<size_t>(n_q) * d);
  linear_into(merged.data(), p.wo.data(), p.bo.data(), out.data(), n_q, d, d);

  auto backprop = [q = std::move(q), k = std::move(k), v = std::move(v),
                   w = std::move(weights), m = std::move(merged), n_q, n_k, d, dh, heads,
                   scale](Node& self) {
    Node& xq = *self.parents[0];
    Node& xk = *self.parents[1];
    Node& xv = *self.parents[2];
    Node& wq = *self.parents[3];
    Node& bq = *self.parents[4];
    Node& wk = *self.parents[5];
    Node& bk = *self.parents[6];
    Node& wv = *self.parents[7];
    Node& bv = *self.parents[8];
    Node& wo = *self.parents[9];
    Node& bo = *self.parents[10];
    for (const auto& node : self.parents) ensure_grad(*node);

    const double* dout = self.grad.data();
    // output projection: dWo += M^T dOut, dbo += colsum(dOut), dM = dOut Wo^T
    accum_at_b(m.data(), dout, wo.grad.data(), n_q, d, d);
    accum_colsum(dout, bo.grad.data(), n_q, d);
    std::vector<double> dm(static_cast<size_t>(n_q) * d, 0.0);
    accum_a_bt(dout, wo.val.data(), dm.data(), n_q, d, d);

    std::vector<double> dq(static_cast<size_t>(n_q) * d, 0.0);
    std::vector<double> dk(static_cast<size_t>(n_k) * d, 0.0);
    std::vector<double> dv(static_cast<size_t>(n_k) * d, 0.0);
    std::vector<double> dw(static_cast<size_t>(n_k));
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      for (int i = 0; i < n_q; ++i) {
        const double* dmrow = dm.data() + static_cast<long>(i) * d + off;
        const double* wrow = w.data() + (static_cast<size_t>(h) * n_q + i) * n_k;
        double wdot = 0;
        for (int j = 0; j < n_k; ++j) {
          if (wrow[j] == 0.0) {
            dw[static_cast<size_t>(j)] = 0.0;
            continue;
          }
          const double* vj = v.data() + static_cast<long>(j) * d + off;
          double dot = 0;
          for (int c = 0; c < dh; ++c) dot += dmrow[c] * vj[c];
          dw[static_cast<size_t>(j)] = dot;
          wdot += dot * wrow[j];
        }
        const double* qi = q.data() + static_cast<long>(i) * d + off;
        double* dqi = dq.data() + static_cast<long>(i) * d + off;
        for (int j = 0; j < n_k; ++j) {
          if (wrow[j] == 0.0) continue;
          // softmax backward, then the scaled dot products
          double ds = wrow[j] * (dw[static_cast<size_t>(j)] - wdot) * scale;
          const double* kj = k.data() + static_cast<long>(j) * d + off;
          double* dkj = dk.data() + static_cast<long>(j) * d + off;
          double* dvj = dv.data() + static_cast<long>(j) * d + off;
          for (int c = 0; c < dh; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
            dvj[c] += wrow[j] * dmrow[c];
          }
        }
      }
    }

    // input projections: dW* += X^T dP, db* += colsum(dP), dX += dP W*^T
    accum_at_b(xq.val.data(), dq.data(), wq.grad.data(), n_q, d, d);
    accum_colsum(dq.data(), bq.grad.data(), n_q, d);
    accum_a_bt(dq.data(), wq.val.data(), xq.grad.data(), n_q, d, d);
    accum_at_b(xk.val.data(), dk.data(), wk.grad.data(), n_k, d, d);
    accum_colsum(dk.data(), bk.grad.data(), n_k, d);
    accum_a_bt(dk.data(), wk.val.data(), xk.grad.data(), n_k, d, d);
    accum_at_b(xv.val.data(), dv.data(), wv.grad.data(), n_k, d, d);
    accum_colsum(dv.data(), bv.grad.data(), n_k, d);
    accum_a_bt(dv.data(), wv.val.data(), xv.grad.data(), n_k, d, d);
  };

  return custom_op({n_q, d}, std::move(out),
                   {queries, keys, values, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo},
                   std::move(backprop));
}

namespace {

Tensor ffn_forward(const Tensor& x, const FfnParams& p) {
  return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

}  // namespace

Tensor encoder_layer_forward(const Tensor& x, const EncLayerParams& p, const BlockConfig& cfg,
                             const FwdCtx& ctx) {
  Tensor normed = layer_norm_rows(x, p.ln1.gain, p.ln1.bias);
  Tensor h = add(x, maybe_dropout(multi_head_attention(normed, normed, normed, p.attn, cfg.heads), ctx));
  Tensor normed2 = layer_norm_rows(h, p.ln2.gain, p.ln2.bias);
  return add(h, maybe_dropout(ffn_forward(normed2, p.ffn), ctx));
}

Tensor embed_with_positions(const std::vector<int>& ids, const Tensor& emb, const Tensor& pos_table,
                            const BlockConfig& cfg, const FwdCtx& ctx) {
  if (ids.empty()) throw std::invalid_argument("embed: empty sequence");
  if (static_cast<int>(ids.size()) > cfg.max_positions)
    throw std::invalid_argument("embed: sequence exceeds max_positions");
  Tensor e = scale(embedding(emb, ids), std::sqrt(static_cast<double>(cfg.model_dim)));
  Tensor pe = slice_rows(pos_table, 0, static_cast<int>(ids.size()));
  return maybe_dropout(add(e, pe), ctx);
}

Tensor encode_tokens(const std::vector<int>& ids, const Tensor& emb, const Tensor& pos_table,
                     const EncoderParams& encoder, const BlockConfig& cfg, const FwdCtx& ctx) {
  Tensor h = embed_with_positions(ids, emb, pos_table, cfg, ctx);
  for (const auto& layer : encoder.layers) h = encoder_layer_forward(h, layer, cfg, ctx);
  return layer_norm_rows(h, encoder.final_ln.gain, encoder.final_ln.bias);
}

namespace {

Tensor decoder_layer_forward(const Tensor& x, const Tensor& memory, const DecLayerParams& p,
                             const BlockConfig& cfg, const FwdCtx& ctx,
                             const std::vector<std::uint8_t>* self_mask) {
  Tensor n1 = layer_norm_rows(x, p.ln1.gain, p.ln1.bias);
  Tensor h = add(x, maybe_dropout(multi_head_attention(n1, n1, n1, p.self_attn, cfg.heads, self_mask), ctx));
  Tensor n2 = layer_norm_rows(h, p.ln2.gain, p.ln2.bias);
  h = add(h, maybe_dropout(multi_head_attention(n2, memory, memory, p.cross_attn, cfg.heads), ctx));
  Tensor n3 = layer_norm_rows(h, p.ln3.gain, p.ln3.bias);
  return add(h, maybe_dropout(ffn_forward(n3, p.ffn), ctx));
}

}  // namespace

Tensor decode_nat_hidden(const Tensor& inputs, const Tensor& memory, const DecoderParams& decoder,
                         const BlockConfig& cfg, const FwdCtx& ctx, long* passes) {
  if (inputs.rows() < 1) throw std::invalid_argument("decode_nat: empty inputs");
  if (memory.rows() < 1) throw std::invalid_argument("decode_nat: empty memory");
  if (passes) ++*passes;
  Tensor h = inputs;
  for (const auto& layer : decoder.layers) h = decoder_layer_forward(h, memory, layer, cfg, ctx, nullptr);
  return layer_norm_rows(h, decoder.final_ln.gain, decoder.final_ln.bias);
}

std::vector<std::uint8_t> causal_mask(int n) {
  std::vector<std::uint8_t> m(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m[static_cast<size_t>(i) * n + j] = 1;
  return m;
}

Tensor decode_ar_hidden(const Tensor& prefix_inputs, const Tensor& memory,
                        const DecoderParams& decoder, const BlockConfig& cfg, const FwdCtx& ctx,
                        long* passes) {
  if (memory.rows() < 1) throw std::invalid_argument("decode_ar: empty memory");
  if (passes) ++*passes;
  auto mask = causal_mask(prefix_inputs.rows());
  Tensor h = prefix_inputs;
  for (const auto& layer : decoder.layers) h = decoder_layer_forward(h, memory, layer, cfg, ctx, &mask);
  return layer_norm_rows(h, decoder.final_ln.gain, decoder.final_ln.bias);
}

Tensor project_to_vocab(const Tensor& hidden, const Tensor& emb) {
  return matmul(hidden, transpose(emb));
}

}  // namespace laddernat
