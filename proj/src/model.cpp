#include "laddernat/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "laddernat/rng.hpp"

namespace laddernat {

namespace fs = std::filesystem;
using nlohmann::json;

std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::AT: return "at";
    case ModelKind::LaNMT: return "lanmt";
    case ModelKind::LadderNMT: return "laddernmt";
  }
  throw std::invalid_argument("unknown model kind");
}

ModelKind kind_from_name(const std::string& name) {
  if (name == "at") return ModelKind::AT;
  if (name == "lanmt") return ModelKind::LaNMT;
  if (name == "laddernmt") return ModelKind::LadderNMT;
  throw std::invalid_argument("unknown model kind: " + name);
}

namespace {

// LaNMT's posterior network at desk scale: one encoder and one decoder layer.
constexpr int kPosteriorLayers = 1;

SideParams make_side(ModelBundle& b, const std::string& side_name, std::mt19937_64& rng) {
  const BlockConfig& cfg = b.block;
  ParamStore& store = b.params;
  SideParams s;
  double emb_limit = std::sqrt(3.0 / cfg.model_dim);
  s.emb = store.add(side_name + ".enc.emb",
                    Tensor::uniform({b.vocab, cfg.model_dim}, -emb_limit, emb_limit, rng, true));
  s.enc = make_encoder(store, side_name + ".enc", cfg, cfg.enc_layers, rng);
  s.dec = make_decoder(store, side_name + ".dec", cfg, cfg.dec_layers, rng);

  if (b.kind != ModelKind::AT) {
    s.lat = make_gauss_head(store, side_name + ".enc.lat", cfg.model_dim, b.latent.d_z, rng);
    double zlimit = std::sqrt(6.0 / (b.latent.d_z + cfg.model_dim));
    s.zproj_w = store.add(side_name + ".dec.zproj.w",
                          Tensor::uniform({b.latent.d_z, cfg.model_dim}, -zlimit, zlimit, rng, true));
    s.zproj_b = store.add(side_name + ".dec.zproj.b", Tensor::zeros({cfg.model_dim}, true));
    s.len_pool_w = store.add(side_name + ".len.pool.w",
                             Tensor::uniform({b.latent.d_z, cfg.model_dim}, -zlimit, zlimit, rng, true));
    s.len_pool_b = store.add(side_name + ".len.pool.b", Tensor::zeros({cfg.model_dim}, true));
    double llimit = std::sqrt(6.0 / (cfg.model_dim + kLenLogits));
    s.len_out_w = store.add(side_name + ".len.out.w",
                            Tensor::uniform({cfg.model_dim, kLenLogits}, -llimit, llimit, rng, true));
    s.len_out_b = store.add(side_name + ".len.out.b", Tensor::zeros({kLenLogits}, true));
  }

  if (b.kind == ModelKind::LaNMT) {
    PosteriorParams pos;
    pos.enc = make_encoder(store, side_name + ".pos.enc", cfg, kPosteriorLayers, rng);
    pos.dec = make_decoder(store, side_name + ".pos.dec", cfg, kPosteriorLayers, rng);
    pos.head = make_gauss_head(store, side_name + ".pos.lat", cfg.model_dim, b.latent.d_z, rng);
    s.pos = std::move(pos);
  }
  return s;
}

}  // namespace

ModelBundle make_bundle(ModelKind kind, const BlockConfig& block, const LatentConfig& latent,
                        int vocab, std::uint64_t seed) {
  block.validate();
  if (vocab < kFirstContentId + 1) throw std::invalid_argument("bundle: vocab too small");
  ModelBundle b;
  b.kind = kind;
  b.block = block;
  b.latent = latent;
  b.vocab = vocab;
  b.seed = seed;
  b.mask = make_sharing_mask(latent.d_z, latent.rho);
  b.pos_table = sinusoidal_positions(block.max_positions, block.model_dim);
  auto theta_rng = make_rng(seed, "init.theta");
  auto phi_rng = make_rng(seed, "init.phi");
  b.theta = make_side(b, "theta", theta_rng);
  b.phi = make_side(b, "phi", phi_rng);
  return b;
}

EncodedSide encode_with_head(const TokenSeq& tokens, const SideParams& side, const ModelBundle& b,
                             const FwdCtx& ctx) {
  EncodedSide out;
  out.h = encode_tokens(tokens, side.emb, b.pos_table, side.enc, b.block, ctx);
  out.q = gaussian_head(out.h, side.lat, b.latent.t_z);
  return out;
}

EncodedSide prior(const TokenSeq& tokens, const ModelBundle& b, Direction dir, const FwdCtx& ctx) {
  if (b.kind == ModelKind::AT) throw std::invalid_argument("prior: AT bundles have no latent head");
  return encode_with_head(tokens, b.side(dir), b, ctx);
}

GaussianSeq posterior_lanmt(const TokenSeq& input, const TokenSeq& output, const ModelBundle& b,
                            Direction dir, const FwdCtx& ctx) {
  if (b.kind != ModelKind::LaNMT) throw std::invalid_argument("posterior_lanmt: LaNMT bundle required");
  if (input.empty() || output.empty()) throw std::invalid_argument("posterior_lanmt: empty sentence");
  const SideParams& side = b.side(dir);
  const PosteriorParams& pos = *side.pos;
  Tensor h_out = encode_tokens(output, side.emb, b.pos_table, pos.enc, b.block, ctx);
  Tensor in_emb = embed_with_positions(input, side.emb, b.pos_table, b.block, ctx);
  Tensor h_xy = decode_nat_hidden(in_emb, h_out, pos.dec, b.block, ctx, nullptr);
  return gaussian_head(h_xy, pos.head, b.latent.t_z);
}

GaussianSeq posterior_ladder(const TokenSeq& x, const TokenSeq& y, const ModelBundle& b,
                             KeepSide keep, const FwdCtx& ctx) {
  if (b.kind != ModelKind::LadderNMT)
    throw std::invalid_argument("posterior_ladder: LadderNMT bundle required");
  if (x.empty() || y.empty()) throw std::invalid_argument("posterior_ladder: empty sentence");
  GaussianSeq q_x = encode_with_head(x, b.theta, b, ctx).q;
  GaussianSeq q_y = encode_with_head(y, b.phi, b, ctx).q;
  return fuse_gaussians(q_x, q_y, b.mask, keep);
}

Tensor predict_length(const Tensor& z, const Tensor& memory, const SideParams& side,
                      long* length_predictions) {
  if (length_predictions) ++*length_predictions;
  Tensor z_pooled = reshape(mean_rows(z), {1, z.cols()});
  Tensor h_pooled = reshape(mean_rows(memory), {1, memory.cols()});
  Tensor mixed = add(add(matmul(z_pooled, side.len_pool_w), side.len_pool_b), h_pooled);
  return reshape(add(matmul(mixed, side.len_out_w), side.len_out_b), {kLenLogits});
}

int clamp_predicted_length(int memory_len, int offset_index, int max_positions) {
  int l = memory_len + (offset_index - kLenOffsetRange);
  return std::clamp(l, 1, max_positions);
}

Tensor decode_from_latent(const Tensor& z, const Tensor& memory, int l, const SideParams& side,
                          const ModelBundle& b, const FwdCtx& ctx, long* passes) {
  if (l < 1) throw std::invalid_argument("decode_from_latent: length must be >= 1");
  Tensor inputs = add(matmul(length_transform(z, l), side.zproj_w), side.zproj_b);
  inputs = add(inputs, slice_rows(b.pos_table, 0, l));
  Tensor hidden = decode_nat_hidden(inputs, memory, side.dec, b.block, ctx, passes);
  return project_to_vocab(hidden, side.emb);
}

Tensor decode_ar_logits(const std::vector<int>& prefix, const Tensor& memory,
                        const SideParams& side, const ModelBundle& b, const FwdCtx& ctx,
                        long* passes) {
  if (prefix.empty()) throw std::invalid_argument("decode_ar: empty prefix");
  Tensor inputs = embed_with_positions(prefix, side.emb, b.pos_table, b.block, ctx);
  Tensor hidden = decode_ar_hidden(inputs, memory, side.dec, b.block, ctx, passes);
  return project_to_vocab(hidden, side.emb);
}

ParamCounts param_count(const ModelBundle& b) {
  ParamCounts c;
  for (const char* side : {"theta", "phi"}) {
    std::string s(side);
    c.encoder += b.params.count_prefix(s + ".enc.");
    c.decoder += b.params.count_prefix(s + ".dec.");
    c.length += b.params.count_prefix(s + ".len.");
    c.posterior += b.params.count_prefix(s + ".pos.");
  }
  c.total = b.params.count_prefix("");
  return c;
}

void save_bundle(const ModelBundle& b, const std::string& dir, long step) {
  fs::create_directories(dir);
  save_checkpoint(b.params, dir + "/" + std::to_string(step) + ".ckpt");
  json manifest{
      {"kind", kind_name(b.kind)},
      {"vocab", b.vocab},
      {"seed", b.seed},
      {"trained", b.trained},
      {"step", step},
      {"block",
       {{"model_dim", b.block.model_dim},
        {"heads", b.block.heads},
        {"ffn_dim", b.block.ffn_dim},
        {"enc_layers", b.block.enc_layers},
        {"dec_layers", b.block.dec_layers},
        {"max_positions", b.block.max_positions},
        {"dropout", b.block.dropout}}},
      {"latent", {{"t_z", b.latent.t_z}, {"d_z", b.latent.d_z}, {"rho", b.latent.rho}}},
  };
  std::ofstream os(dir + "/manifest.json");
  os << manifest.dump(2) << '\n';
  if (!os) throw std::runtime_error("bundle: cannot write manifest in " + dir);
}

ModelBundle load_bundle(const std::string& dir, long step) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw std::runtime_error("bundle: missing manifest in " + dir);
  json manifest = json::parse(is);
  BlockConfig cfg;
  cfg.model_dim = manifest["block"]["model_dim"];
  cfg.heads = manifest["block"]["heads"];
  cfg.ffn_dim = manifest["block"]["ffn_dim"];
  cfg.enc_layers = manifest["block"]["enc_layers"];
  cfg.dec_layers = manifest["block"]["dec_layers"];
  cfg.max_positions = manifest["block"]["max_positions"];
  cfg.dropout = manifest["block"]["dropout"];
  LatentConfig latent;
  latent.t_z = manifest["latent"]["t_z"];
  latent.d_z = manifest["latent"]["d_z"];
  latent.rho = manifest["latent"]["rho"];
  ModelBundle b = make_bundle(kind_from_name(manifest["kind"]), cfg, latent, manifest["vocab"],
                              manifest["seed"]);
  b.trained = manifest.value("trained", false);
  load_checkpoint(b.params, dir + "/" + std::to_string(step) + ".ckpt");
  return b;
}

ModelBundle load_latest_bundle(const std::string& dir) {
  long best = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    auto name = entry.path().filename().string();
    if (name.size() > 5 && name.ends_with(".ckpt"))
      best = std::max(best, std::stol(name.substr(0, name.size() - 5)));
  }
  if (best < 0) throw std::runtime_error("bundle: no checkpoint in " + dir);
  return load_bundle(dir, best);
}

}  // namespace laddernat
