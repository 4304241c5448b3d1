#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "laddernat/model.hpp"
#include "laddernat/rng.hpp"

using namespace laddernat;

namespace {

BlockConfig small_block() {
  BlockConfig cfg;
  cfg.model_dim = 16;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.max_positions = 16;
  cfg.dropout = 0.0;
  return cfg;
}

LatentConfig small_latent() { return {4, 6, 1.0}; }

}  // namespace

TEST_CASE("bundle composition by kind") {
  auto at = make_bundle(ModelKind::AT, small_block(), small_latent(), 16, 1);
  auto lanmt = make_bundle(ModelKind::LaNMT, small_block(), small_latent(), 16, 1);
  auto ladder = make_bundle(ModelKind::LadderNMT, small_block(), small_latent(), 16, 1);

  ParamCounts at_c = param_count(at);
  ParamCounts la_c = param_count(lanmt);
  ParamCounts ld_c = param_count(ladder);

  // AT carries no latent machinery and no length predictor.
  CHECK(at_c.posterior == 0);
  CHECK(at_c.length == 0);
  CHECK_FALSE(at.params.contains("theta.enc.lat.mu.w"));
  CHECK_FALSE(at.params.contains("theta.dec.zproj.w"));

  // LadderNMT has no posterior-specific parameters at all.
  CHECK(ld_c.posterior == 0);
  CHECK(la_c.posterior > 0);
  CHECK(la_c.total > ld_c.total);
  CHECK(la_c.total - ld_c.total == la_c.posterior);

  for (const ParamCounts& c : {at_c, la_c, ld_c})
    CHECK(c.total == c.encoder + c.decoder + c.length + c.posterior);
}

TEST_CASE("prior surface") {
  auto b = make_bundle(ModelKind::LadderNMT, small_block(), small_latent(), 16, 3);
  TokenSeq x{4, 9, 11, 5};
  EncodedSide p1 = prior(x, b, Direction::Forward, FwdCtx::eval());
  CHECK(p1.h.shape() == Shape{4, 16});
  CHECK(p1.q.mean.shape() == Shape{4, 6});
  for (int i = 0; i < p1.q.var.numel(); ++i) CHECK(p1.q.var.at(i) > 0.0);

  EncodedSide p2 = prior(x, b, Direction::Forward, FwdCtx::eval());
  for (int i = 0; i < p1.q.mean.numel(); ++i) CHECK(p1.q.mean.at(i) == p2.q.mean.at(i));

  auto at = make_bundle(ModelKind::AT, small_block(), small_latent(), 16, 3);
  CHECK_THROWS_AS(prior(x, at, Direction::Forward, FwdCtx::eval()), std::invalid_argument);
}

TEST_CASE("lanmt posterior shape and sensitivity to the target sentence") {
  auto b = make_bundle(ModelKind::LaNMT, small_block(), small_latent(), 16, 5);
  TokenSeq x{4, 9, 11, 5}, y{7, 3, 8, 12};
  GaussianSeq q = posterior_lanmt(x, y, b, Direction::Forward, FwdCtx::eval());
  CHECK(q.mean.shape() == Shape{4, 6});

  TokenSeq y2 = y;
  y2[1] = 14;
  GaussianSeq q2 = posterior_lanmt(x, y2, b, Direction::Forward, FwdCtx::eval());
  double diff = 0;
  for (int i = 0; i < q.mean.numel(); ++i) diff += std::abs(q.mean.at(i) - q2.mean.at(i));
  CHECK(diff > 1e-9);

  CHECK_THROWS_AS(posterior_lanmt({}, y, b, Direction::Forward, FwdCtx::eval()),
                  std::invalid_argument);
}

TEST_CASE("ladder posterior") {
  auto b = make_bundle(ModelKind::LadderNMT, small_block(), small_latent(), 16, 7);
  TokenSeq x{4, 9, 11, 5}, y{7, 3, 8, 12};

  SUBCASE("swapping roles preserves shared-dim statistics (rho=1)") {
    GaussianSeq q1 = posterior_ladder(x, y, b, KeepSide::X, FwdCtx::eval());
    GaussianSeq q2 = posterior_ladder(x, y, b, KeepSide::Y, FwdCtx::eval());
    for (int i = 0; i < q1.mean.numel(); ++i) {
      CHECK(q1.mean.at(i) == doctest::Approx(q2.mean.at(i)).epsilon(1e-12));
      CHECK(q1.var.at(i) == doctest::Approx(q2.var.at(i)).epsilon(1e-12));
    }
  }
  SUBCASE("fused mean lies between the two encoder means, variance below both") {
    EncodedSide ex = encode_with_head(x, b.theta, b, FwdCtx::eval());
    EncodedSide ey = encode_with_head(y, b.phi, b, FwdCtx::eval());
    GaussianSeq q = posterior_ladder(x, y, b, KeepSide::X, FwdCtx::eval());
    for (int i = 0; i < q.mean.numel(); ++i) {
      double lo = std::min(ex.q.mean.at(i), ey.q.mean.at(i));
      double hi = std::max(ex.q.mean.at(i), ey.q.mean.at(i));
      CHECK(q.mean.at(i) >= lo - 1e-12);
      CHECK(q.mean.at(i) <= hi + 1e-12);
      CHECK(q.var.at(i) <= std::min(ex.q.var.at(i), ey.q.var.at(i)) + 1e-15);
    }
  }
  SUBCASE("only theta/phi encoder parameters receive gradient") {
    GaussianSeq q = posterior_ladder(x, y, b, KeepSide::X, FwdCtx::eval());
    b.params.zero_grads();
    backward(sum_all(add(q.mean, q.var)));
    for (const auto& [name, t] : b.params.all()) {
      bool is_encoder = name.rfind("theta.enc.", 0) == 0 || name.rfind("phi.enc.", 0) == 0;
      bool touched = false;
      if (t.has_grad())
        for (double g : t.grad())
          if (g != 0.0) touched = true;
      if (touched) CHECK(is_encoder);
    }
  }
  SUBCASE("identical encoders and x == y give equal-precision self-fusion") {
    // Copy theta's encoder parameters into phi, then fuse (x, x).
    for (const auto& [name, t] : b.params.all()) {
      if (name.rfind("theta.enc.", 0) != 0) continue;
      Tensor& dst = b.params.get("phi" + name.substr(5));
      std::copy(t.data(), t.data() + t.numel(), dst.data());
    }
    EncodedSide ex = encode_with_head(x, b.theta, b, FwdCtx::eval());
    GaussianSeq q = posterior_ladder(x, x, b, KeepSide::X, FwdCtx::eval());
    for (int i = 0; i < q.mean.numel(); ++i) {
      CHECK(q.mean.at(i) == doctest::Approx(ex.q.mean.at(i)).epsilon(1e-9));
      CHECK(q.var.at(i) == doctest::Approx(ex.q.var.at(i) / 2.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("length predictor") {
  auto b = make_bundle(ModelKind::LadderNMT, small_block(), small_latent(), 16, 9);
  TokenSeq x{4, 9, 11};
  EncodedSide p = prior(x, b, Direction::Forward, FwdCtx::eval());
  Tensor logits = predict_length(p.q.mean, p.h, b.theta);
  CHECK(logits.numel() == 41);
  Tensor probs = softmax_rows(logits);
  double sum = 0;
  for (int i = 0; i < probs.numel(); ++i) sum += probs.at(i);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

  CHECK(clamp_predicted_length(3, 0, 16) == 1);    // offset -20 clamps to 1
  CHECK(clamp_predicted_length(3, 40, 16) == 16);  // offset +20 clamps to max
  CHECK(clamp_predicted_length(5, 20, 16) == 5);   // offset 0
}

TEST_CASE("decode_from_latent") {
  auto b = make_bundle(ModelKind::LadderNMT, small_block(), small_latent(), 16, 11);
  TokenSeq x{4, 9, 11, 5};
  EncodedSide p = prior(x, b, Direction::Forward, FwdCtx::eval());
  long passes = 0;
  for (int l : {1, 3, 9}) {
    Tensor logits = decode_from_latent(p.q.mean, p.h, l, b.theta, b, FwdCtx::eval(), &passes);
    CHECK(logits.shape() == Shape{l, 16});
  }
  CHECK(passes == 3);  // one pass per call regardless of length
  CHECK_THROWS_AS(decode_from_latent(p.q.mean, p.h, 0, b.theta, b, FwdCtx::eval()),
                  std::invalid_argument);

  Tensor a = decode_from_latent(p.q.mean, p.h, 4, b.theta, b, FwdCtx::eval());
  Tensor c = decode_from_latent(p.q.mean, p.h, 4, b.theta, b, FwdCtx::eval());
  for (int i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == c.data()[i]);
}

TEST_CASE("save/load round-trips parameters and counts exactly") {
  auto dir = std::filesystem::temp_directory_path() / "laddernat_bundle_test";
  std::filesystem::remove_all(dir);
  for (ModelKind kind : {ModelKind::AT, ModelKind::LaNMT, ModelKind::LadderNMT}) {
    auto b = make_bundle(kind, small_block(), small_latent(), 16, 13);
    b.trained = true;
    std::string subdir = (dir / kind_name(kind)).string();
    save_bundle(b, subdir, 42);
    ModelBundle loaded = load_bundle(subdir, 42);
    CHECK(loaded.kind == kind);
    CHECK(loaded.trained);
    ParamCounts a = param_count(b), c = param_count(loaded);
    CHECK(a.total == c.total);
    CHECK(a.posterior == c.posterior);
    for (const auto& [name, t] : b.params.all()) {
      const Tensor& u = loaded.params.get(name);
      for (int i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == u.data()[i]);  // bitwise
    }
    ModelBundle latest = load_latest_bundle(subdir);
    CHECK(latest.params.count_prefix("") == a.total);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("sharing mask—the bundle honors rho") {
  LatentConfig lat = small_latent();
  lat.rho = 0.5;
  auto b = make_bundle(ModelKind::LadderNMT, small_block(), lat, 16, 15);
  CHECK(b.mask.shared_dims == 3);  // round(6 * 0.5)
}
