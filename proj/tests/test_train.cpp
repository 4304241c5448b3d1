#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "laddernat/rng.hpp"
#include "laddernat/train.hpp"

using namespace laddernat;

namespace {

BlockConfig toy_block() {
  BlockConfig cfg;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.max_positions = 16;
  cfg.dropout = 0.0;
  return cfg;
}

LatentConfig toy_latent() { return {3, 4, 1.0}; }

struct ToyBatch {
  TokenSeq x1{4, 9, 11, 5}, y1{7, 3, 8, 12};
  TokenSeq x2{5, 5, 10}, y2{6, 13, 4};
};

}  // namespace

TEST_CASE("loss breakdown identity: total == -(token+length) + beta*kl") {
  ToyBatch batch;
  auto b = make_bundle(ModelKind::LaNMT, toy_block(), toy_latent(), 16, 3);
  auto rng = make_rng(5, "noise");
  Tensor noise = Tensor::normal({3, 4}, 0, 1, rng, false);
  for (double beta : {0.0, 1.0, 2.5}) {
    LossGraph g = elbo_lanmt(batch.x1, batch.y1, b, Direction::Forward, beta, FwdCtx::eval(), noise);
    double recomputed = -(g.values.token_ll + g.values.length_ll) + beta * g.values.kl;
    CHECK(g.values.total == doctest::Approx(recomputed).epsilon(1e-9));
    CHECK(g.total.item() == doctest::Approx(g.values.total).epsilon(1e-12));
    CHECK(g.values.kl >= 0.0);
  }
}

TEST_CASE("beta = 0 removes the KL contribution") {
  ToyBatch batch;
  auto b = make_bundle(ModelKind::LaNMT, toy_block(), toy_latent(), 16, 3);
  auto rng = make_rng(5, "noise");
  Tensor noise = Tensor::normal({3, 4}, 0, 1, rng, false);
  LossGraph g0 = elbo_lanmt(batch.x1, batch.y1, b, Direction::Forward, 0.0, FwdCtx::eval(), noise);
  CHECK(g0.values.total ==
        doctest::Approx(-(g0.values.token_ll + g0.values.length_ll)).epsilon(1e-9));
}

TEST_CASE("elbo_lanmt gradients match finite differences on a 2-pair toy batch") {
  ToyBatch batch;
  auto b = make_bundle(ModelKind::LaNMT, toy_block(), toy_latent(), 16, 7);
  auto rng = make_rng(9, "noise");
  Tensor n1 = Tensor::normal({3, 4}, 0, 1, rng, false);
  Tensor n2 = Tensor::normal({3, 4}, 0, 1, rng, false);
  auto f = [&] {
    LossGraph a = elbo_lanmt(batch.x1, batch.y1, b, Direction::Forward, 1.0, FwdCtx::eval(), n1);
    LossGraph c = elbo_lanmt(batch.x2, batch.y2, b, Direction::Reverse, 1.0, FwdCtx::eval(), n2);
    return add(a.total, c.total);
  };
  auto grng = make_rng(11, "fd");
  auto report = grad_check(f, b.params.tensors(), 1e-4, 4, grng);
  INFO(report.worst << " over " << report.checked << " coords");
  CHECK(report.checked >= 200);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("elbo_ladder_sup gradients match finite differences on a 2-pair toy batch") {
  ToyBatch batch;
  auto b = make_bundle(ModelKind::LadderNMT, toy_block(), toy_latent(), 16, 13);
  auto rng = make_rng(15, "noise");
  Tensor n1 = Tensor::normal({3, 4}, 0, 1, rng, false);
  Tensor n2 = Tensor::normal({3, 4}, 0, 1, rng, false);
  auto f = [&] {
    LossGraph a =
        elbo_ladder_sup(batch.x1, batch.y1, ReconDir::SourceRecon, b, 1.0, FwdCtx::eval(), n1);
    LossGraph c =
        elbo_ladder_sup(batch.x2, batch.y2, ReconDir::TargetRecon, b, 1.0, FwdCtx::eval(), n2);
    return add(a.total, c.total);
  };
  auto grng = make_rng(17, "fd");
  auto report = grad_check(f, b.params.tensors(), 1e-4, 4, grng);
  INFO(report.worst << " over " << report.checked << " coords");
  CHECK(report.checked >= 200);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("source reconstruction never reads theta's decoder") {
  ToyBatch batch;
  auto b = make_bundle(ModelKind::LadderNMT, toy_block(), toy_latent(), 16, 19);
  auto rng = make_rng(21, "noise");
  Tensor noise = Tensor::normal({3, 4}, 0, 1, rng, false);
  b.params.zero_grads();
  LossGraph g =
      elbo_ladder_sup(batch.x1, batch.y1, ReconDir::SourceRecon, b, 1.0, FwdCtx::eval(), noise);
  backward(g.total);
  for (const auto& [name, t] : b.params.all()) {
    if (name.rfind("theta.dec.", 0) != 0 && name.rfind("theta.len.", 0) != 0) continue;
    bool touched = false;
    if (t.has_grad())
      for (double v : t.grad())
        if (v != 0.0) touched = true;
    INFO(name);
    CHECK_FALSE(touched);
  }
}

TEST_CASE("dual reconstruction reuses one latent sample") {
  ToyBatch batch;
  auto rng = make_rng(23, "noise");
  Tensor noise = Tensor::normal({3, 4}, 0, 1, rng, false);
  Tensor other = Tensor::normal({3, 4}, 0, 1, rng, false);

  SUBCASE("with rho=1 and shared noise, dual equals the sum of single-direction ELBOs") {
    auto b = make_bundle(ModelKind::LadderNMT, toy_block(), toy_latent(), 16, 25);
    LossGraph dual = dual_recon_loss(batch.x1, batch.y1, b, 1.0, FwdCtx::eval(), noise);
    LossGraph s =
        elbo_ladder_sup(batch.x1, batch.y1, ReconDir::SourceRecon, b, 1.0, FwdCtx::eval(), noise);
    LossGraph t =
        elbo_ladder_sup(batch.x1, batch.y1, ReconDir::TargetRecon, b, 1.0, FwdCtx::eval(), noise);
    CHECK(dual.values.total == doctest::Approx(s.values.total + t.values.total).epsilon(1e-12));
  }
  SUBCASE("independent samples change the loss on a seeded run") {
    auto b = make_bundle(ModelKind::LadderNMT, toy_block(), toy_latent(), 16, 25);
    LossGraph dual = dual_recon_loss(batch.x1, batch.y1, b, 1.0, FwdCtx::eval(), noise);
    LossGraph s =
        elbo_ladder_sup(batch.x1, batch.y1, ReconDir::SourceRecon, b, 1.0, FwdCtx::eval(), noise);
    LossGraph t =
        elbo_ladder_sup(batch.x1, batch.y1, ReconDir::TargetRecon, b, 1.0, FwdCtx::eval(), other);
    CHECK(dual.values.total != doctest::Approx(s.values.total + t.values.total).epsilon(1e-12));
  }
  SUBCASE("with rho<1 the reused sample differs from a fresh tgt-side sample") {
    LatentConfig lat = toy_latent();
    lat.rho = 0.5;
    auto b = make_bundle(ModelKind::LadderNMT, toy_block(), lat, 16, 25);
    LossGraph dual = dual_recon_loss(batch.x1, batch.y1, b, 1.0, FwdCtx::eval(), noise);
    LossGraph s =
        elbo_ladder_sup(batch.x1, batch.y1, ReconDir::SourceRecon, b, 1.0, FwdCtx::eval(), noise);
    LossGraph t =
        elbo_ladder_sup(batch.x1, batch.y1, ReconDir::TargetRecon, b, 1.0, FwdCtx::eval(), noise);
    CHECK(dual.values.total != doctest::Approx(s.values.total + t.values.total).epsilon(1e-12));
  }
}

TEST_CASE("after one dual step every theta/phi component holds a gradient") {
  ToyBatch batch;
  auto b = make_bundle(ModelKind::LadderNMT, toy_block(), toy_latent(), 16, 27);
  auto rng = make_rng(29, "noise");
  Tensor noise = Tensor::normal({3, 4}, 0, 1, rng, false);
  b.params.zero_grads();
  backward(dual_recon_loss(batch.x1, batch.y1, b, 1.0, FwdCtx::eval(), noise).total);

  for (const char* prefix : {"theta.enc.", "theta.dec.", "theta.len.", "phi.enc.", "phi.dec.",
                             "phi.len."}) {
    bool any = false;
    for (const auto& [name, t] : b.params.all())
      if (name.rfind(prefix, 0) == 0 && t.has_grad()) any = true;
    INFO(prefix);
    CHECK(any);
  }
}

TEST_CASE("at loss trains both causal directions") {
  ToyBatch batch;
  auto b = make_bundle(ModelKind::AT, toy_block(), toy_latent(), 16, 31);
  LossGraph g = at_loss(batch.x1, batch.y1, b, Direction::Forward, 0.1, FwdCtx::eval());
  CHECK(g.values.total == doctest::Approx(-g.values.token_ll).epsilon(1e-9));
  CHECK(g.values.kl == 0.0);
  CHECK(std::isfinite(g.values.total));

  auto grng = make_rng(33, "fd");
  auto f = [&] {
    return add(at_loss(batch.x1, batch.y1, b, Direction::Forward, 0.1, FwdCtx::eval()).total,
               at_loss(batch.y2, batch.x2, b, Direction::Reverse, 0.1, FwdCtx::eval()).total);
  };
  auto report = grad_check(f, b.params.tensors(), 1e-4, 3, grng);
  INFO(report.worst);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("lr schedule: warmup to peak then inverse square root") {
  TrainConfig cfg;
  cfg.lr_peak = 2e-3;
  cfg.warmup_steps = 100;
  CHECK(lr_schedule(100, cfg) == doctest::Approx(2e-3));
  CHECK(lr_schedule(400, cfg) == doctest::Approx(1e-3));  // sqrt(1/4)
  CHECK(lr_schedule(50, cfg) == doctest::Approx(1e-3));
  double prev = 0;
  for (long s = 1; s <= 100; ++s) {
    double lr = lr_schedule(s, cfg);
    CHECK(lr >= prev);
    prev = lr;
  }
  for (long s = 100; s <= 1000; s += 50) CHECK(lr_schedule(s, cfg) <= 2e-3 + 1e-15);
  CHECK_THROWS_AS(lr_schedule(0, cfg), std::invalid_argument);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.patience = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.warmup_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

namespace {

Corpus tiny_corpus(int pairs, std::uint64_t seed) {
  CorpusSpec spec;
  spec.src_vocab = 16;
  spec.tgt_vocab = 16;
  spec.pairs = pairs;
  spec.len_min = 3;
  spec.len_max = 6;
  spec.registers = 1;
  spec.seed = seed;
  return gen_corpus(spec);
}

}  // namespace

TEST_CASE("overfit: loss on a 10-pair corpus decreases within 500 steps") {
  Corpus corpus = tiny_corpus(10, 41);
  auto b = make_bundle(ModelKind::LadderNMT, toy_block(), toy_latent(), 16, 43);
  TrainConfig cfg;
  cfg.beta = 1.0;
  cfg.lr_peak = 2e-3;
  cfg.warmup_steps = 50;
  cfg.batch_size = 4;
  cfg.max_steps = 500;
  cfg.patience = 100;
  cfg.validate_every = 100;
  cfg.dropout = 0.0;
  cfg.valid_refinements = 1;
  cfg.valid_subset = 10;
  cfg.seed = 47;
  TrainResult r = train(b, corpus, corpus, cfg);
  REQUIRE(r.log.size() >= 2);
  CHECK(r.log.back().mean_loss.total < r.log.front().mean_loss.total);
  CHECK(b.trained);
}

TEST_CASE("fixed seed gives an identical metrics log across two runs") {
  Corpus corpus = tiny_corpus(24, 51);
  auto run = [&] {
    auto b = make_bundle(ModelKind::LaNMT, toy_block(), toy_latent(), 16, 53);
    TrainConfig cfg;
    cfg.lr_peak = 1e-3;
    cfg.warmup_steps = 20;
    cfg.batch_size = 4;
    cfg.max_steps = 60;
    cfg.patience = 50;
    cfg.validate_every = 20;
    cfg.dropout = 0.1;
    cfg.valid_refinements = 1;
    cfg.valid_subset = 8;
    cfg.seed = 55;
    return train(b, corpus, corpus, cfg);
  };
  TrainResult a = run();
  TrainResult c = run();
  REQUIRE(a.log.size() == c.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].mean_loss.total == c.log[i].mean_loss.total);  // bitwise
    CHECK(a.log[i].bleu_fwd == c.log[i].bleu_fwd);
    CHECK(a.log[i].bleu_rev == c.log[i].bleu_rev);
  }
}

TEST_CASE("patience=1 with non-improving validation stops after 2 validations") {
  Corpus corpus = tiny_corpus(8, 61);
  auto b = make_bundle(ModelKind::LadderNMT, toy_block(), toy_latent(), 16, 63);
  TrainConfig cfg;
  cfg.lr_peak = 1e-15;  // effectively frozen, so validation never improves
  cfg.warmup_steps = 1;
  cfg.batch_size = 2;
  cfg.max_steps = 50;
  cfg.patience = 1;
  cfg.validate_every = 1;
  cfg.dropout = 0.0;
  cfg.valid_refinements = 0;
  cfg.valid_subset = 4;
  cfg.seed = 65;
  TrainResult r = train(b, corpus, corpus, cfg);
  CHECK(r.early_stopped);
  CHECK(r.log.size() == 2);
}

TEST_CASE("dual_step applies one update and reports finite losses") {
  Corpus corpus = tiny_corpus(4, 71);
  auto b = make_bundle(ModelKind::LadderNMT, toy_block(), toy_latent(), 16, 73);
  Adam opt(b.params.tensors());
  auto rng = make_rng(75, "step");
  TrainConfig cfg;
  cfg.dropout = 0.0;
  auto before = b.params.snapshot();
  LossBreakdown v = dual_step(corpus.pairs[0], b, opt, cfg, 1, rng);
  CHECK(std::isfinite(v.total));
  CHECK(v.kl >= 0.0);
  auto after = b.params.snapshot();
  CHECK(before != after);
}
