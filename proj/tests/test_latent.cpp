#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "laddernat/latent.hpp"
#include "laddernat/rng.hpp"
#include "laddernat/tensor.hpp"

using namespace laddernat;

namespace {

GaussianSeq make_gauss(std::vector<double> mean, std::vector<double> var, int t, int d) {
  GaussianSeq g;
  g.mean = Tensor::from_data({t, d}, std::move(mean), true);
  g.var = Tensor::from_data({t, d}, std::move(var), true);
  return g;
}

GaussianSeq scalar_gauss(double mu, double var) { return make_gauss({mu}, {var}, 1, 1); }

// Independent oracle for fusion, written directly from the precision-weighted
// closed form.
void fuse_oracle(double mx, double vx, double my, double vy, double& mo, double& vo) {
  double px = 1.0 / vx, py = 1.0 / vy;
  vo = 1.0 / (px + py);
  mo = (mx * px + my * py) * vo;
}

// Independent oracle for the per-coordinate Gaussian KL.
double kl_oracle(double mq, double vq, double mp, double vp) {
  return 0.5 * std::log(vp / vq) + (vq + (mq - mp) * (mq - mp)) / (2.0 * vp) - 0.5;
}

}  // namespace

TEST_CASE("fusion matches the hand-derived worked examples") {
  SUBCASE("(1,1) + (3,1) -> (2, 0.5)") {
    auto f = fuse_gaussians(scalar_gauss(1, 1), scalar_gauss(3, 1), make_sharing_mask(1, 1.0),
                            KeepSide::X);
    CHECK(f.mean.item() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(f.var.item() == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("(0,0.5) + (3,1) -> (1, 1/3)") {
    auto f = fuse_gaussians(scalar_gauss(0, 0.5), scalar_gauss(3, 1), make_sharing_mask(1, 1.0),
                            KeepSide::X);
    CHECK(f.mean.item() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.var.item() == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("self-fusion halves the variance") {
    auto f = fuse_gaussians(scalar_gauss(0.7, 0.9), scalar_gauss(0.7, 0.9),
                            make_sharing_mask(1, 1.0), KeepSide::X);
    CHECK(f.mean.item() == doctest::Approx(0.7));
    CHECK(f.var.item() == doctest::Approx(0.45));
  }
}

TEST_CASE("fusion properties on random inputs") {
  auto rng = make_rng(17, "fuse");
  std::uniform_real_distribution<double> mu(-3.0, 3.0), var(0.05, 4.0);
  auto mask = make_sharing_mask(1, 1.0);
  for (int i = 0; i < 1000; ++i) {
    double mx = mu(rng), my = mu(rng), vx = var(rng), vy = var(rng);
    auto ab = fuse_gaussians(scalar_gauss(mx, vx), scalar_gauss(my, vy), mask, KeepSide::X);
    auto ba = fuse_gaussians(scalar_gauss(my, vy), scalar_gauss(mx, vx), mask, KeepSide::X);
    // commutativity on shared dims
    CHECK(ab.mean.item() == doctest::Approx(ba.mean.item()).epsilon(1e-12));
    CHECK(ab.var.item() == doctest::Approx(ba.var.item()).epsilon(1e-12));
    // fused variance never exceeds either input variance
    CHECK(ab.var.item() <= std::min(vx, vy) + 1e-15);
    // oracle agreement
    double mo, vo;
    fuse_oracle(mx, vx, my, vy, mo, vo);
    CHECK(ab.mean.item() == doctest::Approx(mo).epsilon(1e-12));
    CHECK(ab.var.item() == doctest::Approx(vo).epsilon(1e-12));
    // fused mean lies between the input means
    CHECK(ab.mean.item() >= std::min(mx, my) - 1e-12);
    CHECK(ab.mean.item() <= std::max(mx, my) + 1e-12);
  }
}

TEST_CASE("precision dominance: a very uncertain side barely moves the mean") {
  auto f = fuse_gaussians(scalar_gauss(0.25, 1.0), scalar_gauss(10.0, 1e6),
                          make_sharing_mask(1, 1.0), KeepSide::X);
  CHECK(std::abs(f.mean.item() - 0.25) < 1e-3);
}

TEST_CASE("partial sharing copies the keep side on non-shared dims") {
  // D_z = 4, rho = 0.5: dims 0,1 shared; dims 2,3 keep-side.
  auto mask = make_sharing_mask(4, 0.5);
  CHECK(mask.shared_dims == 2);
  auto qx = make_gauss({1, 1, 1, 1}, {1, 1, 1, 1}, 1, 4);
  auto qy = make_gauss({3, 3, 3, 3}, {1, 1, 1, 1}, 1, 4);
  auto fx = fuse_gaussians(qx, qy, mask, KeepSide::X);
  CHECK(fx.mean.at(0, 0) == doctest::Approx(2.0));
  CHECK(fx.mean.at(0, 2) == doctest::Approx(1.0));
  CHECK(fx.var.at(0, 2) == doctest::Approx(1.0));
  auto fy = fuse_gaussians(qx, qy, mask, KeepSide::Y);
  CHECK(fy.mean.at(0, 2) == doctest::Approx(3.0));

  // rho = 0 degenerates to a keep-side copy everywhere.
  auto none = make_sharing_mask(4, 0.0);
  auto f0 = fuse_gaussians(qx, qy, none, KeepSide::Y);
  for (int j = 0; j < 4; ++j) CHECK(f0.mean.at(0, j) == doctest::Approx(3.0));
}

TEST_CASE("sharing mask arithmetic") {
  CHECK(make_sharing_mask(32, 1.0).shared_dims == 32);
  CHECK(make_sharing_mask(32, 0.5).shared_dims == 16);
  CHECK(make_sharing_mask(32, 0.75).shared_dims == 24);
  CHECK(make_sharing_mask(8, 0.0).shared_dims == 0);
  CHECK_THROWS_AS(make_sharing_mask(8, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(make_sharing_mask(8, 1.1), std::invalid_argument);
}

TEST_CASE("kl matches the closed form on worked examples") {
  CHECK(sum_all(kl_gaussian(scalar_gauss(0, 1), scalar_gauss(0, 1))).item() ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sum_all(kl_gaussian(scalar_gauss(0, 1), scalar_gauss(1, 1))).item() ==
        doctest::Approx(0.5).epsilon(1e-9));
  CHECK(sum_all(kl_gaussian(scalar_gauss(0, 4), scalar_gauss(0, 1))).item() ==
        doctest::Approx(2.0 - 0.5 + std::log(0.5)).epsilon(1e-9));
  // Self-fusion against its own prior: KL(N(mu, v/2) || N(mu, v)) = ln2/2 - 1/4.
  CHECK(sum_all(kl_gaussian(scalar_gauss(0.3, 0.5), scalar_gauss(0.3, 1.0))).item() ==
        doctest::Approx(0.5 * std::log(2.0) - 0.25).epsilon(1e-9));
}

TEST_CASE("kl is non-negative and matches the oracle on random inputs") {
  auto rng = make_rng(19, "kl");
  std::uniform_real_distribution<double> mu(-3.0, 3.0), var(0.05, 4.0);
  for (int i = 0; i < 1000; ++i) {
    double mq = mu(rng), mp = mu(rng), vq = var(rng), vp = var(rng);
    double kl = sum_all(kl_gaussian(scalar_gauss(mq, vq), scalar_gauss(mp, vp))).item();
    CHECK(kl >= -1e-12);
    CHECK(kl == doctest::Approx(kl_oracle(mq, vq, mp, vp)).epsilon(1e-12));
  }
}

TEST_CASE("kl of fused posterior vs y-prior is minimized at mu_x == mu_y") {
  // Finite differences of KL(fuse(q_x, q_y) || q_y) in mu_x at the symmetric
  // point, plus strict increase away from it.
  const double vy = 0.8, vx = 1.3, my = 0.4;
  auto mask = make_sharing_mask(1, 1.0);
  auto kl_at = [&](double mx) {
    auto fused = fuse_gaussians(scalar_gauss(mx, vx), scalar_gauss(my, vy), mask, KeepSide::X);
    return sum_all(kl_gaussian(fused, scalar_gauss(my, vy))).item();
  };
  double h = 1e-4;
  double fd_grad = (kl_at(my + h) - kl_at(my - h)) / (2 * h);
  CHECK(std::abs(fd_grad) < 1e-6);
  for (double delta : {0.1, 1.0}) {
    CHECK(kl_at(my + delta) > kl_at(my));
    CHECK(kl_at(my - delta) > kl_at(my));
  }
  // Positive curvature through the second difference.
  double second = (kl_at(my + h) - 2 * kl_at(my) + kl_at(my - h)) / (h * h);
  CHECK(second > 0.0);
}

TEST_CASE("length transform") {
  SUBCASE("identity at equal length, bitwise") {
    Tensor s = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor out = length_transform(s, 3);
    for (int i = 0; i < 6; ++i) CHECK(out.data()[i] == s.data()[i]);
  }
  SUBCASE("LT([a,b], 3) = [a, (a+b)/2, b]") {
    Tensor s = Tensor::from_data({2, 1}, {1.0, 5.0});
    Tensor out = length_transform(s, 3);
    CHECK(out.at(0) == doctest::Approx(1.0));
    CHECK(out.at(1) == doctest::Approx(3.0));
    CHECK(out.at(2) == doctest::Approx(5.0));
  }
  SUBCASE("constants are fixed points for any output length") {
    Tensor s = Tensor::from_data({4, 1}, {2.5, 2.5, 2.5, 2.5});
    for (int l : {1, 2, 3, 4, 7, 11}) {
      Tensor out = length_transform(s, l);
      for (int i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(2.5).epsilon(1e-12));
    }
  }
  SUBCASE("l == 1 averages over positions") {
    Tensor s = Tensor::from_data({4, 1}, {1.0, 2.0, 3.0, 6.0});
    CHECK(length_transform(s, 1).at(0) == doctest::Approx(3.0));
  }
  SUBCASE("source coordinates are monotone") {
    // Weight matrix rows must read non-decreasing source positions.
    for (int t : {2, 3, 5, 8}) {
      for (int l : {1, 2, 3, 7, 13}) {
        Tensor w = lt_matrix(t, l);
        double prev_center = -1.0;
        for (int i = 0; i < l; ++i) {
          double center = 0.0;
          for (int j = 0; j < t; ++j) center += w.at(i, j) * j;
          CHECK(center >= prev_center - 1e-12);
          prev_center = center;
        }
      }
    }
  }
  SUBCASE("invalid lengths throw") {
    Tensor s = Tensor::from_data({2, 1}, {1.0, 2.0});
    CHECK_THROWS_AS(length_transform(s, 0), std::invalid_argument);
    CHECK_THROWS_AS(length_transform(s, -1), std::invalid_argument);
  }
}

TEST_CASE("gaussian head with zero weights gives mu=0, var=softplus(0)") {
  ParamStore store;
  auto rng = make_rng(23, "head");
  GaussHeadParams p = make_gauss_head(store, "h", 4, 3, rng);
  for (auto& t : store.tensors())
    for (int i = 0; i < t.numel(); ++i) t.data()[i] = 0.0;
  Tensor h = Tensor::from_data({5, 4}, std::vector<double>(20, 0.7));
  GaussianSeq q = gaussian_head(h, p, 2);
  CHECK(q.mean.shape() == Shape{2, 3});
  CHECK(q.var.shape() == Shape{2, 3});
  for (int i = 0; i < q.mean.numel(); ++i) {
    CHECK(q.mean.at(i) == doctest::Approx(0.0));
    CHECK(q.var.at(i) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
}

TEST_CASE("gaussian head output length is T_z regardless of input length") {
  ParamStore store;
  auto rng = make_rng(29, "head2");
  GaussHeadParams p = make_gauss_head(store, "h", 4, 3, rng);
  for (int t : {1, 2, 5, 9}) {
    Tensor h = Tensor::uniform({t, 4}, -1, 1, rng, false);
    GaussianSeq q = gaussian_head(h, p, 6);
    CHECK(q.mean.shape() == Shape{6, 3});
    for (int i = 0; i < q.var.numel(); ++i) CHECK(q.var.at(i) > 0.0);
  }
}

TEST_CASE("gaussian head variance gradient flows through softplus") {
  ParamStore store;
  auto rng = make_rng(31, "head3");
  GaussHeadParams p = make_gauss_head(store, "h", 3, 2, rng);
  Tensor h = Tensor::uniform({4, 3}, -1, 1, rng, false);
  auto f = [&] {
    GaussianSeq q = gaussian_head(h, p, 4);
    return sum_all(add(q.var, square(q.mean)));
  };
  auto grng = make_rng(32, "head3");
  auto report = grad_check(f, store.tensors(), 1e-5, 16, grng);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("reparameterization") {
  auto q = make_gauss({1.0, -2.0}, {4.0, 0.25}, 1, 2);
  SUBCASE("zero noise returns the mean") {
    Tensor z = reparameterize(q, Tensor::zeros({1, 2}));
    CHECK(z.at(0) == doctest::Approx(1.0));
    CHECK(z.at(1) == doctest::Approx(-2.0));
  }
  SUBCASE("vanishing variance pins Z to the mean") {
    auto tiny = make_gauss({1.0, -2.0}, {1e-18, 1e-18}, 1, 2);
    Tensor z = reparameterize(tiny, Tensor::from_data({1, 2}, {3.0, -3.0}));
    CHECK(z.at(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(z.at(1) == doctest::Approx(-2.0).epsilon(1e-6));
  }
  SUBCASE("gradient of sum(Z) w.r.t. mu is all-ones") {
    Tensor noise = Tensor::from_data({1, 2}, {0.7, -0.3});
    backward(sum_all(reparameterize(q, noise)));
    CHECK(q.mean.grad()[0] == doctest::Approx(1.0));
    CHECK(q.mean.grad()[1] == doctest::Approx(1.0));
    CHECK(q.var.has_grad());
  }
  SUBCASE("noise shape mismatch throws") {
    CHECK_THROWS_AS(reparameterize(q, Tensor::zeros({2, 2})), std::invalid_argument);
  }
}

TEST_CASE("non-positive variance is rejected") {
  auto bad = make_gauss({0.0}, {0.0}, 1, 1);
  auto ok = scalar_gauss(0.0, 1.0);
  CHECK_THROWS_AS(kl_gaussian(bad, ok), std::invalid_argument);
  CHECK_THROWS_AS(kl_gaussian(ok, bad), std::invalid_argument);
  CHECK_THROWS_AS(fuse_gaussians(bad, ok, make_sharing_mask(1, 1.0), KeepSide::X),
                  std::invalid_argument);
}
