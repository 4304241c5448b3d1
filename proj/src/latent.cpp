#include "laddernat/latent.hpp"

#include <cmath>
#include <stdexcept>

namespace laddernat {

void GaussianSeq::validate() const {
  if (mean.shape() != var.shape()) throw std::invalid_argument("GaussianSeq: mean/var shape mismatch");
  for (int i = 0; i < var.numel(); ++i) {
    double v = var.data()[i];
    if (!(v > 0) || !std::isfinite(v))
      throw std::invalid_argument("GaussianSeq: variance must be positive and finite");
  }
}

GaussHeadParams make_gauss_head(ParamStore& store, const std::string& prefix, int d_h, int d_z,
                                std::mt19937_64& rng) {
  GaussHeadParams p;
  double limit = std::sqrt(6.0 / (d_h + d_z));
  p.w_mu = store.add(prefix + ".mu.w", Tensor::uniform({d_h, d_z}, -limit, limit, rng, true));
  p.b_mu = store.add(prefix + ".mu.b", Tensor::zeros({d_z}, true));
  p.w_sigma = store.add(prefix + ".sigma.w", Tensor::uniform({d_h, d_z}, -limit, limit, rng, true));
  // Bias -3 starts variances near softplus(-3) ~ 0.05 so early latent samples
  // stay close to their means instead of drowning the decoder in noise.
  p.b_sigma = store.add(prefix + ".sigma.b", Tensor::full({d_z}, -3.0, true));
  return p;
}

Tensor lt_matrix(int t, int l) {
  if (t < 1) throw std::invalid_argument("length_transform: input length must be >= 1");
  if (l < 1) throw std::invalid_argument("length_transform: output length must be >= 1");
  std::vector<double> w(static_cast<size_t>(l) * t, 0.0);
  if (l == 1) {
    for (int j = 0; j < t; ++j) w[static_cast<size_t>(j)] = 1.0 / t;
  } else if (t == 1) {
    for (int i = 0; i < l; ++i) w[static_cast<size_t>(i)] = 1.0;
  } else {
    for (int i = 0; i < l; ++i) {
      double src = static_cast<double>(i) * (t - 1) / (l - 1);
      int lo = static_cast<int>(src);
      if (lo >= t - 1) {
        w[static_cast<size_t>(i) * t + (t - 1)] = 1.0;
      } else {
        double frac = src - lo;
        w[static_cast<size_t>(i) * t + lo] = 1.0 - frac;
        if (frac != 0.0) w[static_cast<size_t>(i) * t + lo + 1] = frac;
      }
    }
  }
  return Tensor::from_data({l, t}, std::move(w), false);
}

Tensor length_transform(const Tensor& seq, int l) {
  if (seq.ndim() != 2) throw std::invalid_argument("length_transform: 2-D input expected");
  if (l == seq.rows()) return seq;  // exact identity
  return matmul(lt_matrix(seq.rows(), l), seq);
}

GaussianSeq gaussian_head(const Tensor& h, const GaussHeadParams& p, int t_z) {
  if (h.rows() < 1) throw std::invalid_argument("gaussian_head: empty input");
  GaussianSeq q;
  q.mean = length_transform(add(matmul(h, p.w_mu), p.b_mu), t_z);
  q.var = add_const(length_transform(softplus(add(matmul(h, p.w_sigma), p.b_sigma)), t_z),
                    kVarianceFloor);
  if (!all_finite(q.mean) || !all_finite(q.var))
    throw std::runtime_error("gaussian_head: non-finite activations");
  return q;
}

GaussianSeq fuse_gaussians(const GaussianSeq& q_x, const GaussianSeq& q_y, const SharingMask& mask,
                           KeepSide keep) {
  if (q_x.mean.shape() != q_y.mean.shape()) throw std::invalid_argument("fuse: shape mismatch");
  q_x.validate();
  q_y.validate();
  if (mask.d_z() != q_x.d_z()) throw std::invalid_argument("fuse: mask width mismatch");

  Tensor ones = Tensor::full(q_x.var.shape(), 1.0);
  Tensor px = div(ones, q_x.var);
  Tensor py = div(ones, q_y.var);
  Tensor fused_var = div(ones, add(px, py));
  Tensor fused_mean = mul(add(mul(q_x.mean, px), mul(q_y.mean, py)), fused_var);

  const GaussianSeq& kept = keep == KeepSide::X ? q_x : q_y;
  if (mask.shared_dims == mask.d_z()) return {fused_mean, fused_var};

  std::vector<double> m(mask.shared.begin(), mask.shared.end());
  std::vector<double> inv(m.size());
  for (size_t i = 0; i < m.size(); ++i) inv[i] = 1.0 - m[i];
  Tensor shared = Tensor::from_data({mask.d_z()}, std::move(m), false);
  Tensor own = Tensor::from_data({mask.d_z()}, std::move(inv), false);

  GaussianSeq out;
  out.mean = add(mul(fused_mean, shared), mul(kept.mean, own));
  out.var = add(mul(fused_var, shared), mul(kept.var, own));
  return out;
}

Tensor kl_gaussian(const GaussianSeq& q, const GaussianSeq& p) {
  if (q.mean.shape() != p.mean.shape()) throw std::invalid_argument("kl: shape mismatch");
  q.validate();
  p.validate();
  Tensor log_ratio = scale(log_t(div(p.var, q.var)), 0.5);
  Tensor quad = div(add(q.var, square(sub(q.mean, p.mean))), scale(p.var, 2.0));
  return add_const(add(log_ratio, quad), -0.5);
}

Tensor reparameterize(const GaussianSeq& q, const Tensor& noise) {
  if (noise.shape() != q.mean.shape()) throw std::invalid_argument("reparameterize: noise shape mismatch");
  return add(q.mean, mul(sqrt_t(q.var), noise));
}

SharingMask make_sharing_mask(int d_z, double rho) {
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("sharing mask: rho must be in [0,1]");
  SharingMask m;
  m.shared_dims = static_cast<int>(std::lround(d_z * rho));
  m.shared.assign(static_cast<size_t>(d_z), 0);
  for (int i = 0; i < m.shared_dims; ++i) m.shared[static_cast<size_t>(i)] = 1;
  return m;
}

}  // namespace laddernat
