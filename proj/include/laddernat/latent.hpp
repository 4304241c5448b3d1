#pragma once

// Closed-form latent math: Gaussian heads, length transformation,
// precision-weighted fusion, analytic KL, reparameterization, and partial
// sharing masks. Everything here is differentiable through the tensor graph.

#include <cstdint>
#include <vector>

#include "laddernat/checkpoint.hpp"
#include "laddernat/tensor.hpp"

namespace laddernat {

// Variance floor added after the softplus head; keeps fusion precisions finite.
inline constexpr double kVarianceFloor = 1e-8;

// Per-position diagonal Gaussians over a latent sequence: mean and variance
// are [T_z, D_z] tensors with all variances strictly positive.
struct GaussianSeq {
  Tensor mean;
  Tensor var;

  int t_z() const { return mean.rows(); }
  int d_z() const { return mean.cols(); }
  void validate() const;
};

enum class KeepSide { X, Y };

struct SharingMask {
  int shared_dims = 0;
  std::vector<std::uint8_t> shared;  // length D_z, true = fused dimension

  int d_z() const { return static_cast<int>(shared.size()); }
};

struct GaussHeadParams {
  Tensor w_mu, b_mu, w_sigma, b_sigma;  // D_h -> D_z linears
};

GaussHeadParams make_gauss_head(ParamStore& store, const std::string& prefix, int d_h, int d_z,
                                std::mt19937_64& rng);

// Linear-interpolation resampling matrix [l, T]: output i reads continuous
// source coordinate i*(T-1)/(l-1); l == T is the exact identity and l == 1
// averages over all positions.
Tensor lt_matrix(int t, int l);
Tensor length_transform(const Tensor& seq, int l);

// mu = LT(linear_mu(H), T_z); var = LT(softplus(linear_sigma(H)), T_z) + floor.
GaussianSeq gaussian_head(const Tensor& h, const GaussHeadParams& p, int t_z);

// Precision-weighted fusion on shared dimensions; non-shared dimensions copy
// the keep-side component unchanged.
GaussianSeq fuse_gaussians(const GaussianSeq& q_x, const GaussianSeq& q_y, const SharingMask& mask,
                           KeepSide keep);

// Element-wise KL(q || p) for diagonal Gaussians, [T_z, D_z].
Tensor kl_gaussian(const GaussianSeq& q, const GaussianSeq& p);

// Z = mu + sqrt(var) * noise; noise is a constant (no gradient).
Tensor reparameterize(const GaussianSeq& q, const Tensor& noise);

// First round(D_z * rho) dimensions are shared; deterministic by design.
SharingMask make_sharing_mask(int d_z, double rho);

}  // namespace laddernat
