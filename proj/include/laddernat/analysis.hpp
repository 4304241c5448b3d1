#pragma once

// Latent-space diagnostics: CCA alignment between the two languages' prior
// latents, the relative-sensitivity probe for one-sided posterior collapse,
// and PCA projection plus a k-NN language-purity score. All operations are
// read-only with respect to the bundle.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "laddernat/data.hpp"
#include "laddernat/model.hpp"

namespace laddernat {

enum class LatentSide { SourceLanguage, TargetLanguage };

struct LatentMatrix {
  LatentSide side = LatentSide::SourceLanguage;
  Eigen::MatrixXd rows;  // one flattened prior mean (T_z*D_z) per sentence
};

// Prior means via the side's own encoder head, without seeing the paired
// sentence; row i of both sides comes from the same pair.
LatentMatrix collect_latents(const ModelBundle& b, const Corpus& corpus, LatentSide side);

struct CcaModel {
  Eigen::MatrixXd wx, wy;          // per-side projections to k canonical dims
  Eigen::VectorXd mean_x, mean_y;  // per-side training means
  Eigen::MatrixXd regression;      // target-side -> source-side canonical map
  Eigen::VectorXd correlations;    // non-increasing, in [0,1]
};

// Linear CCA via whitened cross-covariance SVD with ridge 1e-6 on the
// covariance diagonals.
CcaModel cca_fit(const LatentMatrix& z_src, const LatentMatrix& z_tgt, int k);

// R^2 of predicting held-out source-side canonical coordinates from the
// target side; 1 is perfect, 0 matches predicting the mean, negative is
// worse than that.
double cca_score(const CcaModel& model, const LatentMatrix& z_src, const LatentMatrix& z_tgt);

struct SensitivityResult {
  double source_sensitivity = 0.0;  // mean posterior-mean displacement, source perturbed
  double target_sensitivity = 0.0;
  double ratio = 0.0;               // source / target
};

// Perturbs `words_changed` random positions on one side at a time and
// measures the Euclidean displacement of the posterior mean.
SensitivityResult relative_sensitivity(const ModelBundle& b, const std::vector<ParallelPair>& pairs,
                                       int words_changed, int trials, std::uint64_t seed);

struct PcaResult {
  Eigen::MatrixXd coords;            // (n_src + n_tgt) x dims
  std::vector<int> language_labels;  // 0 = source side, 1 = target side
  Eigen::VectorXd explained_ratio;   // non-increasing
};

PcaResult pca_project(const LatentMatrix& z_src, const LatentMatrix& z_tgt, int dims = 2);

// Mean fraction of the k nearest latents sharing a row's language; about 0.5
// means the two languages are mixed in the latent space.
double knn_language_purity(const LatentMatrix& z_src, const LatentMatrix& z_tgt, int k = 5);

}  // namespace laddernat
