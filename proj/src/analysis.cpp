#include "laddernat/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "laddernat/rng.hpp"

namespace laddernat {

namespace {

constexpr double kRidge = 1e-6;

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::runtime_error("cca: eigendecomposition failed");
  Eigen::VectorXd vals = es.eigenvalues();
  for (int i = 0; i < vals.size(); ++i) {
    if (vals[i] < 1e-12) throw std::runtime_error("cca: rank deficiency beyond ridge repair");
    vals[i] = 1.0 / std::sqrt(vals[i]);
  }
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::VectorXd flatten_prior_mean(const ModelBundle& b, const TokenSeq& tokens, Direction dir) {
  GaussianSeq q = prior(tokens, b, dir, FwdCtx::eval()).q;
  Eigen::VectorXd v(q.mean.numel());
  for (int i = 0; i < q.mean.numel(); ++i) v[i] = q.mean.data()[i];
  return v;
}

}  // namespace

LatentMatrix collect_latents(const ModelBundle& b, const Corpus& corpus, LatentSide side) {
  if (corpus.pairs.empty()) throw std::invalid_argument("collect_latents: empty corpus");
  LatentMatrix m;
  m.side = side;
  const Direction dir = side == LatentSide::SourceLanguage ? Direction::Forward : Direction::Reverse;
  const int width = b.latent.t_z * b.latent.d_z;
  m.rows.resize(static_cast<long>(corpus.pairs.size()), width);
  for (size_t i = 0; i < corpus.pairs.size(); ++i) {
    const TokenSeq& tokens = side == LatentSide::SourceLanguage ? corpus.pairs[i].source
                                                                : corpus.pairs[i].target;
    m.rows.row(static_cast<long>(i)) = flatten_prior_mean(b, tokens, dir).transpose();
  }
  return m;
}

CcaModel cca_fit(const LatentMatrix& z_src, const LatentMatrix& z_tgt, int k) {
  const long n = z_src.rows.rows();
  if (z_tgt.rows.rows() != n) throw std::invalid_argument("cca_fit: unaligned matrices");
  if (n < 2) throw std::invalid_argument("cca_fit: need at least 2 rows");
  const long p = z_src.rows.cols(), q = z_tgt.rows.cols();
  if (k < 1 || k > std::min<long>(n - 1, std::min(p, q)))
    throw std::invalid_argument("cca_fit: invalid k");

  CcaModel model;
  model.mean_x = z_src.rows.colwise().mean();
  model.mean_y = z_tgt.rows.colwise().mean();
  Eigen::MatrixXd xc = z_src.rows.rowwise() - model.mean_x.transpose();
  Eigen::MatrixXd yc = z_tgt.rows.rowwise() - model.mean_y.transpose();

  const double inv_n = 1.0 / static_cast<double>(n - 1);
  Eigen::MatrixXd sxx = xc.transpose() * xc * inv_n + kRidge * Eigen::MatrixXd::Identity(p, p);
  Eigen::MatrixXd syy = yc.transpose() * yc * inv_n + kRidge * Eigen::MatrixXd::Identity(q, q);
  Eigen::MatrixXd sxy = xc.transpose() * yc * inv_n;

  Eigen::MatrixXd sxx_is = inverse_sqrt(sxx);
  Eigen::MatrixXd syy_is = inverse_sqrt(syy);
  Eigen::MatrixXd m = sxx_is * sxy * syy_is;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);

  model.wx = sxx_is * svd.matrixU().leftCols(k);
  model.wy = syy_is * svd.matrixV().leftCols(k);
  model.correlations = svd.singularValues().head(k).cwiseMin(1.0).cwiseMax(0.0);

  // Least-squares map from target-side to source-side canonical coordinates,
  // fit on the training coordinates.
  Eigen::MatrixXd u = xc * model.wx;
  Eigen::MatrixXd v = yc * model.wy;
  Eigen::MatrixXd vtv = v.transpose() * v + kRidge * Eigen::MatrixXd::Identity(k, k);
  model.regression = vtv.ldlt().solve(v.transpose() * u);
  return model;
}

double cca_score(const CcaModel& model, const LatentMatrix& z_src, const LatentMatrix& z_tgt) {
  if (z_src.rows.rows() != z_tgt.rows.rows()) throw std::invalid_argument("cca_score: unaligned matrices");
  if (z_src.rows.cols() != model.wx.rows() || z_tgt.rows.cols() != model.wy.rows())
    throw std::invalid_argument("cca_score: width mismatch with model");
  Eigen::MatrixXd u = (z_src.rows.rowwise() - model.mean_x.transpose()) * model.wx;
  Eigen::MatrixXd v = (z_tgt.rows.rowwise() - model.mean_y.transpose()) * model.wy;
  Eigen::MatrixXd predicted = v * model.regression;
  Eigen::RowVectorXd u_mean = u.colwise().mean();
  double residual = (u - predicted).squaredNorm();
  double variance = (u.rowwise() - u_mean).squaredNorm();
  if (variance == 0.0) throw std::runtime_error("cca_score: degenerate held-out matrix");
  return 1.0 - residual / variance;
}

namespace {

GaussianSeq probe_posterior(const ModelBundle& b, const TokenSeq& x, const TokenSeq& y) {
  if (b.kind == ModelKind::LaNMT) return posterior_lanmt(x, y, b, Direction::Forward, FwdCtx::eval());
  return posterior_ladder(x, y, b, KeepSide::Y, FwdCtx::eval());
}

Eigen::VectorXd mean_vec(const GaussianSeq& q) {
  Eigen::VectorXd v(q.mean.numel());
  for (int i = 0; i < q.mean.numel(); ++i) v[i] = q.mean.data()[i];
  return v;
}

}  // namespace

SensitivityResult relative_sensitivity(const ModelBundle& b, const std::vector<ParallelPair>& pairs,
                                       int words_changed, int trials, std::uint64_t seed) {
  if (b.kind == ModelKind::AT) throw std::invalid_argument("relative_sensitivity: latent bundle required");
  if (pairs.empty()) throw std::invalid_argument("relative_sensitivity: no pairs");
  if (words_changed < 1) throw std::invalid_argument("relative_sensitivity: words_changed must be >= 1");
  for (const auto& p : pairs)
    if (static_cast<int>(p.source.size()) < words_changed ||
        static_cast<int>(p.target.size()) < words_changed)
      throw std::invalid_argument("relative_sensitivity: sentence shorter than words_changed");

  auto rng = make_rng(seed, "sensitivity");
  std::uniform_int_distribution<int> tok(kFirstContentId, b.vocab - 1);

  auto perturb = [&](const TokenSeq& s) {
    TokenSeq out = s;
    // `words_changed` distinct positions; the replacement may coincide with
    // the original token and then contributes zero distance.
    std::vector<int> positions(s.size());
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    for (int i = 0; i < words_changed; ++i) out[static_cast<size_t>(positions[static_cast<size_t>(i)])] = tok(rng);
    return out;
  };

  double src_sum = 0.0, tgt_sum = 0.0;
  long count = 0;
  for (const auto& p : pairs) {
    Eigen::VectorXd base = mean_vec(probe_posterior(b, p.source, p.target));
    for (int t = 0; t < trials; ++t) {
      src_sum += (mean_vec(probe_posterior(b, perturb(p.source), p.target)) - base).norm();
      tgt_sum += (mean_vec(probe_posterior(b, p.source, perturb(p.target))) - base).norm();
      ++count;
    }
  }
  SensitivityResult r;
  r.source_sensitivity = src_sum / static_cast<double>(count);
  r.target_sensitivity = tgt_sum / static_cast<double>(count);
  r.ratio = r.source_sensitivity / r.target_sensitivity;
  return r;
}

PcaResult pca_project(const LatentMatrix& z_src, const LatentMatrix& z_tgt, int dims) {
  const long n = z_src.rows.rows() + z_tgt.rows.rows();
  const long w = z_src.rows.cols();
  if (z_tgt.rows.cols() != w) throw std::invalid_argument("pca: width mismatch");
  if (n < 3) throw std::invalid_argument("pca: need at least 3 rows");
  if (dims < 1 || dims > w) throw std::invalid_argument("pca: invalid dims");

  Eigen::MatrixXd all(n, w);
  all.topRows(z_src.rows.rows()) = z_src.rows;
  all.bottomRows(z_tgt.rows.rows()) = z_tgt.rows;
  Eigen::RowVectorXd mean = all.colwise().mean();
  Eigen::MatrixXd centered = all.rowwise() - mean;
  if (centered.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("pca: degenerate covariance (all rows identical)");

  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("pca: eigendecomposition failed");

  // Eigen returns ascending eigenvalues; take the top `dims` in descending order.
  PcaResult res;
  Eigen::MatrixXd basis(w, dims);
  Eigen::VectorXd ev(dims);
  for (int i = 0; i < dims; ++i) {
    basis.col(i) = es.eigenvectors().col(w - 1 - i);
    ev[i] = std::max(0.0, es.eigenvalues()[w - 1 - i]);
  }
  res.coords = centered * basis;
  res.explained_ratio = ev / std::max(es.eigenvalues().cwiseMax(0.0).sum(), 1e-300);
  res.language_labels.assign(static_cast<size_t>(z_src.rows.rows()), 0);
  res.language_labels.insert(res.language_labels.end(), static_cast<size_t>(z_tgt.rows.rows()), 1);
  return res;
}

double knn_language_purity(const LatentMatrix& z_src, const LatentMatrix& z_tgt, int k) {
  const long n_src = z_src.rows.rows(), n_tgt = z_tgt.rows.rows();
  const long n = n_src + n_tgt;
  if (k < 1 || n < k + 1) throw std::invalid_argument("purity: not enough rows for k neighbors");
  Eigen::MatrixXd all(n, z_src.rows.cols());
  all.topRows(n_src) = z_src.rows;
  all.bottomRows(n_tgt) = z_tgt.rows;

  double purity_sum = 0.0;
  std::vector<std::pair<double, long>> dist(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j)
      dist[static_cast<size_t>(j)] = {(all.row(i) - all.row(j)).squaredNorm(), j};
    dist[static_cast<size_t>(i)].first = std::numeric_limits<double>::infinity();  // exclude self
    std::nth_element(dist.begin(), dist.begin() + k, dist.end());
    int same = 0;
    for (int m = 0; m < k; ++m) {
      bool row_is_src = i < n_src;
      bool nbr_is_src = dist[static_cast<size_t>(m)].second < n_src;
      if (row_is_src == nbr_is_src) ++same;
    }
    purity_sum += static_cast<double>(same) / k;
  }
  return purity_sum / static_cast<double>(n);
}

}  // namespace laddernat
