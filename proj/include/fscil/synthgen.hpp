#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "fscil/error.hpp"
#include "fscil/numerics.hpp"
#include "fscil/rng.hpp"
#include "fscil/types.hpp"

namespace fscil {

/// Synthetic embedding world whose covariance similarity tracks prototype
/// similarity.
///
/// Prototypes cluster around `num_anchors` random unit directions (offset by
/// Gaussian noise of norm ~ cluster_spread) and are scaled to `radius`. Every
/// covariance is a random rotation of the same spectrum: geometric from 1 to
/// `anisotropy`, rescaled to mean eigenvalue `cov_scale`. A class covariance is
///   (1 - cov_coupling) * own + cov_coupling * sum_k w_k * anchor_k,
/// with w = softmax(mixture_temperature * cos(prototype, anchor direction)).
struct SynthConfig {
  std::size_t num_classes = 30;
  std::size_t dim = 32;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 100;
  double anisotropy = 20.0;
  double cov_coupling = 0.8;
  std::size_t num_anchors = 5;
  double cluster_spread = 0.6;
  double radius = 0.0;  // 0: 10 * sqrt(dim)
  double cov_scale = 100.0;
  double mixture_temperature = 10.0;
  std::uint64_t seed = 0;

  double effective_radius() const { return radius > 0.0 ? radius : 10.0 * std::sqrt(static_cast<double>(dim)); }

  void validate() const {
    auto bad = [](const char* what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (num_classes < 1) bad("num_classes must be >= 1");
    if (dim < 1) bad("dim must be >= 1");
    if (train_per_class < 1) bad("train_per_class must be >= 1");
    if (!(anisotropy >= 1.0)) bad("anisotropy must be >= 1");
    if (!(cov_coupling >= 0.0 && cov_coupling <= 1.0)) bad("cov_coupling must lie in [0, 1]");
    if (num_anchors < 1) bad("num_anchors must be >= 1");
    if (!(cluster_spread >= 0.0)) bad("cluster_spread must be >= 0");
    if (!(radius >= 0.0) || !std::isfinite(radius)) bad("radius must be >= 0");
    if (!(cov_scale > 0.0) || !std::isfinite(cov_scale)) bad("cov_scale must be > 0");
    if (!(mixture_temperature >= 0.0)) bad("mixture_temperature must be >= 0");
  }
};

struct SynthWorld {
  FeatureStore train;
  FeatureStore test;
  std::vector<Vector> true_means;
  std::vector<Matrix> true_covs;
};

namespace detail {

inline Matrix random_rotation(Eigen::Index d, Rng& rng) {
  Matrix g(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

inline Vector spectrum(const SynthConfig& cfg) {
  const Eigen::Index d = static_cast<Eigen::Index>(cfg.dim);
  Vector ev(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double t = d == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(d - 1);
    ev(i) = std::pow(cfg.anisotropy, t);
  }
  return ev * (cfg.cov_scale / ev.mean());
}

inline Matrix random_covariance(const Vector& ev, Rng& rng) {
  const Matrix q = random_rotation(ev.size(), rng);
  return symmetrized(q * ev.asDiagonal() * q.transpose());
}

inline Vector unit_gaussian(Eigen::Index d, Rng& rng) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
  const double n = v.norm();
  return n > 0.0 ? Vector(v / n) : Vector(Vector::Unit(d, 0));
}

inline void fill_rows(Matrix& out, Eigen::Index first, const Vector& mean, const Matrix& lower, std::size_t n,
                      Rng& rng) {
  const Eigen::Index d = mean.size();
  Vector z(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
    const Vector x = mean + lower * z;
    for (Eigen::Index j = 0; j < d; ++j) {
      out(first + static_cast<Eigen::Index>(r), j) = static_cast<double>(static_cast<float>(x(j)));
    }
  }
}

}  // namespace detail

/// Streams: one for anchor directions and anchor covariances, one child per
/// class for (anchor pick, prototype, own covariance), one child per class for
/// its train then test samples.
/// Values are rounded to float so a written store reads back identically.
inline SynthWorld generate(const SynthConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = static_cast<Eigen::Index>(cfg.dim);
  const double r = cfg.effective_radius();
  const Vector ev = detail::spectrum(cfg);
  const Rng root(cfg.seed);

  Rng anchor_rng = root.split(1);
  std::vector<Vector> anchors;
  std::vector<Matrix> anchor_covs;
  for (std::size_t k = 0; k < cfg.num_anchors; ++k) anchors.push_back(detail::unit_gaussian(d, anchor_rng));
  for (std::size_t k = 0; k < cfg.num_anchors; ++k) anchor_covs.push_back(detail::random_covariance(ev, anchor_rng));

  SynthWorld world;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    Rng rng = root.split(2).split(c);
    const Vector& a = anchors[rng.below(cfg.num_anchors)];
    Vector noise(d);
    for (Eigen::Index j = 0; j < d; ++j) noise(j) = rng.normal();
    Vector dir = a + noise * (cfg.cluster_spread / std::sqrt(static_cast<double>(d)));
    if (dir.norm() == 0.0) dir = a;
    const Vector mean = dir.normalized() * r;
    const Matrix own = detail::random_covariance(ev, rng);

    Vector s(static_cast<Eigen::Index>(cfg.num_anchors));
    for (std::size_t k = 0; k < cfg.num_anchors; ++k) {
      s(static_cast<Eigen::Index>(k)) = cfg.mixture_temperature * anchors[k].dot(mean) / r;
    }
    const Vector w = softmax(s);
    Matrix mix = Matrix::Zero(d, d);
    for (std::size_t k = 0; k < cfg.num_anchors; ++k) mix += w(static_cast<Eigen::Index>(k)) * anchor_covs[k];

    world.true_means.push_back(mean);
    world.true_covs.push_back(symmetrized((1.0 - cfg.cov_coupling) * own + cfg.cov_coupling * mix));
  }

  const std::size_t n_train = cfg.num_classes * cfg.train_per_class;
  const std::size_t n_test = cfg.num_classes * cfg.test_per_class;
  world.train.features.resize(static_cast<Eigen::Index>(n_train), d);
  world.test.features.resize(static_cast<Eigen::Index>(n_test), d);
  world.train.num_classes = world.test.num_classes = cfg.num_classes;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    Rng rng = root.split(3).split(c);
    const Matrix lower = sampling_factor(world.true_covs[c]);
    detail::fill_rows(world.train.features, static_cast<Eigen::Index>(c * cfg.train_per_class), world.true_means[c],
                      lower, cfg.train_per_class, rng);
    detail::fill_rows(world.test.features, static_cast<Eigen::Index>(c * cfg.test_per_class), world.true_means[c],
                      lower, cfg.test_per_class, rng);
    world.train.labels.insert(world.train.labels.end(), cfg.train_per_class, static_cast<ClassId>(c));
    world.test.labels.insert(world.test.labels.end(), cfg.test_per_class, static_cast<ClassId>(c));
  }
  return world;
}

/// Cosine similarity of the flattened matrices (Frobenius inner product).
inline double covariance_similarity(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::DimensionMismatch, "shapes differ");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroMatrix, "covariance similarity of a zero matrix");
  return a.cwiseProduct(b).sum() / (na * nb);
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::DimensionMismatch, "pearson needs paired samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Pairwise prototype cosine and covariance similarity over all class pairs,
/// measured on the store's own samples.
struct SimilarityStructure {
  std::vector<double> prototype_cosine;
  std::vector<double> covariance_cosine;
  double correlation = 0.0;
};

inline SimilarityStructure similarity_structure(const FeatureStore& store) {
  std::vector<std::vector<Eigen::Index>> rows(store.num_classes);
  for (std::size_t i = 0; i < store.labels.size(); ++i) {
    rows[static_cast<std::size_t>(store.labels[i])].push_back(static_cast<Eigen::Index>(i));
  }
  std::vector<ClassStats> stats;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    if (!rows[c].empty()) stats.push_back(estimate_stats(store.features(rows[c], Eigen::all), c));
  }
  SimilarityStructure s;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    for (std::size_t j = i + 1; j < stats.size(); ++j) {
      const Vector& a = stats[i].mean();
      const Vector& b = stats[j].mean();
      s.prototype_cosine.push_back(a.dot(b) / (a.norm() * b.norm()));
      s.covariance_cosine.push_back(covariance_similarity(stats[i].cov(), stats[j].cov()));
    }
  }
  s.correlation = pearson(s.prototype_cosine, s.covariance_cosine);
  return s;
}

}  // namespace fscil
