#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "fscil/calibration.hpp"
#include "fscil/classifier.hpp"
#include "fscil/rng.hpp"

namespace fscil {

enum class Activation { Relu };

/// Frozen random projection d -> D followed by an element-wise activation.
struct ProjectionState {
  Matrix weights;  // d x D
  Activation activation = Activation::Relu;

  Eigen::Index input_dim() const { return weights.rows(); }
  Eigen::Index output_dim() const { return weights.cols(); }
};

/// Standard-normal d x D weights, drawn in row-major order.
inline ProjectionState init_projection(Eigen::Index d, Eigen::Index proj_dim, Rng& rng) {
  if (d < 1 || proj_dim < 1) throw Error(ErrorCode::InvalidConfig, "projection dimensions must be >= 1");
  ProjectionState state;
  state.weights.resize(d, proj_dim);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < proj_dim; ++j) state.weights(i, j) = rng.normal();
  }
  return state;
}

/// H = max(0, F * W)
inline Matrix project(const Matrix& features, const ProjectionState& state) {
  if (features.cols() != state.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "feature dimension differs from projection input dimension");
  }
  return (features * state.weights).cwiseMax(0.0);
}

/// Running Gram matrix G = sum h h^T, per-class sums C and the ridge term.
struct GramState {
  Matrix gram;                      // D x D
  Matrix class_sums;                // D x Y
  std::vector<std::size_t> counts;  // per class
  double lambda = 1.0;

  GramState() = default;
  GramState(Eigen::Index proj_dim, std::size_t num_classes)
      : gram(Matrix::Zero(proj_dim, proj_dim)),
        class_sums(Matrix::Zero(proj_dim, static_cast<Eigen::Index>(num_classes))),
        counts(num_classes, 0) {}

  Eigen::Index proj_dim() const { return gram.rows(); }
  std::size_t num_classes() const { return counts.size(); }
};

inline void accumulate(GramState& state, const Matrix& h, std::span<const ClassId> labels) {
  if (static_cast<std::size_t>(h.rows()) != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "label count does not match projected row count");
  }
  if (h.rows() == 0) return;
  if (h.cols() != state.proj_dim()) throw Error(ErrorCode::DimensionMismatch, "projected dimension mismatch");
  for (ClassId y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= state.num_classes()) {
      throw Error(ErrorCode::UnknownLabel, "label " + std::to_string(y) + " has no column", {y});
    }
  }
  state.gram.selfadjointView<Eigen::Lower>().rankUpdate(h.transpose());
  for (Eigen::Index j = 1; j < state.gram.cols(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) state.gram(i, j) = state.gram(j, i);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    state.class_sums.col(labels[i]) += h.row(static_cast<Eigen::Index>(i)).transpose();
    ++state.counts[static_cast<std::size_t>(labels[i])];
  }
}

/// (G + lambda I)^-1 C, D x Y.
inline Matrix ridge_readout(const GramState& state) {
  Matrix system = state.gram;
  system.diagonal().array() += state.lambda;
  Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "G + lambda I is not positive definite");
  return llt.solve(state.class_sums);
}

/// h^T (G + lambda I)^-1 C for a single projected feature.
inline Vector ridge_scores(const Vector& h, const GramState& state) {
  if (h.size() != state.proj_dim()) throw Error(ErrorCode::DimensionMismatch, "projected dimension mismatch");
  return ridge_readout(state).transpose() * h;
}

/// Highest score among `candidates` (ascending ids), ties to the lowest id.
inline ClassId ridge_argmax(const Vector& scores, std::span<const ClassId> candidates) {
  if (candidates.empty()) throw Error(ErrorCode::NoClassesSeen, "no candidate classes");
  ClassId arg = candidates.front();
  double best = -std::numeric_limits<double>::infinity();
  for (ClassId c : candidates) {
    const double v = scores(c);
    if (v > best) {
      best = v;
      arg = c;
    }
  }
  return arg;
}

/// 17 powers of ten from 1e-8 to 1e8.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int e = -8; e <= 8; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

struct HoldoutSplit {
  std::vector<std::size_t> fit_rows;
  std::vector<std::size_t> holdout_rows;
};

/// Seeded Fisher-Yates permutation; the leading floor(0.8 n) rows fit, the
/// rest are held out. Both parts are non-empty when n >= 2.
inline HoldoutSplit holdout_split(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::size_t n_fit = (n * 4) / 5;
  if (n >= 2) n_fit = std::clamp<std::size_t>(n_fit, 1, n - 1);
  HoldoutSplit split;
  split.fit_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_fit));
  split.holdout_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_fit), perm.end());
  return split;
}

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> mse;  // one per candidate
  HoldoutSplit split;
  std::vector<ClassId> classes;  // one-hot column order
};

/// Picks the ridge term by holdout MSE between raw scores and one-hot labels.
/// The 80% Gram matrix is eigendecomposed once and reused for every
/// candidate. Ties go to the earlier candidate.
inline LambdaSelection select_lambda(const Matrix& h, std::span<const ClassId> labels,
                                     std::span<const double> candidates, Rng& rng) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "no lambda candidates");
  if (static_cast<std::size_t>(h.rows()) != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "label count does not match projected row count");
  }
  LambdaSelection sel;
  if (candidates.size() == 1) {
    sel.lambda = candidates.front();
    sel.mse.assign(1, std::numeric_limits<double>::quiet_NaN());
    return sel;
  }
  if (labels.size() < 2) throw Error(ErrorCode::InsufficientSamples, "lambda selection needs at least two rows");

  sel.classes.assign(labels.begin(), labels.end());
  std::sort(sel.classes.begin(), sel.classes.end());
  sel.classes.erase(std::unique(sel.classes.begin(), sel.classes.end()), sel.classes.end());
  auto column_of = [&](ClassId y) {
    return static_cast<Eigen::Index>(std::lower_bound(sel.classes.begin(), sel.classes.end(), y) -
                                     sel.classes.begin());
  };
  const Eigen::Index k = static_cast<Eigen::Index>(sel.classes.size());

  sel.split = holdout_split(labels.size(), rng);
  const auto& fit = sel.split.fit_rows;
  const auto& hold = sel.split.holdout_rows;

  Matrix sums = Matrix::Zero(h.cols(), k);
  Matrix hf(static_cast<Eigen::Index>(fit.size()), h.cols());
  for (std::size_t i = 0; i < fit.size(); ++i) {
    hf.row(static_cast<Eigen::Index>(i)) = h.row(static_cast<Eigen::Index>(fit[i]));
    sums.col(column_of(labels[fit[i]])) += h.row(static_cast<Eigen::Index>(fit[i])).transpose();
  }
  Matrix hh(static_cast<Eigen::Index>(hold.size()), h.cols());
  Matrix target = Matrix::Zero(static_cast<Eigen::Index>(hold.size()), k);
  for (std::size_t i = 0; i < hold.size(); ++i) {
    hh.row(static_cast<Eigen::Index>(i)) = h.row(static_cast<Eigen::Index>(hold[i]));
    target(static_cast<Eigen::Index>(i), column_of(labels[hold[i]])) = 1.0;
  }

  const Matrix gram = hf.transpose() * hf;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Vector spectrum = eig.eigenvalues().cwiseMax(0.0);
  const Matrix rotated_sums = eig.eigenvectors().transpose() * sums;
  const Matrix rotated_hold = hh * eig.eigenvectors();

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Vector inv = (spectrum.array() + candidates[c]).inverse().matrix();
    const Matrix scores = rotated_hold * inv.asDiagonal() * rotated_sums;
    double mse = (scores - target).squaredNorm() / static_cast<double>(target.size());
    if (!std::isfinite(mse)) mse = std::numeric_limits<double>::infinity();
    sel.mse.push_back(mse);
    if (mse < best) {
      best = mse;
      sel.lambda = candidates[c];
    }
  }
  if (!std::isfinite(best)) throw Error(ErrorCode::SingularSystem, "every lambda candidate is singular");
  return sel;
}

struct RanpacConfig {
  Eigen::Index proj_dim = 10000;
  std::vector<double> lambda_grid = default_lambda_grid();
  std::uint64_t seed = 0;
};

/// Random-projection ridge classifier. W and lambda are fixed by fit_base.
class RanpacClassifier : public IncrementalClassifier {
 public:
  RanpacClassifier(std::size_t num_classes, RanpacConfig cfg) : cfg_(std::move(cfg)), num_classes_(num_classes) {
    if (cfg_.proj_dim < 1) throw Error(ErrorCode::InvalidConfig, "proj_dim must be >= 1");
    if (cfg_.lambda_grid.empty()) throw Error(ErrorCode::EmptyCandidates, "no lambda candidates");
  }

  std::string_view name() const override { return "ranpac"; }

  void fit_base(const Matrix& features, std::span<const ClassId> labels) override {
    begin_base();
    const auto ids = keys_of(group_by_class(features, labels));
    check_ids(ids);
    Rng root(cfg_.seed);
    Rng proj_rng = root.split(kProjectionStream);
    projection_ = init_projection(features.cols(), cfg_.proj_dim, proj_rng);
    const Matrix h = project(features, projection_);
    Rng split_rng = root.split(kLambdaStream);
    selection_ = select_lambda(h, labels, cfg_.lambda_grid, split_rng);
    gram_ = GramState(cfg_.proj_dim, num_classes_);
    gram_.lambda = selection_.lambda;
    accumulate(gram_, h, labels);
    on_base_fitted(features, labels);
    register_classes(ids);
    refresh_readout();
    mark_base_fitted();
  }

  void fit_increment(const Matrix& features, std::span<const ClassId> labels) override {
    begin_increment();
    const auto groups = group_by_class(features, labels);
    const auto ids = keys_of(groups);
    check_ids(ids);
    for (ClassId id : ids) {
      if (std::binary_search(seen_classes().begin(), seen_classes().end(), id)) {
        throw Error(ErrorCode::ClassAlreadySeen, "class " + std::to_string(id) + " was already fitted", {id});
      }
    }
    accumulate_increment(groups, features, labels);
    register_classes(ids);
    refresh_readout();
  }

  std::vector<ClassId> predict(const Matrix& batch) const override {
    require_seen();
    const Matrix scores = project(batch, projection_) * readout_;
    std::vector<ClassId> out(static_cast<std::size_t>(batch.rows()));
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = ridge_argmax(scores.row(i).transpose(), seen_classes());
    }
    return out;
  }

  const ProjectionState& projection() const { return projection_; }
  const GramState& gram() const { return gram_; }
  const LambdaSelection& lambda_selection() const { return selection_; }
  const RanpacConfig& config() const { return cfg_; }

 protected:
  static constexpr std::uint64_t kProjectionStream = 1;
  static constexpr std::uint64_t kLambdaStream = 2;
  static constexpr std::uint64_t kSamplingStream = 3;

  virtual void on_base_fitted(const Matrix&, std::span<const ClassId>) {}

  /// Real few-shot features go straight into G and C.
  virtual void accumulate_increment(const std::map<ClassId, Matrix>&, const Matrix& features,
                                    std::span<const ClassId> labels) {
    accumulate(gram_, project(features, projection_), labels);
  }

  void accumulate_projected(const Matrix& features, std::span<const ClassId> labels) {
    accumulate(gram_, project(features, projection_), labels);
  }

  void check_ids(const std::vector<ClassId>& ids) const {
    for (ClassId id : ids) {
      if (static_cast<std::size_t>(id) >= num_classes_) {
        throw Error(ErrorCode::UnknownLabel, "label " + std::to_string(id) + " exceeds class capacity", {id});
      }
    }
  }

 private:
  void refresh_readout() { readout_ = ridge_readout(gram_); }

  RanpacConfig cfg_;
  std::size_t num_classes_;
  ProjectionState projection_;
  GramState gram_;
  LambdaSelection selection_;
  Matrix readout_;
};

struct CalibratedRanpacConfig {
  RanpacConfig ranpac;
  CalibrationConfig calibration{16.0, 0.9, 0.5};
  std::size_t sample_count = 800;
  bool include_real_features = false;
};

/// RanPAC whose few-shot classes enter G and C through samples drawn from
/// their calibrated Gaussians in the original feature space.
class CalibratedRanpacClassifier : public RanpacClassifier {
 public:
  CalibratedRanpacClassifier(std::size_t num_classes, CalibratedRanpacConfig cfg)
      : RanpacClassifier(num_classes, cfg.ranpac), ccfg_(std::move(cfg)) {
    ccfg_.calibration.validate();
  }

  std::string_view name() const override { return "cranpac"; }

  const std::vector<ClassStats>& base_stats() const { return base_stats_; }
  const CalibratedRanpacConfig& calibrated_config() const { return ccfg_; }

  /// Seeded stream used for one class's samples, independent of fit order.
  Rng sampling_rng(ClassId id) const {
    return Rng(config().seed).split(kSamplingStream).split(static_cast<std::uint64_t>(id));
  }

 protected:
  void on_base_fitted(const Matrix& features, std::span<const ClassId> labels) override {
    base_stats_ = stats_per_class(group_by_class(features, labels));
  }

  void accumulate_increment(const std::map<ClassId, Matrix>& groups, const Matrix& features,
                            std::span<const ClassId> labels) override {
    if (base_stats_.empty()) throw Error(ErrorCode::BaseNotFitted, "no base classes to calibrate against");
    if (ccfg_.include_real_features) accumulate_projected(features, labels);
    if (ccfg_.sample_count == 0) return;
    const auto calibrated = calibrate_all(stats_per_class(groups), base_stats_, ccfg_.calibration);
    for (const auto& c : calibrated) {
      Rng rng = sampling_rng(c.class_id());
      const Matrix samples = sample_gaussian(c.mean_hat(), c.cov_hat(), ccfg_.sample_count, rng);
      const std::vector<ClassId> sample_labels(ccfg_.sample_count, c.class_id());
      accumulate_projected(samples, sample_labels);
    }
  }

 private:
  CalibratedRanpacConfig ccfg_;
  std::vector<ClassStats> base_stats_;
};

}  // namespace fscil
