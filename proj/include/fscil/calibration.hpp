#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/numerics.hpp"
#include "fscil/types.hpp"

namespace fscil {

/// Hyperparameters of similarity-weighted statistics calibration.
struct CalibrationConfig {
  double tau = 16.0;   // temperature of the cosine similarity
  double alpha = 0.9;  // weight kept on the few-shot prototype
  double beta = 1.0;   // covariance scaling

  void validate() const {
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau must be > 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha must lie in [0, 1]");
    if (!(beta > 0.0)) throw Error(ErrorCode::InvalidConfig, "beta must be > 0");
  }
};

/// tau * cos(mu_b, mu_n)
inline double similarity(const Vector& mu_b, const Vector& mu_n, double tau) {
  if (mu_b.size() != mu_n.size()) throw Error(ErrorCode::DimensionMismatch, "prototype lengths differ");
  const double nb = mu_b.norm();
  const double nn = mu_n.norm();
  if (!(nb > 0.0) || !(nn > 0.0)) throw Error(ErrorCode::ZeroNormPrototype, "prototype has zero norm");
  return tau * mu_b.dot(mu_n) / (nb * nn);
}

/// Softmax over base classes of the temperature-scaled cosine similarity.
inline Vector calibration_weights(std::span<const Vector> base_means, const Vector& mu_n, double tau) {
  if (base_means.empty()) throw Error(ErrorCode::NoBaseClasses, "no base prototypes to calibrate against");
  Vector s(static_cast<Eigen::Index>(base_means.size()));
  for (std::size_t b = 0; b < base_means.size(); ++b) {
    s(static_cast<Eigen::Index>(b)) = similarity(base_means[b], mu_n, tau);
  }
  return softmax(s);
}

namespace detail {
inline void check_weights(std::size_t count, const Vector& w) {
  if (static_cast<std::size_t>(w.size()) != count) {
    throw Error(ErrorCode::DimensionMismatch, "weight count does not match base class count");
  }
  if (count == 0) throw Error(ErrorCode::NoBaseClasses, "no base statistics");
  if (std::abs(w.sum() - 1.0) > 1e-9) throw Error(ErrorCode::WeightSumInvalid, "weights do not sum to 1");
}
}  // namespace detail

/// alpha * mu_n + (1 - alpha) * sum_b w_b * mu_b
inline Vector calibrate_prototype(const Vector& mu_n, std::span<const Vector> base_means, const Vector& w,
                                  double alpha) {
  detail::check_weights(base_means.size(), w);
  Vector mix = Vector::Zero(mu_n.size());
  for (std::size_t b = 0; b < base_means.size(); ++b) {
    if (base_means[b].size() != mu_n.size()) {
      throw Error(ErrorCode::DimensionMismatch, "base prototype length differs from new prototype");
    }
    mix += w(static_cast<Eigen::Index>(b)) * base_means[b];
  }
  return alpha * mu_n + (1.0 - alpha) * mix;
}

/// beta * (cov_n + sum_b w_b * cov_b). The base mixture is added to the
/// few-shot covariance, not blended with it.
inline Matrix calibrate_covariance(const Matrix& cov_n, std::span<const Matrix> base_covs, const Vector& w,
                                   double beta) {
  detail::check_weights(base_covs.size(), w);
  Matrix acc = cov_n;
  for (std::size_t b = 0; b < base_covs.size(); ++b) {
    if (base_covs[b].rows() != cov_n.rows() || base_covs[b].cols() != cov_n.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "base covariance shape differs from new covariance");
    }
    acc += w(static_cast<Eigen::Index>(b)) * base_covs[b];
  }
  return symmetrized(beta * acc);
}

/// Calibrates every new class against all base classes. Weights are computed
/// from the raw few-shot prototype and shared by the prototype and covariance
/// updates. Base statistics are read only.
inline std::vector<CalibratedStats> calibrate_all(std::span<const ClassStats> new_stats,
                                                  std::span<const ClassStats> base_stats,
                                                  const CalibrationConfig& cfg) {
  if (new_stats.empty()) return {};
  if (base_stats.empty()) throw Error(ErrorCode::NoBaseClasses, "no base statistics");
  cfg.validate();

  std::set<ClassId> base_ids;
  std::vector<Vector> base_means;
  std::vector<Matrix> base_covs;
  base_means.reserve(base_stats.size());
  base_covs.reserve(base_stats.size());
  for (const auto& b : base_stats) {
    base_ids.insert(b.class_id());
    base_means.push_back(b.mean());
    base_covs.push_back(b.cov());
  }

  std::vector<CalibratedStats> out;
  out.reserve(new_stats.size());
  for (const auto& n : new_stats) {
    if (base_ids.count(n.class_id()) != 0) {
      throw Error(ErrorCode::OverlappingClasses,
                  "class " + std::to_string(n.class_id()) + " is both base and new", {n.class_id()});
    }
    const Vector w = calibration_weights(base_means, n.mean(), cfg.tau);
    out.emplace_back(n.class_id(), calibrate_prototype(n.mean(), base_means, w, cfg.alpha),
                     calibrate_covariance(n.cov(), base_covs, w, cfg.beta));
  }
  return out;
}

}  // namespace fscil
