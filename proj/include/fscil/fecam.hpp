#pragma once

#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "fscil/calibration.hpp"
#include "fscil/classifier.hpp"

namespace fscil {

struct FecamEntry {
  ClassId class_id;
  Vector mean;       // calibrated prototype for few-shot classes
  Matrix precision;  // (N(cov + gamma I))^-1
};

struct FecamState {
  double gamma = 100.0;
  std::vector<FecamEntry> entries;  // ascending class id
};

/// Shrink, correlation-normalize, invert. In that order.
inline Matrix fecam_precision(const Matrix& cov, double gamma) {
  return invert_spd(correlation_normalize(shrink(cov, gamma)));
}

template <typename Derived>
std::vector<double> mahalanobis_distances(const FecamState& state, const Eigen::MatrixBase<Derived>& x) {
  std::vector<double> out;
  out.reserve(state.entries.size());
  for (const auto& e : state.entries) out.push_back(mahalanobis_sq(x, e.mean, e.precision));
  return out;
}

/// argmin over classes of the squared Mahalanobis distance, ties to the lowest id.
inline std::vector<ClassId> predict_mahalanobis(const FecamState& state, const Matrix& batch) {
  if (state.entries.empty()) throw Error(ErrorCode::NoClassesSeen, "no classes fitted");
  std::vector<ClassId> out(static_cast<std::size_t>(batch.rows()));
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    const Vector x = batch.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    ClassId arg = state.entries.front().class_id;
    for (const auto& e : state.entries) {
      const double dist = mahalanobis_sq(x, e.mean, e.precision);
      if (dist < best) {
        best = dist;
        arg = e.class_id;
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

/// Per-class Mahalanobis classifier. Few-shot covariances are estimated from
/// the shots alone.
class FecamClassifier : public IncrementalClassifier {
 public:
  explicit FecamClassifier(double gamma = 100.0) {
    if (gamma < 0.0) throw Error(ErrorCode::NegativeGamma, "gamma must be >= 0");
    state_.gamma = gamma;
  }

  std::string_view name() const override { return "fecam"; }

  void fit_base(const Matrix& features, std::span<const ClassId> labels) override {
    begin_base();
    base_stats_ = stats_per_class(group_by_class(features, labels));
    std::vector<CalibratedStats> cal;
    for (const auto& s : base_stats_) cal.push_back(CalibratedStats::pass_through(s));
    add_entries(cal);
    mark_base_fitted();
  }

  void fit_increment(const Matrix& features, std::span<const ClassId> labels) override {
    begin_increment();
    const auto fresh = stats_per_class(group_by_class(features, labels));
    add_entries(adjust_new(fresh));
  }

  std::vector<ClassId> predict(const Matrix& batch) const override {
    require_seen();
    return predict_mahalanobis(state_, batch);
  }

  const FecamState& state() const { return state_; }
  const std::vector<ClassStats>& base_stats() const { return base_stats_; }

 protected:
  virtual std::vector<CalibratedStats> adjust_new(const std::vector<ClassStats>& fresh) const {
    std::vector<CalibratedStats> out;
    for (const auto& s : fresh) out.push_back(CalibratedStats::pass_through(s));
    return out;
  }

 private:
  void add_entries(const std::vector<CalibratedStats>& cal) {
    std::vector<ClassId> ids;
    std::vector<FecamEntry> fresh;
    for (const auto& c : cal) {
      ids.push_back(c.class_id());
      fresh.push_back({c.class_id(), c.mean_hat(), fecam_precision(c.cov_hat(), state_.gamma)});
    }
    register_classes(ids);
    for (auto& e : fresh) state_.entries.push_back(std::move(e));
    std::sort(state_.entries.begin(), state_.entries.end(),
              [](const FecamEntry& a, const FecamEntry& b) { return a.class_id < b.class_id; });
  }

  FecamState state_;
  std::vector<ClassStats> base_stats_;
};

/// FeCAM with calibrated prototypes and covariances for few-shot classes.
class CalibratedFecamClassifier : public FecamClassifier {
 public:
  explicit CalibratedFecamClassifier(CalibrationConfig cfg = {}, double gamma = 100.0)
      : FecamClassifier(gamma), cfg_(cfg) {
    cfg_.validate();
  }

  std::string_view name() const override { return "cfecam"; }

  const CalibrationConfig& config() const { return cfg_; }

 protected:
  std::vector<CalibratedStats> adjust_new(const std::vector<ClassStats>& fresh) const override {
    if (base_stats().empty()) throw Error(ErrorCode::BaseNotFitted, "no base classes to calibrate against");
    return calibrate_all(fresh, base_stats(), cfg_);
  }

 private:
  CalibrationConfig cfg_;
};

}  // namespace fscil
