#pragma once

#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "fscil/calibration.hpp"
#include "fscil/classifier.hpp"

namespace fscil {

struct Prototype {
  ClassId class_id;
  Vector mean;
};

/// Nearest class mean under squared Euclidean distance. Prototypes must be
/// sorted by class id; ties go to the lowest id.
inline std::vector<ClassId> ncm_predict(std::span<const Prototype> prototypes, const Matrix& batch) {
  if (prototypes.empty()) throw Error(ErrorCode::NoClassesSeen, "no prototypes");
  const Eigen::Index d = prototypes.front().mean.size();
  if (batch.cols() != d) throw Error(ErrorCode::DimensionMismatch, "query dimension differs from prototypes");
  std::vector<ClassId> out(static_cast<std::size_t>(batch.rows()));
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    ClassId arg = prototypes.front().class_id;
    for (const auto& p : prototypes) {
      const double dist = (batch.row(i).transpose() - p.mean).squaredNorm();
      if (dist < best) {
        best = dist;
        arg = p.class_id;
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

/// Plain nearest-class-mean classifier.
class NcmClassifier : public IncrementalClassifier {
 public:
  std::string_view name() const override { return "ncm"; }

  void fit_base(const Matrix& features, std::span<const ClassId> labels) override {
    begin_base();
    add_means(group_by_class(features, labels));
    mark_base_fitted();
  }

  void fit_increment(const Matrix& features, std::span<const ClassId> labels) override {
    begin_increment();
    add_means(group_by_class(features, labels));
  }

  std::vector<ClassId> predict(const Matrix& batch) const override {
    require_seen();
    return ncm_predict(prototypes_, batch);
  }

  const std::vector<Prototype>& prototypes() const { return prototypes_; }

 protected:
  void add_means(const std::map<ClassId, Matrix>& groups) {
    std::vector<Prototype> fresh;
    for (const auto& [id, rows] : groups) {
      if (rows.rows() == 0) throw Error(ErrorCode::EmptyClass, "class has no samples", {id});
      fresh.push_back({id, rows.colwise().mean().transpose()});
    }
    insert_prototypes(std::move(fresh));
  }

  void insert_prototypes(std::vector<Prototype> fresh) {
    register_classes([&] {
      std::vector<ClassId> ids;
      for (const auto& p : fresh) ids.push_back(p.class_id);
      return ids;
    }());
    for (auto& p : fresh) prototypes_.push_back(std::move(p));
    std::sort(prototypes_.begin(), prototypes_.end(),
              [](const Prototype& a, const Prototype& b) { return a.class_id < b.class_id; });
  }

 private:
  std::vector<Prototype> prototypes_;
};

/// NCM whose few-shot prototypes are pulled towards similar base prototypes.
/// Base prototypes are kept as estimated.
class TeenClassifier : public NcmClassifier {
 public:
  explicit TeenClassifier(CalibrationConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  std::string_view name() const override { return "teen"; }

  void fit_base(const Matrix& features, std::span<const ClassId> labels) override {
    begin_base();
    const auto groups = group_by_class(features, labels);
    add_means(groups);
    for (const auto& [id, rows] : groups) base_means_.push_back(rows.colwise().mean().transpose());
    mark_base_fitted();
  }

  void fit_increment(const Matrix& features, std::span<const ClassId> labels) override {
    begin_increment();
    if (base_means_.empty()) throw Error(ErrorCode::BaseNotFitted, "no base classes to calibrate against");
    std::vector<Prototype> fresh;
    for (const auto& [id, rows] : group_by_class(features, labels)) {
      const Vector mu = rows.colwise().mean().transpose();
      const Vector w = calibration_weights(base_means_, mu, cfg_.tau);
      fresh.push_back({id, calibrate_prototype(mu, base_means_, w, cfg_.alpha)});
    }
    insert_prototypes(std::move(fresh));
  }

  const CalibrationConfig& config() const { return cfg_; }

 private:
  CalibrationConfig cfg_;
  std::vector<Vector> base_means_;
};

}  // namespace fscil
