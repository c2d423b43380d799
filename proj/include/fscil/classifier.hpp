#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/numerics.hpp"
#include "fscil/types.hpp"

namespace fscil {

/// Common fit/predict surface of every few-shot class-incremental method.
///
/// fit_base is called once with the many-shot base task, fit_increment once
/// per later task. Statistics of classes seen earlier are never touched by
/// fit_increment. predict is const and may be called concurrently.
class IncrementalClassifier {
 public:
  virtual ~IncrementalClassifier() = default;

  virtual std::string_view name() const = 0;
  virtual void fit_base(const Matrix& features, std::span<const ClassId> labels) = 0;
  virtual void fit_increment(const Matrix& features, std::span<const ClassId> labels) = 0;
  virtual std::vector<ClassId> predict(const Matrix& batch) const = 0;

  /// Ascending class ids.
  const std::vector<ClassId>& seen_classes() const { return seen_; }
  bool base_fitted() const { return base_fitted_; }

 protected:
  void begin_base() {
    if (base_fitted_) throw Error(ErrorCode::BaseAlreadyFitted, "fit_base called twice");
  }
  void begin_increment() const {
    if (!base_fitted_) throw Error(ErrorCode::BaseNotFitted, "fit_increment before fit_base");
  }
  void require_seen() const {
    if (seen_.empty()) throw Error(ErrorCode::NoClassesSeen, "classifier has not seen any class");
  }

  /// Checks the new ids against seen classes, then records them.
  void register_classes(const std::vector<ClassId>& ids) {
    for (ClassId id : ids) {
      if (std::binary_search(seen_.begin(), seen_.end(), id)) {
        throw Error(ErrorCode::ClassAlreadySeen, "class " + std::to_string(id) + " was already fitted", {id});
      }
    }
    seen_.insert(seen_.end(), ids.begin(), ids.end());
    std::sort(seen_.begin(), seen_.end());
  }
  void mark_base_fitted() { base_fitted_ = true; }

 private:
  std::vector<ClassId> seen_;
  bool base_fitted_ = false;
};

/// Rows of `features` grouped by label, keyed in ascending class order.
inline std::map<ClassId, Matrix> group_by_class(const Matrix& features, std::span<const ClassId> labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "label count does not match row count");
  }
  std::map<ClassId, std::vector<Eigen::Index>> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw Error(ErrorCode::UnknownLabel, "negative label", {labels[i]});
    rows[labels[i]].push_back(static_cast<Eigen::Index>(i));
  }
  std::map<ClassId, Matrix> out;
  for (const auto& [id, idx] : rows) out.emplace(id, features(idx, Eigen::all));
  return out;
}

inline std::vector<ClassStats> stats_per_class(const std::map<ClassId, Matrix>& groups) {
  std::vector<ClassStats> out;
  out.reserve(groups.size());
  for (const auto& [id, rows] : groups) out.push_back(estimate_stats(rows, id));
  return out;
}

template <typename Map>
std::vector<ClassId> keys_of(const Map& m) {
  std::vector<ClassId> ids;
  ids.reserve(m.size());
  for (const auto& kv : m) ids.push_back(kv.first);
  return ids;
}

}  // namespace fscil
