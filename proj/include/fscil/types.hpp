#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fscil/error.hpp"

namespace fscil {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ClassId = std::int64_t;

/// Labeled n x d matrix of embeddings. Rows are samples.
struct FeatureStore {
  Matrix features;
  std::vector<ClassId> labels;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;  // optional, may be empty

  std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
};

/// Builds a store whose class count is one past the largest label.
inline FeatureStore make_store(Matrix features, std::vector<ClassId> labels) {
  FeatureStore store;
  ClassId max_label = -1;
  for (ClassId l : labels) max_label = std::max(max_label, l);
  store.num_classes = static_cast<std::size_t>(max_label + 1);
  store.features = std::move(features);
  store.labels = std::move(labels);
  return store;
}

/// Throws the first violated FeatureStore invariant.
inline void validate_store(const FeatureStore& store) {
  if (store.features.rows() == 0 || store.features.cols() == 0) {
    throw Error(ErrorCode::EmptyStore, "store has no rows or no columns");
  }
  if (store.labels.size() != store.rows()) {
    throw Error(ErrorCode::DimensionMismatch,
                "label count " + std::to_string(store.labels.size()) + " != row count " +
                    std::to_string(store.rows()));
  }
  for (std::size_t i = 0; i < store.labels.size(); ++i) {
    const ClassId l = store.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= store.num_classes) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "row " + std::to_string(i) + " has label " + std::to_string(l) +
                      " outside [0, " + std::to_string(store.num_classes) + ")",
                  {static_cast<std::int64_t>(i)});
    }
  }
  // first offending entry in row-major order
  for (Eigen::Index i = 0; i < store.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < store.features.cols(); ++j) {
      if (!std::isfinite(store.features(i, j))) {
        throw Error(ErrorCode::NonFiniteValue,
                    "non-finite value at (" + std::to_string(i) + ", " + std::to_string(j) + ")",
                    {static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)});
      }
    }
  }
}

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Count, prototype and covariance of one class. The covariance is
/// symmetrized on construction; the object is immutable afterwards.
class ClassStats {
 public:
  ClassStats(ClassId class_id, std::size_t count, Vector mean, const Matrix& cov)
      : class_id_(class_id), count_(count), mean_(std::move(mean)), cov_(symmetrized(cov)) {
    if (count_ == 0) throw Error(ErrorCode::EmptyClass, "class statistics need at least one sample");
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) {
      throw Error(ErrorCode::DimensionMismatch, "covariance shape does not match mean length");
    }
  }

  ClassId class_id() const { return class_id_; }
  std::size_t count() const { return count_; }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  Eigen::Index dim() const { return mean_.size(); }

 private:
  ClassId class_id_;
  std::size_t count_;
  Vector mean_;
  Matrix cov_;
};

/// Calibrated prototype and covariance used by the classifiers. Base classes
/// are passed through unchanged.
class CalibratedStats {
 public:
  CalibratedStats(ClassId class_id, Vector mean_hat, const Matrix& cov_hat)
      : class_id_(class_id), mean_hat_(std::move(mean_hat)), cov_hat_(symmetrized(cov_hat)) {
    if (cov_hat_.rows() != mean_hat_.size() || cov_hat_.cols() != mean_hat_.size()) {
      throw Error(ErrorCode::DimensionMismatch, "covariance shape does not match mean length");
    }
  }

  static CalibratedStats pass_through(const ClassStats& raw) {
    return CalibratedStats(raw);
  }

  ClassId class_id() const { return class_id_; }
  const Vector& mean_hat() const { return mean_hat_; }
  const Matrix& cov_hat() const { return cov_hat_; }

 private:
  explicit CalibratedStats(const ClassStats& raw)
      : class_id_(raw.class_id()), mean_hat_(raw.mean()), cov_hat_(raw.cov()) {}

  ClassId class_id_;
  Vector mean_hat_;
  Matrix cov_hat_;
};

struct Task {
  std::vector<ClassId> class_ids;
  std::vector<std::size_t> train_indices;  // rows of the train store
  std::vector<std::size_t> test_indices;   // rows of the test store
  std::optional<std::size_t> shots;        // nullopt: all available samples
};

struct TaskStream {
  std::vector<Task> tasks;

  std::size_t size() const { return tasks.size(); }
};

struct TaskMetrics {
  std::size_t task_index = 0;
  double acc_overall = 0.0;
  std::optional<double> acc_old;  // undefined for the base task
  double acc_new = 0.0;
  std::optional<double> a_hm;     // starts at task 1
  double acc_base = 0.0;           // task-0 classes only
  std::optional<double> acc_novel; // classes of tasks >= 1
  std::size_t num_test = 0;
};

struct EvalReport {
  std::string method;
  std::string stream_hash;
  std::vector<TaskMetrics> per_task;
  double a_last = 0.0;
  double a_inc = 0.0;
  std::vector<double> timing_ms;  // excluded from determinism checks
};

}  // namespace fscil
