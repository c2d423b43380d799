#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/rng.hpp"
#include "fscil/types.hpp"

namespace fscil {

enum class StartMode { BigStart, SmallStart };

inline std::string to_string(StartMode m) { return m == StartMode::BigStart ? "big_start" : "small_start"; }

/// Task layout of a few-shot class-incremental run.
///
/// big_start: `base_class_count` classes in task 0, then increments of
/// `classes_per_task`. small_start: every task, including task 0, holds
/// `classes_per_task` classes. A zero `classes_per_task` (big_start) or zero
/// `num_tasks` is derived so that all classes are used; the split must then
/// be exact.
struct ProtocolConfig {
  StartMode mode = StartMode::BigStart;
  std::size_t base_class_count = 0;
  std::size_t classes_per_task = 0;
  std::size_t num_tasks = 0;
  std::size_t shots = 5;
  std::uint64_t seed = 0;
  bool shuffle_classes = false;
};

struct TaskLayout {
  std::size_t base_classes;
  std::size_t per_task;
  std::size_t num_tasks;
};

inline TaskLayout resolve_layout(const ProtocolConfig& cfg, std::size_t num_classes) {
  if (cfg.shots < 1) throw Error(ErrorCode::InvalidConfig, "shots must be >= 1");
  TaskLayout lay{};
  if (cfg.mode == StartMode::BigStart) {
    if (cfg.base_class_count < 1) throw Error(ErrorCode::InvalidConfig, "big_start needs base_class_count >= 1");
    if (cfg.base_class_count > num_classes) {
      throw Error(ErrorCode::InsufficientClasses, "base_class_count exceeds the number of classes");
    }
    lay.base_classes = cfg.base_class_count;
    const std::size_t rest = num_classes - lay.base_classes;
    if (cfg.classes_per_task == 0 && cfg.num_tasks == 0) {
      throw Error(ErrorCode::InvalidConfig, "big_start needs classes_per_task or num_tasks");
    }
    if (cfg.classes_per_task == 0) {
      if (cfg.num_tasks == 1) {
        lay.per_task = 0;
      } else {
        if (rest % (cfg.num_tasks - 1) != 0 || rest == 0) {
          throw Error(ErrorCode::InsufficientClasses,
                      std::to_string(rest) + " incremental classes do not split into " +
                          std::to_string(cfg.num_tasks - 1) + " tasks");
        }
        lay.per_task = rest / (cfg.num_tasks - 1);
      }
      lay.num_tasks = cfg.num_tasks;
    } else {
      lay.per_task = cfg.classes_per_task;
      if (cfg.num_tasks == 0) {
        if (rest % lay.per_task != 0) {
          throw Error(ErrorCode::InsufficientClasses, "incremental classes do not split evenly");
        }
        lay.num_tasks = 1 + rest / lay.per_task;
      } else {
        lay.num_tasks = cfg.num_tasks;
      }
    }
  } else {
    if (cfg.classes_per_task < 1) throw Error(ErrorCode::InvalidConfig, "small_start needs classes_per_task >= 1");
    lay.per_task = cfg.classes_per_task;
    lay.base_classes = cfg.classes_per_task;
    if (cfg.num_tasks == 0) {
      if (num_classes % lay.per_task != 0 || num_classes == 0) {
        throw Error(ErrorCode::InsufficientClasses, "classes do not split evenly into tasks");
      }
      lay.num_tasks = num_classes / lay.per_task;
    } else {
      lay.num_tasks = cfg.num_tasks;
    }
  }
  if (lay.num_tasks < 1) throw Error(ErrorCode::InvalidConfig, "num_tasks must be >= 1");
  const std::size_t needed = lay.base_classes + (lay.num_tasks - 1) * lay.per_task;
  if (needed > num_classes) {
    throw Error(ErrorCode::InsufficientClasses,
                "protocol needs " + std::to_string(needed) + " classes, store has " + std::to_string(num_classes));
  }
  return lay;
}

namespace detail {
inline std::vector<std::vector<std::size_t>> rows_by_class(const FeatureStore& store) {
  std::vector<std::vector<std::size_t>> rows(store.num_classes);
  for (std::size_t i = 0; i < store.labels.size(); ++i) {
    const ClassId l = store.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= store.num_classes) {
      throw Error(ErrorCode::LabelOutOfRange, "row " + std::to_string(i) + " label out of range",
                  {static_cast<std::int64_t>(i)});
    }
    rows[static_cast<std::size_t>(l)].push_back(i);
  }
  return rows;
}
}  // namespace detail

/// Splits classes into tasks. Task 0 keeps every training row of its classes;
/// later tasks keep `shots` rows per class, drawn without replacement by a
/// partial Fisher-Yates shuffle (one Rng stream per class). Indices are sorted.
inline TaskStream build_task_stream(const FeatureStore& train, const FeatureStore& test, const ProtocolConfig& cfg) {
  if (train.num_classes != test.num_classes && test.rows() > 0) {
    throw Error(ErrorCode::DimensionMismatch, "train and test stores disagree on the class count");
  }
  const TaskLayout lay = resolve_layout(cfg, train.num_classes);

  std::vector<ClassId> order(train.num_classes);
  std::iota(order.begin(), order.end(), ClassId{0});
  const Rng root(cfg.seed);
  if (cfg.shuffle_classes) {
    Rng rng = root.split(0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }

  const auto train_rows = detail::rows_by_class(train);
  const auto test_rows = detail::rows_by_class(test);

  TaskStream stream;
  std::size_t next = 0;
  for (std::size_t t = 0; t < lay.num_tasks; ++t) {
    const std::size_t count = t == 0 ? lay.base_classes : lay.per_task;
    Task task;
    task.class_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(next),
                          order.begin() + static_cast<std::ptrdiff_t>(next + count));
    next += count;
    std::sort(task.class_ids.begin(), task.class_ids.end());
    if (t > 0) task.shots = cfg.shots;

    for (ClassId c : task.class_ids) {
      const auto& rows = train_rows[static_cast<std::size_t>(c)];
      if (t == 0) {
        if (rows.empty()) {
          throw Error(ErrorCode::InsufficientSamples, "class " + std::to_string(c) + " has no training rows", {c});
        }
        task.train_indices.insert(task.train_indices.end(), rows.begin(), rows.end());
      } else {
        if (rows.size() < cfg.shots) {
          throw Error(ErrorCode::InsufficientSamples,
                      "class " + std::to_string(c) + " has " + std::to_string(rows.size()) + " training rows, " +
                          std::to_string(cfg.shots) + " needed",
                      {c});
        }
        std::vector<std::size_t> pool = rows;
        Rng rng = root.split(1).split(static_cast<std::uint64_t>(c));
        for (std::size_t i = 0; i < cfg.shots; ++i) {
          const std::size_t j = i + rng.below(pool.size() - i);
          std::swap(pool[i], pool[j]);
        }
        task.train_indices.insert(task.train_indices.end(), pool.begin(),
                                  pool.begin() + static_cast<std::ptrdiff_t>(cfg.shots));
      }
      const auto& trows = test_rows[static_cast<std::size_t>(c)];
      task.test_indices.insert(task.test_indices.end(), trows.begin(), trows.end());
    }
    std::sort(task.train_indices.begin(), task.train_indices.end());
    std::sort(task.test_indices.begin(), task.test_indices.end());
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

/// FNV-1a over every task's classes, shots and indices, as 16 hex digits.
inline std::string stream_hash(const TaskStream& stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(stream.tasks.size());
  for (const auto& t : stream.tasks) {
    mix(t.class_ids.size());
    for (ClassId c : t.class_ids) mix(static_cast<std::uint64_t>(c));
    mix(t.shots ? *t.shots : ~std::uint64_t{0});
    mix(t.train_indices.size());
    for (auto i : t.train_indices) mix(i);
    mix(t.test_indices.size());
    for (auto i : t.test_indices) mix(i);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// 2ab / (a + b), zero when a + b == 0. Exact when a == b.
inline double harmonic_mean(double a, double b) {
  if (a == b) return a;
  const double s = a + b;
  return s == 0.0 ? 0.0 : 2.0 * a * b / s;
}

/// Cumulative test rows seen by the evaluation after task t.
inline std::vector<std::size_t> cumulative_test_indices(const TaskStream& stream, std::size_t t) {
  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k <= t && k < stream.size(); ++k) {
    rows.insert(rows.end(), stream.tasks[k].test_indices.begin(), stream.tasks[k].test_indices.end());
  }
  return rows;
}

/// Accuracy split after task t. old: classes of tasks < t; new: task t.
/// acc_old and a_hm are left empty for t = 0.
inline TaskMetrics evaluate_after_task(std::span<const ClassId> predictions, std::span<const ClassId> truth,
                                       const TaskStream& stream, std::size_t t) {
  if (t >= stream.size()) throw Error(ErrorCode::InvalidConfig, "task index beyond stream length");
  if (predictions.size() != truth.size()) {
    throw Error(ErrorCode::MissingPredictions,
                std::to_string(predictions.size()) + " predictions for " + std::to_string(truth.size()) + " rows");
  }
  if (truth.empty()) throw Error(ErrorCode::MissingPredictions, "no test rows to evaluate");

  std::unordered_map<ClassId, std::size_t> task_of;
  for (std::size_t k = 0; k < stream.size(); ++k) {
    for (ClassId c : stream.tasks[k].class_ids) task_of[c] = k;
  }

  std::size_t correct = 0, n_old = 0, c_old = 0, n_new = 0, c_new = 0, n_base = 0, c_base = 0, n_nov = 0,
              c_nov = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto it = task_of.find(truth[i]);
    if (it == task_of.end() || it->second > t) {
      throw Error(ErrorCode::MissingPredictions,
                  "row " + std::to_string(i) + " belongs to a class not seen by task " + std::to_string(t),
                  {static_cast<std::int64_t>(i)});
    }
    const bool ok = predictions[i] == truth[i];
    correct += ok;
    if (it->second < t) {
      ++n_old;
      c_old += ok;
    } else {
      ++n_new;
      c_new += ok;
    }
    if (it->second == 0) {
      ++n_base;
      c_base += ok;
    } else {
      ++n_nov;
      c_nov += ok;
    }
  }
  auto frac = [](std::size_t c, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(n); };

  TaskMetrics m;
  m.task_index = t;
  m.num_test = truth.size();
  m.acc_overall = frac(correct, truth.size());
  m.acc_new = frac(c_new, n_new);
  m.acc_base = frac(c_base, n_base);
  if (t > 0) {
    m.acc_old = frac(c_old, n_old);
    m.a_hm = harmonic_mean(*m.acc_old, m.acc_new);
    m.acc_novel = frac(c_nov, n_nov);
  }
  return m;
}

/// a_last: accuracy after the final task; a_inc: mean accuracy over all tasks
/// including the base task.
inline EvalReport finalize_report(std::vector<TaskMetrics> per_task) {
  if (per_task.empty()) throw Error(ErrorCode::EmptyRun, "no task metrics");
  EvalReport r;
  double sum = 0.0;
  for (const auto& m : per_task) sum += m.acc_overall;
  r.a_last = per_task.back().acc_overall;
  r.a_inc = sum / static_cast<double>(per_task.size());
  r.per_task = std::move(per_task);
  return r;
}

}  // namespace fscil
