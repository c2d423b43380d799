#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fscil/datastore.hpp"
#include "fscil/fecam.hpp"
#include "fscil/protocol.hpp"
#include "fscil/prototype.hpp"
#include "fscil/ranpac.hpp"

namespace fscil {

/// Seed of every stochastic classifier component, derived from the run seed.
inline std::uint64_t method_seed(std::uint64_t run_seed) { return Rng(run_seed).split(0x6d657468ULL).seed(); }

inline std::unique_ptr<IncrementalClassifier> make_classifier(const MethodConfig& m, std::size_t num_classes,
                                                              std::uint64_t run_seed) {
  const CalibrationConfig cal{m.tau, m.alpha, m.effective_beta()};
  RanpacConfig rp;
  rp.proj_dim = static_cast<Eigen::Index>(m.proj_dim);
  rp.lambda_grid = m.lambda_grid;
  rp.seed = method_seed(run_seed);
  switch (m.method) {
    case Method::Ncm: return std::make_unique<NcmClassifier>();
    case Method::Teen: return std::make_unique<TeenClassifier>(cal);
    case Method::Fecam: return std::make_unique<FecamClassifier>(m.gamma);
    case Method::Cfecam: return std::make_unique<CalibratedFecamClassifier>(cal, m.gamma);
    case Method::Ranpac: return std::make_unique<RanpacClassifier>(num_classes, rp);
    case Method::Cranpac: {
      CalibratedRanpacConfig c;
      c.ranpac = rp;
      c.calibration = cal;
      c.sample_count = m.sample_count;
      c.include_real_features = m.include_real_features;
      return std::make_unique<CalibratedRanpacClassifier>(num_classes, c);
    }
  }
  throw Error(ErrorCode::UnknownMethod, "unhandled method");
}

/// FSCIL_THREADS caps the worker count; default is the hardware concurrency.
inline std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FSCIL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return n;
}

/// Predicts in contiguous row chunks on up to `threads` workers. Output is
/// independent of the thread count.
inline std::vector<ClassId> parallel_predict(const IncrementalClassifier& clf, const Matrix& batch,
                                             std::size_t threads) {
  const std::size_t n = static_cast<std::size_t>(batch.rows());
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n / 256, 1));
  if (threads == 1) return clf.predict(batch);
  std::vector<ClassId> out(n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      if (lo >= hi) return;
      try {
        const auto part = clf.predict(batch.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo)));
        std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(lo));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

inline std::vector<ClassId> gather_labels(const std::vector<ClassId>& labels, const std::vector<std::size_t>& rows) {
  std::vector<ClassId> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[r]);
  return out;
}

/// Fits one method task by task over `stream` and evaluates on the
/// cumulative test set after every task.
inline EvalReport run_stream(const FeatureStore& train, const FeatureStore& test, const TaskStream& stream,
                             const MethodConfig& method, std::uint64_t run_seed, std::ostream* log = nullptr) {
  if (stream.size() == 0) throw Error(ErrorCode::EmptyRun, "task stream is empty");
  if (train.dim() != test.dim()) throw Error(ErrorCode::DimensionMismatch, "train and test dimensions differ");
  auto clf = make_classifier(method, train.num_classes, run_seed);
  const std::size_t threads = worker_threads();
  std::vector<TaskMetrics> metrics;
  std::vector<double> timing;
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const auto start = std::chrono::steady_clock::now();
    const Task& task = stream.tasks[t];
    const Matrix x = gather_rows(train.features, task.train_indices);
    const auto y = gather_labels(train.labels, task.train_indices);
    if (t == 0) {
      clf->fit_base(x, y);
    } else {
      clf->fit_increment(x, y);
    }
    const auto rows = cumulative_test_indices(stream, t);
    const auto pred = parallel_predict(*clf, gather_rows(test.features, rows), threads);
    metrics.push_back(evaluate_after_task(pred, gather_labels(test.labels, rows), stream, t));
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    timing.push_back(ms);
    if (log) {
      *log << clf->name() << " task " << t << ": acc=" << metrics.back().acc_overall;
      if (metrics.back().a_hm) *log << " a_hm=" << *metrics.back().a_hm;
      *log << " (" << ms << " ms)\n";
    }
  }
  EvalReport report = finalize_report(std::move(metrics));
  report.method = std::string(clf->name());
  report.stream_hash = stream_hash(stream);
  report.timing_ms = std::move(timing);
  return report;
}

/// Builds the task stream from `protocol` (its seed is the run seed) and runs one method.
inline EvalReport run_experiment(const FeatureStore& train, const FeatureStore& test, const ProtocolConfig& protocol,
                                 const MethodConfig& method, std::ostream* log = nullptr) {
  validate_store(train);
  validate_store(test);
  const TaskStream stream = build_task_stream(train, test, protocol);
  if (log) *log << to_string(method.method) << " stream " << stream_hash(stream) << "\n";
  return run_stream(train, test, stream, method, protocol.seed, log);
}

/// Reads the stores named by the config, runs, and writes the report when an
/// output path is configured.
inline EvalReport run_experiment(const RunConfig& cfg, std::ostream* log = nullptr) {
  const FeatureStore train = read_store(cfg.train_path);
  const FeatureStore test = read_store(cfg.test_path);
  EvalReport report = run_experiment(train, test, cfg.protocol, cfg.method, log);
  if (!cfg.output_path.empty()) write_report(report, cfg.output_path);
  return report;
}

/// Method comparison table shaped like the usual FSCIL result tables: one row
/// per report, A_HM at the selected tasks, then A_last and A_inc, in percent.
/// The best value of each column carries a trailing '*'.
inline std::string compare_reports(const std::vector<EvalReport>& reports, std::vector<std::size_t> tasks = {}) {
  if (reports.empty()) throw Error(ErrorCode::EmptyRun, "no reports to compare");
  const std::size_t n_tasks = reports.front().per_task.size();
  for (const auto& r : reports) {
    if (r.per_task.size() != n_tasks) {
      throw Error(ErrorCode::TaskCountMismatch, r.method + " has " + std::to_string(r.per_task.size()) +
                                                    " tasks, expected " + std::to_string(n_tasks));
    }
  }
  if (tasks.empty()) {
    for (std::size_t t = 1; t < n_tasks; ++t) tasks.push_back(t);
  }
  for (auto t : tasks) {
    if (t == 0 || t >= n_tasks) throw Error(ErrorCode::InvalidValue, "A_HM column for task " + std::to_string(t) + " does not exist");
  }

  const std::size_t n_cols = tasks.size() + 2;
  std::vector<std::vector<double>> values(reports.size(), std::vector<double>(n_cols, 0.0));
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (std::size_t c = 0; c < tasks.size(); ++c) {
      values[i][c] = reports[i].per_task[tasks[c]].a_hm.value_or(0.0);
    }
    values[i][tasks.size()] = reports[i].a_last;
    values[i][tasks.size() + 1] = reports[i].a_inc;
  }

  std::string out = "method";
  for (auto t : tasks) out += ",A_HM@" + std::to_string(t);
  out += ",A_last,A_inc\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out += reports[i].method;
    for (std::size_t c = 0; c < n_cols; ++c) {
      double best = values[0][c];
      for (const auto& row : values) best = std::max(best, row[c]);
      const std::string cell = format_percent(values[i][c]);
      out += "," + cell + (cell == format_percent(best) ? "*" : "");
    }
    out += "\n";
  }
  return out;
}

}  // namespace fscil
