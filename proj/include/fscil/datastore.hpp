#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscil/error.hpp"
#include "fscil/protocol.hpp"
#include "fscil/ranpac.hpp"
#include "fscil/types.hpp"

namespace fscil {

// ---------------------------------------------------------------------------
// FSCF binary feature store
//
//   offset  size        field
//   0       4           magic "FSCF"
//   4       4           version (u32) = 1
//   8       8           n (u64)
//   16      4           d (u32)
//   20      4           num_classes (u32)
//   24      8 n         labels (i64)
//   24+8n   4 n d       features (f32, row-major)
//
// All integers and floats little-endian. The file is exactly 24 + 8n + 4nd bytes.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 24;

namespace detail {

inline void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffU));
}
inline void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffU));
}
inline std::uint32_t get_u32(std::span<const std::byte> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::span<const std::byte> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::byte> encode_store(const FeatureStore& store) {
  validate_store(store);
  const std::size_t n = store.rows();
  const std::size_t d = store.dim();
  if (d > UINT32_MAX || store.num_classes > UINT32_MAX) {
    throw Error(ErrorCode::InvalidValue, "dimension or class count does not fit in 32 bits");
  }
  std::vector<std::byte> out;
  out.reserve(kStoreHeaderBytes + 8 * n + 4 * n * d);
  for (char c : {'F', 'S', 'C', 'F'}) out.push_back(static_cast<std::byte>(c));
  detail::put_u32(out, kStoreVersion);
  detail::put_u64(out, n);
  detail::put_u32(out, static_cast<std::uint32_t>(d));
  detail::put_u32(out, static_cast<std::uint32_t>(store.num_classes));
  for (ClassId l : store.labels) detail::put_u64(out, static_cast<std::uint64_t>(l));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const float f = static_cast<float>(store.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      if (!std::isfinite(f)) {
        throw Error(ErrorCode::NonFiniteValue, "value at (" + std::to_string(i) + ", " + std::to_string(j) +
                                                   ") overflows 32-bit float",
                    {static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)});
      }
      detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

/// Parses and validates an FSCF image. Sizes are checked before any
/// allocation, so corrupted headers fail with an Error, not a crash.
inline FeatureStore decode_store(std::span<const std::byte> bytes) {
  if (bytes.size() < kStoreHeaderBytes) {
    throw Error(ErrorCode::TruncatedFile, "header truncated at byte " + std::to_string(bytes.size()),
                {static_cast<std::int64_t>(bytes.size())});
  }
  const char magic[4] = {'F', 'S', 'C', 'F'};
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != static_cast<std::byte>(magic[i])) throw Error(ErrorCode::BadMagic, "not an FSCF file");
  }
  const std::uint32_t version = detail::get_u32(bytes, 4);
  if (version != kStoreVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "version " + std::to_string(version), {version});
  }
  const std::uint64_t n = detail::get_u64(bytes, 8);
  const std::uint64_t d = detail::get_u32(bytes, 16);
  const std::uint64_t num_classes = detail::get_u32(bytes, 20);

  // 24 + 8n + 4nd without overflow; anything beyond 2^63 is certainly truncated.
  const std::uint64_t limit = UINT64_C(1) << 62;
  const bool huge = n > limit / 8 || (d != 0 && n > limit / (4 * d));
  const std::uint64_t expected = huge ? UINT64_MAX : kStoreHeaderBytes + 8 * n + 4 * n * d;
  if (bytes.size() < expected) {
    throw Error(ErrorCode::TruncatedFile,
                "file ends at byte " + std::to_string(bytes.size()) +
                    (huge ? std::string(", header sizes overflow") : ", expected " + std::to_string(expected)),
                {static_cast<std::int64_t>(bytes.size())});
  }
  if (bytes.size() > expected) {
    throw Error(ErrorCode::TrailingData, std::to_string(bytes.size() - expected) + " bytes after the features",
                {static_cast<std::int64_t>(expected)});
  }

  FeatureStore store;
  store.num_classes = static_cast<std::size_t>(num_classes);
  store.labels.resize(static_cast<std::size_t>(n));
  std::size_t at = kStoreHeaderBytes;
  for (auto& l : store.labels) {
    l = static_cast<ClassId>(detail::get_u64(bytes, at));
    at += 8;
  }
  store.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < store.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < store.features.cols(); ++j) {
      store.features(i, j) = static_cast<double>(std::bit_cast<float>(detail::get_u32(bytes, at)));
      at += 4;
    }
  }
  validate_store(store);
  return store;
}

inline void write_store(const std::filesystem::path& path, const FeatureStore& store) {
  const auto bytes = encode_store(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

inline FeatureStore read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed for " + path.string());
  return decode_store(std::as_bytes(std::span<const char>(raw)));
}

// ---------------------------------------------------------------------------
// Run configuration (JSON)
// ---------------------------------------------------------------------------

enum class Method { Ncm, Teen, Fecam, Cfecam, Ranpac, Cranpac };

inline constexpr Method kAllMethods[] = {Method::Ncm,    Method::Teen,   Method::Fecam,
                                         Method::Cfecam, Method::Ranpac, Method::Cranpac};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Ncm: return "ncm";
    case Method::Teen: return "teen";
    case Method::Fecam: return "fecam";
    case Method::Cfecam: return "cfecam";
    case Method::Ranpac: return "ranpac";
    case Method::Cranpac: return "cranpac";
  }
  return "?";
}

inline Method parse_method(const std::string& name) {
  for (Method m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::UnknownMethod, "unknown method '" + name + "'");
}

struct MethodConfig {
  Method method = Method::Ncm;
  double tau = 16.0;
  double alpha = 0.9;
  std::optional<double> beta;  // default: 1.0, or 0.5 for cranpac
  double gamma = 100.0;
  std::size_t proj_dim = 10000;
  std::size_t sample_count = 800;
  std::vector<double> lambda_grid = default_lambda_grid();
  bool include_real_features = false;

  double effective_beta() const { return beta ? *beta : (method == Method::Cranpac ? 0.5 : 1.0); }
};

struct RunConfig {
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  ProtocolConfig protocol;
  MethodConfig method;
  std::filesystem::path output_path;  // empty: no files written
};

namespace detail {

using Json = nlohmann::json;

inline void reject_unknown(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(ErrorCode::UnknownKey, "unknown key '" + where + it.key() + "'");
  }
}

inline const Json& require_object(const Json& j, const std::string& key) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidValue, "'" + key + "' must be an object");
  return j;
}

inline double as_double(const Json& j, const std::string& key) {
  if (!j.is_number()) throw Error(ErrorCode::InvalidValue, "'" + key + "' must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw Error(ErrorCode::InvalidValue, "'" + key + "' must be finite");
  return v;
}

inline std::uint64_t as_uint(const Json& j, const std::string& key) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  throw Error(ErrorCode::InvalidValue, "'" + key + "' must be a non-negative integer");
}

inline std::string as_string(const Json& j, const std::string& key) {
  if (!j.is_string()) throw Error(ErrorCode::InvalidValue, "'" + key + "' must be a string");
  return j.get<std::string>();
}

inline bool as_bool(const Json& j, const std::string& key) {
  if (!j.is_boolean()) throw Error(ErrorCode::InvalidValue, "'" + key + "' must be a boolean");
  return j.get<bool>();
}

inline ProtocolConfig parse_protocol(const Json& j) {
  require_object(j, "protocol");
  reject_unknown(j, "protocol.",
                 {"mode", "base_class_count", "classes_per_task", "num_tasks", "shots", "seed", "shuffle_classes"});
  ProtocolConfig p;
  if (!j.contains("mode")) throw Error(ErrorCode::MissingKey, "missing key 'protocol.mode'");
  const std::string mode = as_string(j["mode"], "protocol.mode");
  if (mode == "big_start") {
    p.mode = StartMode::BigStart;
  } else if (mode == "small_start") {
    p.mode = StartMode::SmallStart;
  } else {
    throw Error(ErrorCode::InvalidValue, "'protocol.mode' must be big_start or small_start");
  }
  if (j.contains("base_class_count")) p.base_class_count = as_uint(j["base_class_count"], "protocol.base_class_count");
  if (j.contains("classes_per_task")) p.classes_per_task = as_uint(j["classes_per_task"], "protocol.classes_per_task");
  if (j.contains("num_tasks")) p.num_tasks = as_uint(j["num_tasks"], "protocol.num_tasks");
  if (j.contains("shots")) p.shots = as_uint(j["shots"], "protocol.shots");
  if (j.contains("seed")) p.seed = as_uint(j["seed"], "protocol.seed");
  if (j.contains("shuffle_classes")) p.shuffle_classes = as_bool(j["shuffle_classes"], "protocol.shuffle_classes");
  if (p.mode == StartMode::BigStart && p.base_class_count == 0) {
    throw Error(ErrorCode::MissingKey, "big_start requires 'protocol.base_class_count'");
  }
  if (p.mode == StartMode::SmallStart && p.classes_per_task == 0) {
    throw Error(ErrorCode::MissingKey, "small_start requires 'protocol.classes_per_task'");
  }
  if (p.shots < 1) throw Error(ErrorCode::InvalidValue, "'protocol.shots' must be >= 1");
  return p;
}

inline MethodConfig parse_method_block(const Json& j) {
  require_object(j, "method");
  reject_unknown(j, "method.",
                 {"name", "tau", "alpha", "beta", "gamma", "proj_dim", "sample_count", "lambda_grid",
                  "include_real_features"});
  MethodConfig m;
  if (!j.contains("name")) throw Error(ErrorCode::MissingKey, "missing key 'method.name'");
  const std::string name = as_string(j["name"], "method.name");
  try {
    m.method = parse_method(name);
  } catch (const Error&) {
    throw Error(ErrorCode::InvalidValue, "'method.name' has unknown value '" + name + "'");
  }
  if (j.contains("tau")) m.tau = as_double(j["tau"], "method.tau");
  if (j.contains("alpha")) m.alpha = as_double(j["alpha"], "method.alpha");
  if (j.contains("beta")) m.beta = as_double(j["beta"], "method.beta");
  if (j.contains("gamma")) m.gamma = as_double(j["gamma"], "method.gamma");
  if (j.contains("proj_dim")) m.proj_dim = as_uint(j["proj_dim"], "method.proj_dim");
  if (j.contains("sample_count")) m.sample_count = as_uint(j["sample_count"], "method.sample_count");
  if (j.contains("include_real_features")) {
    m.include_real_features = as_bool(j["include_real_features"], "method.include_real_features");
  }
  if (j.contains("lambda_grid")) {
    const Json& g = j["lambda_grid"];
    if (!g.is_array() || g.empty()) throw Error(ErrorCode::InvalidValue, "'method.lambda_grid' must be a non-empty array");
    m.lambda_grid.clear();
    for (const auto& v : g) {
      const double l = as_double(v, "method.lambda_grid");
      if (l < 0.0) throw Error(ErrorCode::InvalidValue, "'method.lambda_grid' entries must be >= 0");
      m.lambda_grid.push_back(l);
    }
  }
  if (!(m.tau > 0.0)) throw Error(ErrorCode::InvalidValue, "'method.tau' must be > 0");
  if (!(m.alpha >= 0.0 && m.alpha <= 1.0)) throw Error(ErrorCode::InvalidValue, "'method.alpha' must lie in [0, 1]");
  if (m.beta && !(*m.beta > 0.0)) throw Error(ErrorCode::InvalidValue, "'method.beta' must be > 0");
  if (m.gamma < 0.0) throw Error(ErrorCode::InvalidValue, "'method.gamma' must be >= 0");
  if (m.proj_dim < 1) throw Error(ErrorCode::InvalidValue, "'method.proj_dim' must be >= 1");
  return m;
}

}  // namespace detail

/// Parses a run configuration. Relative paths resolve against `base_dir`.
/// Every error names the offending key.
inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  detail::Json j;
  try {
    j = detail::Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidValue, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidValue, "config root must be an object");
  detail::reject_unknown(j, "", {"train", "test", "protocol", "method", "output"});
  for (const char* key : {"train", "test", "protocol", "method"}) {
    if (!j.contains(key)) throw Error(ErrorCode::MissingKey, std::string("missing key '") + key + "'");
  }
  auto resolve = [&](const std::filesystem::path& p) { return p.is_relative() && !base_dir.empty() ? base_dir / p : p; };
  RunConfig cfg;
  cfg.train_path = resolve(detail::as_string(j["train"], "train"));
  cfg.test_path = resolve(detail::as_string(j["test"], "test"));
  cfg.protocol = detail::parse_protocol(j["protocol"]);
  cfg.method = detail::parse_method_block(j["method"]);
  if (j.contains("output")) cfg.output_path = resolve(detail::as_string(j["output"], "output"));
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const EvalReport& r, bool include_timing = true) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["stream_hash"] = r.stream_hash;
  j["num_tasks"] = r.per_task.size();
  auto rows = nlohmann::ordered_json::array();
  for (const auto& m : r.per_task) {
    nlohmann::ordered_json row;
    row["task_index"] = m.task_index;
    row["acc_overall"] = m.acc_overall;
    if (m.acc_old) row["acc_old"] = *m.acc_old;
    row["acc_new"] = m.acc_new;
    if (m.a_hm) row["a_hm"] = *m.a_hm;
    row["acc_base"] = m.acc_base;
    if (m.acc_novel) row["acc_novel"] = *m.acc_novel;
    row["num_test"] = m.num_test;
    rows.push_back(std::move(row));
  }
  j["per_task"] = std::move(rows);
  j["a_last"] = r.a_last;
  j["a_inc"] = r.a_inc;
  if (include_timing) j["timing_ms"] = r.timing_ms;
  return j;
}

inline std::string report_json_text(const EvalReport& r, bool include_timing = true) {
  return report_to_json(r, include_timing).dump(2) + "\n";
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  auto need = [&](const nlohmann::json& o, const char* key) -> const nlohmann::json& {
    if (!o.contains(key)) throw Error(ErrorCode::MissingKey, std::string("report missing key '") + key + "'");
    return o[key];
  };
  EvalReport r;
  r.method = detail::as_string(need(j, "method"), "method");
  if (j.contains("stream_hash")) r.stream_hash = detail::as_string(j["stream_hash"], "stream_hash");
  const auto& rows = need(j, "per_task");
  if (!rows.is_array()) throw Error(ErrorCode::InvalidValue, "'per_task' must be an array");
  for (const auto& row : rows) {
    TaskMetrics m;
    m.task_index = detail::as_uint(need(row, "task_index"), "per_task.task_index");
    m.acc_overall = detail::as_double(need(row, "acc_overall"), "per_task.acc_overall");
    m.acc_new = detail::as_double(need(row, "acc_new"), "per_task.acc_new");
    if (row.contains("acc_old")) m.acc_old = detail::as_double(row["acc_old"], "per_task.acc_old");
    if (row.contains("a_hm")) m.a_hm = detail::as_double(row["a_hm"], "per_task.a_hm");
    if (row.contains("acc_base")) m.acc_base = detail::as_double(row["acc_base"], "per_task.acc_base");
    if (row.contains("acc_novel")) m.acc_novel = detail::as_double(row["acc_novel"], "per_task.acc_novel");
    if (row.contains("num_test")) m.num_test = detail::as_uint(row["num_test"], "per_task.num_test");
    r.per_task.push_back(m);
  }
  r.a_last = detail::as_double(need(j, "a_last"), "a_last");
  r.a_inc = detail::as_double(need(j, "a_inc"), "a_inc");
  if (j.contains("timing_ms")) {
    for (const auto& t : j["timing_ms"]) r.timing_ms.push_back(detail::as_double(t, "timing_ms"));
  }
  return r;
}

inline EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open report " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidValue, path.string() + " is not valid JSON: " + e.what());
  }
}

inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

/// One-row table: method, A_HM for tasks 1..T-1, A_last, A_inc (percent).
inline std::string report_csv(const EvalReport& r) {
  std::string header = "method";
  std::string row = r.method;
  for (const auto& m : r.per_task) {
    if (!m.a_hm) continue;
    header += ",A_HM@" + std::to_string(m.task_index);
    row += "," + format_percent(*m.a_hm);
  }
  header += ",A_last,A_inc\n";
  row += "," + format_percent(r.a_last) + "," + format_percent(r.a_inc) + "\n";
  return header + row;
}

inline std::filesystem::path csv_path_for(const std::filesystem::path& json_path) {
  auto p = json_path;
  return p.extension() == ".json" ? p.replace_extension(".csv") : std::filesystem::path(p.string() + ".csv");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

/// Writes the JSON report to `path` and the CSV table next to it.
inline void write_report(const EvalReport& r, const std::filesystem::path& path) {
  write_text(path, report_json_text(r));
  write_text(csv_path_for(path), report_csv(r));
}

}  // namespace fscil
