#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "estkit/bench/metrics.hpp"
#include "estkit/core/binio.hpp"
#include "estkit/core/hash.hpp"

namespace estkit::bench {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kToolkitVersion = "0.1.0";
inline constexpr const char* kCsvHeader = "system,method,variant,seed,rmse,runtime_ms_per_step,status,config_hash";

struct Record {
  std::string system;
  std::string method;
  std::string variant;
  std::uint64_t seed = 0;
  double rmse = std::nan("");  // NaN when status is failed
  double runtime_ms_per_step = std::nan("");
  std::size_t n_test_traj = 0;
  std::string config_hash;
  Index excluded_warmup_steps = 0;
  std::string status = "ok";  // ok | failed
  std::string reason;         // failure reason
  nlohmann::json params = nlohmann::json::object();

  bool ok() const { return status == "ok"; }
};

struct BenchmarkReport {
  std::vector<Record> records;
  std::string created_at;
  std::string toolkit_version = kToolkitVersion;

  const Record* find(const std::string& config_hash) const {
    for (const auto& r : records)
      if (r.config_hash == config_hash) return &r;
    return nullptr;
  }
};

// Canonical JSON (sorted keys, compact) hashed with FNV-1a.
inline std::string config_hash(const nlohmann::json& cell) { return hex64(fnv1a64(cell.dump())); }

// UTC time, or SOURCE_DATE_EPOCH when set.
inline std::string utc_timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') out.back() += '"', ++i;
      else if (c == '"') quoted = false;
      else out.back() += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

inline nlohmann::json num_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double num_from(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace detail

inline nlohmann::json to_json(const Record& r) {
  return {{"system", r.system},
          {"method", r.method},
          {"variant", r.variant},
          {"seed", r.seed},
          {"rmse", detail::num_or_null(r.rmse)},
          {"runtime_ms_per_step", detail::num_or_null(r.runtime_ms_per_step)},
          {"n_test_traj", r.n_test_traj},
          {"config_hash", r.config_hash},
          {"excluded_warmup_steps", r.excluded_warmup_steps},
          {"status", r.status},
          {"reason", r.reason},
          {"params", r.params}};
}

inline Record record_from_json(const nlohmann::json& j) {
  Record r;
  r.system = j.at("system").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.rmse = detail::num_from(j.at("rmse"));
  r.runtime_ms_per_step = detail::num_from(j.at("runtime_ms_per_step"));
  r.n_test_traj = j.at("n_test_traj").get<std::size_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.excluded_warmup_steps = j.at("excluded_warmup_steps").get<Index>();
  r.status = j.at("status").get<std::string>();
  r.reason = j.value("reason", "");
  r.params = j.value("params", nlohmann::json::object());
  return r;
}

inline nlohmann::json to_json(const BenchmarkReport& rep) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : rep.records) recs.push_back(to_json(r));
  return {{"schema_version", kReportSchemaVersion},
          {"toolkit_version", rep.toolkit_version},
          {"created_at", rep.created_at},
          {"records", recs}};
}

inline BenchmarkReport report_from_json(const nlohmann::json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version > kReportSchemaVersion)
    throw UnsupportedVersionError("report schema version " + std::to_string(version) + " is newer than supported version " +
                                  std::to_string(kReportSchemaVersion));
  BenchmarkReport rep;
  rep.created_at = j.value("created_at", "");
  rep.toolkit_version = j.value("toolkit_version", "");
  for (const auto& r : j.at("records")) rep.records.push_back(record_from_json(r));
  return rep;
}

inline std::string to_csv(const BenchmarkReport& rep) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rep.records) {
    out += detail::csv_field(r.system) + "," + detail::csv_field(r.method) + "," + detail::csv_field(r.variant) + "," +
           std::to_string(r.seed) + "," + detail::fmt_double(r.rmse) + "," + detail::fmt_double(r.runtime_ms_per_step) +
           "," + r.status + "," + r.config_hash + "\n";
  }
  return out;
}

// Rows of the CSV as column-name -> value maps; throws on a header mismatch.
inline std::vector<std::map<std::string, std::string>> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw IoError("report CSV header does not match the schema");
  const auto cols = detail::split_csv_line(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != cols.size())
      throw IoError("report CSV row has " + std::to_string(fields.size()) + " fields, expected " +
                    std::to_string(cols.size()));
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < cols.size(); ++i) row[cols[i]] = fields[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

// Long (tidy) format: one row per record and numeric quantity.
inline std::string to_long_tsv(const BenchmarkReport& rep) {
  std::string out = "system\tmethod\tvariant\tseed\tkey\tvalue\n";
  for (const auto& r : rep.records) {
    if (!r.ok()) continue;
    const std::string prefix = r.system + "\t" + r.method + "\t" + r.variant + "\t" + std::to_string(r.seed) + "\t";
    out += prefix + "rmse\t" + detail::fmt_double(r.rmse) + "\n";
    out += prefix + "runtime_ms_per_step\t" + detail::fmt_double(r.runtime_ms_per_step) + "\n";
    for (const auto& [k, v] : r.params.items())
      if (v.is_number()) out += prefix + k + "\t" + detail::fmt_double(v.get<double>()) + "\n";
  }
  return out;
}

struct SummaryRow {
  std::string system, method, variant;
  std::size_t seeds = 0, failed = 0, not_applicable = 0;
  double rmse_mean = std::nan(""), rmse_sd = std::nan(""), runtime_median = std::nan("");
};

// Mean and sample sd of RMSE across seeds for each (system, method, variant).
inline std::vector<SummaryRow> summarize(const BenchmarkReport& rep) {
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> failures, skipped;
  std::vector<std::tuple<std::string, std::string, std::string>> order;
  for (const auto& r : rep.records) {
    const auto key = std::make_tuple(r.system, r.method, r.variant);
    if (!groups.count(key) && !failures.count(key) && !skipped.count(key)) order.push_back(key);
    if (r.ok()) {
      groups[key].first.push_back(r.rmse);
      groups[key].second.push_back(r.runtime_ms_per_step);
    } else if (r.status == "not_applicable") {
      ++skipped[key];
    } else {
      ++failures[key];
    }
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    SummaryRow s;
    std::tie(s.system, s.method, s.variant) = key;
    s.failed = failures.count(key) ? failures[key] : 0;
    s.not_applicable = skipped.count(key) ? skipped[key] : 0;
    if (groups.count(key)) {
      const auto& [rm, rt] = groups[key];
      s.seeds = rm.size();
      s.rmse_mean = mean(rm);
      s.rmse_sd = stddev(rm);
      s.runtime_median = median(rt);
    }
    out.push_back(s);
  }
  return out;
}

inline std::string summary_csv(const BenchmarkReport& rep) {
  std::string out = "system,method,variant,seeds,failed,not_applicable,rmse_mean,rmse_sd,runtime_ms_per_step_median\n";
  for (const auto& s : summarize(rep))
    out += detail::csv_field(s.system) + "," + detail::csv_field(s.method) + "," + detail::csv_field(s.variant) + "," +
           std::to_string(s.seeds) + "," + std::to_string(s.failed) + "," +
           std::to_string(s.not_applicable) + "," + detail::fmt_double(s.rmse_mean) + "," +
           detail::fmt_double(s.rmse_sd) + "," + detail::fmt_double(s.runtime_median) + "\n";
  return out;
}

enum class ReportFormat { csv, json, tsv, summary };

inline void emit_report(const BenchmarkReport& rep, const std::filesystem::path& path, ReportFormat format) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create '" + path.parent_path().string() + "': " + ec.message());
  }
  switch (format) {
    case ReportFormat::csv: binio::write_file(path, to_csv(rep)); break;
    case ReportFormat::json: binio::write_file(path, to_json(rep).dump(2) + "\n"); break;
    case ReportFormat::tsv: binio::write_file(path, to_long_tsv(rep)); break;
    case ReportFormat::summary: binio::write_file(path, summary_csv(rep)); break;
  }
}

// report.csv, report.json, plot_long.tsv and summary.csv under dir.
inline void emit_all(const BenchmarkReport& rep, const std::filesystem::path& dir) {
  emit_report(rep, dir / "report.csv", ReportFormat::csv);
  emit_report(rep, dir / "report.json", ReportFormat::json);
  emit_report(rep, dir / "plot_long.tsv", ReportFormat::tsv);
  emit_report(rep, dir / "summary.csv", ReportFormat::summary);
}

inline BenchmarkReport load_report(const std::filesystem::path& json_path) {
  const auto bytes = binio::read_file(json_path);
  try {
    return report_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed report '" + json_path.string() + "': " + e.what());
  }
}

}  // namespace estkit::bench
