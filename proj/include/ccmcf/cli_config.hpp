#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccmcf/ensemble_stats.hpp"

namespace ccmcf {

using Json = nlohmann::ordered_json;

std::string code_version();

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

/// Full snapshot of a scenario; every key carries its unit.
Json scenario_to_json(const Scenario& s);
/// Schema check of a parsed document. Unknown keys and type mismatches are collected into one ConfigError
/// naming each field; the result is then validated. Missing keys keep their defaults.
Scenario scenario_from_json(const Json& j);

std::string serialize_scenario(const Scenario& s);
/// Parses scenario text; syntax errors report line and column of `source`.
Scenario parse_scenario(const std::string& text, const std::string& source = "<string>");
/// A path to a scenario file, a run manifest, or a preset name.
Scenario load_scenario(const std::string& path_or_preset);

std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names.
Scenario preset(const std::string& name);

// ---------------------------------------------------------------------------
// Archives
// ---------------------------------------------------------------------------

/// Named real or complex matrices in one little-endian binary file.
struct MatrixArchive {
  std::map<std::string, Eigen::MatrixXd> real;
  std::map<std::string, CMatrix> complex;
};

void write_archive(const std::filesystem::path& path, const MatrixArchive& a);
MatrixArchive read_archive(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RunManifest {
  Scenario scenario;
  std::string code_version;
  std::string status;  // "running" or "complete"
  unsigned workers = 1;
  std::string started_utc;
  std::string finished_utc;
  double wall_seconds = 0.0;
  std::uint64_t jobs = 0;
  std::vector<RealizationFailure> failures;
  std::map<std::string, std::string> files;  // role -> file name relative to the manifest
  std::vector<std::string> histogram_files;

  [[nodiscard]] bool complete() const { return status == "complete"; }
};

Json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);

inline constexpr const char* kManifestFile = "manifest.json";

/// Runs the ensemble and writes records, summary and histogram tables, archives and the manifest into `out_dir`.
RunManifest run(const Scenario& scenario, const std::filesystem::path& out_dir, unsigned workers,
                const ProgressCallback& progress = {});

void write_records_csv(const std::filesystem::path& path, const std::vector<SnrRecord>& records, SweepVariable v);
std::vector<SnrRecord> read_records_csv(const std::filesystem::path& path);

/// Column name of the sweep value, with unit.
std::string sweep_column(SweepVariable v);

struct ReportResult {
  bool partial = false;
  std::vector<std::filesystem::path> tables;
};

/// Reads a manifest and its records, prints a summary to `out` and writes plot-ready tables under `report/`.
/// Throws ConfigError when the manifest is empty or unreadable.
ReportResult report(const std::filesystem::path& manifest_path, std::ostream& out);

// ---------------------------------------------------------------------------
// Step calibration
// ---------------------------------------------------------------------------

struct CalibrationRow {
  double local_error_target = 0.0;
  std::vector<double> snr_db;  // one per seed
  double max_change_db = 0.0;  // against the previous row; infinity for the first
};

struct CalibrationResult {
  std::vector<CalibrationRow> rows;
  double chosen_target = 0.0;
  bool converged = false;
};

/// Halves the local error target, starting at `start_target`, until the NLI-only SNR of `seeds` realizations
/// over one span changes by less than `tolerance_db` for every seed.
CalibrationResult calibrate_step(const Scenario& scenario, double start_target = 1e-3, int seeds = 10,
                                 double tolerance_db = 0.05, int max_halvings = 12, unsigned workers = 1,
                                 std::ostream* log = nullptr);

}  // namespace ccmcf
