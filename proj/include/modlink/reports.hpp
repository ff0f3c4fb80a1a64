#pragma once

// CSV and JSON report writers. All numbers are formatted with a dot decimal
// separator independent of the process locale.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modlink/cache.hpp"
#include "modlink/interconnect.hpp"
#include "modlink/mor.hpp"

namespace modlink {

struct SweepTableOptions {
  /// (output, input) pairs; empty selects every entry.
  std::vector<std::pair<std::string, std::string>> entries;
  /// Adds an "f_norm" column f / normalize_hz. Stored data is never scaled.
  std::optional<double> normalize_hz;
};

/// Columns: omega_rad_s, op, [f_norm,] then mag:<out>/<in> and phase:<out>/<in>
/// (radians) per entry. One row per (operating point, frequency).
std::string sweep_csv(const std::vector<FrfSweep>& sweeps, const SweepTableOptions& options = {});

struct SweepIndex {
  std::string csv_file;
  std::vector<OperatingPoint> ops;
  std::size_t frequencies = 0;
  std::vector<std::pair<std::string, std::string>> entries;
  std::optional<FrfCache::Stats> cache;
  std::optional<double> normalize_hz;
};

std::string sweep_index_json(const SweepIndex& index);

std::string error_report_csv(const ErrorReport& report);
std::string error_report_json(const ErrorReport& report);

/// 100 * (1 - r / n).
double reduction_percent(Index n, Index r);

/// Per-operating-point minimal orders (states), one row per subsystem.
std::string order_table_csv(const SearchResult& result);
/// Final orders: n_states, r_states, reduction_percent per subsystem.
std::string final_order_csv(const SearchResult& result);
/// Both tables, witnesses and the final error report.
std::string search_json(const SearchResult& result, const std::vector<OperatingPoint>& ops);

/// Writes <stem>_V.mtx (dense), <stem>_W.mtx for two-sided bases, and
/// <stem>.json with the metadata.
void export_basis(const ReductionBasis& basis, const std::filesystem::path& directory, const std::string& stem);

/// Writes `text` to a temporary sibling and renames it into place.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace modlink
