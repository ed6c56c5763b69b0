#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "odml/dml.hpp"
#include "odml/learners.hpp"
#include "odml/ols.hpp"

namespace odml {

inline constexpr std::string_view kVersion = "0.1.0";

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Writes via a sibling temporary file and rename, so readers never observe a
/// partially written file.
void write_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

struct InputDigest {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config;  // fully resolved, defaults materialized
  std::vector<InputDigest> inputs;
  std::uint64_t seed = 0;
  std::string version{kVersion};
  std::string started_at;
  std::string finished_at;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const nlohmann::json& j);

/// UTC timestamp, ISO 8601 with seconds.
std::string utc_now();

/// JSON text with a trailing newline; numbers keep full precision.
std::string dump_json(const nlohmann::json& j);

/// One DML grid cell (panel x band).
struct DmlCell {
  Panel panel = Panel::LatLon;
  double band_km = 0;
  EffectEstimate estimate;
  Stars stars = Stars::None;
  Index clusters = 0;
};

using DmlGrid = std::array<std::array<DmlCell, 3>, 3>;

/// Grid TSV: panel, band_km, theta, se, stars, n, clusters.
std::string format_dml_tsv(const DmlGrid& grid);
std::string format_dml_text(const DmlGrid& grid, std::string_view title);
/// Conventional table file stem for an estimand ("table3", "table4", "table4_atte").
std::string_view dml_table_stem(Estimand e);

struct GradCheckRow {
  std::vector<int> hidden;
  Activation activation = Activation::Relu;
  bool classifier = false;
  double max_rel_error = 0;
};

/// Architectures {[], [4], [3,3], [8,4]} x {relu, tanh} x {mse, bce} on a
/// seeded 12 x 3 instance.
std::vector<GradCheckRow> gradcheck_grid(std::uint64_t seed);
std::string format_gradcheck_tsv(const std::vector<GradCheckRow>& rows);

std::string format_probe_tsv(const ProbeReport& report);

}  // namespace odml
