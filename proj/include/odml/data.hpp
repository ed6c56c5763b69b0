#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "odml/numeric.hpp"

namespace odml {

/// Numeric schema roles, in canonical storage and output order.
enum class Column {
  Mita,
  Lon,
  Lat,
  DistPotosi,
  DistBoundary,
  Elevation,
  Slope,
  Infants,
  Children,
  Adults,
  Seg1,
  Seg2,
  Seg3,
  LogConsumption,
};

inline constexpr std::size_t kNumericColumns = 14;

inline constexpr std::array<Column, kNumericColumns> kAllColumns = {
    Column::Mita,     Column::Lon,      Column::Lat,       Column::DistPotosi,
    Column::DistBoundary, Column::Elevation, Column::Slope, Column::Infants,
    Column::Children, Column::Adults,   Column::Seg1,      Column::Seg2,
    Column::Seg3,     Column::LogConsumption};

/// Role name used in schema sidecars and summaries ("mita_dummy", ...).
std::string_view role_name(Column c);
/// Header name in the default CSV dialect ("mita", "lon", ...).
std::string_view default_header(Column c);
inline constexpr std::string_view kDistrictRole = "district_id";
inline constexpr std::string_view kDistrictHeader = "district";

bool is_binary_column(Column c);
bool is_count_column(Column c);

/// Maps schema roles to CSV header names. The default matches the standard
/// dialect; a JSON sidecar of the form {"<role>": "<header>", ...} overrides
/// individual entries.
struct ColumnSchema {
  std::array<std::string, kNumericColumns> headers;
  std::string district_header;

  static ColumnSchema defaults();
  static ColumnSchema from_json(const nlohmann::json& remap);
  static ColumnSchema from_json_file(const std::filesystem::path& path);

  const std::string& header(Column c) const {
    return headers[static_cast<std::size_t>(c)];
  }
};

/// Immutable household table. Schema columns are stored as one dense n x 14
/// block; columns outside the schema are carried through verbatim.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Matrix numeric, std::vector<std::string> district,
          std::vector<std::string> extra_names = {},
          std::vector<std::vector<std::string>> extra_values = {});

  Index size() const { return numeric_.rows(); }
  bool empty() const { return size() == 0; }

  Matrix::ConstColXpr col(Column c) const {
    return numeric_.col(static_cast<Index>(c));
  }
  const Matrix& numeric() const { return numeric_; }
  const std::vector<std::string>& district() const { return district_; }
  const std::vector<std::string>& extra_names() const { return extra_names_; }
  // extra_values()[j][i]: row i of extra column j.
  const std::vector<std::vector<std::string>>& extra_values() const {
    return extra_values_;
  }

  Dataset select(const std::vector<Index>& rows) const;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  Matrix numeric_;
  std::vector<std::string> district_;
  std::vector<std::string> extra_names_;
  std::vector<std::vector<std::string>> extra_values_;
};

Dataset load_dataset(std::istream& source,
                     const ColumnSchema& schema = ColumnSchema::defaults());
Dataset load_dataset_file(const std::filesystem::path& path,
                          const ColumnSchema& schema = ColumnSchema::defaults());

/// Writes the dataset in the loader's dialect at round-trip precision.
void write_dataset(std::ostream& out, const Dataset& ds,
                   const ColumnSchema& schema = ColumnSchema::defaults());

struct ColumnSummary {
  std::string name;
  Index count = 0;
  double mean = 0, sd = 0, min = 0, q25 = 0, q50 = 0, q75 = 0, max = 0;
};

using SummaryTable = std::vector<ColumnSummary>;

/// Type-7 (linear interpolation) quantile of unsorted data.
double quantile(std::vector<double> values, double p);

SummaryTable summarize(const Dataset& ds);
std::string format_summary(const SummaryTable& table);

/// Households strictly inside the band are kept (dist_boundary < band_km).
inline constexpr bool kBandStrict = true;

Dataset restrict_band(const Dataset& ds, double band_km);

struct Violation {
  Index row;
  std::string column;
  std::string rule;
};

std::vector<Violation> validate(const Dataset& ds);
std::string format_violation(const Violation& v);

}  // namespace odml
